use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Css,
    Mhcs,
    Lga,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Css => "css",
            Provenance::Mhcs => "mhcs",
            Provenance::Lga => "lga",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Fraction sizing the per-class small-loss selection, in (0, 1].
    pub filter_rate: f64,
    /// Confidence threshold for matched and agreement-based admission, in (0, 1].
    pub confidence_threshold: f64,
    /// Upper bound on the clean fraction of the training set, in (0, 1].
    pub cap_ratio: f64,
    /// First epoch at which label guessing runs.
    pub lga_start: usize,
    /// `k = ceil(n / C * R)` per class when set, `floor(|S_j| * R)` otherwise.
    pub balanced_css: bool,
    pub use_css: bool,
    pub use_mhcs: bool,
    pub use_lga: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            filter_rate: 0.5,
            confidence_threshold: 0.99,
            cap_ratio: 0.9,
            lga_start: 250,
            balanced_css: true,
            use_css: true,
            use_mhcs: true,
            use_lga: true,
        }
    }
}

pub(crate) fn check_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{v} not in (0, 1]")))
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("filter_rate", self.filter_rate)?;
        check_unit("confidence_threshold", self.confidence_threshold)?;
        check_unit("cap_ratio", self.cap_ratio)
    }
}

/// One network's partition for one epoch.
///
/// Every id is either clean (tagged with how it was admitted) or unlabelled.
/// Only label-guessed ids carry a guessed label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub epoch: usize,
    pub network: usize,
    num_classes: usize,
    tags: Vec<Option<Provenance>>,
    guessed: Vec<Option<usize>>,
    /// Admission confidence; zero for base-selected and unlabelled ids.
    confidence: Vec<f64>,
}

impl SelectionState {
    pub fn empty(n: usize, num_classes: usize, epoch: usize, network: usize) -> Self {
        Self {
            epoch,
            network,
            num_classes,
            tags: vec![None; n],
            guessed: vec![None; n],
            confidence: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Marks `id` clean. A guessed label is required exactly for label-guessed ids.
    pub fn admit(&mut self, id: usize, tag: Provenance, guess: Option<usize>, confidence: f64) -> Result<()> {
        if id >= self.len() {
            return Err(Error::invalid("id", format!("{id} outside {} samples", self.len())));
        }
        if (tag == Provenance::Lga) != guess.is_some() {
            return Err(Error::Contract(format!("{} admit of {id} with guess {guess:?}", tag.name())));
        }
        if self.tags[id].is_some() {
            return Err(Error::Contract(format!("id {id} admitted twice")));
        }
        self.tags[id] = Some(tag);
        self.guessed[id] = guess;
        self.confidence[id] = confidence;
        Ok(())
    }

    /// Returns `id` to the unlabelled set.
    pub fn evict(&mut self, id: usize) {
        self.tags[id] = None;
        self.guessed[id] = None;
        self.confidence[id] = 0.0;
    }

    pub fn provenance(&self, id: usize) -> Option<Provenance> {
        self.tags[id]
    }

    pub fn guessed_label(&self, id: usize) -> Option<usize> {
        self.guessed[id]
    }

    pub fn confidence(&self, id: usize) -> f64 {
        self.confidence[id]
    }

    pub fn is_clean(&self, id: usize) -> bool {
        self.tags[id].is_some()
    }

    /// Clean ids in ascending order.
    pub fn clean_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i].is_some()).collect()
    }

    /// Unlabelled ids in ascending order.
    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i].is_none()).collect()
    }

    pub fn num_clean(&self) -> usize {
        self.tags.iter().filter(|t| t.is_some()).count()
    }

    pub fn count(&self, tag: Provenance) -> usize {
        self.tags.iter().filter(|t| **t == Some(tag)).count()
    }

    /// The label a clean id trains with: the guess if there is one, else the
    /// observed label.
    pub fn chosen_label(&self, id: usize, noisy_labels: &[usize]) -> usize {
        self.guessed[id].unwrap_or(noisy_labels[id])
    }

    /// `(id, training label)` for every clean id.
    pub fn labeled_pairs(&self, noisy_labels: &[usize]) -> Vec<(usize, usize)> {
        self.clean_indices().into_iter().map(|i| (i, self.chosen_label(i, noisy_labels))).collect()
    }

    /// Clean-set size per training label.
    pub fn per_class_counts(&self, noisy_labels: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for i in self.clean_indices() {
            counts[self.chosen_label(i, noisy_labels)] += 1;
        }
        counts
    }
}
