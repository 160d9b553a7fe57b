use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datagen::DatasetBundle;
use crate::error::{Error, Result};
use crate::math::argmax_view;
use crate::modelkit::PeerPair;
use crate::selector::{Provenance, SelectionState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub epoch: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Clean ids whose training label equals the truth.
    pub true_positives: usize,
    pub selected: usize,
    /// Samples whose observed label is correct plus guessed ids whose guess
    /// repairs a wrong observed label.
    pub recoverable: usize,
    /// Indexed by training label.
    pub per_class_tp: Vec<usize>,
    pub per_class_fp: Vec<usize>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall of a clean set against the hidden truth.
pub fn selection_metrics(state: &SelectionState, true_labels: &[usize], noisy_labels: &[usize]) -> SelectionMetrics {
    let c = state.num_classes();
    let mut per_class_tp = vec![0; c];
    let mut per_class_fp = vec![0; c];
    let mut recoverable = noisy_labels.iter().zip(true_labels).filter(|(a, b)| a == b).count();
    for i in state.clean_indices() {
        let y = state.chosen_label(i, noisy_labels);
        if y == true_labels[i] {
            per_class_tp[y] += 1;
            if state.provenance(i) == Some(Provenance::Lga) && noisy_labels[i] != true_labels[i] {
                recoverable += 1;
            }
        } else {
            per_class_fp[y] += 1;
        }
    }
    let tp: usize = per_class_tp.iter().sum();
    let selected = state.num_clean();
    let precision = ratio(tp, selected);
    let recall = ratio(tp, recoverable);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    SelectionMetrics {
        epoch: state.epoch,
        precision,
        recall,
        f1,
        true_positives: tp,
        selected,
        recoverable,
        per_class_tp,
        per_class_fp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelMetrics {
    pub accuracy: f64,
    /// `None` for classes absent from the unlabelled set.
    pub per_class_recall: Vec<Option<f64>>,
}

/// Accuracy of pseudo-labels for the ids in `ids`; `None` when `ids` is empty.
pub fn pseudo_label_metrics(
    ids: &[usize],
    pseudo_labels: &[usize],
    true_labels: &[usize],
    num_classes: usize,
) -> Result<Option<PseudoLabelMetrics>> {
    if ids.len() != pseudo_labels.len() {
        return Err(Error::shape(ids.len(), pseudo_labels.len()));
    }
    if ids.is_empty() {
        return Ok(None);
    }
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&i, &p) in ids.iter().zip(pseudo_labels) {
        let t = *true_labels.get(i).ok_or_else(|| Error::invalid("ids", format!("id {i} out of range")))?;
        totals[t] += 1;
        if p == t {
            hits[t] += 1;
        }
    }
    Ok(Some(PseudoLabelMetrics {
        accuracy: ratio(hits.iter().sum(), ids.len()),
        per_class_recall: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| (t > 0).then(|| ratio(h, t)))
            .collect(),
    }))
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn accuracy(scores: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = scores
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| argmax_view(row.view()) == y)
        .count();
    ratio(hits, labels.len())
}

/// Test accuracy of `(net 1, net 2, ensemble)` on unaugmented test images.
pub fn test_accuracy(pair: &PeerPair, test: &DatasetBundle, batch_size: usize) -> Result<[f64; 3]> {
    let a = pair.nets[0].predict_images(test.images(), batch_size)?;
    let b = pair.nets[1].predict_images(test.images(), batch_size)?;
    let truth = test.true_labels();
    let ens = (&a + &b) * 0.5;
    Ok([accuracy(&a, truth), accuracy(&b, truth), accuracy(&ens, truth)])
}

/// Per-epoch test accuracy history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyLog {
    pub history: Vec<f64>,
}

impl AccuracyLog {
    pub fn push(&mut self, acc: f64) {
        self.history.push(acc);
    }

    pub fn best(&self) -> Option<f64> {
        self.history.iter().copied().reduce(f64::max)
    }

    pub fn last(&self) -> Option<f64> {
        self.history.last().copied()
    }

    /// Mean over the final ten recorded epochs (fewer if fewer exist).
    pub fn last10_mean(&self) -> Option<f64> {
        let tail = &self.history[self.history.len().saturating_sub(10)..];
        (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
    }
}
