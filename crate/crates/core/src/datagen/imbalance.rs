//! Exponential class-imbalance generator. Class `i` (0-based) keeps
//! `round(N / kappa^(i / (C - 1)))` of its `N` samples, so the head class is
//! untouched and the tail class keeps `N / kappa`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::bundle::DatasetBundle;
use crate::error::{Error, Result};
use crate::seeding::{derive_rng, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub kappa: f64,
    pub seed: u64,
}

impl ImbalanceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 1.0) || !self.kappa.is_finite() {
            return Err(Error::invalid("kappa", format!("{} must be a finite value >= 1", self.kappa)));
        }
        Ok(())
    }
}

/// Per-class sample counts for a balanced source with `per_class` samples.
pub fn class_target_sizes(per_class: usize, num_classes: usize, kappa: f64) -> Result<Vec<usize>> {
    ImbalanceSpec { kappa, seed: 0 }.validate()?;
    if num_classes <= 1 {
        return Ok(vec![per_class; num_classes]);
    }
    let denom = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|i| (per_class as f64 / kappa.powf(i as f64 / denom)).round() as usize)
        .collect())
}

/// Subsamples a class-balanced bundle into a long-tailed one. Apply label
/// noise afterwards; the selection is driven by the true labels.
pub fn make_imbalanced(bundle: &DatasetBundle, spec: &ImbalanceSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let counts = bundle.class_counts();
    let per_class = counts.first().copied().unwrap_or(0);
    if counts.iter().any(|&n| n != per_class) {
        return Err(Error::invalid(
            "bundle",
            format!("expected a class-balanced dataset, got class counts {counts:?}"),
        ));
    }
    let sizes = class_target_sizes(per_class, bundle.num_classes(), spec.kappa)?;
    let mut by_class = vec![Vec::new(); bundle.num_classes()];
    for (i, &y) in bundle.true_labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut keep = Vec::with_capacity(sizes.iter().sum());
    for (c, ids) in by_class.iter_mut().enumerate() {
        let mut rng = derive_rng(spec.seed, &[stream::IMBALANCE, c as u64]);
        ids.shuffle(&mut rng);
        keep.extend_from_slice(&ids[..sizes[c]]);
    }
    keep.sort_unstable();
    bundle.subset(&keep)
}
