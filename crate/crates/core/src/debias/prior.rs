use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries are floored here before taking logs.
pub const PRIOR_FLOOR: f64 = 1e-8;
pub const DEFAULT_MOMENTUM: f64 = 0.9999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorRole {
    Labeled,
    Unlabeled,
}

/// Moving-average estimate of the predicted class distribution,
/// `pi <- m pi + (1 - m) mean(batch probs)`.
///
/// Each update is a convex combination of points on the simplex, so `pi`
/// stays on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pi: Vec<f64>,
    momentum: f64,
    role: PriorRole,
}

fn check_simplex(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid(what, "entries must be finite and non-negative"));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(what, format!("entries sum to {s}, not 1")));
    }
    Ok(())
}

impl ClassPrior {
    pub fn uniform(num_classes: usize, momentum: f64, role: PriorRole) -> Self {
        Self {
            pi: vec![1.0 / num_classes as f64; num_classes],
            momentum,
            role,
        }
    }

    pub fn from_vec(pi: Vec<f64>, momentum: f64, role: PriorRole) -> Result<Self> {
        check_simplex(&pi, "pi")?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("momentum", format!("{momentum} not in [0, 1)")));
        }
        Ok(Self { pi, momentum, role })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn role(&self) -> PriorRole {
        self.role
    }

    pub fn num_classes(&self) -> usize {
        self.pi.len()
    }

    /// `ln(max(pi_j, PRIOR_FLOOR))`.
    pub fn log_floored(&self) -> Vec<f64> {
        self.pi.iter().map(|&p| p.max(PRIOR_FLOOR).ln()).collect()
    }

    /// Folds in a batch mean that is already on the simplex.
    pub fn update_with_mean(&mut self, mean: &[f64]) -> Result<()> {
        if mean.len() != self.pi.len() {
            return Err(Error::shape(self.pi.len(), mean.len()));
        }
        let m = self.momentum;
        self.pi.iter_mut().zip(mean).for_each(|(p, &q)| *p = m * *p + (1.0 - m) * q);
        Ok(())
    }

    /// Folds in the mean of a batch of probability rows.
    pub fn update(&mut self, batch_probs: &Array2<f64>) -> Result<()> {
        if batch_probs.nrows() == 0 {
            return Err(Error::Empty("prior update batch"));
        }
        if batch_probs.ncols() != self.pi.len() {
            return Err(Error::shape(format!("B x {}", self.pi.len()), format!("{:?}", batch_probs.shape())));
        }
        let mean = batch_probs.mean_axis(Axis(0)).expect("non-empty batch");
        self.update_with_mean(mean.as_slice().expect("contiguous"))
    }
}

/// The two priors one network keeps: one for clean-set batches and one for
/// unlabelled-set batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorPair {
    pub labeled: ClassPrior,
    pub unlabeled: ClassPrior,
}

impl PriorPair {
    pub fn uniform(num_classes: usize, momentum: f64) -> Self {
        Self {
            labeled: ClassPrior::uniform(num_classes, momentum, PriorRole::Labeled),
            unlabeled: ClassPrior::uniform(num_classes, momentum, PriorRole::Unlabeled),
        }
    }
}
