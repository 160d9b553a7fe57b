//! Calibration against distribution bias: moving-average class priors, the
//! debiased margin loss, debiased pseudo-labels and sharpening.

mod loss;
mod prior;

pub use loss::{
    debias_logits, debias_row, dml_batch, dml_loss, dml_loss_grad, pseudo_targets, sharpen, sharpen_rows,
    DebiasConfig, LossGrad,
};
pub use prior::{ClassPrior, PriorPair, PriorRole, DEFAULT_MOMENTUM, PRIOR_FLOOR};
