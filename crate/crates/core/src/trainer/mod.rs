//! Loss composition and the training loop.
//!
//! Per step and network, a clean batch and an unlabelled batch yield
//!
//! - `l_cls = l_x_primary + l_x_aux + lambda_u * l_u_aux`
//! - `l_total = l_cls + gamma * (l_cr + l_mix)`
//!
//! where the clean terms score both heads against the training labels, the
//! unlabelled term scores the auxiliary head against debiased, sharpened
//! primary-head predictions, `l_cr` repeats the composite on strong views
//! and `l_mix` scores both heads on mixed clean inputs.

mod epoch;
mod losses;
mod run;

pub use epoch::{steps_for, train_epoch, train_network, EpochPlan, LABELED_TAG, UNLABELED_TAG};
pub use losses::{
    consistency_loss, draw_mixup, mixup_batch, mixup_pair, step_loss, supervised_loss, unsupervised_loss,
    LabeledViews, LossBreakdown, MixupSpec, StepInput, StepOptions, StepOutput, UnlabeledViews,
};
pub use run::{load_data, run, run_with_data, write_run_header, DatasetRecord, RunOutcome};
