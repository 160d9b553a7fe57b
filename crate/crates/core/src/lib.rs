//! Learning with noisy labels by progressive clean-sample selection and
//! debiased semi-supervised training.
//!
//! The crate is organized bottom-up:
//!
//! - [`datagen`]: datasets, label-noise and imbalance injection, augmentation, batching
//! - [`modelkit`]: the dual-head classifier, peer pairs, warm-up, optimizer and schedules
//! - [`selector`]: class-wise small-loss, matched high-confidence and agreement-based selection
//! - [`debias`]: class priors, the debiased margin loss, debiased pseudo-labels, sharpening
//! - [`trainer`]: per-batch loss composition and the full training loop
//! - [`evalkit`]: ground-truth-aware metrics and report emission
//! - [`cli`]: the `promix` experiment runner
//!
//! Hot loops go through [`parallel`], which fans out over rayon when the
//! `parallel` feature is enabled and runs on the calling thread otherwise.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod cli;
pub mod config;
pub mod datagen;
pub mod debias;
pub mod error;
pub mod evalkit;
pub mod math;
pub mod modelkit;
pub mod parallel;
pub mod seeding;
pub mod selector;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
