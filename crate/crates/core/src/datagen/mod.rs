//! Datasets, controlled label corruption, class imbalance and augmented batching.

pub mod augment;
pub mod batch;
pub mod bundle;
pub mod cifar;
pub mod imbalance;
pub mod noise;
pub mod store;
pub mod synthetic;

pub use augment::{AugOp, AugmentationPolicy};
pub use batch::{eval_batches, AugmentedBatch, BatchIterator, BatchSource, CyclingBatches, Views};
pub use bundle::{DatasetBundle, Split, TrainView};
pub use imbalance::{class_target_sizes, make_imbalanced, ImbalanceSpec};
pub use noise::{
    apply_noise, cifar10_asymmetric_mapping, inject_asymmetric_noise, inject_symmetric_noise,
    load_external_labels, read_label_file, write_label_file, NoiseKind, NoiseSpec,
};
pub use store::{load_bundle, save_bundle};
pub use synthetic::SyntheticSpec;
