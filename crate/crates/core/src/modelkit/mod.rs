//! Networks, optimization and schedules.

pub mod checkpoint;
pub mod model;
pub mod nn;
pub mod optim;
pub mod peer;
pub mod schedule;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use model::{BackboneSpec, DualHeadClassifier, ForwardPass, Gradients, ModelSpec, ParamGroups};
pub use optim::Sgd;
pub use peer::{ce_step, PeerPair, WarmupPlan, WARMUP_TAG};
pub use schedule::{Quantity, ScheduleSpec};
