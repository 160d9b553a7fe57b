//! Per-epoch partition of the training set into a clean labelled set and an
//! unlabelled remainder.
//!
//! Selection runs in three stages on each network's own predictions:
//! class-wise small-loss selection builds a base set, matched high-confidence
//! selection extends it with confident predictions that agree with the
//! observed label, and label guessing admits samples both peers confidently
//! agree on under a guessed label. A cap then bounds the clean-set size.

mod ops;
mod partition;
mod state;

pub use ops::{apply_cap, css_k, css_select, lga_select, mhcs_select, per_sample_ce};
pub use partition::{build_partition, partition_from_logits, write_selection_csv, Snapshot, SELECT_TAG};
pub use state::{FilterConfig, Provenance, SelectionState};
