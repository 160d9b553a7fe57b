//! Versioned JSON checkpoints. RNG state is not stored: every random draw is
//! keyed by `(seed, purpose, epoch, ...)`, so `seed` and `epoch` suffice.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::peer::PeerPair;
use crate::debias::PriorPair;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub pair: PeerPair,
    /// One `(labelled, unlabelled)` prior pair per network.
    pub priors: [PriorPair; 2],
}

impl Checkpoint {
    pub fn new(epoch: usize, seed: u64, pair: PeerPair, priors: [PriorPair; 2]) -> Self {
        Self { version: CHECKPOINT_VERSION, epoch, seed, pair, priors }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path.display().to_string(),
                format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", ck.version),
            ));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelkit::{BackboneSpec, ModelSpec};

    #[test]
    fn round_trip_is_exact() {
        let spec = ModelSpec {
            input: (3, 4, 4),
            num_classes: 3,
            backbone: BackboneSpec::Mlp { pool: 1, hidden: vec![5] },
        };
        let pair = PeerPair::new(spec, 9, 0.9, 5e-4).unwrap();
        let mut priors = [PriorPair::uniform(3, 0.9999), PriorPair::uniform(3, 0.9999)];
        priors[1].unlabeled.update_with_mean(&[0.7, 0.2, 0.1]).unwrap();
        let ck = Checkpoint::new(4, 11, pair, priors);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let spec = ModelSpec {
            input: (1, 2, 2),
            num_classes: 2,
            backbone: BackboneSpec::Mlp { pool: 1, hidden: vec![2] },
        };
        let mut ck = Checkpoint::new(0, 0, PeerPair::new(spec, 0, 0.9, 0.0).unwrap(), [PriorPair::uniform(2, 0.9), PriorPair::uniform(2, 0.9)]);
        ck.version = 99;
        ck.save(&path).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
