use std::path::Path;

use ndarray::Array2;

use super::ops::{apply_cap, css_select, lga_select, mhcs_select, per_sample_ce};
use super::state::{FilterConfig, Provenance, SelectionState};
use crate::datagen::{AugmentationPolicy, BatchSource, TrainView};
use crate::error::{Error, Result};
use crate::math::softmax_rows;
use crate::modelkit::model::concat_rows;
use crate::modelkit::PeerPair;

/// Loader tag for the weak views that selection scores.
pub const SELECT_TAG: u64 = 0x200;

const SNAPSHOT_CHUNK: usize = 512;

/// Both networks' primary-head logits on one weak view of every training
/// sample, taken at epoch start.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub logits: [Array2<f64>; 2],
}

impl Snapshot {
    pub fn capture(
        pair: &PeerPair,
        data: TrainView<'_>,
        policy: &AugmentationPolicy,
        seed: u64,
        epoch: usize,
    ) -> Result<Self> {
        let source = BatchSource { images: data.images, policy, seed, tag: SELECT_TAG };
        let n = data.len();
        let c = pair.num_classes();
        let mut parts: [Vec<Result<Array2<f64>>>; 2] = [Vec::new(), Vec::new()];
        for lo in (0..n).step_by(SNAPSHOT_CHUNK) {
            let ids: Vec<usize> = (lo..(lo + SNAPSHOT_CHUNK).min(n)).collect();
            let views = source.weak_views(&ids, epoch);
            for (k, part) in parts.iter_mut().enumerate() {
                part.push(pair.nets[k].predict(&views));
            }
        }
        let [a, b] = parts;
        Ok(Self { logits: [concat_rows(a, c)?, concat_rows(b, c)?] })
    }

    pub fn probs(&self) -> [Array2<f64>; 2] {
        [softmax_rows(&self.logits[0]), softmax_rows(&self.logits[1])]
    }
}

/// Selection for both networks from their logits. Each network uses its own
/// losses and probabilities; label guessing reads both.
pub fn partition_from_logits(
    logits: &[Array2<f64>; 2],
    noisy_labels: &[usize],
    cfg: &FilterConfig,
    epoch: usize,
) -> Result<[SelectionState; 2]> {
    cfg.validate()?;
    let n = noisy_labels.len();
    let c = logits[0].ncols();
    if logits.iter().any(|l| l.dim() != (n, c)) {
        return Err(Error::shape(format!("({n}, {c}) logits"), format!("{:?} / {:?}", logits[0].dim(), logits[1].dim())));
    }
    let probs = [softmax_rows(&logits[0]), softmax_rows(&logits[1])];
    let mut states = [SelectionState::empty(n, c, epoch, 0), SelectionState::empty(n, c, epoch, 1)];
    for (k, state) in states.iter_mut().enumerate() {
        let base = if cfg.use_css {
            css_select(&per_sample_ce(&logits[k], noisy_labels), noisy_labels, c, cfg.filter_rate, cfg.balanced_css)?
        } else {
            Vec::new()
        };
        for &i in &base {
            state.admit(i, Provenance::Css, None, 0.0)?;
        }
        if cfg.use_mhcs {
            for i in mhcs_select(&probs[k], noisy_labels, cfg.confidence_threshold, &base)? {
                let conf = probs[k].row(i).fold(0.0f64, |m, &p| m.max(p));
                state.admit(i, Provenance::Mhcs, None, conf)?;
            }
        }
        if cfg.use_lga && epoch >= cfg.lga_start {
            let (own, peer) = (&probs[k], &probs[1 - k]);
            let candidates = state.unlabeled_indices();
            let (ids, guesses) = lga_select(own, peer, cfg.confidence_threshold, &candidates, epoch, cfg.lga_start)?;
            for (i, y) in ids.into_iter().zip(guesses) {
                let conf = own.row(i).fold(0.0f64, |m, &p| m.max(p)).min(peer.row(i).fold(0.0f64, |m, &p| m.max(p)));
                state.admit(i, Provenance::Lga, Some(y), conf)?;
            }
        }
        *state = apply_cap(state, cfg.cap_ratio)?;
    }
    Ok(states)
}

/// Captures a snapshot and partitions from it.
pub fn build_partition(
    pair: &PeerPair,
    data: TrainView<'_>,
    policy: &AugmentationPolicy,
    seed: u64,
    cfg: &FilterConfig,
    epoch: usize,
) -> Result<(Snapshot, [SelectionState; 2])> {
    let snap = Snapshot::capture(pair, data, policy, seed, epoch)?;
    let states = partition_from_logits(&snap.logits, data.noisy_labels, cfg, epoch)?;
    Ok((snap, states))
}

/// Appends one row per sample and network:
/// `epoch, sample_id, network, provenance, chosen_label, confidence`.
/// Unlabelled ids have provenance `unlabeled` and an empty label.
pub fn write_selection_csv(path: &Path, states: &[SelectionState], noisy_labels: &[usize]) -> Result<()> {
    let exists = path.exists();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if !exists {
        w.write_record(["epoch", "sample_id", "network", "provenance", "chosen_label", "confidence"])?;
    }
    for s in states {
        for i in 0..s.len() {
            let (tag, label) = match s.provenance(i) {
                Some(t) => (t.name(), s.chosen_label(i, noisy_labels).to_string()),
                None => ("unlabeled", String::new()),
            };
            w.write_record([
                s.epoch.to_string(),
                i.to_string(),
                (s.network + 1).to_string(),
                tag.to_string(),
                label,
                format!("{}", s.confidence(i)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg() -> FilterConfig {
        FilterConfig {
            filter_rate: 0.5,
            confidence_threshold: 0.9,
            cap_ratio: 1.0,
            lga_start: 3,
            balanced_css: true,
            use_css: true,
            use_mhcs: true,
            use_lga: true,
        }
    }

    fn logits() -> [Array2<f64>; 2] {
        let a = array![[5.0, 0.0], [4.0, 0.0], [0.0, 6.0], [0.0, 5.0], [6.0, 0.0], [0.0, 0.1]];
        let b = array![[5.0, 0.0], [0.0, 4.0], [0.0, 6.0], [0.0, 5.0], [6.0, 0.0], [0.1, 0.0]];
        [a, b]
    }

    #[test]
    fn stages_compose() {
        let noisy = [0, 0, 1, 1, 1, 0];
        let [s0, s1] = partition_from_logits(&logits(), &noisy, &cfg(), 3).unwrap();
        // CSS k = ceil(6/2 * 0.5) = 2 per class.
        assert_eq!(s0.count(Provenance::Css), 4);
        assert_eq!(s0.provenance(0), Some(Provenance::Css));
        assert_eq!(s0.provenance(4), Some(Provenance::Lga));
        assert_eq!(s0.guessed_label(4), Some(0));
        assert!(!s0.is_clean(5));
        assert_eq!(s1.network, 1);
        for s in [&s0, &s1] {
            let mut all = s.clean_indices();
            all.extend(s.unlabeled_indices());
            all.sort_unstable();
            assert_eq!(all, (0..6).collect::<Vec<_>>());
        }
    }

    #[test]
    fn lga_waits_for_start_epoch() {
        let noisy = [0, 0, 1, 1, 1, 0];
        let [s0, _] = partition_from_logits(&logits(), &noisy, &cfg(), 2).unwrap();
        assert_eq!(s0.count(Provenance::Lga), 0);
    }

    #[test]
    fn identical_inputs_identical_partitions() {
        let noisy = [0, 1, 1, 0, 1, 0];
        let a = partition_from_logits(&logits(), &noisy, &cfg(), 5).unwrap();
        let b = partition_from_logits(&logits(), &noisy, &cfg(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_dump_has_one_row_per_sample_and_network() {
        let noisy = [0, 0, 1, 1, 1, 0];
        let states = partition_from_logits(&logits(), &noisy, &cfg(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sel.csv");
        write_selection_csv(&path, &states, &noisy).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 12);
        assert!(text.contains("3,4,1,lga,0,"));
    }
}
