use ndarray::{Array2, ArrayView1, Axis};

use super::state::{check_unit, Provenance, SelectionState};
use crate::error::{Error, Result};
use crate::math::{argmax_view, log_softmax};

/// Per-class base-selection size.
pub fn css_k(n: usize, num_classes: usize, class_size: usize, rate: f64, balanced: bool) -> usize {
    let k = if balanced {
        (n as f64 / num_classes as f64 * rate - 1e-9).ceil() as usize
    } else {
        (class_size as f64 * rate + 1e-9).floor() as usize
    };
    k.min(class_size)
}

/// Cross-entropy of every logit row against its observed label.
pub fn per_sample_ce(logits: &Array2<f64>, labels: &[usize]) -> Vec<f64> {
    logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| -log_softmax(row.as_slice().expect("standard layout"))[y])
        .collect()
}

/// Class-wise small-loss selection: the `k` lowest-loss ids of each observed
/// class, ties to the lower id. Returns ascending ids.
pub fn css_select(
    losses: &[f64],
    noisy_labels: &[usize],
    num_classes: usize,
    rate: f64,
    balanced: bool,
) -> Result<Vec<usize>> {
    check_unit("filter_rate", rate)?;
    if losses.len() != noisy_labels.len() {
        return Err(Error::shape(noisy_labels.len(), losses.len()));
    }
    if let Some(i) = losses.iter().position(|l| l.is_nan()) {
        return Err(Error::NonFinite(format!("loss of sample {i}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in noisy_labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::invalid("noisy_labels", format!("label {y} outside [0, {num_classes})")));
        }
        by_class[y].push(i);
    }
    let n = losses.len();
    let mut out = Vec::new();
    for mut ids in by_class {
        let k = css_k(n, num_classes, ids.len(), rate, balanced);
        ids.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
        out.extend_from_slice(&ids[..k]);
    }
    out.sort_unstable();
    Ok(out)
}

fn check_probs(probs: &Array2<f64>, n: usize) -> Result<()> {
    if probs.nrows() != n {
        return Err(Error::shape(format!("{n} probability rows"), probs.nrows()));
    }
    for (i, row) in probs.axis_iter(Axis(0)).enumerate() {
        let s = row.sum();
        if !((s - 1.0).abs() <= 1e-5) {
            return Err(Error::invalid("probs", format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

fn top(row: ArrayView1<'_, f64>) -> (usize, f64) {
    let j = argmax_view(row);
    (j, row[j])
}

/// Ids outside `exclude` whose top probability reaches `tau` and whose top
/// class (lowest id on ties) equals the observed label. Ascending ids.
pub fn mhcs_select(probs: &Array2<f64>, noisy_labels: &[usize], tau: f64, exclude: &[usize]) -> Result<Vec<usize>> {
    check_unit("confidence_threshold", tau)?;
    check_probs(probs, noisy_labels.len())?;
    let mut skip = vec![false; noisy_labels.len()];
    for &i in exclude {
        if i >= skip.len() {
            return Err(Error::invalid("exclude", format!("id {i} out of range")));
        }
        skip[i] = true;
    }
    Ok(probs
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|&(i, row)| {
            let (j, p) = top(row);
            !skip[i] && p >= tau && j == noisy_labels[i]
        })
        .map(|(i, _)| i)
        .collect())
}

/// Candidates on which both peers are confident and agree. Returns the
/// admitted ids (in candidate order) and their guessed labels.
pub fn lga_select(
    probs1: &Array2<f64>,
    probs2: &Array2<f64>,
    tau: f64,
    candidates: &[usize],
    epoch: usize,
    lga_start: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if epoch < lga_start {
        return Err(Error::Contract(format!("label guessing at epoch {epoch}, before {lga_start}")));
    }
    check_unit("confidence_threshold", tau)?;
    if probs1.dim() != probs2.dim() {
        return Err(Error::shape(format!("{:?}", probs1.dim()), format!("{:?}", probs2.dim())));
    }
    check_probs(probs1, probs1.nrows())?;
    check_probs(probs2, probs2.nrows())?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for &i in candidates {
        if i >= probs1.nrows() {
            return Err(Error::invalid("candidates", format!("id {i} out of range")));
        }
        let (j1, c1) = top(probs1.row(i));
        let (j2, c2) = top(probs2.row(i));
        if c1 >= tau && c2 >= tau && j1 == j2 {
            ids.push(i);
            labels.push(j1);
        }
    }
    Ok((ids, labels))
}

/// Shrinks the clean set to at most `floor(rho * n)` ids. Label-guessed ids
/// go first, then matched high-confidence ids, each by ascending confidence
/// then ascending id. Base-selected ids stay.
pub fn apply_cap(state: &SelectionState, rho: f64) -> Result<SelectionState> {
    check_unit("cap_ratio", rho)?;
    let allowed = (rho * state.len() as f64 + 1e-9).floor() as usize;
    let mut out = state.clone();
    let mut excess = state.num_clean().saturating_sub(allowed);
    for tag in [Provenance::Lga, Provenance::Mhcs] {
        if excess == 0 {
            break;
        }
        let mut ids: Vec<usize> = (0..state.len()).filter(|&i| state.provenance(i) == Some(tag)).collect();
        ids.sort_by(|&a, &b| state.confidence(a).total_cmp(&state.confidence(b)).then(a.cmp(&b)));
        for &i in ids.iter().take(excess) {
            out.evict(i);
        }
        excess -= excess.min(ids.len());
    }
    Ok(out)
}
