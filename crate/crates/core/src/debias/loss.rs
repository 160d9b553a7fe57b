use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_softmax, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DebiasConfig {
    /// Strength of the prior correction. Zero turns debiasing off.
    pub alpha: f64,
    /// Sharpening temperature applied to pseudo-label distributions.
    pub temperature: f64,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self { alpha: 0.8, temperature: 0.5 }
    }
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid("alpha", format!("{} must be finite and >= 0", self.alpha)));
        }
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::invalid("temperature", format!("{} must be > 0", self.temperature)));
        }
        Ok(())
    }
}

fn check_row(logits: &[f64], target: &[f64], pi: &[f64]) -> Result<()> {
    if logits.len() != target.len() || logits.len() != pi.len() {
        return Err(Error::shape(
            format!("{} logits, targets and prior entries", logits.len()),
            format!("{} / {} / {}", logits.len(), target.len(), pi.len()),
        ));
    }
    if logits.iter().chain(target).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits or target".into()));
    }
    Ok(())
}

/// `f + alpha ln pi`. A zero `alpha` returns the logits unchanged even when
/// `pi` has zero entries.
fn shifted(logits: &[f64], pi: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if alpha == 0.0 {
        return Ok(logits.to_vec());
    }
    if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::invalid("pi", "prior entries must be positive when alpha > 0"));
    }
    Ok(logits.iter().zip(pi).map(|(f, p)| f + alpha * p.ln()).collect())
}

/// Cross-entropy of `target` against `softmax(logits + alpha ln pi)`.
pub fn dml_loss(logits: &[f64], target: &[f64], pi: &[f64], alpha: f64) -> Result<f64> {
    check_row(logits, target, pi)?;
    let ls = log_softmax(&shifted(logits, pi, alpha)?);
    Ok(-target.iter().zip(&ls).map(|(y, l)| y * l).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// Gradient with respect to the unshifted logits.
    pub grad: Vec<f64>,
}

/// Loss and gradient `softmax(logits + alpha ln pi) * sum(target) - target`.
pub fn dml_loss_grad(logits: &[f64], target: &[f64], pi: &[f64], alpha: f64) -> Result<LossGrad> {
    check_row(logits, target, pi)?;
    let z = shifted(logits, pi, alpha)?;
    let ls = log_softmax(&z);
    let mass: f64 = target.iter().sum();
    let loss = -target.iter().zip(&ls).map(|(y, l)| y * l).sum::<f64>();
    let grad = ls.iter().zip(target).map(|(l, y)| l.exp() * mass - y).collect();
    Ok(LossGrad { loss, grad })
}

/// Batch-mean loss and gradient given a precomputed `ln pi` (typically
/// floored). Returns the mean loss and `d mean / d logits`.
pub fn dml_batch(
    logits: &Array2<f64>,
    targets: &Array2<f64>,
    log_prior: &[f64],
    alpha: f64,
) -> Result<(f64, Array2<f64>)> {
    if logits.dim() != targets.dim() || logits.ncols() != log_prior.len() {
        return Err(Error::shape(
            format!("{:?} targets and {} prior entries", logits.dim(), logits.ncols()),
            format!("{:?} / {}", targets.dim(), log_prior.len()),
        ));
    }
    let b = logits.nrows();
    if b == 0 {
        return Err(Error::Empty("loss batch"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    let mut z = vec![0.0; log_prior.len()];
    for ((row, y), mut g) in logits
        .axis_iter(Axis(0))
        .zip(targets.axis_iter(Axis(0)))
        .zip(grad.axis_iter_mut(Axis(0)))
    {
        for ((zi, f), lp) in z.iter_mut().zip(row.iter()).zip(log_prior) {
            *zi = f + alpha * lp;
        }
        let ls = log_softmax(&z);
        let mass: f64 = y.sum();
        Zip::from(&mut g).and(&y).and(&ls[..]).for_each(|g, &y, &l| {
            total -= y * l;
            *g = (l.exp() * mass - y) * inv_b;
        });
    }
    Ok((total * inv_b, grad))
}

/// Logit adjustment `f - alpha ln pi` for one row.
pub fn debias_row(logits: &[f64], pi: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if logits.len() != pi.len() {
        return Err(Error::shape(logits.len(), pi.len()));
    }
    if alpha == 0.0 {
        return Ok(logits.to_vec());
    }
    if pi.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::invalid("pi", "prior entries must be positive when alpha > 0"));
    }
    Ok(logits.iter().zip(pi).map(|(f, p)| f - alpha * p.ln()).collect())
}

/// Logit adjustment `f - alpha ln pi` applied to every row.
pub fn debias_logits(logits: &Array2<f64>, log_prior: &[f64], alpha: f64) -> Result<Array2<f64>> {
    if logits.ncols() != log_prior.len() {
        return Err(Error::shape(log_prior.len(), logits.ncols()));
    }
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        row.iter_mut().zip(log_prior).for_each(|(f, lp)| *f -= alpha * lp);
    }
    Ok(out)
}

/// `p^(1/t) / sum(p^(1/t))`, evaluated in log space.
pub fn sharpen(p: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid("temperature", format!("{temperature} must be > 0")));
    }
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || p.iter().all(|&x| x == 0.0) {
        return Err(Error::invalid("p", "must be a non-zero non-negative vector"));
    }
    let logs: Vec<f64> = p.iter().map(|&x| x.ln() / temperature).collect();
    Ok(softmax(&logs))
}

pub fn sharpen_rows(p: &Array2<f64>, temperature: f64) -> Result<Array2<f64>> {
    let mut out = p.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = sharpen(row.as_slice().expect("standard layout"), temperature)?;
        row.iter_mut().zip(s).for_each(|(d, v)| *d = v);
    }
    Ok(out)
}

/// `sharpen(softmax(f - alpha ln pi), t)` per row, which is
/// `softmax((f - alpha ln pi) / t)`.
pub fn pseudo_targets(logits: &Array2<f64>, log_prior: &[f64], cfg: &DebiasConfig) -> Result<Array2<f64>> {
    let adjusted = debias_logits(logits, log_prior, cfg.alpha)?;
    let mut out = Array2::zeros(logits.dim());
    for (src, mut dst) in adjusted.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let z: Vec<f64> = src.iter().map(|f| f / cfg.temperature).collect();
        let p = softmax(&z);
        dst.iter_mut().zip(p).for_each(|(d, v)| *d = v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn uniform_prior_reduces_to_cross_entropy() {
        let f = [1.0, -0.5, 2.0];
        let pi = [1.0 / 3.0; 3];
        let y = [0.0, 0.0, 1.0];
        let plain = crate::math::cross_entropy(&f, 2);
        for alpha in [0.0, 0.5, 1.0] {
            assert!((dml_loss(&f, &y, &pi, alpha).unwrap() - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_value() {
        // z = [0 + ln 0.5, 0 + ln 0.5] for alpha 1 equals a uniform shift.
        let l = dml_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.5, 0.5], 1.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        // z = [ln 0.8, ln 0.2] -> -ln 0.8
        let l = dml_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.8, 0.2], 1.0).unwrap();
        assert!((l + 0.8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_prior_entries_need_alpha_zero() {
        assert!(dml_loss(&[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0], 1.0).is_err());
        assert!(dml_loss(&[0.0, 1.0], &[1.0, 0.0], &[1.0, 0.0], 0.0).is_ok());
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let f = [0.3, -1.2, 0.7, 0.1];
        let y = [0.1, 0.2, 0.6, 0.1];
        let pi = [0.4, 0.1, 0.3, 0.2];
        let lg = dml_loss_grad(&f, &y, &pi, 0.8).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let mut a = f;
            let mut b = f;
            a[j] += h;
            b[j] -= h;
            let fd = (dml_loss(&a, &y, &pi, 0.8).unwrap() - dml_loss(&b, &y, &pi, 0.8).unwrap()) / (2.0 * h);
            assert!((fd - lg.grad[j]).abs() < 1e-7, "{j}: {fd} vs {}", lg.grad[j]);
        }
    }

    #[test]
    fn batch_agrees_with_rows() {
        let f = array![[0.3, -1.2, 0.7], [2.0, 0.0, -1.0]];
        let y = array![[0.0, 0.0, 1.0], [0.5, 0.5, 0.0]];
        let pi = [0.5, 0.3, 0.2];
        let lp: Vec<f64> = pi.iter().map(|p: &f64| p.ln()).collect();
        let (mean, g) = dml_batch(&f, &y, &lp, 0.7).unwrap();
        let mut expect = 0.0;
        for r in 0..2 {
            let lg = dml_loss_grad(f.row(r).as_slice().unwrap(), y.row(r).as_slice().unwrap(), &pi, 0.7).unwrap();
            expect += lg.loss / 2.0;
            for j in 0..3 {
                assert!((g[[r, j]] - lg.grad[j] / 2.0).abs() < 1e-12);
            }
        }
        assert!((mean - expect).abs() < 1e-12);
    }

    #[test]
    fn sharpen_known_values() {
        let s = sharpen(&[0.25, 0.75], 0.5).unwrap();
        assert!((s[0] - 0.1).abs() < 1e-12);
        assert!((s[1] - 0.9).abs() < 1e-12);
        assert_eq!(sharpen(&[0.2, 0.8], 1.0).unwrap().iter().map(|x| (x * 1e12).round()).collect::<Vec<_>>(), vec![0.2e12, 0.8e12]);
        assert!(sharpen(&[0.5, 0.5], 0.0).is_err());
        assert!(sharpen(&[0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn pseudo_targets_match_composition() {
        let f = array![[1.0, 0.2, -0.4]];
        let pi = [0.6, 0.3, 0.1];
        let lp: Vec<f64> = pi.iter().map(|p: &f64| p.ln()).collect();
        let cfg = DebiasConfig { alpha: 0.8, temperature: 0.5 };
        let got = pseudo_targets(&f, &lp, &cfg).unwrap();
        let manual = sharpen(&softmax(&debias_row(f.row(0).as_slice().unwrap(), &pi, 0.8).unwrap()), 0.5).unwrap();
        for j in 0..3 {
            assert!((got[[0, j]] - manual[j]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn sharpen_preserves_argmax_and_sums_to_one(raw in prop::collection::vec(0.01f64..1.0, 2..10), t in 0.05f64..1.0) {
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let q = sharpen(&p, t).unwrap();
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let top = crate::math::argmax(&p);
            prop_assert!(q[top] >= p[top] - 1e-12);
            prop_assert!(q.iter().all(|&x| x <= q[top] + 1e-15));
        }

        #[test]
        fn loss_is_non_negative_for_distributions(f in prop::collection::vec(-5.0f64..5.0, 3), alpha in 0.0f64..2.0, k in 0usize..3) {
            let pi = [0.5, 0.3, 0.2];
            let mut y = [0.0; 3];
            y[k] = 1.0;
            prop_assert!(dml_loss(&f, &y, &pi, alpha).unwrap() >= 0.0);
        }
    }
}
