use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::debias::{dml_batch, pseudo_targets, DebiasConfig, PriorPair};
use crate::error::{Error, Result};
use crate::math::softmax_rows;
use crate::modelkit::{DualHeadClassifier, ForwardPass, Gradients};
use crate::seeding::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupSpec {
    /// Shape of the symmetric Beta distribution the mixing weight is drawn from.
    pub beta_param: f64,
    pub enabled: bool,
}

impl MixupSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_param > 0.0) || !self.beta_param.is_finite() {
            return Err(Error::invalid("mixup_beta", format!("{} must be > 0", self.beta_param)));
        }
        Ok(())
    }

    pub fn sample_weight(&self, rng: &mut Rng) -> Result<f64> {
        self.validate()?;
        let beta = Beta::new(self.beta_param, self.beta_param).map_err(|e| Error::invalid("mixup_beta", e.to_string()))?;
        Ok(beta.sample(rng))
    }
}

/// `(sigma x_i + (1 - sigma) x_j, sigma y_i + (1 - sigma) y_j)`.
pub fn mixup_pair(
    xi: ArrayView3<'_, f64>,
    xj: ArrayView3<'_, f64>,
    yi: &[f64],
    yj: &[f64],
    sigma: f64,
) -> (Array3<f64>, Vec<f64>) {
    let x = &xi * sigma + &xj * (1.0 - sigma);
    let y = yi.iter().zip(yj).map(|(a, b)| sigma * a + (1.0 - sigma) * b).collect();
    (x, y)
}

/// Mixes row `i` with row `perm[i]` for every `i`, with one shared weight.
pub fn mixup_batch(x: &Array4<f64>, y: &Array2<f64>, perm: &[usize], sigma: f64) -> (Array4<f64>, Array2<f64>) {
    let partner_x = x.select(Axis(0), perm);
    let partner_y = y.select(Axis(0), perm);
    (x * sigma + &partner_x * (1.0 - sigma), y * sigma + &partner_y * (1.0 - sigma))
}

/// Draws a mixing weight and an in-batch partner permutation.
pub fn draw_mixup(spec: &MixupSpec, batch: usize, rng: &mut Rng) -> Result<(f64, Vec<usize>)> {
    let sigma = spec.sample_weight(rng)?;
    let mut perm: Vec<usize> = (0..batch).collect();
    perm.shuffle(rng);
    Ok((sigma, perm))
}

/// Per-step loss terms, each a batch mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_x_primary: f64,
    pub l_x_aux: f64,
    pub l_u_aux: f64,
    pub l_cls: f64,
    pub l_cr: f64,
    pub l_mix: f64,
    pub l_total: f64,
    pub gamma: f64,
    pub lambda_u: f64,
}

impl LossBreakdown {
    fn compose(l_x_primary: f64, l_x_aux: f64, l_u_aux: f64, l_cr: f64, l_mix: f64, gamma: f64, lambda_u: f64) -> Self {
        let l_cls = l_x_primary + l_x_aux + lambda_u * l_u_aux;
        Self {
            l_x_primary,
            l_x_aux,
            l_u_aux,
            l_cls,
            l_cr,
            l_mix,
            l_total: l_cls + gamma * (l_cr + l_mix),
            gamma,
            lambda_u,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_x_primary, self.l_x_aux, self.l_u_aux, self.l_cls, self.l_cr, self.l_mix, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Mean over a non-empty slice of step breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let mut m = Self::default();
        for b in items {
            m.l_x_primary += b.l_x_primary / n;
            m.l_x_aux += b.l_x_aux / n;
            m.l_u_aux += b.l_u_aux / n;
            m.l_cls += b.l_cls / n;
            m.l_cr += b.l_cr / n;
            m.l_mix += b.l_mix / n;
            m.l_total += b.l_total / n;
            m.gamma += b.gamma / n;
            m.lambda_u += b.lambda_u / n;
        }
        m
    }
}

/// Loss weights and switches for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub debias: DebiasConfig,
    pub gamma: f64,
    pub lambda_u: f64,
    /// When false, pseudo-label terms train the primary head and the
    /// auxiliary head is unused.
    pub use_aux_head: bool,
}

#[derive(Debug, Clone)]
pub struct LabeledViews {
    pub weak: Array4<f64>,
    pub strong: Array4<f64>,
    /// Row-stochastic targets, one-hot for hard labels.
    pub targets: Array2<f64>,
    /// Mixed inputs and soft targets; absent when mixup is off.
    pub mixed: Option<(Array4<f64>, Array2<f64>)>,
}

#[derive(Debug, Clone)]
pub struct UnlabeledViews {
    pub weak: Array4<f64>,
    pub strong: Array4<f64>,
}

/// Inputs to one optimizer step. Either side may be absent.
#[derive(Debug, Clone, Default)]
pub struct StepInput {
    pub labeled: Option<LabeledViews>,
    pub unlabeled: Option<UnlabeledViews>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub losses: LossBreakdown,
    pub grads: Gradients,
    /// Mean primary-head probabilities on the weak labelled and unlabelled views.
    pub labeled_mean_probs: Option<Vec<f64>>,
    pub unlabeled_mean_probs: Option<Vec<f64>>,
    /// The targets the unlabelled terms were scored against.
    pub pseudo_targets: Option<Array2<f64>>,
}

struct Term {
    loss: f64,
    grad: Array2<f64>,
}

fn term(logits: &Array2<f64>, targets: &Array2<f64>, log_prior: &[f64], alpha: f64, weight: f64) -> Result<Term> {
    let (loss, mut grad) = dml_batch(logits, targets, log_prior, alpha)?;
    grad *= weight;
    Ok(Term { loss, grad })
}

/// Accumulates head-wise logit gradients for one forward pass.
struct PassGrad<'a> {
    pass: &'a ForwardPass,
    d_h: Option<Array2<f64>>,
    d_ap: Option<Array2<f64>>,
}

impl<'a> PassGrad<'a> {
    fn new(pass: &'a ForwardPass) -> Self {
        Self { pass, d_h: None, d_ap: None }
    }

    fn add(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
        match slot {
            Some(acc) => *acc += &g,
            None => *slot = Some(g),
        }
    }

    fn backward(self, net: &DualHeadClassifier, grads: &mut Gradients) {
        net.backward(self.pass, self.d_h.as_ref(), self.d_ap.as_ref(), grads);
    }
}

fn mean_rows(p: &Array2<f64>) -> Vec<f64> {
    p.mean_axis(Axis(0)).expect("non-empty").to_vec()
}

/// Scores one labelled pass: DML of the primary head and, when enabled, of
/// the auxiliary head against `targets` under the labelled prior.
fn supervised_terms(
    pass: &ForwardPass,
    targets: &Array2<f64>,
    log_pl: &[f64],
    opts: &StepOptions,
    weight: f64,
    acc: &mut PassGrad<'_>,
) -> Result<(f64, f64)> {
    let alpha = opts.debias.alpha;
    let h = term(&pass.logits, targets, log_pl, alpha, weight)?;
    PassGrad::add(&mut acc.d_h, h.grad);
    let mut aux_loss = 0.0;
    if opts.use_aux_head {
        let ap = term(&pass.aux_logits, targets, log_pl, alpha, weight)?;
        PassGrad::add(&mut acc.d_ap, ap.grad);
        aux_loss = ap.loss;
    }
    Ok((h.loss, aux_loss))
}

/// Scores one unlabelled pass against pseudo-targets under the unlabelled
/// prior, on the auxiliary head (or the primary head when it is disabled).
fn unsupervised_term(
    pass: &ForwardPass,
    targets: &Array2<f64>,
    log_pu: &[f64],
    opts: &StepOptions,
    weight: f64,
    acc: &mut PassGrad<'_>,
) -> Result<f64> {
    let alpha = opts.debias.alpha;
    if opts.use_aux_head {
        let t = term(&pass.aux_logits, targets, log_pu, alpha, weight)?;
        PassGrad::add(&mut acc.d_ap, t.grad);
        Ok(t.loss)
    } else {
        let t = term(&pass.logits, targets, log_pu, alpha, weight)?;
        PassGrad::add(&mut acc.d_h, t.grad);
        Ok(t.loss)
    }
}

/// `(l_x_primary, l_x_aux)` for a labelled batch, without gradients.
pub fn supervised_loss(
    net: &DualHeadClassifier,
    weak: &Array4<f64>,
    targets: &Array2<f64>,
    priors: &PriorPair,
    opts: &StepOptions,
) -> Result<(f64, f64)> {
    if weak.len_of(Axis(0)) == 0 {
        log::warn!("empty clean batch; supervised terms are zero");
        return Ok((0.0, 0.0));
    }
    let pass = net.forward_train(weak)?;
    let mut sink = PassGrad::new(&pass);
    supervised_terms(&pass, targets, &priors.labeled.log_floored(), opts, 1.0, &mut sink)
}

/// `l_u_aux` for an unlabelled batch: debiased, sharpened primary-head
/// predictions on the weak view score the auxiliary head on the same view.
pub fn unsupervised_loss(
    net: &DualHeadClassifier,
    weak: &Array4<f64>,
    priors: &PriorPair,
    opts: &StepOptions,
) -> Result<f64> {
    if weak.len_of(Axis(0)) == 0 {
        return Ok(0.0);
    }
    let pass = net.forward_train(weak)?;
    let log_pu = priors.unlabeled.log_floored();
    let targets = pseudo_targets(&pass.logits, &log_pu, &opts.debias)?;
    let mut sink = PassGrad::new(&pass);
    unsupervised_term(&pass, &targets, &log_pu, opts, 1.0, &mut sink)
}

/// `l_cr`: the classification composite with every prediction taken from
/// strong views while targets stay the labels and the weak-view pseudo-targets.
pub fn consistency_loss(
    net: &DualHeadClassifier,
    labeled: Option<(&Array4<f64>, &Array2<f64>)>,
    unlabeled: Option<(&Array4<f64>, &Array2<f64>)>,
    priors: &PriorPair,
    opts: &StepOptions,
) -> Result<f64> {
    let mut total = 0.0;
    if let Some((strong, targets)) = labeled {
        let pass = net.forward_train(strong)?;
        let mut sink = PassGrad::new(&pass);
        let (a, b) = supervised_terms(&pass, targets, &priors.labeled.log_floored(), opts, 1.0, &mut sink)?;
        total += a + b;
    }
    if let Some((strong, targets)) = unlabeled {
        let pass = net.forward_train(strong)?;
        let mut sink = PassGrad::new(&pass);
        total += opts.lambda_u * unsupervised_term(&pass, targets, &priors.unlabeled.log_floored(), opts, 1.0, &mut sink)?;
    }
    Ok(total)
}

/// Full step objective and its gradient for one network.
///
/// `pseudo` overrides the pseudo-targets; when absent they are computed from
/// the primary head on the weak unlabelled views and held constant.
pub fn step_loss(
    net: &DualHeadClassifier,
    input: &StepInput,
    priors: &PriorPair,
    opts: &StepOptions,
    pseudo: Option<&Array2<f64>>,
) -> Result<StepOutput> {
    let log_pl = priors.labeled.log_floored();
    let log_pu = priors.unlabeled.log_floored();
    let (gamma, lambda_u) = (opts.gamma, opts.lambda_u);
    let mut grads = net.zero_grads();
    let (mut lxp, mut lxa, mut lu, mut lcr, mut lmix) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut labeled_mean_probs = None;
    let mut unlabeled_mean_probs = None;
    let mut targets_used = None;

    if let Some(l) = input.labeled.as_ref().filter(|l| l.weak.len_of(Axis(0)) > 0) {
        let weak = net.forward_train(&l.weak)?;
        labeled_mean_probs = Some(mean_rows(&softmax_rows(&weak.logits)));
        let mut acc = PassGrad::new(&weak);
        (lxp, lxa) = supervised_terms(&weak, &l.targets, &log_pl, opts, 1.0, &mut acc)?;
        acc.backward(net, &mut grads);

        let strong = net.forward_train(&l.strong)?;
        let mut acc = PassGrad::new(&strong);
        let (a, b) = supervised_terms(&strong, &l.targets, &log_pl, opts, gamma, &mut acc)?;
        lcr += a + b;
        acc.backward(net, &mut grads);

        if let Some((x, y)) = &l.mixed {
            let mixed = net.forward_train(x)?;
            let mut acc = PassGrad::new(&mixed);
            let (a, b) = supervised_terms(&mixed, y, &log_pl, opts, gamma, &mut acc)?;
            lmix = a + b;
            acc.backward(net, &mut grads);
        }
    } else if input.labeled.is_some() {
        log::warn!("empty clean batch; supervised terms are zero");
    }

    if let Some(u) = input.unlabeled.as_ref().filter(|u| u.weak.len_of(Axis(0)) > 0) {
        let weak = net.forward_train(&u.weak)?;
        unlabeled_mean_probs = Some(mean_rows(&softmax_rows(&weak.logits)));
        let targets = match pseudo {
            Some(t) => t.clone(),
            None => pseudo_targets(&weak.logits, &log_pu, &opts.debias)?,
        };
        let mut acc = PassGrad::new(&weak);
        lu = unsupervised_term(&weak, &targets, &log_pu, opts, lambda_u, &mut acc)?;
        acc.backward(net, &mut grads);

        let strong = net.forward_train(&u.strong)?;
        let mut acc = PassGrad::new(&strong);
        lcr += lambda_u * unsupervised_term(&strong, &targets, &log_pu, opts, gamma * lambda_u, &mut acc)?;
        acc.backward(net, &mut grads);
        targets_used = Some(targets);
    }

    let losses = LossBreakdown::compose(lxp, lxa, lu, lcr, lmix, gamma, lambda_u);
    if !losses.is_finite() {
        return Err(Error::NonFinite(format!("step loss {losses:?}")));
    }
    Ok(StepOutput {
        losses,
        grads,
        labeled_mean_probs,
        unlabeled_mean_probs,
        pseudo_targets: targets_used,
    })
}
