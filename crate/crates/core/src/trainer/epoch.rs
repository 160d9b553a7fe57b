use super::losses::{draw_mixup, mixup_batch, step_loss, LabeledViews, LossBreakdown, MixupSpec, StepInput, StepOptions, UnlabeledViews};
use crate::datagen::{AugmentationPolicy, AugmentedBatch, BatchSource, CyclingBatches, TrainView, Views};
use crate::debias::PriorPair;
use crate::error::{Error, Result};
use crate::math::one_hot;
use crate::modelkit::{DualHeadClassifier, ParamGroups, PeerPair, Sgd};
use crate::parallel;
use crate::selector::SelectionState;
use crate::seeding::{derive_rng, stream};

/// Loader tags for clean-set and unlabelled batches; net `k` adds `k`.
pub const LABELED_TAG: u64 = 0x300;
pub const UNLABELED_TAG: u64 = 0x310;

/// Everything one training epoch needs besides model state.
#[derive(Debug, Clone, Copy)]
pub struct EpochPlan<'a> {
    pub data: TrainView<'a>,
    pub policy: &'a AugmentationPolicy,
    pub seed: u64,
    pub epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub step: StepOptions,
    pub mixup: MixupSpec,
    /// Ignore the unlabelled set entirely.
    pub only_clean: bool,
}

fn labeled_views(batch: AugmentedBatch, c: usize, plan: &EpochPlan<'_>, net_id: usize, step: usize) -> Result<LabeledViews> {
    let targets = one_hot(&batch.labels, c);
    let mixed = if plan.mixup.enabled {
        let mut rng = derive_rng(plan.seed, &[stream::MIXUP, net_id as u64, plan.epoch as u64, step as u64]);
        let (sigma, perm) = draw_mixup(&plan.mixup, batch.len(), &mut rng)?;
        Some(mixup_batch(&batch.mix, &targets, &perm, sigma))
    } else {
        None
    };
    Ok(LabeledViews { weak: batch.weak, strong: batch.strong, targets, mixed })
}

/// One epoch for one network over its own partition. Each step pairs a
/// clean batch with an unlabelled batch of the same size; the shorter stream
/// cycles. Returns the mean step breakdown.
pub fn train_network(
    net: &mut DualHeadClassifier,
    opt: &mut Sgd,
    priors: &mut PriorPair,
    state: &SelectionState,
    plan: &EpochPlan<'_>,
) -> Result<LossBreakdown> {
    let k = state.network;
    let c = net.num_classes();
    let labeled = state.labeled_pairs(plan.data.noisy_labels);
    let unlabeled: Vec<(usize, usize)> = if plan.only_clean {
        Vec::new()
    } else {
        state.unlabeled_indices().into_iter().map(|i| (i, plan.data.noisy_labels[i])).collect()
    };
    if labeled.is_empty() {
        log::warn!("epoch {}: network {} has an empty clean set", plan.epoch, k + 1);
    }
    let source = |tag: u64| BatchSource { images: plan.data.images, policy: plan.policy, seed: plan.seed, tag };
    let mut l_stream = (!labeled.is_empty())
        .then(|| CyclingBatches::new(source(LABELED_TAG + k as u64), &labeled, plan.batch_size, plan.epoch))
        .transpose()?;
    let mut u_stream = (!unlabeled.is_empty())
        .then(|| {
            CyclingBatches::new(source(UNLABELED_TAG + k as u64), &unlabeled, plan.batch_size, plan.epoch)
                .map(|s| s.with_views(Views::WEAK_STRONG))
        })
        .transpose()?;
    let steps = labeled.len().max(unlabeled.len()).div_ceil(plan.batch_size);
    let groups = if plan.step.use_aux_head { ParamGroups::ALL } else { ParamGroups::PRIMARY };
    let mut record = Vec::with_capacity(steps);
    for step in 0..steps {
        let input = StepInput {
            labeled: l_stream.as_mut().map(|s| labeled_views(s.next_batch(), c, plan, k, step)).transpose()?,
            unlabeled: u_stream.as_mut().map(|s| {
                let b = s.next_batch();
                UnlabeledViews { weak: b.weak, strong: b.strong }
            }),
        };
        let out = step_loss(net, &input, priors, &plan.step, None).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("epoch {} net {} step {step}: {what}", plan.epoch, k + 1)),
            other => other,
        })?;
        opt.step(net, &out.grads, plan.lr, groups);
        if let Some(m) = &out.labeled_mean_probs {
            priors.labeled.update_with_mean(m)?;
        }
        if let Some(m) = &out.unlabeled_mean_probs {
            priors.unlabeled.update_with_mean(m)?;
        }
        record.push(out.losses);
    }
    Ok(LossBreakdown::mean(&record))
}

/// Trains both networks for one epoch, each on its own partition.
pub fn train_epoch(
    pair: &mut PeerPair,
    priors: &mut [PriorPair; 2],
    states: &[SelectionState; 2],
    plan: &EpochPlan<'_>,
) -> Result<[LossBreakdown; 2]> {
    if states[0].len() != plan.data.len() || states[1].len() != plan.data.len() {
        return Err(Error::shape(plan.data.len(), states[0].len()));
    }
    let [n0, n1] = &mut pair.nets;
    let [o0, o1] = &mut pair.optims;
    let [p0, p1] = priors;
    let (a, b) = parallel::join(
        || train_network(n0, o0, p0, &states[0], plan),
        || train_network(n1, o1, p1, &states[1], plan),
    );
    Ok([a?, b?])
}

/// Number of steps an epoch takes for a partition.
pub fn steps_for(state: &SelectionState, batch_size: usize, only_clean: bool) -> usize {
    let l = state.num_clean();
    let u = if only_clean { 0 } else { state.len() - l };
    l.max(u).div_ceil(batch_size)
}
