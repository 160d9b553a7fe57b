use std::ops::Range;

use ndarray::Array2;
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::model::{DualHeadClassifier, ModelSpec, ParamGroups};
use super::optim::Sgd;
use crate::datagen::{AugmentationPolicy, AugmentedBatch, BatchIterator, BatchSource, TrainView, Views};
use crate::debias::dml_batch;
use crate::error::{Error, Result};
use crate::math::{one_hot, softmax_rows};
use crate::parallel;
use crate::seeding::{derive_key, stream};

/// Loader tag for warm-up batches; net `k` uses `WARMUP_TAG + k`.
pub const WARMUP_TAG: u64 = 0x100;

/// Two identically shaped networks with independent parameters and optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerPair {
    pub nets: [DualHeadClassifier; 2],
    pub optims: [Sgd; 2],
}

/// Batching inputs shared by warm-up epochs.
#[derive(Debug, Clone, Copy)]
pub struct WarmupPlan<'a> {
    pub policy: &'a AugmentationPolicy,
    pub batch_size: usize,
    pub seed: u64,
}

impl PeerPair {
    /// Net `k` is initialized from `derive_key(seed, [INIT, k])`.
    pub fn new(spec: ModelSpec, seed: u64, momentum: f64, weight_decay: f64) -> Result<Self> {
        let net = |k: u64| DualHeadClassifier::new(spec.clone(), derive_key(seed, &[stream::INIT, k]));
        Ok(Self {
            nets: [net(0)?, net(1)?],
            optims: [Sgd::new(momentum, weight_decay), Sgd::new(momentum, weight_decay)],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.nets[0].num_classes()
    }

    /// Mean of the two primary-head logit matrices.
    pub fn ensemble_logits(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        let (a, b) = parallel::join(|| self.nets[0].predict(x), || self.nets[1].predict(x));
        Ok((a? + b?) * 0.5)
    }

    /// Softmax of the averaged primary-head logits.
    pub fn ensemble_predict(&self, x: &Array4<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.ensemble_logits(x)?))
    }

    /// Plain cross-entropy on every observed label, primary head only. The
    /// auxiliary head is never touched. Returns the mean batch loss per net
    /// and epoch.
    pub fn warmup(
        &mut self,
        data: TrainView<'_>,
        plan: &WarmupPlan<'_>,
        epochs: Range<usize>,
        lr: impl Fn(usize) -> f64 + Sync,
    ) -> Result<Vec<[f64; 2]>> {
        if epochs.is_empty() {
            return Err(Error::invalid("epochs", "warm-up needs at least one epoch"));
        }
        let mut out = Vec::with_capacity(epochs.len());
        for epoch in epochs {
            out.push(self.warmup_epoch(data, plan, epoch, lr(epoch))?);
        }
        Ok(out)
    }

    pub fn warmup_epoch(
        &mut self,
        data: TrainView<'_>,
        plan: &WarmupPlan<'_>,
        epoch: usize,
        lr: f64,
    ) -> Result<[f64; 2]> {
        let samples: Vec<(usize, usize)> = data.noisy_labels.iter().copied().enumerate().collect();
        let [n0, n1] = &mut self.nets;
        let [o0, o1] = &mut self.optims;
        let run = |k: usize, net: &mut DualHeadClassifier, opt: &mut Sgd| -> Result<f64> {
            let source = BatchSource {
                images: data.images,
                policy: plan.policy,
                seed: plan.seed,
                tag: WARMUP_TAG + k as u64,
            };
            let mut total = 0.0;
            let mut steps = 0;
            for batch in BatchIterator::new(source, &samples, plan.batch_size, epoch, 0)?.with_views(Views::WEAK) {
                total += ce_step(net, opt, &batch, lr, ParamGroups::PRIMARY)?;
                steps += 1;
            }
            Ok(total / steps as f64)
        };
        let (a, b) = parallel::join(|| run(0, n0, o0), || run(1, n1, o1));
        Ok([a?, b?])
    }
}

/// One SGD step of mean cross-entropy on the primary head over weak views.
pub fn ce_step(
    net: &mut DualHeadClassifier,
    opt: &mut Sgd,
    batch: &AugmentedBatch,
    lr: f64,
    groups: ParamGroups,
) -> Result<f64> {
    let c = net.num_classes();
    let pass = net.forward_train(&batch.weak)?;
    let (loss, d) = dml_batch(&pass.logits, &one_hot(&batch.labels, c), &vec![0.0; c], 0.0)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("warm-up loss {loss}")));
    }
    let mut grads = net.zero_grads();
    net.backward(&pass, Some(&d), None, &mut grads);
    opt.step(net, &grads, lr, groups);
    Ok(loss)
}
