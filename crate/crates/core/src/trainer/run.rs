use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::epoch::{train_epoch, EpochPlan};
use super::losses::{LossBreakdown, StepOptions};
use crate::config::RunConfig;
use crate::datagen::cifar::{self, Variant as CifarVariant};
use crate::datagen::{
    apply_noise, load_bundle, make_imbalanced, DatasetBundle, ImbalanceSpec, Split,
};
use crate::debias::{pseudo_targets, PriorPair};
use crate::error::{Error, Result};
use crate::evalkit::{
    pseudo_label_metrics, selection_metrics, test_accuracy, LossRow, MetricsRow, RunSummary, LOSSES_FILE,
    METRICS_FILE,
};
use crate::math::argmax_view;
use crate::modelkit::{Checkpoint, ModelSpec, PeerPair, Quantity, WarmupPlan};
use crate::selector::{build_partition, write_selection_csv, SelectionState, Snapshot};
use crate::seeding::{derive_key, stream};

/// Loads or generates the configured `(train, test)` pair, then subsets,
/// imbalances and corrupts the training split in that order.
pub fn load_data(cfg: &RunConfig) -> Result<(DatasetBundle, DatasetBundle)> {
    let need_dir = || {
        cfg.resolved_data_dir()
            .ok_or_else(|| Error::Config(format!("dataset `{}` needs data_dir or {}", cfg.dataset, crate::config::DATA_DIR_ENV)))
    };
    let (mut train, test) = match cfg.dataset.as_str() {
        "synthetic" => cfg.synthetic_spec().generate()?,
        "cifar10" => cifar::load_dir(&need_dir()?, CifarVariant::Cifar10)?,
        "cifar100" => cifar::load_dir(&need_dir()?, CifarVariant::Cifar100)?,
        "prepared" => {
            let dir = need_dir()?;
            return Ok((load_bundle(&dir, Split::Train)?, load_bundle(&dir, Split::Test)?));
        }
        other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
    };
    if cfg.subset_per_class > 0 {
        train = train.balanced_subset(cfg.subset_per_class, derive_key(cfg.data_seed, &[stream::SUBSET]))?;
    }
    if cfg.imbalance > 1.0 {
        let spec = ImbalanceSpec { kappa: cfg.imbalance, seed: derive_key(cfg.seed, &[stream::IMBALANCE]) };
        train = make_imbalanced(&train, &spec)?;
    }
    let train = apply_noise(&train, &cfg.noise_spec()?)?;
    Ok((train, test))
}

/// Identity of the data a run trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub train_hash: String,
    pub test_hash: String,
    pub train_size: usize,
    pub test_size: usize,
    pub num_classes: usize,
    pub noise: String,
    pub corruption_rate: f64,
    pub seed: u64,
    pub data_seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Vec<MetricsRow>,
    pub losses: Vec<LossRow>,
    pub summary: RunSummary,
    /// Partitions of the last selection epoch, if any ran.
    pub final_states: Option<[SelectionState; 2]>,
    pub pair: PeerPair,
    pub priors: [PriorPair; 2],
}

fn loss_row(epoch: usize, net_id: usize, phase: &str, lr: f64, b: &LossBreakdown) -> LossRow {
    LossRow {
        epoch,
        net_id,
        phase: phase.into(),
        lr,
        l_x_primary: b.l_x_primary,
        l_x_aux: b.l_x_aux,
        l_u_aux: b.l_u_aux,
        l_cls: b.l_cls,
        l_cr: b.l_cr,
        l_mix: b.l_mix,
        l_total: b.l_total,
        gamma: b.gamma,
        lambda_u: b.lambda_u,
    }
}

/// Pseudo-label accuracy of each network on its own unlabelled set, from
/// the epoch-start snapshot and the network's unlabelled prior.
fn snapshot_pseudo_accuracy(
    snap: &Snapshot,
    states: &[SelectionState; 2],
    priors: &[PriorPair; 2],
    cfg: &RunConfig,
    true_labels: &[usize],
) -> Result<[Option<f64>; 2]> {
    let mut out = [None, None];
    for k in 0..2 {
        let ids = states[k].unlabeled_indices();
        if ids.is_empty() {
            continue;
        }
        let logits = snap.logits[k].select(ndarray::Axis(0), &ids);
        let targets = pseudo_targets(&logits, &priors[k].unlabeled.log_floored(), &cfg.debias())?;
        let labels: Vec<usize> = targets.rows().into_iter().map(argmax_view).collect();
        out[k] = pseudo_label_metrics(&ids, &labels, true_labels, snap.logits[k].ncols())?.map(|m| m.accuracy);
    }
    Ok(out)
}

struct Sink {
    metrics: Option<csv::Writer<fs::File>>,
    losses: Option<csv::Writer<fs::File>>,
    dir: Option<PathBuf>,
}

impl Sink {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self { metrics: None, losses: None, dir: None });
        };
        fs::create_dir_all(dir)?;
        Ok(Self {
            metrics: Some(csv::Writer::from_path(dir.join(METRICS_FILE))?),
            losses: Some(csv::Writer::from_path(dir.join(LOSSES_FILE))?),
            dir: Some(dir.to_path_buf()),
        })
    }

    fn write(&mut self, metrics: &[MetricsRow], losses: &[LossRow]) -> Result<()> {
        if let (Some(m), Some(l)) = (&mut self.metrics, &mut self.losses) {
            for r in metrics {
                m.serialize(r)?;
            }
            for r in losses {
                l.serialize(r)?;
            }
            m.flush()?;
            l.flush()?;
        }
        Ok(())
    }

    fn checkpoint(&self, name: &str, ck: impl FnOnce() -> Checkpoint) -> Result<()> {
        if let Some(dir) = &self.dir {
            let d = dir.join("checkpoints");
            fs::create_dir_all(&d)?;
            ck().save(&d.join(name))?;
        }
        Ok(())
    }
}

/// Writes the config copy and dataset record into `dir`.
pub fn write_run_header(dir: &Path, cfg: &RunConfig, train: &DatasetBundle, test: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let record = DatasetRecord {
        train_hash: train.content_hash(),
        test_hash: test.content_hash(),
        train_size: train.len(),
        test_size: test.len(),
        num_classes: train.num_classes(),
        noise: cfg.noise.clone(),
        corruption_rate: train.corruption_rate(),
        seed: cfg.seed,
        data_seed: cfg.data_seed,
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

/// Warm-up, then per epoch: partition, train both networks, evaluate.
/// Writes logs, checkpoints and plots into `run_dir` when given.
pub fn run(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let (train, test) = load_data(cfg)?;
    run_with_data(cfg, &train, &test, run_dir)
}

/// As [`run`], on already loaded data.
pub fn run_with_data(
    cfg: &RunConfig,
    train: &DatasetBundle,
    test: &DatasetBundle,
    run_dir: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if let Some(dir) = run_dir {
        write_run_header(dir, cfg, train, test)?;
    }
    let mut sink = Sink::open(run_dir)?;
    let c = train.num_classes();
    let spec = ModelSpec { input: train.image_dims(), num_classes: c, backbone: cfg.backbone_spec()? };
    let mut pair = PeerPair::new(spec, cfg.seed, cfg.momentum, cfg.weight_decay)?;
    let policy = cfg.augmentation_policy()?;
    let data = train.train_view();
    let sched = cfg.schedule();
    let warm = if cfg.ce_baseline { cfg.epochs } else { cfg.warmup_epochs };
    let lr_at = |e: usize| sched.value(e, Quantity::Lr);

    // Priors stay uniform through warm-up and start moving with the first
    // selection epoch.
    let mut priors = [PriorPair::uniform(c, cfg.prior_momentum), PriorPair::uniform(c, cfg.prior_momentum)];
    let periodic = |epoch: usize| {
        cfg.checkpoint_every > 0 && (epoch + 1).is_multiple_of(cfg.checkpoint_every) && epoch + 1 < cfg.epochs
    };
    let mut metrics = Vec::new();
    let mut losses = Vec::new();
    let plan = WarmupPlan { policy: &policy, batch_size: cfg.batch_size, seed: cfg.seed };
    for epoch in 0..warm {
        let lr = lr_at(epoch)?;
        let l = pair.warmup_epoch(data, &plan, epoch, lr)?;
        let acc = test_accuracy(&pair, test, cfg.eval_batch_size)?;
        let m: Vec<MetricsRow> = (1..=2)
            .map(|net_id| MetricsRow {
                epoch,
                net_id,
                precision: None,
                recall: None,
                f1: None,
                pseudo_acc: None,
                test_acc_net1: acc[0],
                test_acc_net2: acc[1],
                test_acc_ensemble: acc[2],
                n_labeled: train.len(),
                n_unlabeled: 0,
            })
            .collect();
        let ls: Vec<LossRow> = (0..2)
            .map(|k| {
                let b = LossBreakdown { l_x_primary: l[k], l_cls: l[k], l_total: l[k], ..Default::default() };
                loss_row(epoch, k + 1, "warmup", lr, &b)
            })
            .collect();
        log::info!("epoch {epoch} warm-up: ce {:.4}/{:.4}, test acc {:.4}", l[0], l[1], acc[2]);
        sink.write(&m, &ls)?;
        metrics.extend(m);
        losses.extend(ls);
        if periodic(epoch) {
            sink.checkpoint(&format!("epoch_{:04}.json", epoch + 1), || {
                Checkpoint::new(epoch + 1, cfg.seed, pair.clone(), priors.clone())
            })?;
        }
    }

    let filter = cfg.filter();
    let mut final_states = None;
    let mut selection_log = None;
    if cfg.dump_selection {
        selection_log = sink.dir.as_ref().map(|d| d.join("selection.csv"));
        if let Some(p) = &selection_log {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    }
    for epoch in warm..cfg.epochs {
        let (snap, states) = build_partition(&pair, data, &policy, cfg.seed, &filter, epoch)?;
        let pseudo = snapshot_pseudo_accuracy(&snap, &states, &priors, cfg, train.true_labels())?;
        let sel = [0, 1].map(|k| selection_metrics(&states[k], train.true_labels(), train.noisy_labels()));
        if let Some(p) = &selection_log {
            write_selection_csv(p, &states, train.noisy_labels())?;
        }
        let lr = lr_at(epoch)?;
        let step = StepOptions {
            debias: cfg.debias(),
            gamma: sched.value(epoch, Quantity::Gamma)?,
            lambda_u: if cfg.only_clean { 0.0 } else { sched.value(epoch, Quantity::LambdaU)? },
            use_aux_head: !cfg.no_cbr,
        };
        let plan = EpochPlan {
            data,
            policy: &policy,
            seed: cfg.seed,
            epoch,
            batch_size: cfg.batch_size,
            lr,
            step,
            mixup: cfg.mixup_spec(),
            only_clean: cfg.only_clean,
        };
        let l = train_epoch(&mut pair, &mut priors, &states, &plan)?;
        let acc = test_accuracy(&pair, test, cfg.eval_batch_size)?;
        let m: Vec<MetricsRow> = (0..2)
            .map(|k| MetricsRow {
                epoch,
                net_id: k + 1,
                precision: Some(sel[k].precision),
                recall: Some(sel[k].recall),
                f1: Some(sel[k].f1),
                pseudo_acc: pseudo[k],
                test_acc_net1: acc[0],
                test_acc_net2: acc[1],
                test_acc_ensemble: acc[2],
                n_labeled: states[k].num_clean(),
                n_unlabeled: states[k].len() - states[k].num_clean(),
            })
            .collect();
        let ls: Vec<LossRow> = (0..2).map(|k| loss_row(epoch, k + 1, "train", lr, &l[k])).collect();
        log::info!(
            "epoch {epoch}: |D_l| {}/{}, precision {:.4}/{:.4}, recall {:.4}/{:.4}, loss {:.4}/{:.4}, test acc {:.4}",
            m[0].n_labeled,
            m[1].n_labeled,
            sel[0].precision,
            sel[1].precision,
            sel[0].recall,
            sel[1].recall,
            l[0].l_total,
            l[1].l_total,
            acc[2]
        );
        sink.write(&m, &ls)?;
        metrics.extend(m);
        losses.extend(ls);
        if periodic(epoch) {
            sink.checkpoint(&format!("epoch_{:04}.json", epoch + 1), || {
                Checkpoint::new(epoch + 1, cfg.seed, pair.clone(), priors.clone())
            })?;
        }
        final_states = Some(states);
    }
    sink.checkpoint("final.json", || Checkpoint::new(cfg.epochs, cfg.seed, pair.clone(), priors.clone()))?;
    let summary = RunSummary::from_rows(cfg.name.clone(), &metrics)?;
    Ok(RunOutcome { metrics, losses, summary, final_states, pair, priors })
}

