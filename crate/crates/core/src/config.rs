//! Flat run configuration, serialized as TOML.
//!
//! Every key is optional in a file; missing keys take the full-scale defaults.
//! [`RunConfig::desk`] overrides the scale-dependent keys for CPU-sized runs.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{cifar10_asymmetric_mapping, AugmentationPolicy, NoiseKind, NoiseSpec, SyntheticSpec};
use crate::debias::DebiasConfig;
use crate::error::{Error, Result};
use crate::modelkit::{BackboneSpec, ScheduleSpec};
use crate::selector::FilterConfig;
use crate::seeding::{derive_key, stream};
use crate::trainer::MixupSpec;

/// Cache directory for datasets when `data_dir` is unset.
pub const DATA_DIR_ENV: &str = "PROMIX_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// `synthetic`, `cifar10`, `cifar100` or `prepared` (a `prepare` output directory).
    pub dataset: String,
    pub data_dir: Option<PathBuf>,
    /// Balanced per-class training subset; `0` keeps every sample.
    pub subset_per_class: usize,
    /// `none`, `sym:R`, `asym:R` or `file:PATH`.
    pub noise: String,
    /// Class map for asymmetric noise; defaults to the CIFAR-10 pairs.
    pub asym_mapping: Option<Vec<usize>>,
    /// Imbalance factor; `1` keeps classes balanced.
    pub imbalance: f64,

    pub synth_classes: usize,
    pub synth_train_per_class: usize,
    pub synth_test_per_class: usize,
    pub synth_side: usize,
    pub synth_distractor: f64,
    pub synth_nuisance: f64,
    pub synth_pixel_noise: f64,
    pub data_seed: u64,

    /// `mlp` or `cnn`.
    pub backbone: String,
    pub mlp_pool: usize,
    pub mlp_hidden: Vec<usize>,
    pub cnn_channels: Vec<usize>,
    pub feature_dim: usize,
    /// `randaugment`, `weak` or `none`.
    pub augmentation: String,
    /// Pixels of padding before the random crop.
    pub crop_padding: usize,

    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,

    pub filter_rate: f64,
    pub tau: f64,
    pub cap_ratio: f64,
    pub lga_start: usize,
    pub balanced_css: bool,

    pub alpha: f64,
    pub temperature: f64,
    pub prior_momentum: f64,
    pub mixup_beta: f64,
    pub mixup: bool,
    pub gamma_max: f64,
    pub lambda_u_max: f64,
    pub ramp_epochs: usize,

    pub seed: u64,

    pub no_mhcs: bool,
    pub no_css: bool,
    pub no_lga: bool,
    pub no_cbr: bool,
    pub no_dbr: bool,
    pub only_clean: bool,
    /// Cross-entropy on all observed labels for every epoch.
    pub ce_baseline: bool,

    /// Checkpoint period in epochs; `0` saves only the final state.
    pub checkpoint_every: usize,
    pub dump_selection: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "promix".into(),
            dataset: "cifar10".into(),
            data_dir: None,
            subset_per_class: 0,
            noise: "sym:0.5".into(),
            asym_mapping: None,
            imbalance: 1.0,
            synth_classes: 10,
            synth_train_per_class: 500,
            synth_test_per_class: 200,
            synth_side: 32,
            synth_distractor: 0.8,
            synth_nuisance: 0.6,
            synth_pixel_noise: 0.12,
            data_seed: 0,
            backbone: "cnn".into(),
            mlp_pool: 4,
            mlp_hidden: vec![256, 128],
            cnn_channels: vec![32, 64, 128, 256],
            feature_dim: 512,
            augmentation: "randaugment".into(),
            crop_padding: 4,
            epochs: 600,
            warmup_epochs: 10,
            batch_size: 256,
            eval_batch_size: 512,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            filter_rate: 0.5,
            tau: 0.99,
            cap_ratio: 0.9,
            lga_start: 250,
            balanced_css: true,
            alpha: 0.8,
            temperature: 0.5,
            prior_momentum: 0.9999,
            mixup_beta: 4.0,
            mixup: true,
            gamma_max: 1.0,
            lambda_u_max: 0.1,
            ramp_epochs: 50,
            seed: 0,
            no_mhcs: false,
            no_css: false,
            no_lga: false,
            no_cbr: false,
            no_dbr: false,
            only_clean: false,
            ce_baseline: false,
            checkpoint_every: 50,
            dump_selection: false,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// Full-scale settings.
    pub fn full() -> Self {
        Self::default()
    }

    /// CPU-sized settings: a 5k-sample ten-class set of 16x16 images with
    /// overlapping classes, 20% symmetric noise, a small MLP, 60 epochs.
    /// Crops are off so that plain CE can memorize within the budget.
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            dataset: "synthetic".into(),
            subset_per_class: 500,
            noise: "sym:0.2".into(),
            synth_side: 16,
            synth_distractor: 1.0,
            synth_nuisance: 1.0,
            synth_pixel_noise: 0.2,
            backbone: "mlp".into(),
            mlp_pool: 2,
            mlp_hidden: vec![128, 64],
            crop_padding: 0,
            epochs: 60,
            warmup_epochs: 5,
            lga_start: 30,
            batch_size: 64,
            lr: 0.02,
            filter_rate: 0.7,
            tau: 0.99,
            checkpoint_every: 0,
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            _ => Err(Error::Config(format!("unknown profile `{name}` (expected desk or full)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Applies one `key=value` override using TOML value syntax, falling
    /// back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let value = value.trim();
        let mut table: toml::Table = toml::from_str(&self.to_toml()?)?;
        if !table.contains_key(key) && !matches!(key, "data_dir" | "asym_mapping") {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        *self = toml::Value::Table(table).try_into()?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !matches!(self.dataset.as_str(), "synthetic" | "cifar10" | "cifar100" | "prepared") {
            return bad(format!("dataset `{}` is not synthetic, cifar10, cifar100 or prepared", self.dataset));
        }
        let noise = self.noise_spec()?;
        if self.dataset == "prepared" && noise.kind != NoiseKind::None {
            return bad("prepared datasets already carry their noise; set noise = \"none\"".into());
        }
        if !(self.imbalance >= 1.0) {
            return bad(format!("imbalance {} must be >= 1", self.imbalance));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("epochs and batch sizes must be positive".into());
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay >= 0".into());
        }
        if !(0.0..1.0).contains(&self.prior_momentum) {
            return bad(format!("prior_momentum {} not in [0, 1)", self.prior_momentum));
        }
        if !self.ce_baseline {
            self.schedule().validate()?;
            self.filter().validate()?;
            if self.no_css && self.no_mhcs && self.no_lga {
                return bad("every selection stage is disabled".into());
            }
        }
        self.debias().validate()?;
        self.mixup_spec().validate()?;
        self.augmentation_policy()?;
        self.backbone_spec()?;
        if self.dataset == "synthetic" {
            self.synthetic_spec().validate()?;
        }
        Ok(())
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        let mut spec = NoiseSpec::from_str(&self.noise)?;
        spec.seed = derive_key(self.seed, &[stream::NOISE]);
        if spec.kind == NoiseKind::Asymmetric {
            spec.asym_mapping = Some(self.asym_mapping.clone().unwrap_or_else(cifar10_asymmetric_mapping));
        }
        Ok(spec)
    }

    pub fn augmentation_policy(&self) -> Result<AugmentationPolicy> {
        Ok(AugmentationPolicy { crop_padding: self.crop_padding, ..AugmentationPolicy::by_name(&self.augmentation)? })
    }

    pub fn backbone_spec(&self) -> Result<BackboneSpec> {
        match self.backbone.as_str() {
            "mlp" => Ok(BackboneSpec::Mlp { pool: self.mlp_pool, hidden: self.mlp_hidden.clone() }),
            "cnn" => Ok(BackboneSpec::Cnn { channels: self.cnn_channels.clone(), feature_dim: self.feature_dim }),
            other => Err(Error::Config(format!("backbone `{other}` is not mlp or cnn"))),
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.synth_classes,
            train_per_class: self.synth_train_per_class,
            test_per_class: self.synth_test_per_class,
            side: self.synth_side,
            distractor: self.synth_distractor,
            nuisance: self.synth_nuisance,
            pixel_noise: self.synth_pixel_noise,
            seed: self.data_seed,
            ..SyntheticSpec::default()
        }
    }

    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec {
            total_epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            lr0: self.lr,
            gamma_max: self.gamma_max,
            lambda_u_max: self.lambda_u_max,
            ramp_epochs: self.ramp_epochs,
            lga_start: self.lga_start,
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            filter_rate: self.filter_rate,
            confidence_threshold: self.tau,
            cap_ratio: self.cap_ratio,
            lga_start: self.lga_start,
            balanced_css: self.balanced_css,
            use_css: !self.no_css,
            use_mhcs: !self.no_mhcs,
            use_lga: !self.no_lga,
        }
    }

    /// Debiasing is switched off by `no_dbr`, which zeroes `alpha`.
    pub fn debias(&self) -> DebiasConfig {
        DebiasConfig {
            alpha: if self.no_dbr { 0.0 } else { self.alpha },
            temperature: self.temperature,
        }
    }

    pub fn mixup_spec(&self) -> MixupSpec {
        MixupSpec { beta_param: self.mixup_beta, enabled: self.mixup }
    }

    pub fn resolved_data_dir(&self) -> Option<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }
}

/// Named ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    ProMix,
    /// Base selection only, without matched high-confidence selection.
    NoMhcs,
    /// Matched high-confidence selection only.
    NoBaseSelection,
    NoLga,
    NoCbr,
    NoDbr,
    OnlyClean,
    /// Label guessing off and debiasing off.
    NoLgaNoDbr,
    CeBaseline,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::ProMix,
        Variant::NoMhcs,
        Variant::NoBaseSelection,
        Variant::NoLga,
        Variant::NoCbr,
        Variant::NoDbr,
        Variant::OnlyClean,
        Variant::NoLgaNoDbr,
        Variant::CeBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ProMix => "promix",
            Variant::NoMhcs => "no_mhcs",
            Variant::NoBaseSelection => "no_css",
            Variant::NoLga => "no_lga",
            Variant::NoCbr => "no_cbr",
            Variant::NoDbr => "no_dbr",
            Variant::OnlyClean => "only_clean",
            Variant::NoLgaNoDbr => "no_lga_no_dbr",
            Variant::CeBaseline => "ce",
        }
    }

    /// Sets this variant's flags on `base`. The selection-stage variants
    /// also turn off label guessing so that only the named stage differs
    /// from base selection plus matched high-confidence selection.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.name = format!("{}_{}", base.name, self.name());
        match self {
            Variant::ProMix => {}
            Variant::NoMhcs => {
                c.no_mhcs = true;
                c.no_lga = true;
            }
            Variant::NoBaseSelection => {
                c.no_css = true;
                c.no_lga = true;
            }
            Variant::NoLga => c.no_lga = true,
            Variant::NoCbr => c.no_cbr = true,
            Variant::NoDbr => c.no_dbr = true,
            Variant::OnlyClean => c.only_clean = true,
            Variant::NoLgaNoDbr => {
                c.no_lga = true;
                c.no_dbr = true;
            }
            Variant::CeBaseline => c.ce_baseline = true,
        }
        c
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::full()] {
            cfg.validate().unwrap();
            assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = RunConfig::from_toml("epochs = 20\nwarmup_epochs = 2\nlga_start = 10\n").unwrap();
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.tau, 0.99);
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = RunConfig::desk();
        c.tau = 1.5;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.lga_start = 2;
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.noise = "sym:2".into();
        assert!(c.validate().is_err());
        let mut c = RunConfig::desk();
        c.imbalance = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::desk();
        c.set("epochs=7").unwrap();
        c.set("noise = sym:0.4").unwrap();
        c.set("mlp_hidden=[32]").unwrap();
        c.set("data_dir=/tmp/x").unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.noise, "sym:0.4");
        assert_eq!(c.mlp_hidden, vec![32]);
        assert_eq!(c.data_dir, Some(PathBuf::from("/tmp/x")));
        assert!(c.set("nope=1").is_err());
        assert!(c.set("epochs").is_err());
    }

    #[test]
    fn variants() {
        let base = RunConfig::desk();
        assert!(Variant::NoDbr.apply(&base).debias().alpha == 0.0);
        let v = Variant::NoBaseSelection.apply(&base);
        assert!(v.no_css && v.no_lga && !v.no_mhcs);
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            v.apply(&base).validate().unwrap();
        }
    }
}
