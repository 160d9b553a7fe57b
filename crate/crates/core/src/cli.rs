//! The `promix` command line: `prepare`, `train`, `ablate`, `report`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, Variant};
use crate::datagen::save_bundle;
use crate::error::{Error, Result};
use crate::evalkit::{aggregate_runs, emit_reports, write_summary_csv, RunSummary};
use crate::trainer::{load_data, run_with_data};

#[derive(Debug, Parser)]
#[command(name = "promix", version, about = "Noisy-label training with progressive selection and debiased pseudo-labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Materialize the configured (noisy) dataset to a directory.
    Prepare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Noise spec: none, sym:R, asym:R or file:PATH.
        #[arg(long)]
        noise: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one training job.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Apply a named ablation variant.
        #[arg(long)]
        ablation: Option<String>,
        /// Run directory; defaults to `out_dir/name`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a variant matrix over seeds with shared data settings.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', default_value = "promix,no_mhcs,no_css,no_cbr,no_dbr,ce")]
        variants: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize run directories into a table and a comparison plot.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        /// Output directory for summary.csv and comparison.png.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Base profile: desk or full.
    #[arg(long, default_value = "desk")]
    pub profile: String,
    /// TOML file whose keys override the profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` overrides applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::profile(&self.profile)?;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)?;
            let table: toml::Table = toml::from_str(&text)?;
            for (k, v) in table {
                cfg.set(&format!("{k}={v}"))?;
            }
        }
        for o in &self.overrides {
            cfg.set(o)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    train_hash: String,
    test_hash: String,
    train_size: usize,
    test_size: usize,
    num_classes: usize,
    noise: &'a str,
    corruption_rate: f64,
    config: &'a RunConfig,
}

fn prepare(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train, test) = load_data(cfg)?;
    save_bundle(out, &train)?;
    save_bundle(out, &test)?;
    let manifest = Manifest {
        train_hash: train.content_hash(),
        test_hash: test.content_hash(),
        train_size: train.len(),
        test_size: test.len(),
        num_classes: train.num_classes(),
        noise: &cfg.noise,
        corruption_rate: train.corruption_rate(),
        config: cfg,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!("{}", serde_json::json!({ "out": out, "train_hash": manifest.train_hash, "corruption_rate": manifest.corruption_rate }));
    Ok(())
}

fn train_one(cfg: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let (train, test) = load_data(cfg)?;
    let outcome = run_with_data(cfg, &train, &test, Some(dir))?;
    emit_reports(dir)?;
    Ok(outcome.summary)
}

/// Runs `configs` with up to `jobs` concurrent workers; results keep input order.
pub fn run_many(configs: &[(RunConfig, PathBuf)], jobs: usize) -> Result<Vec<RunSummary>> {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((cfg, dir)) = configs.get(i) else { break };
                log::info!("starting {}", dir.display());
                let r = train_one(cfg, dir);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { config, noise, out } => {
            let mut cfg = config.resolve()?;
            if let Some(n) = noise {
                cfg.noise = n;
                cfg.validate()?;
            }
            prepare(&cfg, &out)
        }
        Command::Train { config, ablation, out } => {
            let mut cfg = config.resolve()?;
            if let Some(v) = ablation {
                cfg = v.parse::<Variant>()?.apply(&cfg);
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| cfg.out_dir.join(&cfg.name));
            let summary = train_one(&cfg, &dir)?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
        Command::Ablate { config, variants, seeds, jobs, out } => {
            let base = config.resolve()?;
            let variants = variants.iter().map(|v| v.parse::<Variant>()).collect::<Result<Vec<_>>>()?;
            let root = out.unwrap_or_else(|| base.out_dir.join(format!("{}_ablation", base.name)));
            let mut jobs_list = Vec::new();
            for &seed in &seeds {
                for &v in &variants {
                    let mut cfg = v.apply(&base);
                    cfg.seed = seed;
                    cfg.validate()?;
                    let dir = root.join(format!("{}_seed{seed}", v.name()));
                    jobs_list.push((cfg, dir));
                }
            }
            let summaries = run_many(&jobs_list, jobs)?;
            std::fs::create_dir_all(&root)?;
            write_summary_csv(&root.join("summary.csv"), &summaries)?;
            for s in &summaries {
                println!("{}", serde_json::to_string(s)?);
            }
            Ok(())
        }
        Command::Report { run_dirs, out } => {
            let out = out.unwrap_or_else(|| PathBuf::from("."));
            // Shell globs over an ablation root also match its summary.csv.
            let (run_dirs, skipped): (Vec<PathBuf>, Vec<PathBuf>) = run_dirs.into_iter().partition(|p| !p.is_file());
            for p in &skipped {
                log::warn!("skipping {}: not a run directory", p.display());
            }
            std::fs::create_dir_all(&out)?;
            let summaries = aggregate_runs(&run_dirs, Some(&out.join("comparison.png")))?;
            write_summary_csv(&out.join("summary.csv"), &summaries)?;
            for s in &summaries {
                println!("{}", serde_json::to_string(s)?);
            }
            Ok(())
        }
    }
}

/// Structured error for stderr.
pub fn error_json(e: &Error) -> String {
    serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } }).to_string()
}

/// Exit status for an error: 2 for invalid input or configuration, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument { .. } | Error::TomlDe(_) => 2,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["promix", "train", "--profile", "desk", "--ablation", "only_clean", "--set", "epochs=3"]).unwrap();
        assert!(matches!(cli.command, Command::Train { .. }));
        let cli = Cli::try_parse_from(["promix", "ablate", "--variants", "promix,ce", "--seeds", "0,1", "--jobs", "2"]).unwrap();
        match cli.command {
            Command::Ablate { variants, seeds, jobs, .. } => {
                assert_eq!(variants, vec!["promix", "ce"]);
                assert_eq!(seeds, vec![0, 1]);
                assert_eq!(jobs, 2);
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["promix", "report"]).is_err());
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let args = ConfigArgs { profile: "desk".into(), config: None, overrides: vec!["tau=3".into()], seed: None };
        let e = args.resolve().unwrap_err();
        assert_eq!(exit_code(&e), 2);
        assert!(error_json(&e).contains("\"kind\""));
    }
}
