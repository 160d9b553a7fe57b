//! CSV logs and line plots. The CSV files are canonical; the images are a
//! convenience and carry no text.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const LOSSES_FILE: &str = "losses.csv";

/// One row per epoch and network. Selection and pseudo-label columns are
/// empty during warm-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub net_id: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub pseudo_acc: Option<f64>,
    pub test_acc_net1: f64,
    pub test_acc_net2: f64,
    pub test_acc_ensemble: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub net_id: usize,
    pub phase: String,
    pub lr: f64,
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

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

fn epoch_series(rows: &[MetricsRow], net: usize, pick: impl Fn(&MetricsRow) -> Option<f64>) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.net_id == net)
        .filter_map(|r| pick(r).map(|v| (r.epoch as f64, v)))
        .collect()
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

/// Lines on a unit-height grid; the x range covers every series.
fn line_plot(path: &Path, series: &[Vec<(f64, f64)>]) -> Result<()> {
    let x_max = series.iter().flatten().map(|p| p.0).fold(1.0f64, f64::max);
    let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let area = root.margin(20, 20, 20, 20);
    let (w, h) = area.dim_in_pixel();
    let to_px = |(x, y): (f64, f64)| -> (i32, i32) {
        (
            (x / x_max * (w as f64 - 1.0)).round() as i32,
            ((1.0 - y.clamp(0.0, 1.0)) * (h as f64 - 1.0)).round() as i32,
        )
    };
    for k in 0..=10 {
        let y = k as f64 / 10.0;
        let style = if k % 5 == 0 { BLACK.mix(0.4) } else { BLACK.mix(0.1) };
        area.draw(&PathElement::new(vec![to_px((0.0, y)), to_px((x_max, y))], style))
            .map_err(plot_err)?;
    }
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<(i32, i32)> = s.iter().copied().map(to_px).collect();
        area.draw(&PathElement::new(pts, PALETTE[i % PALETTE.len()].stroke_width(2)))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Renders `selection.png` (precision and recall per net),
/// `pseudo_labels.png` and `test_accuracy.png` (net 1, net 2, ensemble) from
/// the run's `metrics.csv`. Returns the written paths.
pub fn emit_reports(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_metrics(&run_dir.join(METRICS_FILE))?;
    let sel = run_dir.join("selection.png");
    line_plot(
        &sel,
        &[
            epoch_series(&rows, 1, |r| r.precision),
            epoch_series(&rows, 1, |r| r.recall),
            epoch_series(&rows, 2, |r| r.precision),
            epoch_series(&rows, 2, |r| r.recall),
        ],
    )?;
    let pseudo = run_dir.join("pseudo_labels.png");
    line_plot(&pseudo, &[epoch_series(&rows, 1, |r| r.pseudo_acc), epoch_series(&rows, 2, |r| r.pseudo_acc)])?;
    let test = run_dir.join("test_accuracy.png");
    line_plot(
        &test,
        &[
            epoch_series(&rows, 1, |r| Some(r.test_acc_net1)),
            epoch_series(&rows, 1, |r| Some(r.test_acc_net2)),
            epoch_series(&rows, 1, |r| Some(r.test_acc_ensemble)),
        ],
    )?;
    Ok(vec![sel, pseudo, test])
}

/// Headline numbers of one run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: String,
    pub epochs: usize,
    pub final_ensemble: f64,
    pub last10_ensemble: f64,
    pub best_ensemble: f64,
    /// Means over both networks at the final epoch; absent without selection.
    pub final_precision: Option<f64>,
    pub final_recall: Option<f64>,
    /// Mean pseudo-label accuracy over both networks and the last ten epochs
    /// that report one.
    pub last10_pseudo_acc: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl RunSummary {
    pub fn from_rows(run: String, rows: &[MetricsRow]) -> Result<Self> {
        let ens: Vec<f64> = rows.iter().filter(|r| r.net_id == 1).map(|r| r.test_acc_ensemble).collect();
        let last = *ens.last().ok_or(Error::Empty("metrics rows"))?;
        let last_epoch = rows.iter().map(|r| r.epoch).max().unwrap_or(0);
        let at_last: Vec<&MetricsRow> = rows.iter().filter(|r| r.epoch == last_epoch).collect();
        let fin = |pick: fn(&MetricsRow) -> Option<f64>| mean(&at_last.iter().filter_map(|r| pick(r)).collect::<Vec<_>>());
        let mut pseudo_epochs: Vec<usize> = rows.iter().filter(|r| r.pseudo_acc.is_some()).map(|r| r.epoch).collect();
        pseudo_epochs.dedup();
        let tail = &pseudo_epochs[pseudo_epochs.len().saturating_sub(10)..];
        let pseudo: Vec<f64> = rows
            .iter()
            .filter(|r| tail.contains(&r.epoch))
            .filter_map(|r| r.pseudo_acc)
            .collect();
        Ok(Self {
            run,
            epochs: ens.len(),
            final_ensemble: last,
            last10_ensemble: mean(&ens[ens.len().saturating_sub(10)..]).expect("non-empty"),
            best_ensemble: ens.iter().copied().fold(f64::MIN, f64::max),
            final_precision: fin(|r| r.precision),
            final_recall: fin(|r| r.recall),
            last10_pseudo_acc: mean(&pseudo),
        })
    }
}

/// Summaries of several run directories, plus an ensemble-accuracy
/// comparison plot when `plot` is given.
pub fn aggregate_runs(run_dirs: &[PathBuf], plot: Option<&Path>) -> Result<Vec<RunSummary>> {
    let mut out = Vec::new();
    let mut curves = Vec::new();
    for dir in run_dirs {
        let rows = read_metrics(&dir.join(METRICS_FILE))?;
        let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        curves.push(epoch_series(&rows, 1, |r| Some(r.test_acc_ensemble)));
        out.push(RunSummary::from_rows(name, &rows)?);
    }
    if let Some(p) = plot {
        line_plot(p, &curves)?;
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, net_id: usize, sel: bool) -> MetricsRow {
        MetricsRow {
            epoch,
            net_id,
            precision: sel.then_some(0.9),
            recall: sel.then_some(0.8),
            f1: sel.then_some(2.0 * 0.72 / 1.7),
            pseudo_acc: sel.then_some(0.5 + epoch as f64 * 0.01),
            test_acc_net1: 0.5,
            test_acc_net2: 0.6,
            test_acc_ensemble: 0.6 + epoch as f64 * 0.01,
            n_labeled: 10,
            n_unlabeled: 5,
        }
    }

    fn write(dir: &Path, rows: &[MetricsRow]) {
        let mut w = csv::Writer::from_path(dir.join(METRICS_FILE)).unwrap();
        for r in rows {
            w.serialize(r).unwrap();
        }
        w.flush().unwrap();
    }

    #[test]
    fn csv_round_trip_and_plots() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<MetricsRow> = (0..4).flat_map(|e| [row(e, 1, e > 1), row(e, 2, e > 1)]).collect();
        write(dir.path(), &rows);
        assert_eq!(read_metrics(&dir.path().join(METRICS_FILE)).unwrap(), rows);
        let header = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert!(header.starts_with(
            "epoch,net_id,precision,recall,f1,pseudo_acc,test_acc_net1,test_acc_net2,test_acc_ensemble,n_labeled,n_unlabeled"
        ));
        for p in emit_reports(dir.path()).unwrap() {
            assert!(std::fs::metadata(p).unwrap().len() > 0);
        }
    }

    #[test]
    fn summary_numbers() {
        let rows: Vec<MetricsRow> = (0..12).flat_map(|e| [row(e, 1, e >= 2), row(e, 2, e >= 2)]).collect();
        let s = RunSummary::from_rows("r".into(), &rows).unwrap();
        assert_eq!(s.epochs, 12);
        assert!((s.final_ensemble - 0.71).abs() < 1e-12);
        assert!((s.last10_ensemble - (0.6 + 0.065)).abs() < 1e-12);
        assert_eq!(s.final_precision, Some(0.9));
        assert!((s.last10_pseudo_acc.unwrap() - (0.5 + 0.065)).abs() < 1e-12);
    }
}
