//! Synthetic and external label corruption.
//!
//! Symmetric noise redraws a label uniformly over all `C` classes (the true
//! class included), so the expected fraction of changed labels is `r (C-1) / C`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::bundle::DatasetBundle;
use crate::error::{Error, Result};
use crate::seeding::{derive_rng, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseKind {
    None,
    Symmetric,
    Asymmetric,
    ExternalFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// `mapping[c]` is the class that `c` flips to under asymmetric noise.
    pub asym_mapping: Option<Vec<usize>>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            rate: 0.0,
            asym_mapping: None,
            seed: 0,
        }
    }

    pub fn symmetric(rate: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            rate,
            asym_mapping: None,
            seed,
        }
    }

    pub fn asymmetric(rate: f64, mapping: Vec<usize>, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Asymmetric,
            rate,
            asym_mapping: Some(mapping),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::invalid("noise.rate", format!("{} not in [0, 1]", self.rate)));
        }
        Ok(())
    }

    /// Compact form used on the command line: `none`, `sym:R`, `asym:R`, `file:PATH`.
    pub fn tag(&self) -> String {
        match &self.kind {
            NoiseKind::None => "none".into(),
            NoiseKind::Symmetric => format!("sym:{}", self.rate),
            NoiseKind::Asymmetric => format!("asym:{}", self.rate),
            NoiseKind::ExternalFile(p) => format!("file:{}", p.display()),
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let rate = || -> Result<f64> {
            arg.parse::<f64>()
                .map_err(|_| Error::invalid("noise", format!("bad rate in `{s}`")))
        };
        let spec = match kind {
            "none" | "clean" => NoiseSpec::none(),
            "sym" | "symmetric" => NoiseSpec::symmetric(rate()?, 0),
            "asym" | "asymmetric" => NoiseSpec {
                kind: NoiseKind::Asymmetric,
                rate: rate()?,
                asym_mapping: None,
                seed: 0,
            },
            "file" if !arg.is_empty() => NoiseSpec {
                kind: NoiseKind::ExternalFile(PathBuf::from(arg)),
                rate: 0.0,
                asym_mapping: None,
                seed: 0,
            },
            _ => {
                return Err(Error::invalid(
                    "noise",
                    format!("`{s}` is not one of none, sym:R, asym:R, file:PATH"),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Standard CIFAR-10 confusable pairs: truck->automobile, bird->airplane,
/// deer->horse, cat<->dog; every other class maps to itself.
pub fn cifar10_asymmetric_mapping() -> Vec<usize> {
    let mut m: Vec<usize> = (0..10).collect();
    m[9] = 1;
    m[2] = 0;
    m[4] = 7;
    m[3] = 5;
    m[5] = 3;
    m
}

fn check_rate(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) || r.is_nan() {
        return Err(Error::invalid("r", format!("{r} not in [0, 1]")));
    }
    Ok(())
}

/// With probability `r`, redraw each label uniformly from all classes.
pub fn inject_symmetric_noise(bundle: &DatasetBundle, r: f64, seed: u64) -> Result<DatasetBundle> {
    check_rate(r)?;
    let c = bundle.num_classes();
    let mut rng = derive_rng(seed, &[stream::NOISE, 0]);
    let labels = bundle
        .true_labels()
        .iter()
        .map(|&y| {
            let flip = rng.random::<f64>() < r;
            let drawn = rng.random_range(0..c);
            if flip {
                drawn
            } else {
                y
            }
        })
        .collect();
    bundle.with_noisy_labels(labels)
}

/// With probability `r`, replace each label by `mapping[true_label]`.
pub fn inject_asymmetric_noise(
    bundle: &DatasetBundle,
    r: f64,
    mapping: &[usize],
    seed: u64,
) -> Result<DatasetBundle> {
    check_rate(r)?;
    let c = bundle.num_classes();
    if mapping.len() < c {
        return Err(Error::invalid(
            "mapping",
            format!("no entry for class {} (mapping covers {} classes)", mapping.len(), mapping.len()),
        ));
    }
    if let Some(&bad) = mapping[..c].iter().find(|&&t| t >= c) {
        return Err(Error::invalid("mapping", format!("target class {bad} >= {c}")));
    }
    let mut rng = derive_rng(seed, &[stream::NOISE, 1]);
    let labels = bundle
        .true_labels()
        .iter()
        .map(|&y| if rng.random::<f64>() < r { mapping[y] } else { y })
        .collect();
    bundle.with_noisy_labels(labels)
}

/// Writes a label file: an ASCII header line `N C` followed by `N`
/// little-endian `u32` class ids.
pub fn write_label_file(path: &Path, labels: &[usize], num_classes: usize) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 4 * labels.len());
    writeln!(buf, "{} {}", labels.len(), num_classes)?;
    for &y in labels {
        let y = u32::try_from(y).map_err(|_| Error::invalid("labels", "class id exceeds u32"))?;
        buf.extend_from_slice(&y.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a label file written by [`write_label_file`]; returns `(labels, C)`.
pub fn read_label_file(path: &Path) -> Result<(Vec<usize>, usize)> {
    let bytes = fs::read(path)?;
    let what = || format!("label file {}", path.display());
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(what(), "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format(what(), "header is not ASCII"))?;
    let mut fields = header.split_whitespace().map(str::parse::<usize>);
    let (n, c) = match (fields.next(), fields.next(), fields.next()) {
        (Some(Ok(n)), Some(Ok(c)), None) => (n, c),
        _ => return Err(Error::format(what(), format!("bad header `{header}`"))),
    };
    let body = &bytes[nl + 1..];
    if body.len() != 4 * n {
        return Err(Error::format(
            what(),
            format!("header declares {n} labels but body holds {} bytes", body.len()),
        ));
    }
    let labels: Vec<usize> = body
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::format(what(), format!("class id {bad} outside [0, {c})")));
    }
    Ok((labels, c))
}

/// Replaces the observed labels with the contents of an external label file.
pub fn load_external_labels(bundle: &DatasetBundle, label_file: &Path) -> Result<DatasetBundle> {
    let (labels, c) = read_label_file(label_file)?;
    if labels.len() != bundle.len() {
        return Err(Error::shape(
            format!("{} labels", bundle.len()),
            format!("{} labels in {}", labels.len(), label_file.display()),
        ));
    }
    if c != bundle.num_classes() {
        return Err(Error::invalid(
            "label_file",
            format!("declares {c} classes, dataset has {}", bundle.num_classes()),
        ));
    }
    bundle.with_noisy_labels(labels)
}

/// Applies whichever corruption `spec` describes.
pub fn apply_noise(bundle: &DatasetBundle, spec: &NoiseSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    match &spec.kind {
        NoiseKind::None => Ok(bundle.clone()),
        NoiseKind::Symmetric => inject_symmetric_noise(bundle, spec.rate, spec.seed),
        NoiseKind::Asymmetric => {
            let default;
            let mapping = match &spec.asym_mapping {
                Some(m) => m.as_slice(),
                None if bundle.num_classes() == 10 => {
                    default = cifar10_asymmetric_mapping();
                    &default
                }
                None => {
                    return Err(Error::invalid(
                        "asym_mapping",
                        "required for asymmetric noise unless C = 10",
                    ))
                }
            };
            inject_asymmetric_noise(bundle, spec.rate, mapping, spec.seed)
        }
        NoiseKind::ExternalFile(path) => load_external_labels(bundle, path),
    }
}
