//! Procedural CIFAR-shaped image classification data.
//!
//! Used when no CIFAR files are available. Every class owns a smooth,
//! left-right symmetric colour prototype; a sample blends its class prototype
//! with a random distractor prototype, a random nuisance texture and pixel
//! noise, then shifts by a few pixels. The distractor and nuisance weights set
//! how much the classes overlap.

use ndarray::{Array3, Array4, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::bundle::{DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::parallel;
use crate::seeding::{derive_rng, stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub side: usize,
    /// Blobs per class prototype.
    pub blobs: usize,
    /// Upper bound of the distractor-prototype weight.
    pub distractor: f64,
    /// Weight of the per-sample nuisance texture.
    pub nuisance: f64,
    /// Pixel noise standard deviation, in [0, 1] intensity units.
    pub pixel_noise: f64,
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            train_per_class: 500,
            test_per_class: 200,
            channels: 3,
            side: 32,
            blobs: 4,
            distractor: 0.8,
            nuisance: 0.6,
            pixel_noise: 0.12,
            max_shift: 2,
            seed: 0,
        }
    }
}

fn blob_field(rng: &mut Rng, channels: usize, side: usize, blobs: usize) -> Array3<f64> {
    let mut f = Array3::<f64>::zeros((channels, side, side));
    let s = side as f64;
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..s);
        let cx = rng.random_range(0.0..s);
        let radius = rng.random_range(0.12 * s..0.35 * s);
        let colour: Vec<f64> = (0..channels).map(|_| rng.random_range(-1.0..1.0)).collect();
        // The Gaussian is separable, so one exp per row and per column suffices.
        let profile = |centre: f64| -> Vec<f64> {
            (0..side).map(|i| (-(i as f64 - centre).powi(2) / (2.0 * radius * radius)).exp()).collect()
        };
        let (gy, gx) = (profile(cy), profile(cx));
        for (mut plane, &tint) in f.outer_iter_mut().zip(&colour) {
            for ((y, x), v) in plane.indexed_iter_mut() {
                *v += tint * gy[y] * gx[x];
            }
        }
    }
    f
}

fn mirror_symmetric(mut f: Array3<f64>) -> Array3<f64> {
    let mirrored = f.slice(ndarray::s![.., .., ..;-1]).to_owned();
    f += &mirrored;
    f *= 0.5;
    f
}

fn normalize(mut f: Array3<f64>) -> Array3<f64> {
    let n = f.len() as f64;
    let mean = f.sum() / n;
    f -= mean;
    let sd = (f.iter().map(|v| v * v).sum::<f64>() / n).sqrt().max(1e-12);
    f /= sd;
    f
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least two classes"));
        }
        if self.channels == 0 || self.side < 4 {
            return Err(Error::invalid("side", "images must be at least 4x4"));
        }
        if self.max_shift >= self.side / 2 {
            return Err(Error::invalid("max_shift", "shift must be below half the side"));
        }
        Ok(())
    }

    fn prototypes(&self) -> Vec<Array3<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let mut rng = derive_rng(self.seed, &[stream::SYNTHETIC, 0, c as u64]);
                normalize(mirror_symmetric(blob_field(
                    &mut rng,
                    self.channels,
                    self.side,
                    self.blobs,
                )))
            })
            .collect()
    }

    fn sample(&self, protos: &[Array3<f64>], class: usize, rng: &mut Rng) -> Array3<u8> {
        let c = self.num_classes;
        let other = (class + rng.random_range(1..c)) % c;
        let w_other = rng.random_range(0.0..self.distractor);
        let nuisance = normalize(blob_field(rng, self.channels, self.side, self.blobs));
        let noise = Normal::new(0.0, self.pixel_noise).expect("finite sd");
        let shift = self.max_shift as i64;
        let dy = rng.random_range(-shift..=shift);
        let dx = rng.random_range(-shift..=shift);
        let side = self.side as i64;
        let mut img = Array3::<u8>::zeros((self.channels, self.side, self.side));
        for ((ch, y, x), px) in img.indexed_iter_mut() {
            let sy = (y as i64 + dy).clamp(0, side - 1) as usize;
            let sx = (x as i64 + dx).clamp(0, side - 1) as usize;
            let v = protos[class][[ch, sy, sx]]
                + w_other * protos[other][[ch, sy, sx]]
                + self.nuisance * nuisance[[ch, y, x]];
            let v = 0.5 + 0.16 * v + noise.sample(rng);
            *px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        img
    }

    fn generate_split(&self, protos: &[Array3<f64>], per_class: usize, split: Split) -> Result<DatasetBundle> {
        let n = per_class * self.num_classes;
        let tag = match split {
            Split::Train => 1,
            Split::Test => 2,
        };
        let images = parallel::map_range(n, |i| {
            let mut rng = derive_rng(self.seed, &[stream::SYNTHETIC, tag, i as u64]);
            self.sample(protos, i % self.num_classes, &mut rng)
        });
        let views: Vec<_> = images.iter().map(|a| a.view().insert_axis(Axis(0))).collect();
        let stacked: Array4<u8> = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::format("synthetic images", e.to_string()))?;
        let labels = (0..n).map(|i| i % self.num_classes).collect();
        DatasetBundle::new(stacked, labels, self.num_classes, split)
    }

    /// Generates the `(train, test)` pair. Labels cycle through the classes.
    pub fn generate(&self) -> Result<(DatasetBundle, DatasetBundle)> {
        self.validate()?;
        let protos = self.prototypes();
        Ok((
            self.generate_split(&protos, self.train_per_class, Split::Train)?,
            self.generate_split(&protos, self.test_per_class, Split::Test)?,
        ))
    }
}
