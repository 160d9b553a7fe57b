//! Weak (crop + flip) and strong (RandAugment-style) image views.
//!
//! Images are transformed as `channels x height x width` intensities in
//! `[0, 1]`. A weak view pads, randomly crops and randomly mirrors. A strong
//! view applies the weak transform, then `num_ops` operations drawn uniformly
//! from the configured list with a random magnitude and sign, then cutout.

use std::str::FromStr;

use ndarray::{Array3, ArrayView3};
use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::Rng;

const FILL: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    Identity,
    AutoContrast,
    Brightness,
    Contrast,
    Equalize,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
}

impl AugOp {
    pub const ALL: [AugOp; 13] = [
        AugOp::Identity,
        AugOp::AutoContrast,
        AugOp::Brightness,
        AugOp::Contrast,
        AugOp::Equalize,
        AugOp::Posterize,
        AugOp::Rotate,
        AugOp::Sharpness,
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::Solarize,
        AugOp::TranslateX,
        AugOp::TranslateY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugOp::Identity => "identity",
            AugOp::AutoContrast => "auto_contrast",
            AugOp::Brightness => "brightness",
            AugOp::Contrast => "contrast",
            AugOp::Equalize => "equalize",
            AugOp::Posterize => "posterize",
            AugOp::Rotate => "rotate",
            AugOp::Sharpness => "sharpness",
            AugOp::ShearX => "shear_x",
            AugOp::ShearY => "shear_y",
            AugOp::Solarize => "solarize",
            AugOp::TranslateX => "translate_x",
            AugOp::TranslateY => "translate_y",
        }
    }

    /// Applies the op with magnitude `m` in `[0, 1]`; `sign` is +1 or -1.
    pub fn apply(self, img: &Array3<f64>, m: f64, sign: f64) -> Array3<f64> {
        let side = img.shape()[2] as f64;
        match self {
            AugOp::Identity => img.clone(),
            AugOp::AutoContrast => auto_contrast(img),
            AugOp::Brightness => img.mapv(|v| (v * (1.0 + sign * 0.9 * m)).clamp(0.0, 1.0)),
            AugOp::Contrast => {
                let mean = img.mean().unwrap_or(FILL);
                let f = 1.0 + sign * 0.9 * m;
                img.mapv(|v| (mean + f * (v - mean)).clamp(0.0, 1.0))
            }
            AugOp::Equalize => equalize(img),
            AugOp::Posterize => {
                let bits = 8 - (4.0 * m).round() as u32;
                let levels = f64::from(1u32 << bits);
                img.mapv(|v| ((v * 255.0) as u32 >> (8 - bits)) as f64 / (levels - 1.0).max(1.0))
            }
            AugOp::Rotate => {
                let a = sign * m * 30f64.to_radians();
                affine(img, [a.cos(), a.sin(), 0.0, -a.sin(), a.cos(), 0.0])
            }
            AugOp::Sharpness => sharpness(img, 1.0 + sign * 0.9 * m),
            AugOp::ShearX => affine(img, [1.0, sign * 0.3 * m, 0.0, 0.0, 1.0, 0.0]),
            AugOp::ShearY => affine(img, [1.0, 0.0, 0.0, sign * 0.3 * m, 1.0, 0.0]),
            AugOp::Solarize => {
                let t = 1.0 - m;
                img.mapv(|v| if v >= t { 1.0 - v } else { v })
            }
            AugOp::TranslateX => affine(img, [1.0, 0.0, sign * 0.3 * m * side, 0.0, 1.0, 0.0]),
            AugOp::TranslateY => affine(img, [1.0, 0.0, 0.0, 0.0, 1.0, sign * 0.3 * m * side]),
        }
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugOp::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s.trim())
            .ok_or_else(|| Error::invalid("augmentation op", format!("unknown op `{s}`")))
    }
}

fn auto_contrast(img: &Array3<f64>) -> Array3<f64> {
    let mut out = img.clone();
    for mut ch in out.outer_iter_mut() {
        let lo = ch.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > 1e-9 {
            ch.mapv_inplace(|v| (v - lo) / (hi - lo));
        }
    }
    out
}

fn equalize(img: &Array3<f64>) -> Array3<f64> {
    let mut out = img.clone();
    for mut ch in out.outer_iter_mut() {
        let mut hist = [0usize; 256];
        for &v in ch.iter() {
            hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
        }
        let total = ch.len() as f64;
        let mut cdf = [0f64; 256];
        let mut acc = 0usize;
        for (i, h) in hist.iter().enumerate() {
            acc += h;
            cdf[i] = acc as f64 / total;
        }
        ch.mapv_inplace(|v| cdf[(v.clamp(0.0, 1.0) * 255.0).round() as usize]);
    }
    out
}

fn sharpness(img: &Array3<f64>, factor: f64) -> Array3<f64> {
    let (c, h, w) = img.dim();
    let mut out = img.clone();
    for ch in 0..c {
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let mut s = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let k = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                        s += k * img[[ch, y + dy - 1, x + dx - 1]];
                    }
                }
                let smooth = s / 13.0;
                out[[ch, y, x]] = (smooth + factor * (img[[ch, y, x]] - smooth)).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Nearest-neighbour affine warp about the image centre. `t = [a, b, tx, c, d, ty]`
/// maps output coordinates to source coordinates.
fn affine(img: &Array3<f64>, t: [f64; 6]) -> Array3<f64> {
    let (c, h, w) = img.dim();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut sources = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 - cx, y as f64 - cy);
            let sx = (t[0] * u + t[1] * v + t[2] + cx).round();
            let sy = (t[3] * u + t[4] * v + t[5] + cy).round();
            let inside = sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h;
            sources.push(inside.then_some((sy as usize, sx as usize)));
        }
    }
    let mut out = Array3::from_elem((c, h, w), FILL);
    for (src, mut dst) in img.outer_iter().zip(out.outer_iter_mut()) {
        for (o, at) in dst.iter_mut().zip(&sources) {
            if let Some(at) = *at {
                *o = src[at];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    /// When false, every view is the raw image.
    pub enabled: bool,
    pub crop_padding: usize,
    pub hflip: bool,
    pub strong_ops: Vec<AugOp>,
    pub num_ops: usize,
    /// Magnitudes are drawn uniformly from `[0, max_magnitude]`.
    pub max_magnitude: f64,
    /// Cutout square side as a fraction of the image side; 0 disables it.
    pub cutout: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self::randaugment()
    }
}

impl AugmentationPolicy {
    pub fn randaugment() -> Self {
        Self {
            enabled: true,
            crop_padding: 4,
            hflip: true,
            strong_ops: AugOp::ALL.to_vec(),
            num_ops: 2,
            max_magnitude: 1.0,
            cutout: 0.25,
        }
    }

    /// Weak views only; the strong view equals the weak one.
    pub fn weak_only() -> Self {
        Self {
            strong_ops: Vec::new(),
            num_ops: 0,
            cutout: 0.0,
            ..Self::randaugment()
        }
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::weak_only()
        }
    }

    /// Named policies accepted in run configs.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "randaugment" => Ok(Self::randaugment()),
            "weak" => Ok(Self::weak_only()),
            "none" => Ok(Self::disabled()),
            _ => Err(Error::invalid(
                "augmentation",
                format!("`{name}` is not one of randaugment, weak, none"),
            )),
        }
    }

    pub fn to_unit(img: ArrayView3<'_, u8>) -> Array3<f64> {
        img.mapv(|v| f64::from(v) / 255.0)
    }

    pub fn weak(&self, img: ArrayView3<'_, u8>, rng: &mut Rng) -> Array3<f64> {
        if !self.enabled {
            return Self::to_unit(img);
        }
        let (c, h, w) = img.dim();
        let p = self.crop_padding as i64;
        let dy = if p > 0 { rng.random_range(-p..=p) } else { 0 };
        let dx = if p > 0 { rng.random_range(-p..=p) } else { 0 };
        let flip = self.hflip && rng.random_bool(0.5);
        // Output column x reads source column (flip ? w-1-x : x) + dx.
        let cols: Vec<Option<usize>> = (0..w)
            .map(|x| {
                let sx = if flip { w - 1 - x } else { x } as i64 + dx;
                (0..w as i64).contains(&sx).then_some(sx as usize)
            })
            .collect();
        let mut out = Array3::<f64>::zeros((c, h, w));
        for (src, mut dst) in img.outer_iter().zip(out.outer_iter_mut()) {
            for y in 0..h {
                let sy = y as i64 + dy;
                if !(0..h as i64).contains(&sy) {
                    continue;
                }
                let src_row = src.row(sy as usize);
                for (o, col) in dst.row_mut(y).iter_mut().zip(&cols) {
                    if let Some(sx) = *col {
                        *o = f64::from(src_row[sx]) / 255.0;
                    }
                }
            }
        }
        out
    }

    pub fn strong(&self, img: ArrayView3<'_, u8>, rng: &mut Rng) -> Array3<f64> {
        let mut out = self.weak(img, rng);
        if !self.enabled {
            return out;
        }
        for _ in 0..self.num_ops {
            let Some(&op) = self.strong_ops.choose(rng) else { break };
            let m = rng.random_range(0.0..=self.max_magnitude);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            out = op.apply(&out, m, sign);
        }
        if self.cutout > 0.0 {
            let (_, h, w) = out.dim();
            let size = ((self.cutout * h as f64).round() as usize).max(1);
            let cy = rng.random_range(0..h);
            let cx = rng.random_range(0..w);
            let (y0, x0) = (cy.saturating_sub(size / 2), cx.saturating_sub(size / 2));
            let (y1, x1) = ((y0 + size).min(h), (x0 + size).min(w));
            out.slice_mut(ndarray::s![.., y0..y1, x0..x1]).fill(FILL);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::derive_rng;

    fn img() -> Array3<u8> {
        Array3::from_shape_fn((3, 8, 8), |(c, y, x)| (c * 40 + y * 8 + x * 3) as u8)
    }

    #[test]
    fn every_op_stays_in_range_and_keeps_shape() {
        let x = AugmentationPolicy::to_unit(img().view());
        for op in AugOp::ALL {
            for m in [0.0, 0.5, 1.0] {
                for s in [-1.0, 1.0] {
                    let y = op.apply(&x, m, s);
                    assert_eq!(y.dim(), x.dim(), "{op:?}");
                    assert!(y.iter().all(|v| (0.0..=1.0).contains(v)), "{op:?} {m} {s}");
                }
            }
        }
    }

    #[test]
    fn zero_magnitude_geometric_ops_are_identity() {
        let x = AugmentationPolicy::to_unit(img().view());
        for op in [AugOp::Rotate, AugOp::ShearX, AugOp::TranslateY, AugOp::Brightness] {
            assert_eq!(op.apply(&x, 0.0, 1.0), x, "{op:?}");
        }
    }

    #[test]
    fn disabled_policy_returns_raw_pixels() {
        let p = AugmentationPolicy::disabled();
        let mut rng = derive_rng(0, &[1]);
        let raw = AugmentationPolicy::to_unit(img().view());
        assert_eq!(p.weak(img().view(), &mut rng), raw);
        assert_eq!(p.strong(img().view(), &mut rng), raw);
    }

    #[test]
    fn op_names_round_trip() {
        for op in AugOp::ALL {
            assert_eq!(op.name().parse::<AugOp>().unwrap(), op);
        }
        assert!("warp".parse::<AugOp>().is_err());
    }
}
