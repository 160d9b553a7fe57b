//! Deterministic shuffled batching with augmented views.
//!
//! Shuffles are keyed by `(seed, stream, epoch, cycle)` and every augmentation
//! by `(seed, stream, epoch, cycle, sample id, view)`, so a batch's contents do
//! not depend on how many threads built it.

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;

use super::augment::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::parallel;
use crate::seeding::{derive_rng, stream};

/// Views are shifted and scaled to roughly zero mean, unit spread.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_SCALE: f64 = 0.25;

const VIEW_WEAK: u64 = 0;
const VIEW_STRONG: u64 = 1;
const VIEW_MIX: u64 = 2;

/// Which views a loader builds. Skipped views come back with zero samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Views {
    pub strong: bool,
    pub mix: bool,
}

impl Views {
    pub const ALL: Views = Views { strong: true, mix: true };
    pub const WEAK: Views = Views { strong: false, mix: false };
    pub const WEAK_STRONG: Views = Views { strong: true, mix: false };
}

#[derive(Debug, Clone)]
pub struct AugmentedBatch {
    pub weak: Array4<f64>,
    pub strong: Array4<f64>,
    /// A second, independent weak view, consumed by mixup.
    pub mix: Array4<f64>,
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

impl AugmentedBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn stack(views: Vec<Array3<f64>>) -> Array4<f64> {
    let (c, h, w) = views.first().map(|v| v.dim()).unwrap_or((0, 0, 0));
    let mut out = Array4::zeros((views.len(), c, h, w));
    for (mut dst, v) in out.outer_iter_mut().zip(views) {
        dst.assign(&v);
    }
    out.mapv_inplace(|x| (x - PIXEL_MEAN) / PIXEL_SCALE);
    out
}

/// Where batches come from: the image store, the augmentation policy and the
/// RNG keys that make the views reproducible.
#[derive(Debug, Clone, Copy)]
pub struct BatchSource<'a> {
    pub images: &'a Array4<u8>,
    pub policy: &'a AugmentationPolicy,
    pub seed: u64,
    /// Distinguishes independent loaders (labelled, unlabelled, warm-up...).
    pub tag: u64,
}

impl BatchSource<'_> {
    /// Builds weak, strong and mixup views for the given samples.
    pub fn build(&self, ids: &[usize], labels: &[usize], epoch: usize, cycle: usize) -> AugmentedBatch {
        self.build_views(ids, labels, epoch, cycle, Views::ALL)
    }

    /// Builds the weak view plus the requested extra views. Each view has its
    /// own RNG key, so skipping one leaves the others unchanged.
    pub fn build_views(&self, ids: &[usize], labels: &[usize], epoch: usize, cycle: usize, wanted: Views) -> AugmentedBatch {
        let views = parallel::map_slice(ids, |&id| {
            let img = self.images.index_axis(Axis(0), id);
            let key = |view| derive_rng(self.seed, &[stream::AUGMENT, self.tag, epoch as u64, cycle as u64, id as u64, view]);
            (
                self.policy.weak(img, &mut key(VIEW_WEAK)),
                wanted.strong.then(|| self.policy.strong(img, &mut key(VIEW_STRONG))),
                wanted.mix.then(|| self.policy.weak(img, &mut key(VIEW_MIX))),
            )
        });
        let mut weak = Vec::with_capacity(ids.len());
        let mut strong = Vec::with_capacity(ids.len());
        let mut mix = Vec::with_capacity(ids.len());
        for (w, s, m) in views {
            weak.push(w);
            strong.extend(s);
            mix.extend(m);
        }
        AugmentedBatch {
            weak: stack(weak),
            strong: stack(strong),
            mix: stack(mix),
            indices: ids.to_vec(),
            labels: labels.to_vec(),
        }
    }

    /// Weak views only, for evaluation-mode passes over many samples.
    pub fn weak_views(&self, ids: &[usize], epoch: usize) -> Array4<f64> {
        let views = parallel::map_slice(ids, |&id| {
            let img = self.images.index_axis(Axis(0), id);
            let mut rng = derive_rng(self.seed, &[stream::AUGMENT, self.tag, epoch as u64, 0, id as u64, VIEW_WEAK]);
            self.policy.weak(img, &mut rng)
        });
        stack(views)
    }
}

/// One epoch over `(id, label)` pairs in a seeded random order. The last
/// batch may be short.
#[derive(Debug)]
pub struct BatchIterator<'a> {
    source: BatchSource<'a>,
    order: Vec<(usize, usize)>,
    batch_size: usize,
    epoch: usize,
    cycle: usize,
    pos: usize,
    views: Views,
}

impl<'a> BatchIterator<'a> {
    pub fn new(
        source: BatchSource<'a>,
        samples: &[(usize, usize)],
        batch_size: usize,
        epoch: usize,
        cycle: usize,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if samples.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let n = source.images.len_of(Axis(0));
        if let Some(&(bad, _)) = samples.iter().find(|(id, _)| *id >= n) {
            return Err(Error::invalid("samples", format!("id {bad} out of range for {n} images")));
        }
        let mut order = samples.to_vec();
        let mut rng = derive_rng(source.seed, &[stream::SHUFFLE, source.tag, epoch as u64, cycle as u64]);
        order.shuffle(&mut rng);
        Ok(Self {
            source,
            order,
            batch_size,
            epoch,
            cycle,
            pos: 0,
            views: Views::ALL,
        })
    }

    /// Restricts which views the iterator builds.
    pub fn with_views(mut self, views: Views) -> Self {
        self.views = views;
        self
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Ids and labels of the next batch, without building views.
    pub fn next_ids(&mut self) -> Option<(Vec<usize>, Vec<usize>)> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let (ids, labels) = self.order[self.pos..end].iter().copied().unzip();
        self.pos = end;
        Some((ids, labels))
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = AugmentedBatch;

    fn next(&mut self) -> Option<AugmentedBatch> {
        let (ids, labels) = self.next_ids()?;
        Some(self.source.build_views(&ids, &labels, self.epoch, self.cycle, self.views))
    }
}

/// Endless batches: reshuffles with a fresh cycle key whenever a pass ends.
#[derive(Debug)]
pub struct CyclingBatches<'a> {
    current: BatchIterator<'a>,
    samples: Vec<(usize, usize)>,
}

impl<'a> CyclingBatches<'a> {
    pub fn new(source: BatchSource<'a>, samples: &[(usize, usize)], batch_size: usize, epoch: usize) -> Result<Self> {
        Ok(Self {
            current: BatchIterator::new(source, samples, batch_size, epoch, 0)?,
            samples: samples.to_vec(),
        })
    }

    pub fn with_views(mut self, views: Views) -> Self {
        self.current.views = views;
        self
    }

    pub fn next_batch(&mut self) -> AugmentedBatch {
        if let Some(b) = self.current.next() {
            return b;
        }
        let it = &self.current;
        self.current = BatchIterator::new(it.source, &self.samples, it.batch_size, it.epoch, it.cycle + 1)
            .expect("validated on construction")
            .with_views(it.views);
        self.current.next().expect("non-empty sample list")
    }
}

/// Unaugmented, normalized views in index order, `batch_size` at a time.
pub fn eval_batches(images: &Array4<u8>, batch_size: usize) -> impl Iterator<Item = (usize, Array4<f64>)> + '_ {
    let n = images.len_of(Axis(0));
    let batch_size = batch_size.max(1);
    (0..n).step_by(batch_size).map(move |start| {
        let end = (start + batch_size).min(n);
        let views = parallel::map_range(end - start, |k| {
            AugmentationPolicy::to_unit(images.index_axis(Axis(0), start + k))
        });
        (start, stack(views))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn images(n: usize) -> Array4<u8> {
        Array4::from_shape_fn((n, 3, 8, 8), |(i, c, y, x)| ((i * 13 + c * 7 + y * 3 + x) % 256) as u8)
    }

    #[test]
    fn epoch_covers_each_sample_once() {
        let im = images(23);
        let policy = AugmentationPolicy::randaugment();
        let src = BatchSource { images: &im, policy: &policy, seed: 4, tag: 0 };
        let samples: Vec<_> = (0..23).map(|i| (i, i % 3)).collect();
        let it = BatchIterator::new(src, &samples, 5, 0, 0).unwrap();
        assert_eq!(it.num_batches(), 5);
        let mut seen = HashSet::new();
        for b in it {
            assert_eq!(b.weak.shape()[0], b.len());
            assert_eq!(b.strong.shape()[0], b.len());
            assert_eq!(b.mix.shape()[0], b.len());
            for (&id, &y) in b.indices.iter().zip(&b.labels) {
                assert_eq!(y, id % 3);
                assert!(seen.insert(id));
            }
        }
        assert_eq!(seen.len(), 23);
    }

    #[test]
    fn reproducible_and_epoch_dependent() {
        let im = images(10);
        let policy = AugmentationPolicy::randaugment();
        let src = BatchSource { images: &im, policy: &policy, seed: 4, tag: 0 };
        let samples: Vec<_> = (0..10).map(|i| (i, 0)).collect();
        let a: Vec<_> = BatchIterator::new(src, &samples, 4, 1, 0).unwrap().collect();
        let b: Vec<_> = parallel::sequential(|| BatchIterator::new(src, &samples, 4, 1, 0).unwrap().collect());
        let c: Vec<_> = BatchIterator::new(src, &samples, 4, 2, 0).unwrap().collect();
        assert_eq!(a[0].indices, b[0].indices);
        assert_eq!(a[0].strong, b[0].strong);
        assert_ne!(
            a.iter().flat_map(|x| x.indices.clone()).collect::<Vec<_>>(),
            c.iter().flat_map(|x| x.indices.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn rejects_empty_and_zero_batch() {
        let im = images(3);
        let policy = AugmentationPolicy::disabled();
        let src = BatchSource { images: &im, policy: &policy, seed: 0, tag: 0 };
        assert!(BatchIterator::new(src, &[], 4, 0, 0).is_err());
        assert!(BatchIterator::new(src, &[(0, 0)], 0, 0, 0).is_err());
        assert!(BatchIterator::new(src, &[(5, 0)], 1, 0, 0).is_err());
    }

    #[test]
    fn cycling_wraps_around() {
        let im = images(3);
        let policy = AugmentationPolicy::disabled();
        let src = BatchSource { images: &im, policy: &policy, seed: 0, tag: 0 };
        let mut cyc = CyclingBatches::new(src, &[(0, 0), (1, 0), (2, 1)], 2, 0).unwrap();
        let sizes: Vec<usize> = (0..4).map(|_| cyc.next_batch().len()).collect();
        assert_eq!(sizes, vec![2, 1, 2, 1]);
    }

    #[test]
    fn eval_batches_are_unaugmented() {
        let im = images(7);
        let got: Vec<_> = eval_batches(&im, 3).collect();
        assert_eq!(got.len(), 3);
        assert_eq!(got[2].0, 6);
        let expect = (f64::from(im[[4, 1, 2, 3]]) / 255.0 - PIXEL_MEAN) / PIXEL_SCALE;
        assert!((got[1].1[[1, 1, 2, 3]] - expect).abs() < 1e-12);
    }
}
