use std::sync::Arc;

use ndarray::{Array4, ArrayView3, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeding::{derive_rng, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images with their observed (possibly corrupted) labels and the hidden
/// ground truth.
///
/// Images are stored CIFAR-style as `N x channels x height x width` bytes and
/// shared between derived bundles. The ground truth is reachable only through
/// [`DatasetBundle::true_labels`]; training code receives a [`TrainView`],
/// which does not carry it.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    images: Arc<Array4<u8>>,
    noisy_labels: Vec<usize>,
    true_labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

/// The training-path view of a bundle: images and observed labels only.
#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    pub images: &'a Array4<u8>,
    pub noisy_labels: &'a [usize],
    pub num_classes: usize,
}

impl TrainView<'_> {
    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }
}

fn check_labels(labels: &[usize], num_classes: usize, what: &'static str) -> Result<()> {
    match labels.iter().position(|&y| y >= num_classes) {
        Some(i) => Err(Error::invalid(
            what,
            format!("label {} at index {i} outside [0, {num_classes})", labels[i]),
        )),
        None => Ok(()),
    }
}

impl DatasetBundle {
    /// Builds a clean bundle: observed labels start equal to the true labels.
    pub fn new(
        images: Array4<u8>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("num_classes", "must be positive"));
        }
        if images.len_of(Axis(0)) != labels.len() {
            return Err(Error::shape(
                format!("{} images", labels.len()),
                format!("{} images", images.len_of(Axis(0))),
            ));
        }
        check_labels(&labels, num_classes, "labels")?;
        Ok(Self {
            images: Arc::new(images),
            noisy_labels: labels.clone(),
            true_labels: labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &Array4<u8> {
        &self.images
    }

    /// `(channels, height, width)`.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image(&self, i: usize) -> ArrayView3<'_, u8> {
        self.images.index_axis(Axis(0), i)
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    /// Hidden ground truth. For metrics only; never feed this to training.
    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn train_view(&self) -> TrainView<'_> {
        TrainView {
            images: &self.images,
            noisy_labels: &self.noisy_labels,
            num_classes: self.num_classes,
        }
    }

    /// Same images and ground truth, new observed labels.
    pub fn with_noisy_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::shape(
                format!("{} labels", self.len()),
                format!("{} labels", labels.len()),
            ));
        }
        check_labels(&labels, self.num_classes, "noisy_labels")?;
        Ok(Self {
            noisy_labels: labels,
            ..self.clone()
        })
    }

    /// Keeps the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(
                "indices",
                format!("{bad} out of range for {} samples", self.len()),
            ));
        }
        let images = self.images.select(Axis(0), indices);
        Ok(Self {
            images: Arc::new(images),
            noisy_labels: indices.iter().map(|&i| self.noisy_labels[i]).collect(),
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        })
    }

    /// Number of samples per true class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.true_labels {
            counts[y] += 1;
        }
        counts
    }

    /// Draws `per_class` samples of every true class, seeded, then restores
    /// ascending id order.
    pub fn balanced_subset(&self, per_class: usize, seed: u64) -> Result<Self> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.true_labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let mut keep = Vec::with_capacity(per_class * self.num_classes);
        for (c, ids) in by_class.iter_mut().enumerate() {
            if ids.len() < per_class {
                return Err(Error::invalid(
                    "per_class",
                    format!("class {c} has only {} samples, need {per_class}", ids.len()),
                ));
            }
            let mut rng = derive_rng(seed, &[stream::SUBSET, c as u64]);
            ids.shuffle(&mut rng);
            keep.extend_from_slice(&ids[..per_class]);
        }
        keep.sort_unstable();
        self.subset(&keep)
    }

    /// SHA-256 over image bytes, both label vectors and the class count.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_classes as u64).to_le_bytes());
        for d in self.images.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        match self.images.as_slice() {
            Some(s) => h.update(s),
            None => h.update(self.images.iter().copied().collect::<Vec<u8>>()),
        }
        for &y in self.noisy_labels.iter().chain(&self.true_labels) {
            h.update((y as u32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Fraction of samples whose observed label differs from the truth.
    pub fn corruption_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let flipped = self
            .noisy_labels
            .iter()
            .zip(&self.true_labels)
            .filter(|(a, b)| a != b)
            .count();
        flipped as f64 / self.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, c: usize) -> DatasetBundle {
        let images = Array4::from_shape_fn((n, 1, 2, 2), |(i, _, y, x)| (i + y + x) as u8);
        DatasetBundle::new(images, (0..n).map(|i| i % c).collect(), c, Split::Train).unwrap()
    }

    #[test]
    fn rejects_length_mismatch_and_bad_labels() {
        let images = Array4::<u8>::zeros((3, 1, 2, 2));
        assert!(DatasetBundle::new(images.clone(), vec![0, 1], 2, Split::Train).is_err());
        assert!(DatasetBundle::new(images, vec![0, 1, 2], 2, Split::Train).is_err());
    }

    #[test]
    fn relabel_keeps_truth() {
        let b = tiny(6, 3);
        let r = b.with_noisy_labels(vec![2; 6]).unwrap();
        assert_eq!(r.true_labels(), b.true_labels());
        assert_eq!(r.noisy_labels(), &[2; 6]);
        assert!(b.with_noisy_labels(vec![3; 6]).is_err());
        assert!(b.with_noisy_labels(vec![0; 5]).is_err());
    }

    #[test]
    fn balanced_subset_is_balanced_and_sorted() {
        let b = tiny(30, 3);
        let s = b.balanced_subset(4, 9).unwrap();
        assert_eq!(s.class_counts(), vec![4, 4, 4]);
        assert_eq!(s.content_hash(), b.balanced_subset(4, 9).unwrap().content_hash());
        assert!(b.balanced_subset(11, 9).is_err());
    }
}
