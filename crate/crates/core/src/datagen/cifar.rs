//! CIFAR binary batch files.
//!
//! CIFAR-10 records are one label byte followed by 3072 pixel bytes (1024 red,
//! 1024 green, 1024 blue, row-major 32x32). CIFAR-100 records carry a coarse
//! and a fine label byte; the fine label is used.

use std::fs;
use std::path::Path;

use ndarray::Array4;

use super::bundle::{DatasetBundle, Split};
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const SIDE: usize = 32;
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Cifar10,
    Cifar100,
}

impl Variant {
    pub fn num_classes(self) -> usize {
        match self {
            Variant::Cifar10 => 10,
            Variant::Cifar100 => 100,
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            Variant::Cifar10 => 1,
            Variant::Cifar100 => 2,
        }
    }

    fn train_files(self) -> &'static [&'static str] {
        match self {
            Variant::Cifar10 => &[
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            Variant::Cifar100 => &["train.bin"],
        }
    }

    fn test_file(self) -> &'static str {
        match self {
            Variant::Cifar10 => "test_batch.bin",
            Variant::Cifar100 => "test.bin",
        }
    }
}

/// Parses raw record bytes into `(images, labels)`.
pub fn parse_records(bytes: &[u8], variant: Variant) -> Result<(Array4<u8>, Vec<usize>)> {
    let lb = variant.label_bytes();
    let rec = lb + PIXELS;
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::format(
            "CIFAR batch",
            format!("{} bytes is not a multiple of the {rec}-byte record", bytes.len()),
        ));
    }
    let n = bytes.len() / rec;
    let mut pixels = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for r in bytes.chunks_exact(rec) {
        let y = r[lb - 1] as usize;
        if y >= variant.num_classes() {
            return Err(Error::format("CIFAR batch", format!("label {y} out of range")));
        }
        labels.push(y);
        pixels.extend_from_slice(&r[lb..]);
    }
    let images = Array4::from_shape_vec((n, CHANNELS, SIDE, SIDE), pixels)
        .map_err(|e| Error::format("CIFAR batch", e.to_string()))?;
    Ok((images, labels))
}

pub fn read_batch_file(path: &Path, variant: Variant) -> Result<(Array4<u8>, Vec<usize>)> {
    parse_records(&fs::read(path)?, variant)
}

/// Writes images and labels as CIFAR-10 records. Images must be 3x32x32.
pub fn write_batch_file(path: &Path, images: &Array4<u8>, labels: &[usize]) -> Result<()> {
    let s = images.shape();
    if s[1..] != [CHANNELS, SIDE, SIDE] {
        return Err(Error::shape("N x 3 x 32 x 32", format!("{s:?}")));
    }
    if s[0] != labels.len() {
        return Err(Error::shape(format!("{} labels", s[0]), labels.len()));
    }
    let mut buf = Vec::with_capacity(labels.len() * (PIXELS + 1));
    for (i, &y) in labels.iter().enumerate() {
        let y = u8::try_from(y).map_err(|_| Error::invalid("labels", "CIFAR-10 labels must fit in a byte"))?;
        buf.push(y);
        let img = images.index_axis(ndarray::Axis(0), i);
        buf.extend(img.iter().copied());
    }
    fs::write(path, buf)?;
    Ok(())
}

fn concat(parts: Vec<(Array4<u8>, Vec<usize>)>) -> Result<(Array4<u8>, Vec<usize>)> {
    let views: Vec<_> = parts.iter().map(|(im, _)| im.view()).collect();
    let images = ndarray::concatenate(ndarray::Axis(0), &views)
        .map_err(|e| Error::format("CIFAR batch", e.to_string()))?;
    let labels = parts.into_iter().flat_map(|(_, l)| l).collect();
    Ok((images, labels))
}

/// Loads the standard train/test split from an extracted CIFAR binary directory.
pub fn load_dir(dir: &Path, variant: Variant) -> Result<(DatasetBundle, DatasetBundle)> {
    let train = variant
        .train_files()
        .iter()
        .map(|f| read_batch_file(&dir.join(f), variant))
        .collect::<Result<Vec<_>>>()?;
    let (train_images, train_labels) = concat(train)?;
    let (test_images, test_labels) = read_batch_file(&dir.join(variant.test_file()), variant)?;
    let c = variant.num_classes();
    Ok((
        DatasetBundle::new(train_images, train_labels, c, Split::Train)?,
        DatasetBundle::new(test_images, test_labels, c, Split::Test)?,
    ))
}

/// True if `dir` holds every file [`load_dir`] needs.
pub fn dir_is_complete(dir: &Path, variant: Variant) -> bool {
    variant
        .train_files()
        .iter()
        .chain(std::iter::once(&variant.test_file()))
        .all(|f| dir.join(f).is_file())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let images = Array4::from_shape_fn((3, 3, 32, 32), |(n, c, y, x)| (n * 7 + c * 5 + y + x) as u8);
        write_batch_file(&p, &images, &[4, 0, 9]).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 3 * 3073);
        let (im, l) = read_batch_file(&p, Variant::Cifar10).unwrap();
        assert_eq!(im, images);
        assert_eq!(l, vec![4, 0, 9]);
    }

    #[test]
    fn truncated_batch_is_rejected() {
        assert!(parse_records(&[0u8; 3000], Variant::Cifar10).is_err());
        let mut rec = vec![0u8; 3074];
        rec[1] = 120;
        assert!(parse_records(&rec, Variant::Cifar100).is_err());
        rec[1] = 42;
        assert_eq!(parse_records(&rec, Variant::Cifar100).unwrap().1, vec![42]);
    }
}
