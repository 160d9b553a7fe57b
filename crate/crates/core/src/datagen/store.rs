//! On-disk form of a materialized bundle: an image file plus two label files
//! per split.
//!
//! The image file is a one-line ASCII header `N C H W` followed by the raw
//! `N x C x H x W` bytes. Labels use the external label-file format.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array4;

use super::bundle::{DatasetBundle, Split};
use super::noise::{read_label_file, write_label_file};
use crate::error::{Error, Result};

fn paths(dir: &Path, split: Split) -> (PathBuf, PathBuf, PathBuf) {
    let p = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    (
        dir.join(format!("{p}_images.bin")),
        dir.join(format!("{p}_true.labels")),
        dir.join(format!("{p}_noisy.labels")),
    )
}

pub fn save_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (img, truth, noisy) = paths(dir, bundle.split());
    let s = bundle.images().shape();
    let mut bytes = format!("{} {} {} {}\n", s[0], s[1], s[2], s[3]).into_bytes();
    bytes.extend(bundle.images().iter().copied());
    fs::write(img, bytes)?;
    write_label_file(&truth, bundle.true_labels(), bundle.num_classes())?;
    write_label_file(&noisy, bundle.noisy_labels(), bundle.num_classes())?;
    Ok(())
}

pub fn load_bundle(dir: &Path, split: Split) -> Result<DatasetBundle> {
    let (img, truth, noisy) = paths(dir, split);
    let bytes = fs::read(&img)?;
    let bad = |reason: String| Error::format(img.display().to_string(), reason);
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header".into()))?;
    let dims: Vec<usize> = std::str::from_utf8(&bytes[..nl])
        .map_err(|e| bad(e.to_string()))?
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| bad(e.to_string())))
        .collect::<Result<_>>()?;
    let [n, c, h, w] = dims[..] else {
        return Err(bad(format!("header has {} fields, expected 4", dims.len())));
    };
    let images = Array4::from_shape_vec((n, c, h, w), bytes[nl + 1..].to_vec()).map_err(|e| bad(e.to_string()))?;
    let (true_labels, classes) = read_label_file(&truth)?;
    let (noisy_labels, noisy_classes) = read_label_file(&noisy)?;
    if classes != noisy_classes {
        return Err(bad(format!("label files disagree on class count ({classes} vs {noisy_classes})")));
    }
    DatasetBundle::new(images, true_labels, classes, split)?.with_noisy_labels(noisy_labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let images = Array4::from_shape_fn((4, 3, 2, 2), |(i, c, y, x)| (i * 13 + c * 5 + y * 2 + x) as u8);
        let b = DatasetBundle::new(images, vec![0, 1, 2, 1], 3, Split::Test)
            .unwrap()
            .with_noisy_labels(vec![0, 0, 2, 2])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(dir.path(), &b).unwrap();
        let r = load_bundle(dir.path(), Split::Test).unwrap();
        assert_eq!(r.content_hash(), b.content_hash());
        assert_eq!(r.noisy_labels(), b.noisy_labels());
        assert!(load_bundle(dir.path(), Split::Train).is_err());
    }
}
