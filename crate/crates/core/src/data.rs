//! IDX loaders, scaled image sets and seeded mini-batch plans.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::Dataset;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;

/// Overrides the dataset directory.
pub const DATA_DIR_ENV: &str = "PRKAN_DATA_DIR";

/// Raw images as stored in an IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub bytes: Vec<u8>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(buf[at..at + 4].try_into().unwrap())
}

fn header(path: &Path, buf: &[u8], magic: u32, dims: usize) -> Result<Vec<u32>> {
    let need = 4 + 4 * dims;
    if buf.len() < 4 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: need,
            found: buf.len(),
        });
    }
    let found = be_u32(buf, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: magic,
            found,
        });
    }
    if buf.len() < need {
        return Err(Error::Truncated {
            path: path.into(),
            expected: need,
            found: buf.len(),
        });
    }
    Ok((0..dims).map(|i| be_u32(buf, 4 + 4 * i)).collect())
}

pub fn parse_idx_images(path: &Path, buf: &[u8]) -> Result<RawImages> {
    let dims = header(path, buf, IMAGE_MAGIC, 3)?;
    if dims[1] as usize != SIDE || dims[2] as usize != SIDE {
        return Err(Error::DimMismatch {
            path: path.into(),
            expected: vec![dims[0], SIDE as u32, SIDE as u32],
            found: dims,
        });
    }
    let count = dims[0] as usize;
    let expected = 16 + count * PIXELS;
    if buf.len() != expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: buf.len(),
        });
    }
    Ok(RawImages {
        count,
        rows: SIDE,
        cols: SIDE,
        bytes: buf[16..].to_vec(),
    })
}

pub fn parse_idx_labels(path: &Path, buf: &[u8]) -> Result<Vec<u8>> {
    let dims = header(path, buf, LABEL_MAGIC, 1)?;
    let count = dims[0] as usize;
    let expected = 8 + count;
    if buf.len() != expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            found: buf.len(),
        });
    }
    let labels = buf[8..].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::Label {
            label: bad as usize,
            classes: CLASSES,
        });
    }
    Ok(labels)
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<RawImages> {
    let path = path.as_ref();
    parse_idx_images(path, &read(path)?)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(path, &read(path)?)
}

/// Images scaled to `[0, 1]` with their labels.
#[derive(Clone, Debug)]
pub struct ImageSet {
    pixels: Vec<f64>,
    labels: Vec<usize>,
}

impl ImageSet {
    pub fn from_raw(images: &RawImages, labels: &[u8]) -> Result<Self> {
        if images.count != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.count,
                labels.len()
            )));
        }
        Ok(Self {
            pixels: images.bytes.iter().map(|&b| b as f64 / 255.0).collect(),
            labels: labels.iter().map(|&l| l as usize).collect(),
        })
    }

    /// Builds a set from already-scaled rows of length 784.
    pub fn from_scaled(pixels: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if pixels.len() != labels.len() * PIXELS {
            return Err(Error::Dataset(format!(
                "{} pixel values for {} labels",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= CLASSES) {
            return Err(Error::Label {
                label: bad,
                classes: CLASSES,
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Dataset("pixel outside [0, 1]".into()));
        }
        Ok(Self { pixels, labels })
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        Self::from_raw(&load_idx_images(images)?, &load_idx_labels(labels)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The first `n` samples (or all of them if there are fewer).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            pixels: self.pixels[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Gathers the given rows into a `(len, 784)` tensor plus labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * PIXELS);
        for &i in indices {
            data.extend_from_slice(&self.pixels[i * PIXELS..(i + 1) * PIXELS]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::from_parts(vec![indices.len(), PIXELS], data), labels)
    }
}

/// Train and validation splits of one dataset.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: ImageSet,
    pub val: ImageSet,
}

/// `$PRKAN_DATA_DIR`, else `data/<dataset>` under the workspace root.
pub fn default_dir(dataset: Dataset) -> PathBuf {
    if let Ok(d) = env::var(DATA_DIR_ENV) {
        return PathBuf::from(d);
    }
    let sub = match dataset {
        Dataset::Mnist => "mnist",
        Dataset::FashionMnist => "fashion-mnist",
    };
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(sub)
}

/// Loads the official train split and the 10K test split (used for
/// validation) from the four standard IDX file names in `dir`.
pub fn load_splits(dir: impl AsRef<Path>) -> Result<Splits> {
    let dir = dir.as_ref();
    Ok(Splits {
        train: ImageSet::load(
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        )?,
        val: ImageSet::load(
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        )?,
    })
}

/// Mini-batch schedule for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub seed: u64,
    pub batch_size: usize,
    pub shuffle: bool,
    pub epoch: usize,
}

impl BatchPlan {
    /// Per-epoch index order: a Fisher–Yates shuffle seeded from
    /// `(seed, epoch)`, or the identity when shuffling is off.
    pub fn order(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            // stream 0 of the same seed initializes the model weights
            rng.set_stream(self.epoch as u64 + 1);
            idx.shuffle(&mut rng);
        }
        idx
    }

    /// Index batches; the final short batch is kept.
    pub fn batches(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batches", "batch size must be positive"));
        }
        Ok(self
            .order(n)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(count: u32, rows: u32) -> Vec<u8> {
        let mut b = IMAGE_MAGIC.to_be_bytes().to_vec();
        for d in [count, rows, 28] {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b.extend((0..count as usize * rows as usize * 28).map(|i| (i % 256) as u8));
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = LABEL_MAGIC.to_be_bytes().to_vec();
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn images_round_trip_bytes() {
        let buf = idx_images(3, 28);
        let raw = parse_idx_images(Path::new("x"), &buf).unwrap();
        assert_eq!(raw.count, 3);
        assert_eq!(raw.bytes, buf[16..]);
    }

    #[test]
    fn distinct_errors() {
        let p = Path::new("x");
        let labels = idx_labels(&[1, 2]);
        assert!(matches!(parse_idx_images(p, &labels), Err(Error::BadMagic { .. })));
        let mut short = idx_images(2, 28);
        short.pop();
        assert!(matches!(parse_idx_images(p, &short), Err(Error::Truncated { .. })));
        assert!(matches!(parse_idx_images(p, &idx_images(1, 27)), Err(Error::DimMismatch { .. })));
        assert!(matches!(parse_idx_labels(p, &[]), Err(Error::Truncated { .. })));
        assert!(matches!(parse_idx_labels(p, &idx_labels(&[3, 17])), Err(Error::Label { label: 17, .. })));
    }

    #[test]
    fn scaling_and_count_check() {
        let raw = parse_idx_images(Path::new("x"), &idx_images(2, 28)).unwrap();
        let set = ImageSet::from_raw(&raw, &[4, 5]).unwrap();
        assert_eq!(set.pixels()[255], 1.0);
        assert!(set.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(ImageSet::from_raw(&raw, &[4]).is_err());
    }

    #[test]
    fn batch_counts_and_determinism() {
        let plan = BatchPlan {
            seed: 3,
            batch_size: 64,
            shuffle: true,
            epoch: 1,
        };
        let b = plan.batches(60_000).unwrap();
        assert_eq!(b.len(), 938);
        assert_eq!(b.last().unwrap().len(), 32);
        assert_eq!(b, plan.batches(60_000).unwrap());
        let other = BatchPlan { epoch: 2, ..plan }.batches(60_000).unwrap();
        assert_ne!(b, other);
        let ident = BatchPlan { shuffle: false, ..plan }.order(5);
        assert_eq!(ident, vec![0, 1, 2, 3, 4]);
        assert!(BatchPlan { batch_size: 0, ..plan }.batches(5).is_err());
    }
}
