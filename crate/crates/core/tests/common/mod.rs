//! Synthetic IDX fixtures: each class lights up its own band of rows.
#![allow(dead_code)]

use std::fs;
use std::path::Path;

pub const IMAGE_MAGIC: u32 = 0x803;
pub const LABEL_MAGIC: u32 = 0x801;

pub fn idx_images(pixels: &[u8], count: usize) -> Vec<u8> {
    let mut b = IMAGE_MAGIC.to_be_bytes().to_vec();
    for d in [count as u32, 28, 28] {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = LABEL_MAGIC.to_be_bytes().to_vec();
    b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

pub fn banded(count: usize, offset: usize) -> (Vec<u8>, Vec<u8>) {
    let labels: Vec<u8> = (0..count).map(|i| ((i + offset) % 10) as u8).collect();
    let mut pixels = Vec::with_capacity(count * 784);
    for (i, &l) in labels.iter().enumerate() {
        for p in 0..784 {
            let row = p / 28;
            let lit = row / 3 == l as usize || (p * 31 + i * 17) % 97 == 0;
            pixels.push(if lit { 200 } else { 10 });
        }
    }
    (pixels, labels)
}

/// Writes the four standard MNIST file names into `dir`.
pub fn write_dataset(dir: &Path, train: usize, val: usize) {
    let (tp, tl) = banded(train, 0);
    let (vp, vl) = banded(val, 3);
    fs::write(dir.join("train-images-idx3-ubyte"), idx_images(&tp, train)).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), idx_labels(&tl)).unwrap();
    fs::write(dir.join("t10k-images-idx3-ubyte"), idx_images(&vp, val)).unwrap();
    fs::write(dir.join("t10k-labels-idx1-ubyte"), idx_labels(&vl)).unwrap();
}
