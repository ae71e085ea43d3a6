//! CIFAR-10 binary-format reader.
//!
//! Each record is 3073 bytes: one label byte followed by 3072 pixel bytes —
//! the red plane, then green, then blue, each a row-major 32x32 grid.
//! Parsing is byte-oriented, so it is independent of host endianness.

use super::{Dataset, Split};
use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

const SIDE: usize = 32;
const CHANNELS: usize = 3;
const PIXELS: usize = CHANNELS * SIDE * SIDE;
const RECORD: usize = PIXELS + 1;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Load the six standard binary batch files from `dir`.
///
/// Pixel bytes are scaled by exactly `1/255`. A full distribution copy
/// yields 50,000 training and 10,000 test records.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let mut train_images = Vec::new();
    let mut train_labels = Vec::new();
    for name in TRAIN_FILES {
        read_batch(&dir.join(name), &mut train_images, &mut train_labels)?;
    }
    let mut test_images = Vec::new();
    let mut test_labels = Vec::new();
    read_batch(&dir.join(TEST_FILE), &mut test_images, &mut test_labels)?;
    Ok((
        Dataset::new(train_images, train_labels, (CHANNELS, SIDE, SIDE), Split::Train, "cifar10")?,
        Dataset::new(test_images, test_labels, (CHANNELS, SIDE, SIDE), Split::Test, "cifar10")?,
    ))
}

fn read_batch(path: &Path, images: &mut Vec<f32>, labels: &mut Vec<u8>) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::Data(format!(
            "{}: {} bytes is not a whole number of {RECORD}-byte records",
            path.display(),
            bytes.len()
        )));
    }
    for record in bytes.chunks_exact(RECORD) {
        let label = record[0];
        if label > 9 {
            return Err(Error::Data(format!(
                "{}: label byte {label} exceeds class 9",
                path.display()
            )));
        }
        labels.push(label);
        images.extend(record[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok(())
}
