//! Dataset ingestion, the synthetic stand-in, and pair-preserving splits.
//!
//! All pixel values live in `[0, 1]` on the `k/255` grid, exactly as they
//! would after byte images are scaled by `1/255`. Datasets are read-only
//! after construction and safe to share freely.

mod cifar;
mod synthetic;

pub use cifar::load_cifar10;
pub use synthetic::{synthetic_dataset, synthetic_pair, SyntheticSpec};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images with labels. `images` is row-major `[n, c, h, w]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<u8>,
    channels: usize,
    height: usize,
    width: usize,
    split: Split,
    source: String,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<u8>,
        (channels, height, width): (usize, usize, usize),
        split: Split,
        source: impl Into<String>,
    ) -> Result<Self> {
        let chw = channels * height * width;
        if labels.len() * chw != images.len() {
            return Err(Error::shape(
                "dataset construction",
                format!("{} pixel values for {} labels", labels.len() * chw, labels.len()),
                format!("{}", images.len()),
            ));
        }
        if let Some(bad) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Dataset { images, labels, channels, height, width, split, source: source.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn instance_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let chw = self.instance_len();
        &self.images[i * chw..(i + 1) * chw]
    }

    /// Gather instances into a `[k, c, h, w]` batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let chw = self.instance_len();
        let mut data = Vec::with_capacity(indices.len() * chw);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)
            .expect("batch shape")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i] as usize).collect()
    }

    /// Keep the first `per_class` instances of every class, in dataset
    /// order. A deterministic, documented subset rather than a sample, so
    /// downstream numbers are stable.
    pub fn stratified_head(&self, per_class: usize) -> Dataset {
        let classes = self.classes();
        let mut taken = vec![0usize; classes];
        let mut keep = Vec::new();
        for (i, &label) in self.labels.iter().enumerate() {
            let c = label as usize;
            if taken[c] < per_class {
                taken[c] += 1;
                keep.push(i);
            }
        }
        self.subset(&keep)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let chw = self.instance_len();
        let mut images = Vec::with_capacity(indices.len() * chw);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            images,
            labels,
            channels: self.channels,
            height: self.height,
            width: self.width,
            split: self.split,
            source: self.source.clone(),
        }
    }
}

/// Snap a unit-interval value onto the `k/255` grid, rounding halves away
/// from zero, after clipping to `[0, 1]`.
pub fn quantize_pixel(v: f32) -> f32 {
    let clipped = v.clamp(0.0, 1.0);
    (clipped * 255.0).round() / 255.0
}

/// The byte level for an on-grid pixel value.
pub fn pixel_level(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Index-aligned clean/adversarial instances that always travel together.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSet {
    clean: Vec<f32>,
    adversarial: Vec<f32>,
    /// True class label of the source image.
    labels: Vec<u8>,
    /// Index of the source image in the originating dataset.
    source_idx: Vec<u32>,
    channels: usize,
    height: usize,
    width: usize,
}

/// A [`PairedSet`] expanded to one instance per clean/adversarial image,
/// labeled 0 for clean and 1 for adversarial.
#[derive(Debug, Clone)]
pub struct ExpandedPairs {
    pub images: Tensor,
    /// 0 = clean, 1 = adversarial; two instances per pair.
    pub labels: Vec<u8>,
    pub pair_ids: Vec<u32>,
}

impl PairedSet {
    pub fn new(
        clean: Vec<f32>,
        adversarial: Vec<f32>,
        labels: Vec<u8>,
        source_idx: Vec<u32>,
        (channels, height, width): (usize, usize, usize),
    ) -> Result<Self> {
        let chw = channels * height * width;
        let n = labels.len();
        if clean.len() != n * chw || adversarial.len() != n * chw || source_idx.len() != n {
            return Err(Error::shape(
                "paired set construction",
                format!("{n} aligned pairs"),
                format!(
                    "clean {} adv {} sources {}",
                    clean.len() / chw.max(1),
                    adversarial.len() / chw.max(1),
                    source_idx.len()
                ),
            ));
        }
        Ok(PairedSet { clean, adversarial, labels, source_idx, channels, height, width })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn instance_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn source_indices(&self) -> &[u32] {
        &self.source_idx
    }

    pub fn clean_image(&self, i: usize) -> &[f32] {
        let chw = self.instance_len();
        &self.clean[i * chw..(i + 1) * chw]
    }

    pub fn adversarial_image(&self, i: usize) -> &[f32] {
        let chw = self.instance_len();
        &self.adversarial[i * chw..(i + 1) * chw]
    }

    /// Expand to detector instances: pair `i` becomes instances `2i`
    /// (clean, label 0) and `2i + 1` (adversarial, label 1).
    pub fn expand(&self) -> ExpandedPairs {
        let chw = self.instance_len();
        let n = self.len();
        let mut images = Vec::with_capacity(2 * n * chw);
        let mut labels = Vec::with_capacity(2 * n);
        let mut pair_ids = Vec::with_capacity(2 * n);
        for i in 0..n {
            images.extend_from_slice(self.clean_image(i));
            labels.push(0);
            pair_ids.push(self.source_idx[i]);
            images.extend_from_slice(self.adversarial_image(i));
            labels.push(1);
            pair_ids.push(self.source_idx[i]);
        }
        ExpandedPairs {
            images: Tensor::new(vec![2 * n, self.channels, self.height, self.width], images)
                .expect("expanded shape"),
            labels,
            pair_ids,
        }
    }

    pub fn subset(&self, pair_indices: &[usize]) -> PairedSet {
        let chw = self.instance_len();
        let mut clean = Vec::with_capacity(pair_indices.len() * chw);
        let mut adversarial = Vec::with_capacity(pair_indices.len() * chw);
        let mut labels = Vec::with_capacity(pair_indices.len());
        let mut source_idx = Vec::with_capacity(pair_indices.len());
        for &i in pair_indices {
            clean.extend_from_slice(self.clean_image(i));
            adversarial.extend_from_slice(self.adversarial_image(i));
            labels.push(self.labels[i]);
            source_idx.push(self.source_idx[i]);
        }
        PairedSet {
            clean,
            adversarial,
            labels,
            source_idx,
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }
}

/// Assign pair indices to train/test atomically: a clean image and its
/// adversarial counterpart always land on the same side.
pub fn split_pair_indices(
    n_pairs: usize,
    test_fraction: f64,
    split_seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(Error::Config(format!("test_fraction {test_fraction} outside (0, 1)")));
    }
    if n_pairs < 2 {
        return Err(Error::Data(format!("need at least 2 pairs to split, have {n_pairs}")));
    }
    let mut order: Vec<usize> = (0..n_pairs).collect();
    let mut rng = seed::stream(split_seed, "pair-split", 0);
    // Fisher-Yates
    for i in (1..n_pairs).rev() {
        let j = rand::Rng::random_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let test_count = ((test_fraction * n_pairs as f64).round() as usize).clamp(1, n_pairs - 1);
    let mut test: Vec<usize> = order[..test_count].to_vec();
    let mut train: Vec<usize> = order[test_count..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Split a paired set into train/test paired sets without ever separating a
/// pair.
pub fn pair_split(
    pairs: &PairedSet,
    test_fraction: f64,
    split_seed: u64,
) -> Result<(PairedSet, PairedSet)> {
    let (train_idx, test_idx) = split_pair_indices(pairs.len(), test_fraction, split_seed)?;
    Ok((pairs.subset(&train_idx), pairs.subset(&test_idx)))
}
