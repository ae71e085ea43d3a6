//! Classifier architecture, training, prediction, and representation
//! extraction.
//!
//! Every model in a population shares one [`ArchConfig`]; only the
//! initialization seed differs. The penultimate layer is a designated dense
//! layer whose post-activation output feeds the final classification layer;
//! that activation vector is the representation the detectors consume.

mod augment;
mod persist;

pub use augment::augment;
pub use persist::{load_classifier, save_classifier};

use crate::data::Dataset;
use crate::diffcore::{
    adam_step, AdamHyper, AdamState, Gradients, Graph, GraphBuilder, LossHead, NodeId, Tensor,
};
use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// One convolutional stage: `conv(filters, 3x3, stride) -> relu ->
/// conv(filters, 3x3)` with an optional residual connection around it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub filters: usize,
    pub stride: usize,
    pub residual: bool,
}

/// Shape of the classifier shared by a whole model population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// (channels, height, width) of input instances.
    pub input: (usize, usize, usize),
    pub stem_filters: usize,
    pub blocks: Vec<BlockSpec>,
    /// Width R of the penultimate representation layer.
    pub penultimate_width: usize,
    pub classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input: (3, 32, 32),
            stem_filters: 16,
            blocks: vec![
                BlockSpec { filters: 16, stride: 1, residual: true },
                BlockSpec { filters: 32, stride: 2, residual: true },
            ],
            penultimate_width: 64,
            classes: 10,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.penultimate_width < 1 {
            return Err(Error::Config("penultimate width must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("class count must be >= 2".into()));
        }
        if self.stem_filters < 1 || self.blocks.iter().any(|b| b.filters < 1 || b.stride < 1) {
            return Err(Error::Config("filter counts and strides must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Probability of a horizontal flip per presented image.
    pub flip_p: f64,
    /// Zero padding per edge for random crop sampling; 0 disables cropping.
    pub crop_pad: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 128,
            learning_rate: 1e-3,
            flip_p: 0.5,
            crop_pad: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_p) {
            return Err(Error::Config("flip probability must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Training metadata recorded on a classifier once it has been trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMeta {
    pub epochs: usize,
    pub heldout_accuracy: f32,
    pub final_train_loss: f32,
}

/// Per-epoch view of a finished training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub heldout_accuracy: f64,
}

/// A layered classifier: operation graph, architecture, and provenance.
#[derive(Debug, Clone)]
pub struct Classifier {
    graph: Graph,
    arch: ArchConfig,
    seed: u64,
    meta: Option<TrainMeta>,
    penultimate: NodeId,
}

/// Build a classifier with He fan-in initialization drawn from `seed`.
/// Equal seeds build identical models.
pub fn build_classifier(arch: &ArchConfig, model_seed: u64) -> Result<Classifier> {
    arch.validate()?;
    let (c, h, w) = arch.input;
    let (mut b, input) = GraphBuilder::new(vec![c, h, w]);
    let stem = b.conv2d(input, arch.stem_filters, 3, 1, 1, "stem")?;
    let mut cursor = b.relu(stem);
    let mut in_filters = arch.stem_filters;
    for (i, block) in arch.blocks.iter().enumerate() {
        let c1 = b.conv2d(cursor, block.filters, 3, block.stride, 1, &format!("b{i}.c1"))?;
        let r1 = b.relu(c1);
        let c2 = b.conv2d(r1, block.filters, 3, 1, 1, &format!("b{i}.c2"))?;
        let joined = if block.residual {
            let skip = if block.stride == 1 && in_filters == block.filters {
                cursor
            } else {
                b.conv2d(cursor, block.filters, 1, block.stride, 0, &format!("b{i}.skip"))?
            };
            b.add(c2, skip)?
        } else {
            c2
        };
        cursor = b.relu(joined);
        in_filters = block.filters;
    }
    let pooled = b.global_avg_pool(cursor)?;
    let rep_dense = b.dense(pooled, arch.penultimate_width, "fc_rep")?;
    let penultimate = b.relu(rep_dense);
    let logits = b.dense(penultimate, arch.classes, "fc_out")?;
    let mut graph = b.finish(logits);

    let mut rng = seed::stream(model_seed, "init", 0);
    for p in graph.params_mut() {
        let shape = p.tensor.shape().to_vec();
        if p.name.ends_with(".w") {
            let fan_in: usize = match shape.len() {
                4 => shape[1] * shape[2] * shape[3],
                2 => shape[0],
                _ => shape.iter().product(),
            };
            let dist = Normal::new(0.0f32, (2.0f32 / fan_in as f32).sqrt()).expect("he std");
            for v in p.tensor.data_mut() {
                *v = dist.sample(&mut rng);
            }
        } else {
            // small positive bias keeps ReLU units alive through the early
            // steps; a dead unit behind global average pooling never recovers
            p.tensor.data_mut().fill(0.05);
        }
    }
    Ok(Classifier { graph, arch: arch.clone(), seed: model_seed, meta: None, penultimate })
}

impl Classifier {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn meta(&self) -> Option<&TrainMeta> {
        self.meta.as_ref()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    pub(crate) fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub(crate) fn set_meta(&mut self, meta: TrainMeta) {
        self.meta = Some(meta);
    }

    /// Logit rows for a batch.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.graph.forward(batch)?.output().clone())
    }

    /// Argmax labels, ties broken toward the lowest class index.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(batch)?;
        Ok(argmax_rows(logits.data(), self.arch.classes))
    }

    /// Post-activation output of the penultimate layer, one row of width R
    /// per instance.
    pub fn penultimate(&self, batch: &Tensor) -> Result<Tensor> {
        let trace = self.graph.forward(batch)?;
        Ok(trace.activation(self.penultimate).clone())
    }

    /// Gradient of the softmax cross-entropy loss with respect to the input
    /// pixels, one gradient image per instance.
    pub fn input_gradient(&self, batch: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let x = batch.clone().with_grad();
        let trace = self.graph.forward(&x)?;
        let head = LossHead::cross_entropy_sum(labels.to_vec());
        let (_, grad) = trace.backward_input_only(&head)?;
        Ok(grad)
    }

    /// Loss and gradients for one training batch.
    fn train_step(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        let trace = self.graph.forward(batch)?;
        let head = LossHead::cross_entropy_mean(labels.to_vec());
        trace.backward(&head)
    }

    /// Fraction of instances predicted correctly, evaluated in chunks.
    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let mut correct = 0usize;
        for chunk in index_chunks(ds.len(), 512) {
            let batch = ds.batch(&chunk);
            let preds = self.predict(&batch)?;
            correct += preds
                .iter()
                .zip(ds.batch_labels(&chunk))
                .filter(|(p, y)| **p == *y)
                .count();
        }
        Ok(correct as f64 / ds.len() as f64)
    }
}

pub(crate) fn argmax_rows(data: &[f32], width: usize) -> Vec<usize> {
    data.chunks_exact(width)
        .map(|row| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn index_chunks(n: usize, chunk: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n.div_ceil(chunk)).map(move |i| {
        let start = i * chunk;
        (start..(start + chunk).min(n)).collect()
    })
}

/// Train in place with shuffled minibatches, flip/crop augmentation, and
/// Adam. Deterministic for a fixed `(classifier seed, cfg.seed, dataset)`
/// on a single worker.
pub fn train(
    classifier: &mut Classifier,
    train_ds: &Dataset,
    heldout: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::EmptyDataset("training split".into()));
    }
    let dims = train_ds.dims();
    if dims != classifier.arch.input {
        return Err(Error::shape(
            "train",
            format!("{:?} images", classifier.arch.input),
            format!("{dims:?}"),
        ));
    }
    let n = train_ds.len();
    let chw = train_ds.instance_len();
    let hyper = AdamHyper { lr: cfg.learning_rate, ..AdamHyper::default() };
    let mut state = AdamState::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = seed::stream(cfg.seed, "shuffle", epoch as u64);
        for i in (1..n).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut aug_rng = seed::stream(cfg.seed, "augment", epoch as u64);
        let mut loss_sum = 0.0f64;
        for batch_idx in order.chunks(cfg.batch_size) {
            let mut data = vec![0.0f32; batch_idx.len() * chw];
            for (slot, &i) in batch_idx.iter().enumerate() {
                augment::augment_into(
                    train_ds.image(i),
                    &mut data[slot * chw..(slot + 1) * chw],
                    dims,
                    cfg.flip_p,
                    cfg.crop_pad,
                    &mut aug_rng,
                );
            }
            let batch = Tensor::new(
                vec![batch_idx.len(), dims.0, dims.1, dims.2],
                data,
            )?;
            let labels = train_ds.batch_labels(batch_idx);
            let (loss, grads) = classifier.train_step(&batch, &labels)?;
            classifier.graph.store_grads(&grads)?;
            adam_step(classifier.graph.params_mut(), &grads, &mut state, &hyper);
            loss_sum += loss * batch_idx.len() as f64;
        }
        epoch_losses.push(loss_sum / n as f64);
    }
    let heldout_accuracy = if heldout.is_empty() { 0.0 } else { classifier.accuracy(heldout)? };
    classifier.set_meta(TrainMeta {
        epochs: cfg.epochs,
        heldout_accuracy: heldout_accuracy as f32,
        final_train_loss: *epoch_losses.last().unwrap() as f32,
    });
    Ok(TrainReport { epoch_losses, heldout_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_pair, SyntheticSpec};

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            input: (3, 8, 8),
            stem_filters: 4,
            blocks: vec![
                BlockSpec { filters: 4, stride: 1, residual: true },
                BlockSpec { filters: 8, stride: 2, residual: true },
            ],
            penultimate_width: 6,
            classes: 3,
        }
    }

    #[test]
    fn equal_seeds_build_identical_models() {
        let a = build_classifier(&tiny_arch(), 7).unwrap();
        let b = build_classifier(&tiny_arch(), 7).unwrap();
        for (pa, pb) in a.graph().params().iter().zip(b.graph().params()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data(), "{}", pa.name);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = build_classifier(&tiny_arch(), 7).unwrap();
        let b = build_classifier(&tiny_arch(), 8).unwrap();
        let differs = a
            .graph()
            .params()
            .iter()
            .zip(b.graph().params())
            .any(|(pa, pb)| pa.tensor.data() != pb.tensor.data());
        assert!(differs);
    }

    #[test]
    fn parameter_count_matches_per_layer_formula() {
        // independent per-layer arithmetic: conv = f*c*k*k + f, dense = d*m + m
        let arch = ArchConfig::default();
        let model = build_classifier(&arch, 0).unwrap();
        let conv = |f: usize, c: usize, k: usize| f * c * k * k + f;
        let dense = |d: usize, m: usize| d * m + m;
        let want = conv(16, 3, 3)            // stem
            + conv(16, 16, 3) + conv(16, 16, 3)          // block 0 (identity skip)
            + conv(32, 16, 3) + conv(32, 32, 3) + conv(32, 16, 1) // block 1 + projection
            + dense(32, 64)                  // penultimate
            + dense(64, 10); // logits
        assert_eq!(model.param_count(), want);
    }

    #[test]
    fn tie_breaks_toward_lowest_class() {
        assert_eq!(argmax_rows(&[1.0, 1.0, 0.0], 3), vec![0]);
        assert_eq!(argmax_rows(&[0.1, 0.9, 0.2], 3), vec![1]);
        assert_eq!(argmax_rows(&[0.0, 0.5, 0.5], 3), vec![1]);
    }

    #[test]
    fn penultimate_width_and_determinism() {
        let model = build_classifier(&tiny_arch(), 3).unwrap();
        let x = Tensor::zeros(vec![2, 3, 8, 8]);
        let reps = model.penultimate(&x).unwrap();
        assert_eq!(reps.shape(), &[2, 6]);
        let again = model.penultimate(&x).unwrap();
        assert_eq!(reps.data(), again.data());
        // identical inputs give identical rows
        assert_eq!(reps.data()[..6], reps.data()[6..12]);
    }

    #[test]
    fn logits_recompose_from_penultimate() {
        let model = build_classifier(&tiny_arch(), 11).unwrap();
        let x = Tensor::new(
            vec![2, 3, 8, 8],
            (0..2 * 3 * 64).map(|v| ((v * 37) % 256) as f32 / 255.0).collect(),
        )
        .unwrap();
        let reps = model.penultimate(&x).unwrap();
        let logits = model.logits(&x).unwrap();
        let (_, w) = model.graph().param_named("fc_out.w").unwrap();
        let (_, b) = model.graph().param_named("fc_out.b").unwrap();
        let (r, c) = (6, 3);
        for i in 0..2 {
            for j in 0..c {
                let mut acc = b.tensor.data()[j];
                for k in 0..r {
                    acc += reps.data()[i * r + k] * w.tensor.data()[k * c + j];
                }
                let got = logits.data()[i * c + j];
                assert!((acc - got).abs() < 1e-5, "recompose {i},{j}: {acc} vs {got}");
            }
        }
    }

    #[test]
    fn input_gradient_shape_and_linearity() {
        let model = build_classifier(&tiny_arch(), 5).unwrap();
        let x = Tensor::new(
            vec![1, 3, 8, 8],
            (0..192).map(|v| (v % 200) as f32 / 255.0).collect(),
        )
        .unwrap();
        let g = model.input_gradient(&x, &[1]).unwrap();
        assert_eq!(g.shape(), x.shape());
        // doubling the loss doubles the gradient: two identical instances
        // under sum reduction carry the same per-instance gradient
        let x2 = Tensor::new(
            vec![2, 3, 8, 8],
            x.data().iter().chain(x.data()).copied().collect::<Vec<f32>>(),
        )
        .unwrap();
        let g2 = model.input_gradient(&x2, &[1, 1]).unwrap();
        for (a, b) in g.data().iter().zip(&g2.data()[..192]) {
            assert!((a - b).abs() <= 1e-7 + 1e-3 * a.abs());
        }
    }

    #[test]
    fn invalid_label_rejected() {
        let model = build_classifier(&tiny_arch(), 5).unwrap();
        let x = Tensor::zeros(vec![1, 3, 8, 8]);
        assert!(matches!(
            model.input_gradient(&x, &[3]),
            Err(Error::InvalidLabel { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn one_epoch_reduces_loss_on_tiny_dataset() {
        let spec = SyntheticSpec {
            classes: 2,
            channels: 3,
            height: 8,
            width: 8,
            train_per_class: 1,
            test_per_class: 1,
            ..Default::default()
        };
        let (train_ds, test_ds) = synthetic_pair(&spec, 3).unwrap();
        let mut model = build_classifier(&tiny_arch(), 1).unwrap();
        let probe = train_ds.batch(&[0, 1]);
        let labels = train_ds.batch_labels(&[0, 1]);
        let before = model
            .graph()
            .forward(&probe)
            .unwrap()
            .loss(&LossHead::cross_entropy_mean(labels.clone()))
            .unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            crop_pad: 0,
            flip_p: 0.0,
            ..Default::default()
        };
        train(&mut model, &train_ds, &test_ds, &cfg).unwrap();
        let after = model
            .graph()
            .forward(&probe)
            .unwrap()
            .loss(&LossHead::cross_entropy_mean(labels))
            .unwrap();
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn training_same_seed_is_bit_identical() {
        let spec = SyntheticSpec {
            classes: 2,
            channels: 3,
            height: 8,
            width: 8,
            train_per_class: 6,
            test_per_class: 2,
            ..Default::default()
        };
        let (train_ds, test_ds) = synthetic_pair(&spec, 3).unwrap();
        let run = || {
            let mut model = build_classifier(&tiny_arch(), 2).unwrap();
            let cfg = TrainConfig { epochs: 2, batch_size: 4, ..Default::default() };
            train(&mut model, &train_ds, &test_ds, &cfg).unwrap();
            model
                .graph()
                .params()
                .iter()
                .flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<u32>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = Dataset::new(vec![], vec![], (3, 8, 8), crate::data::Split::Train, "empty").unwrap();
        let mut model = build_classifier(&tiny_arch(), 0).unwrap();
        assert!(matches!(
            train(&mut model, &ds, &ds, &TrainConfig::default()),
            Err(Error::EmptyDataset(_))
        ));
    }
}
