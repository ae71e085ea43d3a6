//! Binary detector: a 100-hidden-unit ReLU MLP with a sigmoid read-out.
//!
//! The training recipe is a documented stand-in for common library
//! defaults: Adam at 1e-3, L2 penalty 1e-4 on the weights, minibatches of
//! min(200, n), 200 epochs, reshuffled every epoch, no early stopping.

use crate::diffcore::{
    adam_step, sigmoid, AdamHyper, AdamState, Graph, GraphBuilder, LossHead, Reduction, Tensor,
};
use crate::error::{Error, Result};
use crate::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub const HIDDEN_WIDTH: usize = 100;
const LEARNING_RATE: f32 = 1e-3;
const L2_PENALTY: f32 = 1e-4;
const MAX_EPOCHS: usize = 200;
const BATCH_CAP: usize = 200;

/// A trained adversarial-probability estimator over feature rows.
#[derive(Debug, Clone)]
pub struct Detector {
    graph: Graph,
    input_width: usize,
    seed: u64,
}

impl Detector {
    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[cfg(test)]
    pub(crate) fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Adversarial probability per feature row, always in `[0, 1]`.
    pub fn predict_proba(&self, features: &[f32]) -> Result<Vec<f32>> {
        if features.len() % self.input_width != 0 {
            return Err(Error::shape(
                "detector predict",
                format!("rows of width {}", self.input_width),
                format!("{} values", features.len()),
            ));
        }
        let n = features.len() / self.input_width;
        let x = Tensor::new(vec![n, self.input_width], features.to_vec())?;
        let trace = self.graph.forward(&x)?;
        Ok(trace.output().data().iter().map(|&z| sigmoid(z)).collect())
    }
}

fn detector_graph(width: usize, seed: u64) -> Result<Graph> {
    let (mut b, input) = GraphBuilder::new(vec![width]);
    let hidden = b.dense(input, HIDDEN_WIDTH, "h")?;
    let relu = b.relu(hidden);
    let out = b.dense(relu, 1, "out")?;
    let mut graph = b.finish(out);
    let mut rng = seed::stream(seed, "detector-init", 0);
    for p in graph.params_mut() {
        if p.name.ends_with(".w") {
            let fan_in = p.tensor.shape()[0];
            let dist = Normal::new(0.0f32, (2.0f32 / fan_in as f32).sqrt()).expect("init std");
            for v in p.tensor.data_mut() {
                *v = dist.sample(&mut rng);
            }
        }
    }
    Ok(graph)
}

/// Train a detector on `n` feature rows of the given width with 0/1 labels.
/// Deterministic per seed. Rejects single-class data.
pub fn train_detector(
    features: &[f32],
    width: usize,
    labels: &[u8],
    seed: u64,
) -> Result<Detector> {
    let n = labels.len();
    if width == 0 || features.len() != n * width {
        return Err(Error::shape(
            "train_detector",
            format!("{n} rows x {width}"),
            format!("{} values", features.len()),
        ));
    }
    let has_pos = labels.iter().any(|&l| l == 1);
    let has_neg = labels.iter().any(|&l| l == 0);
    if !has_pos || !has_neg {
        return Err(Error::SingleClassData);
    }

    let mut graph = detector_graph(width, seed)?;
    let hyper = AdamHyper { lr: LEARNING_RATE, ..AdamHyper::default() };
    let mut state = AdamState::default();
    let batch_size = BATCH_CAP.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..MAX_EPOCHS {
        let mut rng = seed::stream(seed, "detector-shuffle", epoch as u64);
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(batch_size) {
            let mut rows = Vec::with_capacity(batch.len() * width);
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                rows.extend_from_slice(&features[i * width..(i + 1) * width]);
                targets.push(labels[i] as f32);
            }
            let x = Tensor::new(vec![batch.len(), width], rows)?;
            let trace = graph.forward(&x)?;
            let head = LossHead::SigmoidBce { targets, reduction: Reduction::Mean };
            let (_, mut grads) = trace.backward(&head)?;
            drop(trace);
            // sklearn-style L2 on weight matrices only
            let scale = L2_PENALTY / batch.len() as f32;
            grads.add_scaled_params(&graph, scale, |name| name.ends_with(".w"));
            adam_step(graph.params_mut(), &grads, &mut state, &hyper);
        }
    }
    Ok(Detector { graph, input_width: width, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n_per: usize, gap: f32, seed: u64) -> (Vec<f32>, Vec<u8>) {
        let mut rng = seed::stream(seed, "blobs", 0);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let class = (i % 2) as u8;
            let center = if class == 0 { -gap } else { gap };
            features.push(center + rng.random::<f32>() * 0.5 - 0.25);
            features.push(center + rng.random::<f32>() * 0.5 - 0.25);
            labels.push(class);
        }
        (features, labels)
    }

    #[test]
    fn separable_blobs_reach_high_training_accuracy() {
        let (features, labels) = blobs(60, 1.0, 3);
        let det = train_detector(&features, 2, &labels, 5).unwrap();
        let probs = det.predict_proba(&features).unwrap();
        let correct = probs
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| (**p > 0.5) == (l == 1))
            .count();
        let acc = correct as f64 / labels.len() as f64;
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn same_seed_identical_parameters() {
        let (features, labels) = blobs(20, 0.8, 9);
        let a = train_detector(&features, 2, &labels, 7).unwrap();
        let b = train_detector(&features, 2, &labels, 7).unwrap();
        for (pa, pb) in a.graph().params().iter().zip(b.graph().params()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data());
        }
        let c = train_detector(&features, 2, &labels, 8).unwrap();
        let differs = a
            .graph()
            .params()
            .iter()
            .zip(c.graph().params())
            .any(|(x, y)| x.tensor.data() != y.tensor.data());
        assert!(differs);
    }

    #[test]
    fn probabilities_live_in_unit_interval() {
        let (features, labels) = blobs(15, 0.5, 2);
        let det = train_detector(&features, 2, &labels, 1).unwrap();
        let wild: Vec<f32> = (0..40).map(|v| (v as f32 - 20.0) * 100.0).collect();
        for p in det.predict_proba(&wild).unwrap() {
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn single_class_rejected() {
        let features = vec![0.0f32; 8];
        assert!(matches!(
            train_detector(&features, 2, &[1, 1, 1, 1], 0),
            Err(Error::SingleClassData)
        ));
    }

    #[test]
    fn hidden_width_is_pinned() {
        let g = detector_graph(7, 0).unwrap();
        let (_, h) = g.param_named("h.w").unwrap();
        assert_eq!(h.tensor.shape(), &[7, HIDDEN_WIDTH]);
    }
}
