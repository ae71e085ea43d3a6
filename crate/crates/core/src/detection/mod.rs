//! Detector pipelines over representation populations.
//!
//! Two techniques, each with a treatment arm (many representation models)
//! and a control arm (one): model-wise trains one detector per
//! representation block and averages their probabilities; unit-wise trains
//! a single detector on an N-wide array of single units. Controls hold the
//! detector structure fixed — N detectors, or N feature units — while
//! collapsing to one underlying model, so any treatment gain isolates the
//! contribution of multiple models.
//!
//! All randomness inside a trial derives from the trial seed through named
//! streams (`model-choice`, `unit-choice`, `detector`), so trials can run
//! in parallel and still agree with a serial run.

mod detector;

pub use detector::{train_detector, Detector, HIDDEN_WIDTH};

use crate::data::ExpandedPairs;
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Treatment,
    Control,
}

impl Arm {
    pub const ALL: [Arm; 2] = [Arm::Treatment, Arm::Control];

    pub fn name(&self) -> &'static str {
        match self {
            Arm::Treatment => "treatment",
            Arm::Control => "control",
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    ModelWise,
    UnitWise,
}

impl PipelineKind {
    pub fn name(&self) -> &'static str {
        match self {
            PipelineKind::ModelWise => "modelwise",
            PipelineKind::UnitWise => "unitwise",
        }
    }
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One pipeline cell of the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub kind: PipelineKind,
    pub arm: Arm,
    pub n: usize,
}

/// Penultimate representations of one instance set under every model of a
/// population: one `instances x width` block per model, plus instance
/// labels (0 clean / 1 adversarial) and pair identities.
#[derive(Debug, Clone)]
pub struct RepMatrix {
    blocks: Vec<Vec<f32>>,
    width: usize,
    n_instances: usize,
    labels: Vec<u8>,
    pair_ids: Vec<u32>,
}

impl RepMatrix {
    pub fn model_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn instances(&self) -> usize {
        self.n_instances
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pair_ids(&self) -> &[u32] {
        &self.pair_ids
    }

    pub fn block(&self, model: usize) -> &[f32] {
        &self.blocks[model]
    }

    pub fn row(&self, model: usize, instance: usize) -> &[f32] {
        &self.blocks[model][instance * self.width..(instance + 1) * self.width]
    }

    /// Gather a feature matrix from one model's block.
    fn gather_block(&self, model: usize, rows: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(rows.len() * self.width);
        for &r in rows {
            out.extend_from_slice(self.row(model, r));
        }
        out
    }

    /// Gather an `rows x selections` feature matrix of single units.
    fn gather_units(&self, selections: &[(usize, usize)], rows: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(rows.len() * selections.len());
        for &r in rows {
            for &(model, unit) in selections {
                out.push(self.blocks[model][r * self.width + unit]);
            }
        }
        out
    }
}

/// Extract penultimate representations of every instance from every model.
pub fn extract(models: &[Classifier], instances: &ExpandedPairs) -> Result<RepMatrix> {
    if models.is_empty() {
        return Err(Error::InsufficientPool { need: 1, have: 0 });
    }
    let width = models[0].arch().penultimate_width;
    if models.iter().any(|m| m.arch() != models[0].arch()) {
        return Err(Error::Config("representation models must share one architecture".into()));
    }
    let n = instances.images.shape()[0];
    let chw: usize = instances.images.shape()[1..].iter().product();
    let shape = instances.images.shape();
    let mut blocks = Vec::with_capacity(models.len());
    for model in models {
        let mut block = Vec::with_capacity(n * width);
        for chunk in crate::models::index_chunks(n, 256) {
            let mut data = Vec::with_capacity(chunk.len() * chw);
            for &i in &chunk {
                data.extend_from_slice(&instances.images.data()[i * chw..(i + 1) * chw]);
            }
            let batch = crate::diffcore::Tensor::new(
                std::iter::once(chunk.len()).chain(shape[1..].iter().copied()).collect::<Vec<_>>(),
                data,
            )?;
            block.extend_from_slice(model.penultimate(&batch)?.data());
        }
        blocks.push(block);
    }
    Ok(RepMatrix {
        blocks,
        width,
        n_instances: n,
        labels: instances.labels.clone(),
        pair_ids: instances.pair_ids.clone(),
    })
}

/// What a pipeline sampled; train-time selections are reused verbatim at
/// test time, and arm-symmetry checks compare these traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionTrace {
    pub model_ids: Vec<usize>,
    pub unit_ids: Vec<usize>,
    pub detector_seeds: Vec<u64>,
    pub feature_width: usize,
}

/// First `k` entries of a seeded shuffle of `0..pool`.
fn sample_distinct(pool: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool).collect();
    for i in 0..k.min(pool) {
        let j = rng.random_range(i..pool);
        order.swap(i, j);
    }
    order.truncate(k);
    order
}

/// Model-wise ensemble: N detectors whose probabilities are averaged.
#[derive(Debug, Clone)]
pub struct ModelwisePipeline {
    model_ids: Vec<usize>,
    detectors: Vec<Detector>,
    trace: SelectionTrace,
}

impl ModelwisePipeline {
    pub fn trace(&self) -> &SelectionTrace {
        &self.trace
    }

    /// Ensemble probability `P = (1/N) * sum(P_i)` per requested row,
    /// the exact arithmetic mean of the component probabilities.
    pub fn probabilities(&self, reps: &RepMatrix, rows: &[usize]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0f64; rows.len()];
        for (detector, &model) in self.detectors.iter().zip(&self.model_ids) {
            let features = reps.gather_block(model, rows);
            for (a, p) in acc.iter_mut().zip(detector.predict_proba(&features)?) {
                *a += p as f64;
            }
        }
        let n = self.detectors.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }
}

/// Train a model-wise pipeline. Treatment: N distinct models, detector `i`
/// trained on model `i`'s block. Control: one model chosen for all N
/// detectors, which differ only in their training seed.
pub fn modelwise(
    arm: Arm,
    n: usize,
    train: &RepMatrix,
    train_rows: &[usize],
    trial_seed: u64,
) -> Result<ModelwisePipeline> {
    if n < 1 {
        return Err(Error::Config("model-wise N must be >= 1".into()));
    }
    let pool = train.model_count();
    let mut rng = seed::stream(trial_seed, "model-choice", 0);
    let model_ids: Vec<usize> = match arm {
        Arm::Treatment => {
            if pool < n {
                return Err(Error::InsufficientPool { need: n, have: pool });
            }
            sample_distinct(pool, n, &mut rng)
        }
        Arm::Control => {
            if pool < 1 {
                return Err(Error::InsufficientPool { need: 1, have: pool });
            }
            let chosen = sample_distinct(pool, 1, &mut rng)[0];
            vec![chosen; n]
        }
    };
    let labels: Vec<u8> = train_rows.iter().map(|&r| train.labels()[r]).collect();
    let detector_seeds: Vec<u64> =
        (0..n).map(|i| seed::child(trial_seed, "detector", i as u64)).collect();
    let mut detectors = Vec::with_capacity(n);
    for (i, &model) in model_ids.iter().enumerate() {
        let features = train.gather_block(model, train_rows);
        detectors.push(train_detector(&features, train.width(), &labels, detector_seeds[i])?);
    }
    let trace = SelectionTrace {
        model_ids: model_ids.clone(),
        unit_ids: vec![],
        detector_seeds,
        feature_width: train.width(),
    };
    Ok(ModelwisePipeline { model_ids, detectors, trace })
}

/// Unit-wise pipeline: a single detector over an N-wide array of single
/// units.
#[derive(Debug, Clone)]
pub struct UnitwisePipeline {
    selections: Vec<(usize, usize)>,
    detector: Detector,
    trace: SelectionTrace,
}

impl UnitwisePipeline {
    pub fn trace(&self) -> &SelectionTrace {
        &self.trace
    }

    pub fn probabilities(&self, reps: &RepMatrix, rows: &[usize]) -> Result<Vec<f64>> {
        let features = reps.gather_units(&self.selections, rows);
        Ok(self.detector.predict_proba(&features)?.into_iter().map(f64::from).collect())
    }
}

/// Train a unit-wise pipeline. Treatment: one uniformly random unit from
/// each of N models (distinct models while the pool allows it, cycling with
/// replacement beyond that); unit indices may repeat across models.
/// Control: N distinct units from a single model, which caps N at the
/// representation width.
pub fn unitwise(
    arm: Arm,
    n: usize,
    train: &RepMatrix,
    train_rows: &[usize],
    trial_seed: u64,
) -> Result<UnitwisePipeline> {
    if n < 1 {
        return Err(Error::Config("unit-wise N must be >= 1".into()));
    }
    let pool = train.model_count();
    let width = train.width();
    let mut model_rng = seed::stream(trial_seed, "model-choice", 0);
    let mut unit_rng = seed::stream(trial_seed, "unit-choice", 0);
    let selections: Vec<(usize, usize)> = match arm {
        Arm::Treatment => {
            if pool < 1 {
                return Err(Error::InsufficientPool { need: 1, have: pool });
            }
            let models: Vec<usize> = if n <= pool {
                sample_distinct(pool, n, &mut model_rng)
            } else {
                (0..n).map(|_| model_rng.random_range(0..pool)).collect()
            };
            models
                .into_iter()
                .map(|m| (m, unit_rng.random_range(0..width)))
                .collect()
        }
        Arm::Control => {
            if n > width {
                return Err(Error::UnitCountExceedsWidth { n, width });
            }
            if pool < 1 {
                return Err(Error::InsufficientPool { need: 1, have: pool });
            }
            let model = sample_distinct(pool, 1, &mut model_rng)[0];
            sample_distinct(width, n, &mut unit_rng)
                .into_iter()
                .map(|u| (model, u))
                .collect()
        }
    };
    let labels: Vec<u8> = train_rows.iter().map(|&r| train.labels()[r]).collect();
    let detector_seed = seed::child(trial_seed, "detector", 0);
    let features = train.gather_units(&selections, train_rows);
    let detector = train_detector(&features, n, &labels, detector_seed)?;
    let trace = SelectionTrace {
        model_ids: selections.iter().map(|&(m, _)| m).collect(),
        unit_ids: selections.iter().map(|&(_, u)| u).collect(),
        detector_seeds: vec![detector_seed],
        feature_width: n,
    };
    Ok(UnitwisePipeline { selections, detector, trace })
}

/// Detection accuracy at threshold 0.5; a probability of exactly 0.5 counts
/// as non-adversarial.
pub fn evaluate_probs(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::EmptyDataset(format!(
            "evaluation needs matching non-empty probabilities and labels ({} vs {})",
            probs.len(),
            labels.len()
        )));
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| (**p > 0.5) == (l == 1))
        .count();
    Ok(correct as f64 / probs.len() as f64)
}

/// Expand pair indices to instance row indices under [`ExpandedPairs`]
/// ordering (pair `i` occupies rows `2i` and `2i + 1`).
pub fn pair_rows(pair_indices: &[usize]) -> Vec<usize> {
    pair_indices.iter().flat_map(|&i| [2 * i, 2 * i + 1]).collect()
}

/// Guard that no pair identity appears on both sides of a split.
pub fn assert_pair_disjoint(
    train: &RepMatrix,
    train_rows: &[usize],
    test: &RepMatrix,
    test_rows: &[usize],
) -> Result<()> {
    let train_ids: std::collections::HashSet<u32> =
        train_rows.iter().map(|&r| train.pair_ids()[r]).collect();
    if let Some(&r) = test_rows.iter().find(|&&r| train_ids.contains(&test.pair_ids()[r])) {
        return Err(Error::Data(format!(
            "pair {} appears in both train and test",
            test.pair_ids()[r]
        )));
    }
    Ok(())
}
