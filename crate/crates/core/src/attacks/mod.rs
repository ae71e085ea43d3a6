//! Untargeted attack generation and transfer evaluation.
//!
//! All attacks run against a designated attacked model and produce paired
//! clean/perturbed images. Generated pixels are clipped to `[0, 1]` and
//! quantized to the `k/255` grid so every adversarial image is a valid
//! 24-bit RGB image; for the budgeted attacks this leaves at most half a
//! quantization level (`1/510`) of slack beyond the nominal L-infinity
//! budget.

mod cw;
mod persist;

pub use cw::cw_l2;
pub use persist::{load_adversarial_set, save_adversarial_set, write_attack_grid};

use crate::data::{pixel_level, quantize_pixel, Dataset, PairedSet};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::models::Classifier;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Cw,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Fgsm, AttackKind::Bim, AttackKind::Cw];

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Cw => "cw",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FgsmParams {
    /// L-infinity budget as a fraction of intensity range.
    pub epsilon: f32,
}

impl Default for FgsmParams {
    fn default() -> Self {
        FgsmParams { epsilon: 3.0 / 255.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BimParams {
    pub epsilon: f32,
    /// Per-iteration step size.
    pub alpha: f32,
    pub iterations: usize,
}

impl Default for BimParams {
    fn default() -> Self {
        BimParams { epsilon: 3.0 / 255.0, alpha: 1.0 / 255.0, iterations: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwParams {
    pub learning_rate: f32,
    pub binary_search_steps: usize,
    pub max_iterations: usize,
    /// Confidence margin kappa; higher values trade perturbation size for
    /// transferability.
    pub confidence: f32,
    pub initial_c: f32,
}

impl Default for CwParams {
    fn default() -> Self {
        CwParams {
            learning_rate: 0.005,
            binary_search_steps: 5,
            max_iterations: 200,
            confidence: 100.0,
            initial_c: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AttackConfig {
    Fgsm(FgsmParams),
    Bim(BimParams),
    Cw(CwParams),
}

impl AttackConfig {
    pub fn kind(&self) -> AttackKind {
        match self {
            AttackConfig::Fgsm(_) => AttackKind::Fgsm,
            AttackConfig::Bim(_) => AttackKind::Bim,
            AttackConfig::Cw(_) => AttackKind::Cw,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttackConfig::Fgsm(p) => {
                if p.epsilon <= 0.0 {
                    return Err(Error::Config("fgsm epsilon must be > 0".into()));
                }
            }
            AttackConfig::Bim(p) => {
                if p.epsilon <= 0.0 {
                    return Err(Error::Config("bim epsilon must be > 0".into()));
                }
                if p.alpha > p.epsilon {
                    return Err(Error::Config("bim alpha must not exceed epsilon".into()));
                }
                if p.iterations < 1 {
                    return Err(Error::Config("bim needs at least one iteration".into()));
                }
            }
            AttackConfig::Cw(p) => {
                if p.confidence < 0.0 {
                    return Err(Error::Config("cw confidence must be >= 0".into()));
                }
                if p.binary_search_steps < 1 {
                    return Err(Error::Config("cw needs at least one binary search step".into()));
                }
                if p.max_iterations < 1 || p.learning_rate <= 0.0 || p.initial_c <= 0.0 {
                    return Err(Error::Config("cw iteration/learning-rate/c settings invalid".into()));
                }
            }
        }
        Ok(())
    }
}

/// Paired clean/perturbed instances plus attack provenance and the attacked
/// model's per-instance verdict.
#[derive(Debug, Clone)]
pub struct AdversarialSet {
    pub pairs: PairedSet,
    pub config: AttackConfig,
    pub attacked_model: String,
    /// True where the post-processed perturbation changed the attacked
    /// model's prediction.
    pub fooled: Vec<bool>,
}

impl AdversarialSet {
    pub fn success_rate(&self) -> f64 {
        if self.fooled.is_empty() {
            return 0.0;
        }
        self.fooled.iter().filter(|&&f| f).count() as f64 / self.fooled.len() as f64
    }
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-step gradient-sign perturbation: `x + eps * sign(dJ/dx)`, before
/// post-processing.
pub fn fgsm(model: &Classifier, x: &Tensor, labels: &[usize], epsilon: f32) -> Result<Tensor> {
    let grad = model.input_gradient(x, labels)?;
    let data = x
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&v, &g)| v + epsilon * sign(g))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Iterated gradient-sign steps of size `alpha`; after every step the
/// iterate is clipped to the epsilon-ball around `x` and to `[0, 1]`.
pub fn bim(
    model: &Classifier,
    x: &Tensor,
    labels: &[usize],
    alpha: f32,
    iterations: usize,
    epsilon: f32,
) -> Result<Tensor> {
    if alpha > epsilon {
        return Err(Error::Config("bim alpha must not exceed epsilon".into()));
    }
    if iterations < 1 {
        return Err(Error::Config("bim needs at least one iteration".into()));
    }
    let mut current = x.clone();
    for _ in 0..iterations {
        let grad = model.input_gradient(&current, labels)?;
        let data: Vec<f32> = current
            .data()
            .iter()
            .zip(grad.data())
            .zip(x.data())
            .map(|((&v, &g), &orig)| {
                let stepped = v + alpha * sign(g);
                stepped.clamp(orig - epsilon, orig + epsilon).clamp(0.0, 1.0)
            })
            .collect();
        current = Tensor::new(x.shape().to_vec(), data)?;
    }
    Ok(current)
}

/// Clip to `[0, 1]` and quantize to 256 intensity levels, rounding halves
/// away from zero. Idempotent.
pub fn postprocess(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| quantize_pixel(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("postprocess preserves shape")
}

/// Generate an adversarial counterpart for every test image the model
/// classifies correctly. Failed attacks are retained and labeled
/// adversarial all the same.
pub fn attack_population(
    model: &Classifier,
    model_id: &str,
    test: &Dataset,
    config: &AttackConfig,
) -> Result<AdversarialSet> {
    config.validate()?;
    if test.is_empty() {
        return Err(Error::EmptyDataset("attack population source".into()));
    }
    let dims = test.dims();
    // population: indices the attacked model gets right
    let mut correct: Vec<usize> = Vec::new();
    for chunk in crate::models::index_chunks(test.len(), 512) {
        let preds = model.predict(&test.batch(&chunk))?;
        for (p, &i) in preds.iter().zip(&chunk) {
            if *p == test.labels()[i] as usize {
                correct.push(i);
            }
        }
    }
    if correct.is_empty() {
        return Err(Error::EmptyDataset(
            "no correctly classified images to attack".into(),
        ));
    }

    let chw = test.instance_len();
    let mut clean = Vec::with_capacity(correct.len() * chw);
    let mut adv = Vec::with_capacity(correct.len() * chw);
    let mut labels = Vec::with_capacity(correct.len());
    let mut fooled = Vec::with_capacity(correct.len());

    // instances are independent; fixed-size chunks bound memory
    for chunk in correct.chunks(256) {
        let batch = test.batch(chunk);
        let batch_labels = test.batch_labels(chunk);
        let raw = match config {
            AttackConfig::Fgsm(p) => fgsm(model, &batch, &batch_labels, p.epsilon)?,
            AttackConfig::Bim(p) => {
                bim(model, &batch, &batch_labels, p.alpha, p.iterations, p.epsilon)?
            }
            AttackConfig::Cw(p) => cw_l2(model, &batch, &batch_labels, p)?,
        };
        let processed = postprocess(&raw);
        let verdicts = model.predict(&processed)?;
        for (slot, &label) in batch_labels.iter().enumerate() {
            clean.extend_from_slice(&batch.data()[slot * chw..(slot + 1) * chw]);
            adv.extend_from_slice(&processed.data()[slot * chw..(slot + 1) * chw]);
            labels.push(label as u8);
            fooled.push(verdicts[slot] != label);
        }
    }

    let pairs = PairedSet::new(
        clean,
        adv,
        labels,
        correct.iter().map(|&i| i as u32).collect(),
        dims,
    )?;
    Ok(AdversarialSet {
        pairs,
        config: *config,
        attacked_model: model_id.to_string(),
        fooled,
    })
}

/// Accuracy of the attacked model on the perturbed images, which by
/// construction equals one minus the attack success rate.
pub fn attacked_model_accuracy(set: &AdversarialSet) -> f64 {
    1.0 - set.success_rate()
}

#[derive(Debug, Clone)]
pub struct TransferStats {
    pub per_model: Vec<f64>,
    pub mean: f64,
    /// Unbiased (n-1) sample standard deviation.
    pub std: f64,
}

/// Per-model accuracy on the perturbed images across a population.
pub fn transfer_eval(models: &[Classifier], set: &AdversarialSet) -> Result<TransferStats> {
    if models.len() < 2 {
        return Err(Error::InsufficientPool { need: 2, have: models.len() });
    }
    let n = set.pairs.len();
    let dims = set.pairs.dims();
    let mut per_model = Vec::with_capacity(models.len());
    for model in models {
        let mut correct = 0usize;
        for chunk in crate::models::index_chunks(n, 512) {
            let mut data = Vec::with_capacity(chunk.len() * set.pairs.instance_len());
            for &i in &chunk {
                data.extend_from_slice(set.pairs.adversarial_image(i));
            }
            let batch = Tensor::new(vec![chunk.len(), dims.0, dims.1, dims.2], data)?;
            let preds = model.predict(&batch)?;
            correct += preds
                .iter()
                .zip(&chunk)
                .filter(|(p, &i)| **p == set.pairs.labels()[i] as usize)
                .count();
        }
        per_model.push(correct as f64 / n as f64);
    }
    let (mean, std) = mean_std(&per_model);
    Ok(TransferStats { per_model, mean, std })
}

/// Mean and unbiased sample standard deviation; a single value has std 0,
/// and identical values have exactly std 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 || values.iter().all(|v| *v == values[0]) {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Largest absolute pixel difference between a pair's images.
pub fn linf_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Every pixel must sit exactly on the `k/255` grid.
pub fn on_pixel_grid(values: &[f32]) -> bool {
    values.iter().all(|&v| (0.0..=1.0).contains(&v) && v == pixel_level(v) as f32 / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_pair, SyntheticSpec};
    use crate::models::{build_classifier, train, ArchConfig, BlockSpec, TrainConfig};

    fn sign_vec(g: &[f32], eps: f32) -> Vec<f32> {
        g.iter().map(|&v| eps * sign(v)).collect()
    }

    #[test]
    fn sign_definition_with_zero() {
        let eps = 3.0 / 255.0;
        assert_eq!(sign_vec(&[0.3, -0.2, 0.0], eps), vec![eps, -eps, 0.0]);
    }

    #[test]
    fn postprocess_examples() {
        let t = Tensor::new(vec![1, 3], vec![1.2, 0.0039, -0.5]).unwrap();
        let q = postprocess(&t);
        assert_eq!(q.data(), &[1.0, 1.0 / 255.0, 0.0]);
        let qq = postprocess(&q);
        assert_eq!(q.data(), qq.data());
    }

    fn trained_toy() -> (Classifier, Dataset) {
        let spec = SyntheticSpec {
            classes: 2,
            channels: 3,
            height: 8,
            width: 8,
            train_per_class: 20,
            test_per_class: 10,
            amplitude: 0.3,
            ..Default::default()
        };
        let (train_ds, test_ds) = synthetic_pair(&spec, 77).unwrap();
        let arch = ArchConfig {
            input: (3, 8, 8),
            stem_filters: 4,
            blocks: vec![BlockSpec { filters: 8, stride: 2, residual: true }],
            penultimate_width: 8,
            classes: 2,
        };
        let mut model = build_classifier(&arch, 5).unwrap();
        let cfg = TrainConfig { epochs: 4, batch_size: 16, crop_pad: 0, flip_p: 0.0, ..Default::default() };
        train(&mut model, &train_ds, &test_ds, &cfg).unwrap();
        (model, test_ds)
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let (model, test_ds) = trained_toy();
        let batch = test_ds.batch(&[0, 1]);
        let labels = test_ds.batch_labels(&[0, 1]);
        // validation rejects eps = 0 in configs; the raw op is well-defined
        let out = fgsm(&model, &batch, &labels, 0.0).unwrap();
        assert_eq!(out.data(), batch.data());
    }

    #[test]
    fn bim_single_step_collapses_to_fgsm() {
        let (model, test_ds) = trained_toy();
        let batch = test_ds.batch(&[0, 1, 2]);
        let labels = test_ds.batch_labels(&[0, 1, 2]);
        let eps = 3.0 / 255.0;
        let one_step = bim(&model, &batch, &labels, eps, 1, eps).unwrap();
        let fg = fgsm(&model, &batch, &labels, eps).unwrap();
        // bim additionally clips to [0,1]; apply the same clip to fgsm
        let clipped: Vec<f32> = fg.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        assert_eq!(one_step.data(), clipped.as_slice());
    }

    #[test]
    fn bim_saturates_ball_under_constant_gradient_sign() {
        // alpha = 1/255 for 10 steps against eps = 3/255 pins every moved
        // pixel to the ball boundary; with real gradients we check the bound
        let (model, test_ds) = trained_toy();
        let batch = test_ds.batch(&[0]);
        let labels = test_ds.batch_labels(&[0]);
        let eps = 3.0 / 255.0;
        let out = bim(&model, &batch, &labels, 1.0 / 255.0, 10, eps).unwrap();
        let max_d = linf_distance(out.data(), batch.data());
        assert!(max_d <= eps + 1e-6, "linf {max_d} within ball");
    }

    #[test]
    fn attack_population_covers_correct_predictions_and_flags() {
        let (model, test_ds) = trained_toy();
        let cfg = AttackConfig::Fgsm(FgsmParams::default());
        let set = attack_population(&model, "toy", &test_ds, &cfg).unwrap();
        // population size equals the number of correct predictions
        let mut correct = 0;
        for chunk in crate::models::index_chunks(test_ds.len(), 64) {
            let preds = model.predict(&test_ds.batch(&chunk)).unwrap();
            correct += preds
                .iter()
                .zip(test_ds.batch_labels(&chunk))
                .filter(|(p, y)| **p == *y)
                .count();
        }
        assert_eq!(set.pairs.len(), correct);
        // success rate is one minus attacked-model accuracy, by definition
        let acc = attacked_model_accuracy(&set);
        assert!((acc + set.success_rate() - 1.0).abs() < 1e-12);
        // all adversarial pixels on the grid, inside the slack budget
        for i in 0..set.pairs.len() {
            assert!(on_pixel_grid(set.pairs.adversarial_image(i)));
            let d = linf_distance(set.pairs.adversarial_image(i), set.pairs.clean_image(i));
            assert!(d <= 3.0 / 255.0 + 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn empty_population_is_an_error() {
        let (mut model, test_ds) = trained_toy();
        let empty = Dataset::new(vec![], vec![], (3, 8, 8), crate::data::Split::Test, "e").unwrap();
        let cfg = AttackConfig::Fgsm(FgsmParams::default());
        assert!(attack_population(&model, "toy", &empty, &cfg).is_err());

        // a model pinned to class 0 gets nothing right on all-1 labels
        let (bias_id, _) = model.graph().param_named("fc_out.b").unwrap();
        let bias = &mut model.graph_mut().params_mut()[bias_id.index()];
        bias.tensor.data_mut().copy_from_slice(&[1000.0, 0.0]);
        let all_ones = Dataset::new(
            test_ds.image(0).to_vec(),
            vec![1],
            (3, 8, 8),
            crate::data::Split::Test,
            "one",
        )
        .unwrap();
        assert!(matches!(
            attack_population(&model, "toy", &all_ones, &cfg),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn transfer_eval_arithmetic() {
        let values = [0.4, 0.6];
        let (mean, std) = mean_std(&values);
        assert!((mean - 0.5).abs() < 1e-12);
        assert!((std - 0.1414).abs() < 1e-3);
        let (single_mean, single_std) = mean_std(&[0.7]);
        assert_eq!(single_mean, 0.7);
        assert_eq!(single_std, 0.0);
    }

    #[test]
    fn transfer_eval_identical_models_zero_std() {
        let (model, test_ds) = trained_toy();
        let cfg = AttackConfig::Fgsm(FgsmParams::default());
        let set = attack_population(&model, "toy", &test_ds, &cfg).unwrap();
        let twin = model.clone();
        let stats = transfer_eval(&[model, twin], &set).unwrap();
        assert_eq!(stats.std, 0.0);
        assert_eq!(stats.per_model[0], stats.per_model[1]);
    }

    #[test]
    fn transfer_eval_needs_two_models() {
        let (model, test_ds) = trained_toy();
        let cfg = AttackConfig::Fgsm(FgsmParams::default());
        let set = attack_population(&model, "toy", &test_ds, &cfg).unwrap();
        assert!(matches!(
            transfer_eval(std::slice::from_ref(&model), &set),
            Err(Error::InsufficientPool { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::Fgsm(FgsmParams { epsilon: 0.0 }).validate().is_err());
        assert!(AttackConfig::Bim(BimParams { epsilon: 0.01, alpha: 0.02, iterations: 5 })
            .validate()
            .is_err());
        assert!(AttackConfig::Cw(CwParams { confidence: -1.0, ..Default::default() })
            .validate()
            .is_err());
        assert!(AttackConfig::Bim(BimParams::default()).validate().is_ok());
    }
}
