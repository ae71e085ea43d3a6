//! Experiment orchestration: configuration, staged execution with
//! persistence, trial statistics, and report emission.
//!
//! A run is a pure function of `(config, dataset bytes)`: every random draw
//! derives from the master seed, stages persist their outputs, and a
//! re-run skips stages whose outputs are already complete.

mod report;
mod run;
mod svg;

pub use report::{emit_reports, find_cell, load_results, summarize, SummaryKey, SummaryRow};
pub use run::{load_dataset, run_all, run_stage, Stage};

use crate::attacks::{AttackKind, BimParams, CwParams, FgsmParams};
use crate::data::SyntheticSpec;
use crate::detection::{Arm, PipelineKind};
use crate::error::{Error, Result};
use crate::models::{ArchConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    /// CIFAR-10 binary batches in `dir`, optionally keeping only the first
    /// `train_per_class` training images of each class.
    Cifar10 { dir: PathBuf, train_per_class: Option<usize> },
    Synthetic { spec: SyntheticSpec },
}

/// Classifier training settings; the per-model seed is derived from the
/// master seed, not configured here.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub flip_p: f64,
    pub crop_pad: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            flip_p: d.flip_p,
            crop_pad: d.crop_pad,
        }
    }
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            flip_p: self.flip_p,
            crop_pad: self.crop_pad,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AttackSuite {
    pub fgsm: FgsmParams,
    pub bim: BimParams,
    pub cw: CwParams,
}

impl Default for AttackSuite {
    fn default() -> Self {
        AttackSuite {
            fgsm: FgsmParams::default(),
            bim: BimParams::default(),
            cw: CwParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipelineGrid {
    /// N values for both model-wise arms.
    pub modelwise_n: Vec<usize>,
    /// N values for the unit-wise control arm (capped by the
    /// representation width).
    pub unitwise_control_n: Vec<usize>,
    /// N values for the unit-wise treatment arm; may exceed both the width
    /// and the model count.
    pub unitwise_treatment_n: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Number of representation models K (one attacked model is trained in
    /// addition).
    pub population: usize,
    pub arch: ArchConfig,
    pub train: TrainSettings,
    pub attacks: AttackSuite,
    pub pipelines: PipelineGrid,
    /// Trials per grid cell.
    pub trials: usize,
    /// Pair-preserving test fraction per trial.
    pub test_fraction: f64,
    /// Master seed; the entire run derives from it.
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// The desk-scale default: finishes in hours on CPU while keeping every
    /// comparison in the grid.
    pub fn desk_default(out_dir: PathBuf) -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic { spec: SyntheticSpec::default() },
            population: 16,
            arch: ArchConfig::default(),
            train: TrainSettings::default(),
            attacks: AttackSuite::default(),
            pipelines: PipelineGrid {
                modelwise_n: vec![1, 2, 4, 8, 16],
                unitwise_control_n: vec![8, 16, 32, 64],
                unitwise_treatment_n: vec![8, 16, 32, 64, 128],
            },
            trials: 20,
            test_fraction: 0.1,
            seed: 0,
            out_dir,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.trials < 1 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.population < 1 {
            return Err(Error::Config("population must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.test_fraction <= 0.0 {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        for (name, grid) in [
            ("modelwise_n", &self.pipelines.modelwise_n),
            ("unitwise_control_n", &self.pipelines.unitwise_control_n),
            ("unitwise_treatment_n", &self.pipelines.unitwise_treatment_n),
        ] {
            if grid.is_empty() {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!("{name} must be strictly ascending")));
            }
            if grid[0] < 1 {
                return Err(Error::Config(format!("{name} values must be >= 1")));
            }
        }
        if let Some(&max_n) = self.pipelines.modelwise_n.last() {
            if self.population < max_n {
                return Err(Error::Config(format!(
                    "population {} cannot cover model-wise N = {max_n}",
                    self.population
                )));
            }
        }
        if let Some(&max_n) = self.pipelines.unitwise_control_n.last() {
            if max_n > self.arch.penultimate_width {
                return Err(Error::Config(format!(
                    "unit-wise control N = {max_n} exceeds representation width {}",
                    self.arch.penultimate_width
                )));
            }
        }
        self.attack_config(AttackKind::Fgsm).validate()?;
        self.attack_config(AttackKind::Bim).validate()?;
        self.attack_config(AttackKind::Cw).validate()?;
        Ok(())
    }

    pub fn attack_config(&self, kind: AttackKind) -> crate::attacks::AttackConfig {
        match kind {
            AttackKind::Fgsm => crate::attacks::AttackConfig::Fgsm(self.attacks.fgsm),
            AttackKind::Bim => crate::attacks::AttackConfig::Bim(self.attacks.bim),
            AttackKind::Cw => crate::attacks::AttackConfig::Cw(self.attacks.cw),
        }
    }

    /// Every `(pipeline, arm, n)` cell in the grid.
    pub fn pipeline_cells(&self) -> Vec<(PipelineKind, Arm, usize)> {
        let mut cells = Vec::new();
        for &n in &self.pipelines.modelwise_n {
            cells.push((PipelineKind::ModelWise, Arm::Control, n));
            cells.push((PipelineKind::ModelWise, Arm::Treatment, n));
        }
        for &n in &self.pipelines.unitwise_control_n {
            cells.push((PipelineKind::UnitWise, Arm::Control, n));
        }
        for &n in &self.pipelines.unitwise_treatment_n {
            cells.push((PipelineKind::UnitWise, Arm::Treatment, n));
        }
        cells
    }

    /// Total TrialResult records a complete run produces.
    pub fn expected_result_count(&self) -> usize {
        let train_attacks = AttackKind::ALL.len();
        let test_attacks = AttackKind::ALL.len();
        train_attacks * test_attacks * self.trials * self.pipeline_cells().len()
    }
}

/// One detection accuracy measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub pipeline: PipelineKind,
    pub arm: Arm,
    pub train_attack: AttackKind,
    pub test_attack: AttackKind,
    pub n: usize,
    pub trial: usize,
    pub accuracy: f64,
}

/// Mean and spread of one summary cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub mean: f64,
    /// Unbiased (n-1) sample standard deviation; 0 when degenerate.
    pub std: f64,
    pub trials: usize,
    /// True when only one trial exists and the std is undefined.
    pub degenerate: bool,
}
