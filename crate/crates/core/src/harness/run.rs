//! Staged experiment execution with persistence and resume.

use super::{DatasetConfig, ExperimentConfig, TrialResult};
use crate::attacks::{
    attack_population, load_adversarial_set, save_adversarial_set, transfer_eval, AdversarialSet,
    AttackKind,
};
use crate::data::{split_pair_indices, synthetic_pair, Dataset};
use crate::detection::{
    assert_pair_disjoint, extract, modelwise, pair_rows, unitwise, Arm, PipelineKind, RepMatrix,
};
use crate::error::{Error, Result};
use crate::models::{build_classifier, load_classifier, save_classifier, train, Classifier};
use crate::seed;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrainModels,
    Attack,
    Detect,
    Report,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::TrainModels => "train-models",
            Stage::Attack => "attack",
            Stage::Detect => "detect",
            Stage::Report => "report",
        }
    }
}

/// Load (or, for the synthetic source, generate) the train/test datasets.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetConfig::Cifar10 { dir, train_per_class } => {
            let (train_ds, test_ds) = crate::data::load_cifar10(dir)?;
            let train_ds = match train_per_class {
                Some(per_class) => train_ds.stratified_head(*per_class),
                None => train_ds,
            };
            Ok((train_ds, test_ds))
        }
        DatasetConfig::Synthetic { spec } => {
            synthetic_pair(spec, seed::child(cfg.seed, "dataset", 0))
        }
    }
}

fn model_ids(cfg: &ExperimentConfig) -> Vec<String> {
    std::iter::once("attacked".to_string())
        .chain((0..cfg.population).map(|i| format!("rep_{i:03}")))
        .collect()
}

fn model_path(cfg: &ExperimentConfig, id: &str) -> PathBuf {
    cfg.out_dir.join("models").join(format!("{id}.bin"))
}

fn attack_path(cfg: &ExperimentConfig, kind: AttackKind) -> PathBuf {
    cfg.out_dir.join("attacks").join(format!("{kind}.bin"))
}

fn results_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("results").join("trials.jsonl")
}

pub(super) fn reports_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("reports")
}

fn ensure_dir(path: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Run one stage; see [`run_all`] for the full pipeline.
pub fn run_stage(cfg: &ExperimentConfig, stage: Stage) -> Result<()> {
    cfg.validate()?;
    let result = match stage {
        Stage::TrainModels => stage_train_models(cfg),
        Stage::Attack => stage_attack(cfg),
        Stage::Detect => stage_detect(cfg),
        Stage::Report => stage_report(cfg),
    };
    result.map_err(|e| e.in_stage(stage.name()))
}

/// Train models, generate attacks, run the detection grid, emit reports.
pub fn run_all(cfg: &ExperimentConfig) -> Result<()> {
    for stage in [Stage::TrainModels, Stage::Attack, Stage::Detect, Stage::Report] {
        run_stage(cfg, stage)?;
    }
    Ok(())
}

fn stage_train_models(cfg: &ExperimentConfig) -> Result<()> {
    ensure_dir(&cfg.out_dir.join("models"))?;
    let ids = model_ids(cfg);
    let pending: Vec<(usize, &String)> = ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !model_path(cfg, id).exists())
        .collect();
    if pending.is_empty() {
        println!("[train-models] all {} models already persisted, skipping", ids.len());
        return Ok(());
    }
    let (train_ds, test_ds) = load_dataset(cfg)?;
    println!(
        "[train-models] training {} of {} models on {} train / {} test instances",
        pending.len(),
        ids.len(),
        train_ds.len(),
        test_ds.len()
    );
    let reports: Vec<(String, f64)> = pending
        .par_iter()
        .map(|(index, id)| {
            let model_seed = seed::child(cfg.seed, "model-seed", *index as u64);
            let train_seed = seed::child(cfg.seed, "train-seed", *index as u64);
            let mut model = build_classifier(&cfg.arch, model_seed)?;
            let report = train(&mut model, &train_ds, &test_ds, &cfg.train.with_seed(train_seed))?;
            save_classifier(&model, model_path(cfg, id))?;
            Ok(((*id).clone(), report.heldout_accuracy))
        })
        .collect::<Result<_>>()?;
    for (id, acc) in &reports {
        println!("[train-models] {id}: held-out accuracy {acc:.4}");
    }
    Ok(())
}

fn load_model(cfg: &ExperimentConfig, id: &str) -> Result<Classifier> {
    let path = model_path(cfg, id);
    if !path.exists() {
        return Err(Error::Data(format!(
            "model '{id}' not found at {}; run the train-models stage first",
            path.display()
        )));
    }
    load_classifier(path)
}

fn stage_attack(cfg: &ExperimentConfig) -> Result<()> {
    ensure_dir(&cfg.out_dir.join("attacks"))?;
    let pending: Vec<AttackKind> = AttackKind::ALL
        .into_iter()
        .filter(|kind| !attack_path(cfg, *kind).exists())
        .collect();
    if pending.is_empty() {
        println!("[attack] all attack sets already persisted, skipping");
        return Ok(());
    }
    let attacked = load_model(cfg, "attacked")?;
    let (_, test_ds) = load_dataset(cfg)?;
    for kind in pending {
        let set = attack_population(&attacked, "attacked", &test_ds, &cfg.attack_config(kind))?;
        println!(
            "[attack] {kind}: {} pairs, attacked-model accuracy {:.4}",
            set.pairs.len(),
            1.0 - set.success_rate()
        );
        save_adversarial_set(&set, attack_path(cfg, kind))?;
    }
    Ok(())
}

fn load_attack_sets(cfg: &ExperimentConfig) -> Result<BTreeMap<AttackKind, AdversarialSet>> {
    let mut sets = BTreeMap::new();
    for kind in AttackKind::ALL {
        let path = attack_path(cfg, kind);
        if !path.exists() {
            return Err(Error::Data(format!(
                "attack set '{kind}' not found at {}; run the attack stage first",
                path.display()
            )));
        }
        sets.insert(kind, load_adversarial_set(path)?);
    }
    // one population: every set must cover the same source images
    let reference = sets[&AttackKind::Fgsm].pairs.source_indices().to_vec();
    for kind in AttackKind::ALL {
        if sets[&kind].pairs.source_indices() != reference.as_slice() {
            return Err(Error::Data(format!(
                "attack set '{kind}' covers a different population than fgsm"
            )));
        }
    }
    Ok(sets)
}

fn stage_detect(cfg: &ExperimentConfig) -> Result<()> {
    ensure_dir(&cfg.out_dir.join("results"))?;
    let path = results_path(cfg);
    if path.exists() {
        let existing = super::load_results(&path)?;
        if existing.len() == cfg.expected_result_count() {
            println!("[detect] results complete ({} records), skipping", existing.len());
            return Ok(());
        }
        println!(
            "[detect] found {} of {} records, recomputing",
            existing.len(),
            cfg.expected_result_count()
        );
    }

    let rep_models: Vec<Classifier> = (0..cfg.population)
        .map(|i| load_model(cfg, &format!("rep_{i:03}")))
        .collect::<Result<_>>()?;
    let sets = load_attack_sets(cfg)?;
    let n_pairs = sets[&AttackKind::Fgsm].pairs.len();

    println!(
        "[detect] extracting representations: {} models x {} instances x 3 attack sets",
        rep_models.len(),
        2 * n_pairs
    );
    let mut reps: BTreeMap<AttackKind, RepMatrix> = BTreeMap::new();
    for kind in AttackKind::ALL {
        let expanded = sets[&kind].pairs.expand();
        reps.insert(kind, extract(&rep_models, &expanded)?);
    }

    // transfer statistics over the representation population
    for kind in AttackKind::ALL {
        let stats = transfer_eval(&rep_models, &sets[&kind])?;
        println!(
            "[detect] {kind}: representation-model accuracy {:.4} +/- {:.4}",
            stats.mean, stats.std
        );
    }

    let mut file = std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let cells = cfg.pipeline_cells();
    for train_attack in AttackKind::ALL {
        let train_reps = &reps[&train_attack];
        for &(pipeline, arm, n) in &cells {
            let domain = format!("trial/{pipeline}/{arm}/{train_attack}/{n}");
            let rows: Vec<TrialResult> = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    let trial_seed = seed::child(cfg.seed, &domain, trial as u64);
                    run_trial(cfg, pipeline, arm, n, train_attack, trial, trial_seed, train_reps, &reps, n_pairs)
                })
                .collect::<Result<Vec<Vec<TrialResult>>>>()?
                .into_iter()
                .flatten()
                .collect();
            for row in &rows {
                let line = serde_json::to_string(row)
                    .map_err(|e| Error::Data(format!("result serialization: {e}")))?;
                writeln!(file, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
            }
            file.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
            let mean =
                rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len().max(1) as f64;
            println!(
                "[detect] {pipeline}/{arm} train={train_attack} N={n}: mean accuracy {mean:.4} over {} evaluations",
                rows.len()
            );
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    cfg: &ExperimentConfig,
    pipeline: PipelineKind,
    arm: Arm,
    n: usize,
    train_attack: AttackKind,
    trial: usize,
    trial_seed: u64,
    train_reps: &RepMatrix,
    reps: &BTreeMap<AttackKind, RepMatrix>,
    n_pairs: usize,
) -> Result<Vec<TrialResult>> {
    let split_seed = seed::child(trial_seed, "split", 0);
    let (train_pairs, test_pairs) = split_pair_indices(n_pairs, cfg.test_fraction, split_seed)?;
    let train_rows = pair_rows(&train_pairs);
    let test_rows = pair_rows(&test_pairs);

    let mut out = Vec::with_capacity(AttackKind::ALL.len());
    match pipeline {
        PipelineKind::ModelWise => {
            let trained = modelwise(arm, n, train_reps, &train_rows, trial_seed)?;
            for test_attack in AttackKind::ALL {
                let test_reps = &reps[&test_attack];
                assert_pair_disjoint(train_reps, &train_rows, test_reps, &test_rows)?;
                let probs = trained.probabilities(test_reps, &test_rows)?;
                let labels: Vec<u8> = test_rows.iter().map(|&r| test_reps.labels()[r]).collect();
                let accuracy = crate::detection::evaluate_probs(&probs, &labels)?;
                out.push(TrialResult { pipeline, arm, train_attack, test_attack, n, trial, accuracy });
            }
        }
        PipelineKind::UnitWise => {
            let trained = unitwise(arm, n, train_reps, &train_rows, trial_seed)?;
            for test_attack in AttackKind::ALL {
                let test_reps = &reps[&test_attack];
                assert_pair_disjoint(train_reps, &train_rows, test_reps, &test_rows)?;
                let probs = trained.probabilities(test_reps, &test_rows)?;
                let labels: Vec<u8> = test_rows.iter().map(|&r| test_reps.labels()[r]).collect();
                let accuracy = crate::detection::evaluate_probs(&probs, &labels)?;
                out.push(TrialResult { pipeline, arm, train_attack, test_attack, n, trial, accuracy });
            }
        }
    }
    Ok(out)
}

fn stage_report(cfg: &ExperimentConfig) -> Result<()> {
    let results = super::load_results(&results_path(cfg))?;
    if results.is_empty() {
        return Err(Error::Data("no trial results to report; run the detect stage first".into()));
    }
    let summary = super::summarize(&results)?;
    let sets = load_attack_sets(cfg)?;
    let dir = reports_dir(cfg);
    ensure_dir(&dir)?;
    super::emit_reports(&summary, &sets, &dir)?;
    println!("[report] wrote {} summary cells to {}", summary.len(), dir.display());
    Ok(())
}
