//! Trial-result aggregation and report emission.

use super::svg::{line_chart, Series};
use super::{SummaryCell, TrialResult};
use crate::attacks::{mean_std, write_attack_grid, AdversarialSet, AttackKind};
use crate::detection::{Arm, PipelineKind};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SummaryKey {
    pub pipeline: PipelineKind,
    pub arm: Arm,
    pub train_attack: AttackKind,
    pub test_attack: AttackKind,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub key: SummaryKey,
    pub cell: SummaryCell,
}

/// Read a line-delimited result store. A missing file reads as empty.
pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<TrialResult>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Data(format!("bad result record: {e}")))
        })
        .collect()
}

/// Mean and unbiased sample std per grid cell. Every cell must hold the
/// same number of trials.
pub fn summarize(results: &[TrialResult]) -> Result<Vec<SummaryRow>> {
    let mut cells: BTreeMap<SummaryKey, Vec<f64>> = BTreeMap::new();
    for r in results {
        let key = SummaryKey {
            pipeline: r.pipeline,
            arm: r.arm,
            train_attack: r.train_attack,
            test_attack: r.test_attack,
            n: r.n,
        };
        cells.entry(key).or_default().push(r.accuracy);
    }
    let counts: Vec<usize> = cells.values().map(|v| v.len()).collect();
    if let (Some(&min), Some(&max)) = (counts.iter().min(), counts.iter().max()) {
        if min != max {
            return Err(Error::Data(format!(
                "mismatched trial counts across cells: {min} vs {max}"
            )));
        }
    }
    Ok(cells
        .into_iter()
        .map(|(key, values)| {
            let (mean, std) = mean_std(&values);
            SummaryRow {
                key,
                cell: SummaryCell { mean, std, trials: values.len(), degenerate: values.len() < 2 },
            }
        })
        .collect())
}

/// Look up one summary cell.
pub fn find_cell<'a>(
    summary: &'a [SummaryRow],
    pipeline: PipelineKind,
    arm: Arm,
    train_attack: AttackKind,
    test_attack: AttackKind,
    n: usize,
) -> Option<&'a SummaryRow> {
    summary.iter().find(|row| {
        row.key
            == SummaryKey { pipeline, arm, train_attack, test_attack, n }
    })
}

/// Write the summary CSV, one SVG chart per `(pipeline, train, test)` cell
/// with control and treatment bands over N, and the attacked-image grid.
pub fn emit_reports(
    summary: &[SummaryRow],
    sets: &BTreeMap<AttackKind, AdversarialSet>,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    if summary.is_empty() {
        return Err(Error::Data("empty summary".into()));
    }

    let csv_path = dir.join("summary.csv");
    let mut csv = String::from("pipeline,arm,train_attack,test_attack,N,mean,std,trials\n");
    for row in summary {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{}\n",
            row.key.pipeline,
            row.key.arm,
            row.key.train_attack,
            row.key.test_attack,
            row.key.n,
            row.cell.mean,
            row.cell.std,
            row.cell.trials
        ));
    }
    std::fs::File::create(&csv_path)
        .and_then(|mut f| f.write_all(csv.as_bytes()))
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;

    for pipeline in [PipelineKind::ModelWise, PipelineKind::UnitWise] {
        let x_label = match pipeline {
            PipelineKind::ModelWise => "number of detection models",
            PipelineKind::UnitWise => "number of units",
        };
        for train_attack in AttackKind::ALL {
            for test_attack in AttackKind::ALL {
                let series: Vec<Series> = Arm::ALL
                    .iter()
                    .map(|&arm| {
                        let points: Vec<(usize, f64, f64)> = summary
                            .iter()
                            .filter(|row| {
                                row.key.pipeline == pipeline
                                    && row.key.arm == arm
                                    && row.key.train_attack == train_attack
                                    && row.key.test_attack == test_attack
                            })
                            .map(|row| (row.key.n, row.cell.mean, row.cell.std))
                            .collect();
                        Series {
                            label: arm.name().to_string(),
                            color: match arm {
                                Arm::Control => "#1f77b4",
                                Arm::Treatment => "#ff7f0e",
                            },
                            points,
                        }
                    })
                    .filter(|s| !s.points.is_empty())
                    .collect();
                if series.is_empty() {
                    continue;
                }
                let title = format!("train {train_attack} / test {test_attack}");
                let chart = line_chart(&title, x_label, "detection accuracy", &series);
                let path = dir.join(format!("{pipeline}_{train_attack}_{test_attack}.svg"));
                std::fs::File::create(&path)
                    .and_then(|mut f| f.write_all(chart.as_bytes()))
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
            }
        }
    }

    let ordered: Vec<(&str, &AdversarialSet)> = AttackKind::ALL
        .iter()
        .filter_map(|kind| sets.get(kind).map(|s| (kind.name(), s)))
        .collect();
    if !ordered.is_empty() {
        write_attack_grid(&ordered, dir.join("attack_grid.ppm"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(arm: Arm, n: usize, trial: usize, accuracy: f64) -> TrialResult {
        TrialResult {
            pipeline: PipelineKind::ModelWise,
            arm,
            train_attack: AttackKind::Fgsm,
            test_attack: AttackKind::Bim,
            n,
            trial,
            accuracy,
        }
    }

    #[test]
    fn summarize_mean_and_std() {
        let rows = vec![result(Arm::Control, 1, 0, 0.5), result(Arm::Control, 1, 1, 0.7)];
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary.len(), 1);
        assert!((summary[0].cell.mean - 0.6).abs() < 1e-12);
        assert!((summary[0].cell.std - 0.1414).abs() < 1e-3);
        assert!(!summary[0].cell.degenerate);
    }

    #[test]
    fn single_trial_flagged_degenerate_with_zero_std() {
        let rows = vec![result(Arm::Control, 1, 0, 0.5)];
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary[0].cell.std, 0.0);
        assert!(summary[0].cell.degenerate);
    }

    #[test]
    fn constant_accuracies_zero_std() {
        let rows = vec![
            result(Arm::Treatment, 2, 0, 0.8),
            result(Arm::Treatment, 2, 1, 0.8),
            result(Arm::Treatment, 2, 2, 0.8),
        ];
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary[0].cell.std, 0.0);
        assert!(!summary[0].cell.degenerate);
    }

    #[test]
    fn mismatched_counts_rejected() {
        let rows = vec![
            result(Arm::Control, 1, 0, 0.5),
            result(Arm::Control, 1, 1, 0.6),
            result(Arm::Treatment, 1, 0, 0.7),
        ];
        assert!(summarize(&rows).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let rows = vec![result(Arm::Control, 1, 0, 0.5), result(Arm::Treatment, 4, 1, 0.9)];
        let mut text = String::new();
        for r in &rows {
            text.push_str(&serde_json::to_string(r).unwrap());
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();
        assert_eq!(load_results(&path).unwrap(), rows);
        assert!(load_results(dir.path().join("missing.jsonl")).unwrap().is_empty());
    }
}
