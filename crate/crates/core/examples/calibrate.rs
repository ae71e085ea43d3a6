//! Scratch calibration runs (not part of the deliverable test suite).

use advdet_core::attacks::{attack_population, transfer_eval, AttackConfig, BimParams, CwParams, FgsmParams};
use advdet_core::data::{synthetic_pair, SyntheticSpec};
use advdet_core::models::{build_classifier, train, ArchConfig, BlockSpec, TrainConfig};
use advdet_core::seed;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let amplitude: f32 = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(0.12);
    let noise: f32 = args.get(2).and_then(|v| v.parse().ok()).unwrap_or(0.05);
    let epochs: usize = args.get(3).and_then(|v| v.parse().ok()).unwrap_or(8);
    let reps: usize = args.get(4).and_then(|v| v.parse().ok()).unwrap_or(4);
    let lr: f32 = args.get(5).and_then(|v| v.parse().ok()).unwrap_or(1e-3);
    let batch: usize = args.get(6).and_then(|v| v.parse().ok()).unwrap_or(64);
    let sigma: f32 = args.get(8).and_then(|v| v.parse().ok()).unwrap_or(0.18);
    let blocks: usize = args.get(9).and_then(|v| v.parse().ok()).unwrap_or(2);
    let stem: usize = args.get(10).and_then(|v| v.parse().ok()).unwrap_or(8);

    let side: usize = args.get(12).and_then(|v| v.parse().ok()).unwrap_or(16);
    let spec = SyntheticSpec {
        classes: 10,
        channels: 3,
        height: side,
        width: side,
        train_per_class: 150,
        test_per_class: 50,
        amplitude,
        noise_sigma: noise,
        blob_sigma_frac: sigma,
        amplitude_jitter: args.get(11).and_then(|v| v.parse().ok()).unwrap_or(0.5),
    };
    let block_list = match blocks {
        1 => vec![BlockSpec { filters: stem, stride: 1, residual: true }],
        2 => vec![
            BlockSpec { filters: stem, stride: 1, residual: true },
            BlockSpec { filters: stem * 2, stride: 2, residual: true },
        ],
        _ => vec![BlockSpec { filters: stem * 2, stride: 2, residual: true }],
    };
    let arch = ArchConfig {
        input: (3, side, side),
        stem_filters: stem,
        blocks: block_list,
        penultimate_width: 16,
        classes: 10,
    };
    println!("arch: stem {stem}, {blocks} blocks, sigma {sigma}");
    println!("amplitude={amplitude} noise={noise} epochs={epochs} reps={reps} lr={lr} batch={batch}");

    let t0 = Instant::now();
    let (train_ds, test_ds) = synthetic_pair(&spec, seed::child(42, "dataset", 0)).unwrap();
    println!("dataset: {} train / {} test in {:?}", train_ds.len(), test_ds.len(), t0.elapsed());

    let t0 = Instant::now();
    let cfg = TrainConfig { epochs, batch_size: batch, learning_rate: lr, crop_pad: 2, flip_p: 0.5, ..Default::default() };
    let mut attacked = build_classifier(&arch, seed::child(42, "model-seed", 0)).unwrap();
    let report = train(
        &mut attacked,
        &train_ds,
        &test_ds,
        &TrainConfig { seed: seed::child(42, "train-seed", 0), ..cfg.clone() },
    )
    .unwrap();
    println!(
        "attacked model: acc {:.4}, losses {:.3} -> {:.3}, {:?}",
        report.heldout_accuracy,
        report.epoch_losses.first().unwrap(),
        report.epoch_losses.last().unwrap(),
        t0.elapsed()
    );

    let t0 = Instant::now();
    let rep_models: Vec<_> = (0..reps)
        .map(|i| {
            let mut m = build_classifier(&arch, seed::child(42, "model-seed", i as u64 + 1)).unwrap();
            let r = train(
                &mut m,
                &train_ds,
                &test_ds,
                &TrainConfig { seed: seed::child(42, "train-seed", i as u64 + 1), ..cfg.clone() },
            )
            .unwrap();
            let curve: Vec<String> = r.epoch_losses.iter().step_by(2).map(|l| format!("{l:.2}")).collect();
            println!("  rep {i}: acc {:.4} losses [{}]", r.heldout_accuracy, curve.join(" "));
            m
        })
        .collect();
    println!("rep models in {:?}", t0.elapsed());

    if args.get(7).map(|v| v == "skip").unwrap_or(false) {
        return;
    }
    for (name, config) in [
        ("fgsm", AttackConfig::Fgsm(FgsmParams::default())),
        ("bim", AttackConfig::Bim(BimParams::default())),
        (
            "cw",
            AttackConfig::Cw(CwParams { max_iterations: 100, ..Default::default() }),
        ),
    ] {
        let t0 = Instant::now();
        let set = attack_population(&attacked, "attacked", &test_ds, &config).unwrap();
        let attacked_acc = 1.0 - set.success_rate();
        let stats = transfer_eval(&rep_models, &set).unwrap();
        println!(
            "{name}: pairs {} attacked-acc {:.4} transfer {:.4} +/- {:.4} in {:?}",
            set.pairs.len(),
            attacked_acc,
            stats.mean,
            stats.std,
            t0.elapsed()
        );
    }
}
