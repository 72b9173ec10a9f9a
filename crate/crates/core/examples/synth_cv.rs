//! Cross-validates on the synthetic four-class set and reports timing.
//!
//! `cargo run --release -p escnet --example synth_cv -- [epochs] [batch] [lr] [arch]`

use std::time::Instant;

use escnet::features::{BandType, FeatureConfig, Featurizer};
use escnet::harness::{cross_validate, Dataset, TrainConfig};
use escnet::model::Architecture;
use escnet::nn::LrProfile;
use escnet::synth::{generate, CLASS_NAMES, DEFAULT_DURATION_S};

fn main() {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);
    let batch: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.001);
    let arch: Architecture = args
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(Architecture::Proposed);
    let t0 = Instant::now();
    let clips: Vec<_> = generate(10, 5, DEFAULT_DURATION_S, 7)
        .into_iter()
        .map(|c| (c.clip, c.class, c.fold))
        .collect();
    let featurizer = Featurizer::new(FeatureConfig::new(BandType::LogMel));
    let names = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let data = Dataset::from_audio(&clips, names, &featurizer).unwrap();
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        base_lr: lr,
        verbose: true,
        ..TrainConfig::new(arch, LrProfile::Esc, 7)
    };
    let report = cross_validate(&data, &cfg, 1).unwrap();
    for run in &report.runs {
        println!(
            "fold {}: val {:.3} train {:.3}",
            run.fold, run.report.accuracy, run.train_accuracy
        );
    }
    println!("mean {:.4} in {:.1}s", report.mean_accuracy, t0.elapsed().as_secs_f64());
}
