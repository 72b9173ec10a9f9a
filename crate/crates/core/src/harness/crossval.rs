use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{train_fold, Dataset, FoldRun, HarnessError, TrainConfig};
use crate::mixup::MixupConfig;

#[derive(Debug, Clone)]
pub struct CrossValReport {
    /// One run per fold, in fold order.
    pub runs: Vec<FoldRun>,
    /// Unweighted mean of the fold accuracies.
    pub mean_accuracy: f64,
}

impl CrossValReport {
    pub fn fold_accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.report.accuracy).collect()
    }
}

/// Trains and validates one model per fold on up to `jobs` threads. Every
/// fold has its own seeded stream, so results do not depend on `jobs`.
pub fn cross_validate(data: &Dataset, cfg: &TrainConfig, jobs: usize) -> Result<CrossValReport, HarnessError> {
    let folds = data.folds;
    if folds == 0 {
        return Err(HarnessError::FoldOutOfRange { fold: 1, folds });
    }
    let next = AtomicUsize::new(1);
    let slots: Mutex<Vec<Option<Result<FoldRun, HarnessError>>>> = Mutex::new((0..folds).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, folds) {
            s.spawn(|| loop {
                let fold = next.fetch_add(1, Ordering::Relaxed);
                if fold > folds {
                    break;
                }
                let run = train_fold(data, fold, cfg);
                let failed = run.is_err();
                slots.lock().expect("no worker panicked")[fold - 1] = Some(run);
                if failed {
                    // stop handing out folds
                    next.store(folds + 1, Ordering::Relaxed);
                }
            });
        }
    });
    let mut runs = Vec::with_capacity(folds);
    for slot in slots.into_inner().expect("no worker panicked") {
        match slot {
            Some(run) => runs.push(run?),
            None => continue,
        }
    }
    let mean_accuracy = runs.iter().map(|r| r.report.accuracy).sum::<f64>() / runs.len() as f64;
    Ok(CrossValReport { runs, mean_accuracy })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub mean_accuracy: f64,
}

/// Cross-validates once per mixup alpha with everything else fixed.
pub fn alpha_sweep(
    data: &Dataset,
    cfg: &TrainConfig,
    alphas: &[f64],
    jobs: usize,
) -> Result<Vec<SweepRow>, HarnessError> {
    alphas
        .iter()
        .map(|&alpha| {
            let cfg = TrainConfig {
                mixup: MixupConfig::new(alpha)?,
                ..cfg.clone()
            };
            Ok(SweepRow {
                alpha,
                mean_accuracy: cross_validate(data, &cfg, jobs)?.mean_accuracy,
            })
        })
        .collect()
}

/// `alpha,mean_accuracy`
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), HarnessError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["alpha", "mean_accuracy"])?;
    for r in rows {
        csv.write_record([r.alpha.to_string(), r.mean_accuracy.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}
