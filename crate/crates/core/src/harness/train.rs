use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::eval::{argmax, predict_clip, ClipPrediction, EvalReport};
use super::{ClipFeatures, Dataset, HarnessError};
use crate::features::{ChannelStats, FeatureTensor};
use crate::mixup::{mix_with_firsts, LabeledSet, MixupConfig};
use crate::model::{build, Architecture, Model, ModelConfig, FC1_UNITS, INIT_STD};
use crate::nn::{lr_schedule, softmax_cross_entropy, LrProfile, Mode, OptimizerState, Tensor, INITIAL_LR};

pub const DEFAULT_BATCH_SIZE: usize = 200;

/// How precomputed deformed copies enter training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AugmentMode {
    /// Every deformed copy is a training clip of its own.
    #[default]
    Offline,
    /// Each epoch draws one variant (original or deformed) per source clip.
    Online,
}

impl std::fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AugmentMode::Offline => "offline",
            AugmentMode::Online => "online",
        })
    }
}

impl std::str::FromStr for AugmentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "offline" => Ok(AugmentMode::Offline),
            "online" => Ok(AugmentMode::Online),
            other => Err(format!(
                "unknown augmentation mode `{other}` (expected offline or online)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub mixup: MixupConfig,
    pub profile: LrProfile,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: AugmentMode,
    pub seed: u64,
    /// Rate of the first schedule step; later steps keep the tenfold drops.
    pub base_lr: f64,
    pub init_std: f64,
    /// Per-epoch progress on stderr.
    pub verbose: bool,
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * lr_schedule(epoch, self.profile) / INITIAL_LR
    }

    /// Full-length schedule of `profile` with the default model settings.
    pub fn new(arch: Architecture, profile: LrProfile, seed: u64) -> TrainConfig {
        TrainConfig {
            arch,
            mixup: MixupConfig::default(),
            profile,
            epochs: profile.total_epochs(),
            batch_size: DEFAULT_BATCH_SIZE,
            augment: AugmentMode::Offline,
            seed,
            base_lr: INITIAL_LR,
            init_std: INIT_STD,
            verbose: false,
        }
    }
}

/// One row of the training log. `epoch` counts from 0 so the row at epoch
/// `k` shows the rate used during that pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's (mixed) training segments.
    pub train_loss: f64,
    /// Share of training segments whose train-mode argmax matches the
    /// argmax of their (mixed) label.
    pub train_acc: f64,
    /// Clip accuracy on the held-out fold.
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FoldRun {
    pub fold: usize,
    pub model: Model,
    /// Standardization fitted on this fold's training segments.
    pub stats: ChannelStats,
    pub log: Vec<EpochLog>,
    /// Final clip-level validation report.
    pub report: EvalReport,
    /// Eval-mode clip accuracy on the training clips after the last epoch.
    pub train_accuracy: f64,
    /// Digest of every batch's pairs and mixing weights. Equal digests mean
    /// two runs saw identical training data in identical order.
    pub exposure: u64,
}

/// Trains one model with `held_out` as the validation fold.
///
/// Every epoch is one pass over the shuffled training segments in batches
/// of `batch_size` (the last batch may be short). With mixup enabled, each
/// segment of the pass is paired with a uniformly drawn partner. In online
/// augmentation mode the pass covers one variant per source clip.
pub fn train_fold(data: &Dataset, held_out: usize, cfg: &TrainConfig) -> Result<FoldRun, HarnessError> {
    let split = data.split(held_out)?;
    let leaked = split.leaked_sources();
    if !leaked.is_empty() {
        return Err(HarnessError::Leak {
            fold: held_out,
            sources: leaked,
        });
    }
    let segments: Vec<&FeatureTensor> = split.train.iter().flat_map(|c| &c.segments).collect();
    if segments.is_empty() {
        return Err(HarnessError::NoSegments(format!("training split of fold {held_out}")));
    }
    let stats = ChannelStats::fit(segments.iter().copied());
    let mut items = Vec::with_capacity(segments.len());
    let mut labels = Vec::with_capacity(segments.len());
    let mut variants: Vec<(&str, Range<usize>)> = Vec::with_capacity(split.train.len());
    for clip in &split.train {
        let start = items.len();
        for s in clip.standardized(&stats) {
            items.push(s.values);
            labels.push(clip.class);
        }
        variants.push((&clip.source_id, start..items.len()));
    }
    let groups = group_by_source(variants);
    let set = LabeledSet {
        items: &items,
        labels: &labels,
        item_shape: &FeatureTensor::SHAPE,
        n_classes: data.n_classes(),
    };

    // Init and data draws use separate streams so the data order does not
    // depend on the architecture's parameter count.
    let fold_seed = cfg.seed.wrapping_add(held_out as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed);
    let mut data_rng = ChaCha8Rng::seed_from_u64(fold_seed);
    data_rng.set_stream(1);
    let mut exposure = DefaultHasher::new();
    let model_cfg = ModelConfig {
        init_std: cfg.init_std,
        ..ModelConfig::new(cfg.arch, data.n_classes())
    };
    let mut model = build(&model_cfg, &mut rng)?;
    model.net.reseed_dropout(rng.gen());
    let mut opt = OptimizerState::<f32>::new(cfg.lr_at(0));
    let batch_size = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);
        match cfg.augment {
            AugmentMode::Offline => order.shuffle(&mut data_rng),
            AugmentMode::Online => order = online_order(&groups, &mut data_rng),
        }
        let (mut loss_sum, mut hits) = (0.0f64, 0usize);
        for firsts in order.chunks(batch_size) {
            let batch = mix_with_firsts(&set, firsts, &cfg.mixup, &mut data_rng)?;
            batch.pairs.hash(&mut exposure);
            batch.lambdas.iter().for_each(|l| l.to_bits().hash(&mut exposure));
            model.net.zero_grad();
            let logits = model.forward_logits(&batch.inputs, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels)?;
            if !loss.is_finite() || !logits.all_finite() {
                return Err(HarnessError::NumericFailure { fold: held_out, epoch });
            }
            model.net.backward_params(grad)?;
            opt.step(model.net.params_mut());
            model.net.clear_caches();
            loss_sum += loss * firsts.len() as f64;
            hits += batch_hits(&logits, &batch.labels, data.n_classes());
        }
        let val = evaluate_clips(&mut model, &split.validation, &stats, data.n_classes())?;
        let row = EpochLog {
            epoch,
            lr: opt.lr,
            train_loss: loss_sum / order.len() as f64,
            train_acc: hits as f64 / order.len() as f64,
            val_acc: val.accuracy,
        };
        if cfg.verbose {
            eprintln!(
                "fold {held_out} epoch {epoch}: lr {} loss {:.4} train_acc {:.3} val_acc {:.3}",
                row.lr, row.train_loss, row.train_acc, row.val_acc
            );
        }
        log.push(row);
    }

    let report = evaluate_clips(&mut model, &split.validation, &stats, data.n_classes())?;
    let train_accuracy = evaluate_clips(&mut model, &split.train, &stats, data.n_classes())?.accuracy;
    Ok(FoldRun {
        fold: held_out,
        model,
        stats,
        log,
        report,
        train_accuracy,
        exposure: exposure.finish(),
    })
}

/// Segment ranges of each source's variants, sources in first-seen order.
fn group_by_source(variants: Vec<(&str, Range<usize>)>) -> Vec<Vec<Range<usize>>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<Range<usize>>> = Vec::new();
    for (source, range) in variants {
        let g = *index.entry(source).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(range);
    }
    groups
}

/// One uniformly drawn variant per source, segments shuffled.
fn online_order<R: Rng>(groups: &[Vec<Range<usize>>], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = groups
        .iter()
        .flat_map(|g| g[rng.gen_range(0..g.len())].clone())
        .collect();
    order.shuffle(rng);
    order
}

fn batch_hits(logits: &Tensor<f32>, labels: &Tensor<f32>, k: usize) -> usize {
    let arg = |row: &[f32]| (0..k).fold(0, |b, i| if row[i] > row[b] { i } else { b });
    logits
        .data()
        .chunks_exact(k)
        .zip(labels.data().chunks_exact(k))
        .filter(|(z, y)| arg(z) == arg(y))
        .count()
}

/// Standardizes each clip with `stats` and predicts it by segment averaging.
pub fn evaluate_clips(
    model: &mut Model,
    clips: &[&ClipFeatures],
    stats: &ChannelStats,
    n_classes: usize,
) -> Result<EvalReport, HarnessError> {
    let mut predictions = Vec::with_capacity(clips.len());
    for clip in clips {
        if clip.segments.is_empty() {
            return Err(HarnessError::NoSegments(clip.clip_id.clone()));
        }
        let probs = predict_clip(model, &clip.standardized(stats))?;
        predictions.push(ClipPrediction {
            clip_id: clip.clip_id.clone(),
            true_class: clip.class,
            predicted: argmax(&probs),
            probs,
        });
    }
    Ok(EvalReport::new(n_classes, predictions))
}

/// Clip-level FC1 activations (mean over segments), row-major `(n, 512)`.
pub fn fc1_embeddings(
    model: &mut Model,
    clips: &[&ClipFeatures],
    stats: &ChannelStats,
) -> Result<Vec<f64>, HarnessError> {
    let mut out = Vec::with_capacity(clips.len() * FC1_UNITS);
    for clip in clips {
        let segs = clip.standardized(stats);
        if segs.is_empty() {
            return Err(HarnessError::NoSegments(clip.clip_id.clone()));
        }
        let mut shape = vec![segs.len()];
        shape.extend(FeatureTensor::SHAPE);
        let batch = Tensor::from_vec(&shape, segs.into_iter().flat_map(|s| s.values).collect())?;
        let act = model.extract_fc1(&batch)?;
        let n = act.batch() as f64;
        out.extend((0..FC1_UNITS).map(|u| act.data().chunks_exact(FC1_UNITS).map(|r| r[u] as f64).sum::<f64>() / n));
    }
    Ok(out)
}

/// `epoch,lr,train_loss,train_acc,val_acc`
pub fn write_log_csv<W: Write>(w: W, log: &[EpochLog]) -> Result<(), HarnessError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["epoch", "lr", "train_loss", "train_acc", "val_acc"])?;
    for r in log {
        csv.write_record([
            r.epoch.to_string(),
            r.lr.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.val_acc.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
