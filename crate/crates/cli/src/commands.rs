use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use escnet::audio::{load_wav, normalize, DeformSpec};
use escnet::features::{write_escf_file, ChannelStats, FeatureConfig, Featurizer};
use escnet::harness::{
    alpha_sweep, argmax, confusion_diff, cross_validate, evaluate_clips, fc1_embeddings, pca_embed, predict_clip,
    train_fold, write_log_csv, write_matrix_csv, write_sweep_csv, ClipFeatures, ClipPrediction, Dataset, EvalReport,
    FoldRun, HarnessError, Manifest, ManifestRow,
};
use escnet::model::{Model, FC1_UNITS};
use escnet::synth;

use crate::config::RunConfig;
use crate::{CliError, Command, Common, Summary};

/// Name of the manifest `featurize` writes next to the ESCF files.
pub const FEATURE_MANIFEST: &str = "manifest.csv";

pub fn checkpoint_path(cfg: &RunConfig, fold: usize) -> PathBuf {
    cfg.out_dir.join(format!("fold{fold}.escw"))
}

pub fn stats_path(cfg: &RunConfig, fold: usize) -> PathBuf {
    cfg.out_dir.join(format!("fold{fold}.stats"))
}

fn out_file(cfg: &RunConfig, name: String) -> PathBuf {
    cfg.out_dir.join(name)
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| data_err(path, e))
}

fn load_config(common: &Common, env_seed: Option<&str>) -> Result<RunConfig, CliError> {
    let text = match &common.config {
        Some(path) => Some(fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?),
        None => None,
    };
    Ok(RunConfig::from_sources(text.as_deref(), &common.set, env_seed)?)
}

fn featurizer(cfg: &RunConfig) -> Featurizer {
    Featurizer::new(FeatureConfig {
        silence_db: cfg.silence_db,
        ..FeatureConfig::new(cfg.features)
    })
}

fn feature_manifest(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let path = cfg.features_dir.join(FEATURE_MANIFEST);
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "missing feature manifest {} (run `escnet featurize` first)",
            path.display()
        )));
    }
    Ok(Manifest::read(&path)?)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(Dataset::from_escf_manifest(&feature_manifest(cfg)?, &featurizer(cfg))?)
}

/// Trained model plus the standardization it was trained with.
fn load_fold(cfg: &RunConfig, fold: usize, n_classes: usize) -> Result<(Model, ChannelStats), CliError> {
    let ckpt = checkpoint_path(cfg, fold);
    let file = File::open(&ckpt).map_err(|e| CliError::Data(format!("missing checkpoint {}: {e}", ckpt.display())))?;
    let model = Model::load(io::BufReader::new(file)).map_err(|e| data_err(&ckpt, e))?;
    let sp = stats_path(cfg, fold);
    let text =
        fs::read_to_string(&sp).map_err(|e| CliError::Data(format!("missing statistics {}: {e}", sp.display())))?;
    let stats = ChannelStats::from_text(&text).ok_or_else(|| data_err(&sp, "malformed statistics"))?;
    if model.n_classes != n_classes {
        return Err(HarnessError::ClassMismatch(model.n_classes, n_classes).into());
    }
    Ok((model, stats))
}

pub fn dispatch(command: Command, env_seed: Option<&str>, s: &mut Summary) -> Result<(), CliError> {
    match command {
        Command::Synth {
            out,
            per_class,
            folds,
            duration,
            seed,
        } => cmd_synth(&out, per_class, folds, duration, seed, s),
        Command::Featurize(common) => cmd_featurize(&load_config(&common, env_seed)?, s),
        Command::Train { common, fold } => cmd_train(&load_config(&common, env_seed)?, fold, common.verbose, s),
        Command::Crossval { common, jobs } => {
            let cfg = load_config(&common, env_seed)?;
            cmd_crossval(&cfg, jobs_for(&cfg, jobs), common.verbose, s)
        }
        Command::Evaluate { common, fold } => cmd_evaluate(&load_config(&common, env_seed)?, fold, s),
        Command::Predict { common, fold, wavs } => cmd_predict(&load_config(&common, env_seed)?, fold, &wavs, s),
        Command::AlphaSweep { common, alphas, jobs } => {
            let cfg = load_config(&common, env_seed)?;
            cmd_alpha_sweep(&cfg, &alphas, jobs_for(&cfg, jobs), common.verbose, s)
        }
        Command::Embed { common, fold } => cmd_embed(&load_config(&common, env_seed)?, fold, s),
        Command::Confusion { a, b, out } => cmd_confusion(&a, &b, &out, s),
    }
}

fn jobs_for(cfg: &RunConfig, flag: Option<usize>) -> usize {
    if cfg.deterministic {
        1
    } else {
        flag.unwrap_or(cfg.jobs).max(1)
    }
}

fn cmd_synth(
    out: &Path,
    per_class: usize,
    folds: usize,
    duration: f64,
    seed: u64,
    s: &mut Summary,
) -> Result<(), CliError> {
    if folds == 0 || per_class == 0 || !(duration.is_finite() && duration > 0.0) {
        return Err(CliError::Usage("per-class, folds and duration must be positive".into()));
    }
    let clips = synth::generate(per_class, folds, duration, seed);
    let manifest = synth::write_dataset(out, &clips).map_err(|e| data_err(out, e))?;
    s.put("clips", clips.len())
        .put("manifest", manifest.display().to_string());
    Ok(())
}

/// One ESCF file per clip and deformation. Failing files are reported and
/// skipped; the command then exits with a data error after writing the
/// manifest of everything that succeeded.
fn cmd_featurize(cfg: &RunConfig, s: &mut Summary) -> Result<(), CliError> {
    let manifest = Manifest::read(&cfg.manifest)?;
    let fz = featurizer(cfg);
    let mut deforms = vec![None];
    if cfg.augment {
        deforms.extend(DeformSpec::augmentation_grid().into_iter().map(Some));
    }
    fs::create_dir_all(&cfg.features_dir).map_err(|e| data_err(&cfg.features_dir, e))?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    let mut failed = 0usize;
    for row in &manifest.rows {
        let path = manifest.resolve(row);
        let id = row.clip_id();
        if !seen.insert(id.clone()) {
            eprintln!(
                "error: {}: clip id `{id}` appears twice in the manifest",
                path.display()
            );
            failed += 1;
            continue;
        }
        let clip = match load_wav(&path) {
            Ok(c) => normalize(&c),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                failed += 1;
                continue;
            }
        };
        for d in &deforms {
            let (name, derived) = match d {
                None => (format!("{id}.escf"), Ok(clip.clone())),
                Some(d) => (format!("{id}__{}.escf", d.tag()), d.apply(&clip).map(|c| normalize(&c))),
            };
            let result = derived.map_err(|e| e.to_string()).and_then(|c| {
                let spec = fz.spectrogram(&c).map_err(|e| e.to_string())?;
                // reject clips that would yield no segments now rather than at training time
                fz.tensors(&spec, &id).map_err(|e| e.to_string())?;
                write_escf_file(&cfg.features_dir.join(&name), &spec, &name[..name.len() - 5])
                    .map_err(|e| e.to_string())
            });
            match result {
                Ok(()) => rows.push(ManifestRow {
                    path: name,
                    source: id.clone(),
                    ..row.clone()
                }),
                Err(e) => {
                    eprintln!("error: {} ({name}): {e}", path.display());
                    failed += 1;
                }
            }
        }
    }
    let out = Manifest { rows, ..manifest };
    let mpath = cfg.features_dir.join(FEATURE_MANIFEST);
    out.write(create(&mpath)?)?;
    s.put("clips", out.rows.iter().filter(|r| r.is_original()).count())
        .put("files_written", out.rows.len())
        .put("failed", failed)
        .put("manifest", mpath.display().to_string());
    if failed > 0 {
        return Err(CliError::Data(format!("{failed} file(s) failed to featurize")));
    }
    Ok(())
}

fn write_fold_artifacts(cfg: &RunConfig, run: &FoldRun, class_names: &[String]) -> Result<(), CliError> {
    let k = run.fold;
    let mut w = create(&checkpoint_path(cfg, k))?;
    run.model.save(&mut w)?;
    w.flush().map_err(|e| data_err(&checkpoint_path(cfg, k), e))?;
    let sp = stats_path(cfg, k);
    create(&sp)?
        .write_all(run.stats.to_text().as_bytes())
        .map_err(|e| data_err(&sp, e))?;
    write_log_csv(create(&out_file(cfg, format!("fold{k}_log.csv")))?, &run.log)?;
    run.report
        .write_predictions_csv(create(&out_file(cfg, format!("fold{k}_predictions.csv")))?, class_names)?;
    run.report
        .write_confusion_csv(create(&out_file(cfg, format!("fold{k}_confusion.csv")))?, class_names)?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, fold: usize, verbose: bool, s: &mut Summary) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let tc = escnet::harness::TrainConfig {
        verbose,
        ..cfg.train_config()
    };
    s.put("fold", fold).put("epochs", tc.epochs);
    let run = train_fold(&data, fold, &tc)?;
    write_fold_artifacts(cfg, &run, &data.class_names)?;
    s.put("val_accuracy", run.report.accuracy)
        .put("train_accuracy", run.train_accuracy)
        .put("final_loss", run.log.last().map_or(f64::NAN, |r| r.train_loss))
        .put("checkpoint", checkpoint_path(cfg, fold).display().to_string());
    Ok(())
}

fn cmd_crossval(cfg: &RunConfig, jobs: usize, verbose: bool, s: &mut Summary) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let tc = escnet::harness::TrainConfig {
        verbose,
        ..cfg.train_config()
    };
    let report = cross_validate(&data, &tc, jobs)?;
    let mut table = csv::Writer::from_writer(create(&out_file(cfg, "crossval.csv".into()))?);
    let io = |e: csv::Error| CliError::Harness(e.into());
    table.write_record(["fold", "accuracy", "train_accuracy"]).map_err(io)?;
    let mut pooled = Vec::new();
    for run in &report.runs {
        write_fold_artifacts(cfg, run, &data.class_names)?;
        table
            .write_record([
                run.fold.to_string(),
                run.report.accuracy.to_string(),
                run.train_accuracy.to_string(),
            ])
            .map_err(io)?;
        pooled.extend(run.report.predictions.iter().cloned());
    }
    table.flush().map_err(|e| CliError::Harness(e.into()))?;
    let pooled = EvalReport::new(data.n_classes(), pooled);
    pooled.write_predictions_csv(create(&out_file(cfg, "predictions.csv".into()))?, &data.class_names)?;
    pooled.write_confusion_csv(create(&out_file(cfg, "confusion.csv".into()))?, &data.class_names)?;
    println!("mean accuracy: {:.4}", report.mean_accuracy);
    s.put("folds", report.runs.len())
        .put("fold_accuracies", report.fold_accuracies())
        .put("mean_accuracy", report.mean_accuracy)
        .put("pooled_accuracy", pooled.accuracy);
    Ok(())
}

fn held_out_clips(data: &Dataset, fold: usize) -> Result<Vec<&ClipFeatures>, CliError> {
    Ok(data.split(fold)?.validation)
}

fn cmd_evaluate(cfg: &RunConfig, fold: usize, s: &mut Summary) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let clips = held_out_clips(&data, fold)?;
    let (mut model, stats) = load_fold(cfg, fold, data.n_classes())?;
    let report = evaluate_clips(&mut model, &clips, &stats, data.n_classes())?;
    let preds = out_file(cfg, format!("fold{fold}_predictions.csv"));
    report.write_predictions_csv(create(&preds)?, &data.class_names)?;
    report.write_confusion_csv(
        create(&out_file(cfg, format!("fold{fold}_confusion.csv")))?,
        &data.class_names,
    )?;
    s.put("fold", fold)
        .put("clips", clips.len())
        .put("accuracy", report.accuracy)
        .put("predictions", preds.display().to_string());
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, fold: usize, wavs: &[PathBuf], s: &mut Summary) -> Result<(), CliError> {
    let manifest = feature_manifest(cfg)?;
    let n_classes = manifest.n_classes();
    let (mut model, stats) = load_fold(cfg, fold, n_classes)?;
    let mut predictions = Vec::new();
    if wavs.is_empty() {
        let data = Dataset::from_escf_manifest(&manifest, &featurizer(cfg))?;
        let clips = held_out_clips(&data, fold)?;
        predictions = evaluate_clips(&mut model, &clips, &stats, n_classes)?.predictions;
    } else {
        let fz = featurizer(cfg);
        for path in wavs {
            let clip = normalize(&load_wav(path).map_err(|e| data_err(path, e))?);
            let segments = fz.featurize(&clip).map_err(|e| data_err(path, e))?;
            let feats = ClipFeatures {
                clip_id: clip.source_id.clone(),
                source_id: clip.source_id.clone(),
                class: 0,
                fold: 0,
                segments,
            };
            let probs = predict_clip(&mut model, &feats.standardized(&stats))?;
            predictions.push(ClipPrediction {
                clip_id: feats.clip_id,
                true_class: 0,
                predicted: argmax(&probs),
                probs,
            });
        }
    }
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    let mut header = vec!["clip_id".to_string(), "predicted_label".into()];
    header.extend((0..n_classes).map(|k| format!("prob_{k}")));
    let io = |e: csv::Error| CliError::Harness(e.into());
    out.write_record(&header).map_err(io)?;
    for p in &predictions {
        let mut rec = vec![p.clip_id.clone(), manifest.class_names[p.predicted].clone()];
        rec.extend(p.probs.iter().map(f64::to_string));
        out.write_record(&rec).map_err(io)?;
    }
    out.flush().map_err(|e| CliError::Harness(e.into()))?;
    s.put("fold", fold).put("clips", predictions.len());
    Ok(())
}

fn cmd_alpha_sweep(
    cfg: &RunConfig,
    alphas: &[f64],
    jobs: usize,
    verbose: bool,
    s: &mut Summary,
) -> Result<(), CliError> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(CliError::Usage("alphas must be positive and finite".into()));
    }
    let data = load_dataset(cfg)?;
    let tc = escnet::harness::TrainConfig {
        verbose,
        ..cfg.train_config()
    };
    let rows = alpha_sweep(&data, &tc, alphas, jobs)?;
    let path = out_file(cfg, "alpha_sweep.csv".into());
    write_sweep_csv(create(&path)?, &rows)?;
    s.put("alphas", alphas.to_vec())
        .put(
            "mean_accuracies",
            rows.iter().map(|r| r.mean_accuracy).collect::<Vec<_>>(),
        )
        .put("table", path.display().to_string());
    Ok(())
}

fn cmd_embed(cfg: &RunConfig, fold: usize, s: &mut Summary) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let clips = held_out_clips(&data, fold)?;
    let (mut model, stats) = load_fold(cfg, fold, data.n_classes())?;
    let features = fc1_embeddings(&mut model, &clips, &stats)?;
    let pca = pca_embed(&features, clips.len(), FC1_UNITS, 2)?;
    let path = out_file(cfg, format!("fold{fold}_embed.csv"));
    let mut w = csv::Writer::from_writer(create(&path)?);
    let io = |e: csv::Error| CliError::Harness(e.into());
    w.write_record(["clip_id", "x", "y", "true_label"]).map_err(io)?;
    for (i, clip) in clips.iter().enumerate() {
        w.write_record([
            clip.clip_id.clone(),
            pca.coords[2 * i].to_string(),
            pca.coords[2 * i + 1].to_string(),
            data.class_names[clip.class].clone(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Harness(e.into()))?;
    s.put("fold", fold)
        .put("rows", clips.len())
        .put("explained_variance_ratio", pca.explained_ratio.clone())
        .put("embedding", path.display().to_string());
    Ok(())
}

/// `(clip_id, true_label, predicted_label)` from a predictions CSV.
fn read_predictions(path: &Path) -> Result<Vec<(String, String, String)>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| data_err(path, e))?;
    let headers = r.headers().map_err(|e| data_err(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(path, format!("no `{name}` column")))
    };
    let (ci, ti, pi) = (col("clip_id")?, col("true_label")?, col("predicted_label")?);
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| data_err(path, e))?;
            Ok((rec[ci].to_string(), rec[ti].to_string(), rec[pi].to_string()))
        })
        .collect()
}

fn cmd_confusion(a: &Path, b: &Path, out: &Path, s: &mut Summary) -> Result<(), CliError> {
    let (ra, rb) = (read_predictions(a)?, read_predictions(b)?);
    let names: Vec<String> = ra
        .iter()
        .chain(&rb)
        .flat_map(|(_, t, p)| [t.clone(), p.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let report = |rows: &[(String, String, String)]| {
        let idx = |l: &str| names.binary_search_by(|n| n.as_str().cmp(l)).expect("label collected");
        EvalReport::new(
            names.len(),
            rows.iter()
                .map(|(id, t, p)| ClipPrediction {
                    clip_id: id.clone(),
                    true_class: idx(t),
                    predicted: idx(p),
                    probs: Vec::new(),
                })
                .collect(),
        )
    };
    let diff = confusion_diff(&report(&ra), &report(&rb))?;
    write_matrix_csv(create(out)?, &names, &diff)?;
    let max_abs = diff.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    s.put("classes", names.len())
        .put("max_abs_diff", max_abs)
        .put("out", out.display().to_string());
    Ok(())
}
