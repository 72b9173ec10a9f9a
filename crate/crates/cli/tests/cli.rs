//! Command behavior through the built binary: exit codes, summaries and
//! artifacts on a 12-clip synthetic set without augmentation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use escnet_cli::config::{RunConfig, KEYS};
use proptest::prelude::*;
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    fn summary(&self) -> Value {
        serde_json::from_str(self.stdout.lines().last().unwrap_or("")).expect("last line is JSON")
    }
}

fn escnet(args: &[&str], env_seed: Option<&str>) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_escnet"));
    cmd.args(args).env_remove("ESC_SEED");
    if let Some(s) = env_seed {
        cmd.env("ESC_SEED", s);
    }
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    Run {
        code: status.code().unwrap(),
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

/// Synth set (3 per class, 3 folds), featurized without augmentation and
/// trained on fold 1 for one epoch.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let audio = dir.path().join("audio");
        let r = escnet(&["synth", "--out", &s(&audio), "--per-class", "3", "--folds", "3", "--seed", "2"], None);
        assert_eq!(r.code, 0, "{}", r.stderr);
        let config = dir.path().join("run.cfg");
        let text = format!(
            "seed = 4\naugment = false\nmanifest = {}\nfeatures_dir = {}\nout_dir = {}\nepochs = 1\nbatch_size = 8\nlr = 0.001\n",
            audio.join("manifest.csv").display(),
            dir.path().join("feat").display(),
            dir.path().join("runs").display(),
        );
        fs::write(&config, text).unwrap();
        let c = s(&config);
        for args in [vec!["featurize", "-c", &c], vec!["train", "-c", &c, "--fold", "1"]] {
            let r = escnet(&args, None);
            assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
        }
        Fixture { dir, config }
    })
}

fn escf_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "escf"))
        .collect();
    v.sort();
    v
}

#[test]
fn summary_is_one_json_line_ending_with_status() {
    let f = fixture();
    let r = escnet(&["evaluate", "-c", &s(&f.config), "--fold", "1"], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let last = r.stdout.lines().last().unwrap();
    assert!(last.starts_with("{\"command\":\"evaluate\""), "{last}");
    assert!(last.ends_with("\"status\":\"ok\"}"), "{last}");
    assert!(r.summary()["accuracy"].is_number());
}

#[test]
fn featurize_without_augmentation_writes_one_file_per_clip_and_is_idempotent() {
    let f = fixture();
    let feat = f.dir.path().join("feat");
    let files = escf_files(&feat);
    assert_eq!(files.len(), 12);
    let before: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
    let manifest = fs::read(feat.join("manifest.csv")).unwrap();
    let other = f.dir.path().join("feat_again");
    let r = escnet(
        &[
            "featurize",
            "-c",
            &s(&f.config),
            "--set",
            &format!("features_dir={}", s(&other)),
        ],
        None,
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let after: Vec<Vec<u8>> = escf_files(&other).iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(manifest, fs::read(other.join("manifest.csv")).unwrap());
}

#[test]
fn featurize_continues_past_bad_files_and_exits_2() {
    let f = fixture();
    let audio = f.dir.path().join("audio");
    let good = fs::read_to_string(audio.join("manifest.csv")).unwrap();
    let mut lines: Vec<&str> = good.lines().take(3).collect();
    lines.push("missing.wav,sweep,1");
    fs::write(audio.join("broken.csv"), lines.join("\n") + "\n").unwrap();
    let out = f.dir.path().join("feat_broken");
    let r = escnet(
        &[
            "featurize",
            "-c",
            &s(&f.config),
            "--set",
            &format!("manifest={}", s(&audio.join("broken.csv"))),
            "--set",
            &format!("features_dir={}", s(&out)),
        ],
        None,
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("missing.wav"), "{}", r.stderr);
    assert_eq!(r.summary()["status"], "data_error");
    assert_eq!(escf_files(&out).len(), 2);
}

#[test]
fn config_errors_exit_1_and_name_the_problem() {
    let f = fixture();
    let dir = f.dir.path();
    let noseed = dir.join("noseed.cfg");
    fs::write(&noseed, "epochs = 1\n").unwrap();
    let r = escnet(&["train", "-c", &s(&noseed), "--fold", "1"], None);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("`seed`"), "{}", r.stderr);
    assert_eq!(r.summary()["status"], "usage_error");

    let bogus = dir.join("bogus.cfg");
    fs::write(&bogus, "seed = 1\n\nbogus = 2\n").unwrap();
    let r = escnet(&["train", "-c", &s(&bogus), "--fold", "1"], None);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("line 3: unknown key `bogus`"), "{}", r.stderr);

    let r = escnet(&["train", "-c", &s(&f.config)], None);
    assert_eq!(r.code, 1, "missing --fold");
    assert_eq!(r.summary()["command"], "escnet");
    let r = escnet(&["frobnicate"], None);
    assert_eq!(r.code, 1);
}

#[test]
fn seed_falls_back_to_environment() {
    let f = fixture();
    let noseed = f.dir.path().join("env_seed.cfg");
    let text = fs::read_to_string(&f.config).unwrap().replace("seed = 4\n", "");
    fs::write(&noseed, text).unwrap();
    let r = escnet(&["evaluate", "-c", &s(&noseed), "--fold", "1"], Some("4"));
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn missing_checkpoint_and_bad_fold_are_data_errors() {
    let f = fixture();
    let c = s(&f.config);
    let r = escnet(&["evaluate", "-c", &c, "--fold", "2"], None);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("fold2.escw"), "{}", r.stderr);
    let r = escnet(&["train", "-c", &c, "--fold", "9"], None);
    assert_eq!(r.code, 2);
    let r = escnet(
        &[
            "evaluate",
            "-c",
            &c,
            "--fold",
            "1",
            "--set",
            "features_dir=/nonexistent/feat",
        ],
        None,
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("/nonexistent/feat"), "{}", r.stderr);
}

#[test]
fn diverging_training_exits_3() {
    let f = fixture();
    let out = f.dir.path().join("runs_nan");
    let r = escnet(
        &[
            "train",
            "-c",
            &s(&f.config),
            "--fold",
            "2",
            "--set",
            "lr=1000",
            "--set",
            "epochs=6",
            "--set",
            &format!("out_dir={}", s(&out)),
        ],
        None,
    );
    assert_eq!(r.code, 3, "{}", r.stderr);
    assert_eq!(r.summary()["status"], "numeric_failure");
}

#[test]
fn training_log_has_one_row_per_epoch() {
    let f = fixture();
    let log = fs::read_to_string(f.dir.path().join("runs/fold1_log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("epoch,lr,train_loss,train_acc,val_acc"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn predict_prints_probability_rows() {
    let f = fixture();
    let r = escnet(&["predict", "-c", &s(&f.config), "--fold", "1"], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines[0], "clip_id,predicted_label,prob_0,prob_1,prob_2,prob_3");
    assert_eq!(lines.len(), 1 + 4 + 1);
    for row in &lines[1..5] {
        let probs: f64 = row.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((probs - 1.0).abs() < 1e-6);
    }
    let wav = f.dir.path().join("audio/clicks_000.wav");
    let r = escnet(&["predict", "-c", &s(&f.config), "--fold", "1", &s(&wav)], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.lines().nth(1).unwrap().starts_with("clicks_000,"));
}

#[test]
fn embed_and_self_confusion() {
    let f = fixture();
    let c = s(&f.config);
    assert_eq!(escnet(&["embed", "-c", &c, "--fold", "1"], None).code, 0);
    let embed = fs::read_to_string(f.dir.path().join("runs/fold1_embed.csv")).unwrap();
    let rows: Vec<&str> = embed.lines().collect();
    assert_eq!(rows[0], "clip_id,x,y,true_label");
    assert_eq!(rows.len(), 1 + 4);

    assert_eq!(escnet(&["evaluate", "-c", &c, "--fold", "1"], None).code, 0);
    let preds = s(&f.dir.path().join("runs/fold1_predictions.csv"));
    let out = f.dir.path().join("self_diff.csv");
    let r = escnet(&["confusion", "--a", &preds, "--b", &preds, "--out", &s(&out)], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let diff = fs::read_to_string(out).unwrap();
    for row in diff.lines().skip(1) {
        assert!(
            row.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0),
            "{row}"
        );
    }
}

#[test]
fn crossval_and_alpha_sweep_report() {
    let f = fixture();
    let c = s(&f.config);
    let out = f.dir.path().join("runs_cv");
    let set_out = format!("out_dir={}", s(&out));
    let r = escnet(&["crossval", "-c", &c, "--set", &set_out], None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let line = r.stdout.lines().find(|l| l.starts_with("mean accuracy: ")).unwrap();
    let value = line.trim_start_matches("mean accuracy: ");
    assert_eq!(value.split('.').nth(1).map(str::len), Some(4), "{line}");
    assert_eq!(
        fs::read_to_string(out.join("crossval.csv")).unwrap().lines().count(),
        1 + 3
    );

    let r = escnet(
        &["alpha-sweep", "-c", &c, "--set", &set_out, "--alphas", "0.1,0.4"],
        None,
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let sweep = fs::read_to_string(out.join("alpha_sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows[0], "alpha,mean_accuracy");
    assert!(rows[1].starts_with("0.1,") && rows[2].starts_with("0.4,"));
}

fn value_for(key: &str) -> BoxedStrategy<String> {
    match key {
        "features" => prop_oneof![Just("mel"), Just("gt")].prop_map(String::from).boxed(),
        "arch" => prop_oneof![Just("proposed"), Just("vgg10")]
            .prop_map(String::from)
            .boxed(),
        "mixup" | "augment" | "deterministic" => any::<bool>().prop_map(|b| b.to_string()).boxed(),
        "augment_mode" => prop_oneof![Just("offline"), Just("online")]
            .prop_map(String::from)
            .boxed(),
        "profile" => prop_oneof![Just("esc"), Just("urban")].prop_map(String::from).boxed(),
        "alpha" | "lr" | "silence_db" => (1e-6f64..1e3).prop_map(|v| v.to_string()).boxed(),
        "seed" => any::<u64>().prop_map(|v| v.to_string()).boxed(),
        "epochs" | "batch_size" | "jobs" => (1usize..10_000).prop_map(|v| v.to_string()).boxed(),
        _ => "[a-zA-Z0-9_./-][a-zA-Z0-9_. /-]{0,20}[a-zA-Z0-9_./-]".boxed(),
    }
}

fn config_text() -> impl Strategy<Value = String> {
    let subsets = prop::sample::subsequence(KEYS.to_vec(), 0..=KEYS.len());
    subsets.prop_flat_map(|keys| {
        let values: Vec<_> = keys.iter().map(|k| value_for(k)).collect();
        values.prop_map(move |vals| {
            let mut text = String::from("seed = 1\n");
            for (k, v) in keys.iter().zip(vals) {
                if *k != "seed" {
                    text.push_str(&format!("{k} = {v}\n"));
                }
            }
            text
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn config_round_trip_is_a_fixed_point(text in config_text()) {
        let parsed = RunConfig::parse(&text).unwrap();
        let serialized = parsed.to_text();
        let again = RunConfig::parse(&serialized).unwrap();
        prop_assert_eq!(&again, &parsed);
        prop_assert_eq!(again.to_text(), serialized);
    }
}

#[test]
fn online_augmentation_trains_on_augmented_features() {
    let f = fixture();
    let audio = f.dir.path().join("audio");
    let all = fs::read_to_string(audio.join("manifest.csv")).unwrap();
    let rows: Vec<&str> = all
        .lines()
        .filter(|l| l.starts_with("path") || l.contains("_000.wav") || l.contains("_001.wav"))
        .filter(|l| l.starts_with("path") || l.starts_with("sweep") || l.starts_with("clicks"))
        .collect();
    assert_eq!(rows.len(), 5);
    fs::write(audio.join("four.csv"), rows.join("\n") + "\n").unwrap();
    let sets = [
        format!("manifest={}", s(&audio.join("four.csv"))),
        format!("features_dir={}", s(&f.dir.path().join("feat_aug"))),
        format!("out_dir={}", s(&f.dir.path().join("runs_online"))),
        "augment=true".to_string(),
        "augment_mode=online".to_string(),
        "epochs=2".to_string(),
    ];
    let mut args = vec!["featurize", "-c"];
    let c = s(&f.config);
    args.push(&c);
    for v in &sets {
        args.extend(["--set", v.as_str()]);
    }
    let r = escnet(&args, None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(escf_files(&f.dir.path().join("feat_aug")).len(), 4 * 9);
    args[0] = "train";
    args.extend(["--fold", "1"]);
    let r = escnet(&args, None);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let log = fs::read_to_string(f.dir.path().join("runs_online/fold1_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2);
}
