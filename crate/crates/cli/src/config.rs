//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional except `seed`, which may also come from `--set seed=N` or the
//! `ESC_SEED` environment variable. Later sources win: file, then
//! environment fallback (only when the file has no seed), then overrides.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use escnet::features::{BandType, DEFAULT_SILENCE_DB};
use escnet::harness::{AugmentMode, TrainConfig};
use escnet::mixup::{MixupConfig, DEFAULT_ALPHA};
use escnet::model::{Architecture, INIT_STD};
use escnet::nn::{LrProfile, INITIAL_LR};
use thiserror::Error;

pub const SEED_ENV: &str = "ESC_SEED";

/// Keys in serialization order.
pub const KEYS: [&str; 17] = [
    "features",
    "arch",
    "mixup",
    "alpha",
    "augment",
    "augment_mode",
    "profile",
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "silence_db",
    "jobs",
    "deterministic",
    "manifest",
    "features_dir",
    "out_dir",
];

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Override,
    Env,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Override => f.write_str("override"),
            Origin::Env => write!(f, "{SEED_ENV}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}: expected `key = value`")]
    Syntax(Origin),
    #[error("{0}: unknown key `{1}`")]
    UnknownKey(Origin, String),
    #[error("{0}: duplicate key `{1}`")]
    Duplicate(Origin, String),
    #[error("{origin}: invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        origin: Origin,
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required key `{0}` (set it in the config, with --set {0}=N, or via {SEED_ENV})")]
    MissingKey(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub features: BandType,
    pub arch: Architecture,
    pub mixup: bool,
    pub alpha: f64,
    pub augment: bool,
    pub augment_mode: AugmentMode,
    pub profile: LrProfile,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub silence_db: f64,
    pub jobs: usize,
    /// Forces single-threaded execution.
    pub deterministic: bool,
    /// Audio manifest read by `featurize`.
    pub manifest: PathBuf,
    /// ESCF files plus their manifest.
    pub features_dir: PathBuf,
    /// Checkpoints, logs and reports.
    pub out_dir: PathBuf,
}

/// Everything optional until the sources are merged.
#[derive(Debug, Default)]
struct Partial {
    features: Option<BandType>,
    arch: Option<Architecture>,
    mixup: Option<bool>,
    alpha: Option<f64>,
    augment: Option<bool>,
    augment_mode: Option<AugmentMode>,
    profile: Option<LrProfile>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    silence_db: Option<f64>,
    jobs: Option<usize>,
    deterministic: Option<bool>,
    manifest: Option<PathBuf>,
    features_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

fn invalid(origin: &Origin, key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        origin: origin.clone(),
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_value<T: FromStr>(origin: &Origin, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| invalid(origin, key, value, e.to_string()))
}

fn parse_bool(origin: &Origin, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(invalid(origin, key, value, "expected true or false")),
    }
}

fn positive_f64(origin: &Origin, key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse_value(origin, key, value)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(origin, key, value, "must be positive and finite"))
    }
}

fn positive_usize(origin: &Origin, key: &str, value: &str) -> Result<usize, ConfigError> {
    let v: usize = parse_value(origin, key, value)?;
    if v == 0 {
        return Err(invalid(origin, key, value, "must be at least 1"));
    }
    Ok(v)
}

fn parse_profile(origin: &Origin, key: &str, value: &str) -> Result<LrProfile, ConfigError> {
    match value.to_ascii_lowercase().as_str() {
        "urban" => Ok(LrProfile::Urban),
        "esc" => Ok(LrProfile::Esc),
        _ => Err(invalid(origin, key, value, "expected urban or esc")),
    }
}

fn profile_name(p: LrProfile) -> &'static str {
    match p {
        LrProfile::Urban => "urban",
        LrProfile::Esc => "esc",
    }
}

impl Partial {
    /// Stores one setting; `replace` lets overrides win over the file.
    fn set(&mut self, origin: Origin, key: &str, value: &str, replace: bool) -> Result<(), ConfigError> {
        macro_rules! put {
            ($field:ident, $parsed:expr) => {{
                if self.$field.is_some() && !replace {
                    return Err(ConfigError::Duplicate(origin, key.to_string()));
                }
                self.$field = Some($parsed);
            }};
        }
        let o = &origin;
        match key {
            "features" => put!(features, parse_value(o, key, value)?),
            "arch" => put!(arch, parse_value(o, key, value)?),
            "mixup" => put!(mixup, parse_bool(o, key, value)?),
            "alpha" => put!(alpha, positive_f64(o, key, value)?),
            "augment" => put!(augment, parse_bool(o, key, value)?),
            "augment_mode" => put!(augment_mode, parse_value(o, key, value)?),
            "profile" => put!(profile, parse_profile(o, key, value)?),
            "seed" => put!(seed, parse_value(o, key, value)?),
            "epochs" => put!(epochs, positive_usize(o, key, value)?),
            "batch_size" => put!(batch_size, positive_usize(o, key, value)?),
            "lr" => put!(lr, positive_f64(o, key, value)?),
            "silence_db" => put!(silence_db, positive_f64(o, key, value)?),
            "jobs" => put!(jobs, positive_usize(o, key, value)?),
            "deterministic" => put!(deterministic, parse_bool(o, key, value)?),
            "manifest" => put!(manifest, PathBuf::from(value)),
            "features_dir" => put!(features_dir, PathBuf::from(value)),
            "out_dir" => put!(out_dir, PathBuf::from(value)),
            _ => return Err(ConfigError::UnknownKey(origin, key.to_string())),
        }
        Ok(())
    }
}

/// Splits `key = value`; the value is everything after the first `=`.
fn split_pair(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty()).then_some((k, v))
}

impl RunConfig {
    /// Merges a config text, the environment seed fallback and `key=value`
    /// overrides.
    pub fn from_sources(
        text: Option<&str>,
        overrides: &[String],
        env_seed: Option<&str>,
    ) -> Result<RunConfig, ConfigError> {
        let mut p = Partial::default();
        for (i, raw) in text.unwrap_or("").lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = Origin::Line(i + 1);
            let (k, v) = split_pair(line).ok_or(ConfigError::Syntax(origin.clone()))?;
            p.set(origin, k, v, false)?;
        }
        if p.seed.is_none() {
            if let Some(v) = env_seed {
                p.set(Origin::Env, "seed", v.trim(), true)?;
            }
        }
        for o in overrides {
            let (k, v) = split_pair(o).ok_or(ConfigError::Syntax(Origin::Override))?;
            p.set(Origin::Override, k, v, true)?;
        }
        let profile = p.profile.unwrap_or(LrProfile::Esc);
        let deterministic = p.deterministic.unwrap_or(true);
        Ok(RunConfig {
            features: p.features.unwrap_or(BandType::LogMel),
            arch: p.arch.unwrap_or(Architecture::Proposed),
            mixup: p.mixup.unwrap_or(true),
            alpha: p.alpha.unwrap_or(DEFAULT_ALPHA),
            augment: p.augment.unwrap_or(true),
            augment_mode: p.augment_mode.unwrap_or_default(),
            profile,
            seed: p.seed.ok_or(ConfigError::MissingKey("seed"))?,
            epochs: p.epochs.unwrap_or(profile.total_epochs()),
            batch_size: p.batch_size.unwrap_or(escnet::harness::DEFAULT_BATCH_SIZE),
            lr: p.lr.unwrap_or(INITIAL_LR),
            silence_db: p.silence_db.unwrap_or(DEFAULT_SILENCE_DB),
            jobs: if deterministic { 1 } else { p.jobs.unwrap_or(1) },
            deterministic,
            manifest: p.manifest.unwrap_or_else(|| "manifest.csv".into()),
            features_dir: p.features_dir.unwrap_or_else(|| "features".into()),
            out_dir: p.out_dir.unwrap_or_else(|| "runs".into()),
        })
    }

    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::from_sources(Some(text), &[], None)
    }

    /// Every key, one per line, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let values = [
            self.features.to_string(),
            self.arch.to_string(),
            self.mixup.to_string(),
            self.alpha.to_string(),
            self.augment.to_string(),
            self.augment_mode.to_string(),
            profile_name(self.profile).to_string(),
            self.seed.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.lr.to_string(),
            self.silence_db.to_string(),
            self.jobs.to_string(),
            self.deterministic.to_string(),
            self.manifest.display().to_string(),
            self.features_dir.display().to_string(),
            self.out_dir.display().to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            arch: self.arch,
            mixup: if self.mixup {
                MixupConfig {
                    alpha: self.alpha,
                    enabled: true,
                }
            } else {
                MixupConfig::disabled()
            },
            profile: self.profile,
            epochs: self.epochs,
            batch_size: self.batch_size,
            augment: self.augment_mode,
            seed: self.seed,
            base_lr: self.lr,
            init_std: INIT_STD,
            verbose: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::parse("seed = 3\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.epochs, 300);
        assert_eq!(c.arch, Architecture::Proposed);
        assert_eq!(c.jobs, 1);
        let u = RunConfig::parse("seed = 3\nprofile = urban\n").unwrap();
        assert_eq!(u.epochs, 200);
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = RunConfig::parse("seed = 1\n\nbogus = 2\n").unwrap_err();
        assert_eq!(e.to_string(), "line 3: unknown key `bogus`");
        let e = RunConfig::parse("# c\nseed 1\n").unwrap_err();
        assert_eq!(e, ConfigError::Syntax(Origin::Line(2)));
        let e = RunConfig::parse("seed = 1\narch = alexnet\n").unwrap_err();
        assert!(
            e.to_string().starts_with("line 2: invalid value `alexnet` for `arch`"),
            "{e}"
        );
        let e = RunConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert_eq!(e, ConfigError::Duplicate(Origin::Line(2), "seed".into()));
        let e = RunConfig::parse("arch = vgg10\n").unwrap_err();
        assert_eq!(e, ConfigError::MissingKey("seed"));
        assert!(e.to_string().contains("`seed`"));
        assert!(RunConfig::parse("seed = 1\nalpha = 0\n").is_err());
        assert!(RunConfig::parse("seed = 1\nepochs = 0\n").is_err());
    }

    #[test]
    fn sources_precedence() {
        let text = "seed = 1\nepochs = 5\n";
        let c = RunConfig::from_sources(Some(text), &["epochs=7".into()], Some("9")).unwrap();
        assert_eq!((c.seed, c.epochs), (1, 7));
        let c = RunConfig::from_sources(Some("epochs = 5\n"), &[], Some("9")).unwrap();
        assert_eq!(c.seed, 9);
        let c = RunConfig::from_sources(None, &["seed=4".into()], Some("9")).unwrap();
        assert_eq!(c.seed, 4);
        assert!(RunConfig::from_sources(None, &["nope=1".into()], Some("1")).is_err());
    }

    #[test]
    fn deterministic_forces_one_job() {
        let c = RunConfig::parse("seed = 1\njobs = 4\n").unwrap();
        assert_eq!(c.jobs, 1);
        let c = RunConfig::parse("seed = 1\njobs = 4\ndeterministic = false\n").unwrap();
        assert_eq!(c.jobs, 4);
    }

    #[test]
    fn serialize_parse_fixed_point() {
        let c =
            RunConfig::parse("seed = 11\nfeatures = gt\narch = vgg10\nmixup = off\nlr = 0.003\nout_dir = my runs\n")
                .unwrap();
        let text = c.to_text();
        let again = RunConfig::parse(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), text);
        assert_eq!(again.out_dir, PathBuf::from("my runs"));
    }
}
