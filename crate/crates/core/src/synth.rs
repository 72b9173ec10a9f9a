//! Synthetic four-class sound set for end-to-end checks: sine sweeps,
//! amplitude-modulated noise, click trains and repeated down-chirps, each
//! with randomized parameters over a faint noise floor.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{normalize, write_wav, AudioClip, AudioError, TARGET_SAMPLE_RATE};

pub const CLASS_NAMES: [&str; 4] = ["sweep", "am_noise", "clicks", "chirps"];

/// Long enough for 136 STFT frames, i.e. exactly one 128-frame segment.
pub const DEFAULT_DURATION_S: f64 = 1.6;

const NOISE_FLOOR: f64 = 0.01;

/// Renders one clip of the given class; parameters are drawn from `rng`.
pub fn render<R: Rng>(class: usize, duration_s: f64, rng: &mut R) -> Vec<f64> {
    let sr = TARGET_SAMPLE_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    let t = |i: usize| i as f64 / sr;
    let mut x: Vec<f64> = match class {
        0 => {
            // exponential sweep from f0 to f1
            let (f0, f1): (f64, f64) = (rng.gen_range(300.0..600.0), rng.gen_range(2000.0..4000.0));
            let k = (f1 / f0).ln() / duration_s;
            (0..n)
                .map(|i| (2.0 * PI * f0 * ((k * t(i)).exp() - 1.0) / k).sin())
                .collect()
        }
        1 => {
            let fm = rng.gen_range(3.0..8.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| {
                    let env = 0.5 * (1.0 + 0.9 * (2.0 * PI * fm * t(i) + phase).sin());
                    env * rng.sample::<f64, _>(StandardNormal) * 0.3
                })
                .collect()
        }
        2 => {
            // decaying 2 ms bursts at a jittered rate
            let rate = rng.gen_range(8.0..15.0);
            let carrier = rng.gen_range(1500.0..3000.0);
            let mut x = vec![0.0; n];
            let mut onset = rng.gen_range(0.0..1.0 / rate);
            while onset < duration_s {
                let start = (onset * sr) as usize;
                for (j, v) in x.iter_mut().skip(start).take((0.01 * sr) as usize).enumerate() {
                    let tj = j as f64 / sr;
                    *v += (-tj / 0.002).exp() * (2.0 * PI * carrier * tj).sin();
                }
                onset += (1.0 / rate) * rng.gen_range(0.8..1.2);
            }
            x
        }
        3 => {
            // 100 ms linear down-chirps every ~200 ms
            let (hi, lo) = (rng.gen_range(3000.0..5000.0), rng.gen_range(500.0..1000.0));
            let period = rng.gen_range(0.18..0.25);
            let len = 0.1;
            (0..n)
                .map(|i| {
                    let tau = t(i) % period;
                    if tau < len {
                        let phase = 2.0 * PI * (hi * tau - (hi - lo) * tau * tau / (2.0 * len));
                        phase.sin() * (PI * tau / len).sin()
                    } else {
                        0.0
                    }
                })
                .collect()
        }
        _ => panic!("synthetic class {class} out of range"),
    };
    let gain = rng.gen_range(0.5..1.0);
    for v in &mut x {
        *v = gain * *v + NOISE_FLOOR * rng.sample::<f64, _>(StandardNormal);
    }
    x
}

/// One generated clip with its class and fold.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub clip: AudioClip,
    pub class: usize,
    pub fold: usize,
}

/// `per_class` clips of every class, spread round-robin over `folds`
/// folds so each fold is class-balanced when `folds` divides `per_class`.
pub fn generate(per_class: usize, folds: usize, duration_s: f64, seed: u64) -> Vec<SynthClip> {
    assert!(folds >= 1);
    let mut out = Vec::with_capacity(per_class * CLASS_NAMES.len());
    for (class, name) in CLASS_NAMES.iter().enumerate() {
        for k in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 32 | k as u64));
            let samples = render(class, duration_s, &mut rng);
            let clip = normalize(&AudioClip::new(samples, TARGET_SAMPLE_RATE, format!("{name}_{k:03}")));
            out.push(SynthClip {
                clip,
                class,
                fold: k % folds + 1,
            });
        }
    }
    out
}

/// Writes each clip as `<id>.wav` under `dir` plus a `manifest.csv` with
/// header `path,label,fold`; returns the manifest path.
pub fn write_dataset(dir: &Path, clips: &[SynthClip]) -> Result<PathBuf, AudioError> {
    fs::create_dir_all(dir)?;
    let manifest = dir.join("manifest.csv");
    let mut m = fs::File::create(&manifest)?;
    writeln!(m, "path,label,fold")?;
    for c in clips {
        let name = format!("{}.wav", c.clip.source_id);
        write_wav(&dir.join(&name), &c.clip)?;
        writeln!(m, "{name},{},{}", CLASS_NAMES[c.class], c.fold)?;
    }
    Ok(manifest)
}
