use num_traits::Float;

use super::{FeatureError, FilterKind, Filterbank, PowerSpectrogram};
use crate::nn::matmul;

/// Floor added before the logarithm so silent bins stay finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// Frames whose mean band power sits at or below this are digital silence
/// and are dropped regardless of the relative threshold.
pub const SILENCE_POWER_FLOOR: f64 = 10.0 * LOG_FLOOR;

pub const DELTA_HALF_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BandType {
    LogMel,
    LogGammatone,
}

impl BandType {
    pub fn tag(self) -> u8 {
        match self {
            BandType::LogMel => 0,
            BandType::LogGammatone => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(BandType::LogMel),
            1 => Some(BandType::LogGammatone),
            _ => None,
        }
    }
}

impl std::fmt::Display for BandType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BandType::LogMel => "mel",
            BandType::LogGammatone => "gt",
        })
    }
}

impl std::str::FromStr for BandType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mel" => Ok(BandType::LogMel),
            "gt" => Ok(BandType::LogGammatone),
            other => Err(format!("unknown feature kind `{other}` (expected mel or gt)")),
        }
    }
}

/// Log band energies, row-major `(bands, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bands: usize,
    pub frames: usize,
    pub values: Vec<f32>,
    pub band_type: BandType,
    pub frame_hop_s: f64,
}

impl Spectrogram {
    pub fn at(&self, band: usize, frame: usize) -> f32 {
        self.values[band * self.frames + frame]
    }

    /// Keeps the listed frames, in the given order.
    pub fn select_frames(&self, keep: &[usize]) -> Spectrogram {
        let mut values = Vec::with_capacity(self.bands * keep.len());
        for b in 0..self.bands {
            let row = &self.values[b * self.frames..(b + 1) * self.frames];
            values.extend(keep.iter().map(|&t| row[t]));
        }
        Spectrogram {
            bands: self.bands,
            frames: keep.len(),
            values,
            band_type: self.band_type,
            frame_hop_s: self.frame_hop_s,
        }
    }

    /// Mean band power of each frame in dB.
    pub fn frame_energy_db(&self) -> Vec<f64> {
        (0..self.frames)
            .map(|t| 10.0 * self.frame_mean_power(t).log10())
            .collect()
    }

    fn frame_mean_power(&self, t: usize) -> f64 {
        let sum: f64 = (0..self.bands).map(|b| 10f64.powf(self.at(b, t) as f64)).sum();
        sum / self.bands as f64
    }
}

/// `log10(W P + eps)` per band and frame.
pub fn apply_filterbank_log(
    power: &PowerSpectrogram,
    fb: &Filterbank,
    frame_hop_s: f64,
) -> Result<Spectrogram, FeatureError> {
    if power.bins != fb.bins {
        return Err(FeatureError::ShapeMismatch {
            expected: fb.bins,
            found: power.bins,
        });
    }
    let mut energy = vec![0.0f64; fb.bands * power.frames];
    matmul(
        fb.bands,
        fb.bins,
        power.frames,
        &fb.weights,
        false,
        &power.values,
        false,
        &mut energy,
        false,
    );
    Ok(Spectrogram {
        bands: fb.bands,
        frames: power.frames,
        values: energy.iter().map(|&e| (e + LOG_FLOOR).log10() as f32).collect(),
        band_type: match fb.kind {
            FilterKind::Mel => BandType::LogMel,
            FilterKind::Gammatone => BandType::LogGammatone,
        },
        frame_hop_s,
    })
}

/// Removes frames more than `threshold_db` below the loudest frame, as well
/// as frames of pure digital silence. At least the loudest frame survives.
pub fn drop_silence(spec: &Spectrogram, threshold_db: f64) -> Spectrogram {
    if spec.frames == 0 {
        return spec.clone();
    }
    let power: Vec<f64> = (0..spec.frames).map(|t| spec.frame_mean_power(t)).collect();
    let db: Vec<f64> = power.iter().map(|p| 10.0 * p.log10()).collect();
    let loudest = (0..spec.frames).fold(0, |best, t| if db[t] > db[best] { t } else { best });
    let keep: Vec<usize> = (0..spec.frames)
        .filter(|&t| db[t] >= db[loudest] - threshold_db && power[t] > SILENCE_POWER_FLOOR)
        .collect();
    if keep.is_empty() {
        spec.select_frames(&[loudest])
    } else if keep.len() == spec.frames {
        spec.clone()
    } else {
        spec.select_frames(&keep)
    }
}

/// Start frame of each window of `length` frames with the given fractional
/// overlap; shorter inputs yield a single (tiled) window.
pub fn segment_starts(frames: usize, length: usize, overlap: f64) -> Vec<usize> {
    let hop = segment_hop(length, overlap);
    if frames < length {
        return vec![0];
    }
    (0..=(frames - length) / hop).map(|i| i * hop).collect()
}

fn segment_hop(length: usize, overlap: f64) -> usize {
    ((length as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Cuts `(bands, length)` windows out of the spectrogram. A spectrogram
/// shorter than `length` is repeated end to end and cropped, which avoids
/// padding with artificial silence.
pub fn segment(spec: &Spectrogram, length: usize, overlap: f64) -> Vec<Vec<f32>> {
    if spec.frames == 0 {
        return Vec::new();
    }
    segment_starts(spec.frames, length, overlap)
        .into_iter()
        .map(|start| {
            let mut seg = Vec::with_capacity(spec.bands * length);
            for b in 0..spec.bands {
                let row = &spec.values[b * spec.frames..(b + 1) * spec.frames];
                seg.extend((0..length).map(|i| row[(start + i) % spec.frames]));
            }
            seg
        })
        .collect()
}

/// Regression delta over a 9-frame window on `(bands, frames)` data:
/// `d[t] = sum_k k (x[t+k] - x[t-k]) / (2 sum_k k^2)` with edge frames
/// replicated.
pub fn delta<F: Float>(x: &[F], bands: usize, frames: usize) -> Result<Vec<F>, FeatureError> {
    let need = 2 * DELTA_HALF_WIDTH + 1;
    if frames < need {
        return Err(FeatureError::TooFewFrames { frames, needed: need });
    }
    if x.len() != bands * frames {
        return Err(FeatureError::ShapeMismatch {
            expected: bands * frames,
            found: x.len(),
        });
    }
    let n = DELTA_HALF_WIDTH as isize;
    let denom = F::from(2 * (1..=n).map(|k| k * k).sum::<isize>()).unwrap();
    let last = frames as isize - 1;
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(frames) {
        for t in 0..frames as isize {
            let mut acc = F::zero();
            for k in 1..=n {
                let ahead = row[(t + k).min(last) as usize];
                let behind = row[(t - k).max(0) as usize];
                acc = acc + F::from(k).unwrap() * (ahead - behind);
            }
            out.push(acc / denom);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::mel_filterbank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_from(bands: usize, frames: usize, f: impl Fn(usize, usize) -> f32) -> Spectrogram {
        let mut values = Vec::new();
        for b in 0..bands {
            values.extend((0..frames).map(|t| f(b, t)));
        }
        Spectrogram {
            bands,
            frames,
            values,
            band_type: BandType::LogMel,
            frame_hop_s: 512.0 / 44_100.0,
        }
    }

    #[test]
    fn log_of_zero_power_is_floor() {
        let fb = mel_filterbank(128, 44_100, 1024);
        let p = PowerSpectrogram {
            bins: 513,
            frames: 3,
            values: vec![0.0; 513 * 3],
        };
        let s = apply_filterbank_log(&p, &fb, 0.01).unwrap();
        assert!(s.values.iter().all(|&v| v == -10.0));
    }

    #[test]
    fn single_bin_filter_with_unit_power() {
        let mut fb = mel_filterbank(2, 44_100, 1024);
        fb.weights.fill(0.0);
        fb.weights[5] = 1.0;
        fb.weights[513 + 9] = 1.0;
        let p = PowerSpectrogram {
            bins: 513,
            frames: 1,
            values: vec![1.0; 513],
        };
        let s = apply_filterbank_log(&p, &fb, 0.01).unwrap();
        assert!(s.values.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn doubling_power_adds_log2() {
        let fb = mel_filterbank(128, 44_100, 1024);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..513 * 4).map(|_| rng.gen_range(1.0..100.0)).collect();
        let p = PowerSpectrogram {
            bins: 513,
            frames: 4,
            values,
        };
        let doubled = PowerSpectrogram {
            values: p.values.iter().map(|v| 2.0 * v).collect(),
            ..p.clone()
        };
        let a = apply_filterbank_log(&p, &fb, 0.01).unwrap();
        let b = apply_filterbank_log(&doubled, &fb, 0.01).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(((y - x) as f64 - 2f64.log10()).abs() < 1e-5);
        }
    }

    #[test]
    fn filterbank_shape_checked() {
        let fb = mel_filterbank(128, 44_100, 1024);
        let p = PowerSpectrogram {
            bins: 257,
            frames: 1,
            values: vec![0.0; 257],
        };
        assert!(matches!(
            apply_filterbank_log(&p, &fb, 0.01),
            Err(FeatureError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn uniform_energy_survives() {
        let s = spec_from(8, 20, |_, _| 1.5);
        assert_eq!(drop_silence(&s, 60.0), s);
    }

    #[test]
    fn quiet_frames_dropped() {
        // 100 loud frames then 50 frames 80 dB (8 decades) down
        let s = spec_from(4, 150, |_, t| if t < 100 { 2.0 } else { -6.0 });
        let d = drop_silence(&s, 60.0);
        assert_eq!(d.frames, 100);
        assert!(d.values.iter().all(|&v| v == 2.0));
        // a generous threshold keeps them
        assert_eq!(drop_silence(&s, 90.0).frames, 150);
    }

    #[test]
    fn all_silent_keeps_one_frame() {
        let s = spec_from(4, 30, |_, _| -10.0);
        assert_eq!(drop_silence(&s, 60.0).frames, 1);
    }

    #[test]
    fn segment_counts_and_boundaries() {
        assert_eq!(segment_starts(431, 128, 0.5).len(), 5);
        assert_eq!(segment_starts(128, 128, 0.5), vec![0]);
        assert_eq!(segment_starts(429, 128, 0.5), vec![0, 64, 128, 192, 256]);

        let s = spec_from(2, 300, |b, t| (b * 1000 + t) as f32);
        let segs = segment(&s, 128, 0.5);
        assert_eq!(segs.len(), 3);
        for (i, seg) in segs.iter().enumerate() {
            assert_eq!(seg[0], (64 * i) as f32);
            assert_eq!(seg[128], (1000 + 64 * i) as f32);
        }
        // neighbours share 64 frames
        assert_eq!(&segs[0][64..128], &segs[1][0..64]);
    }

    #[test]
    fn short_spectrogram_is_tiled() {
        let s = spec_from(1, 100, |_, t| t as f32);
        let segs = segment(&s, 128, 0.5);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), 128);
        assert_eq!(segs[0][99], 99.0);
        assert_eq!(segs[0][100], 0.0);
        assert_eq!(segs[0][127], 27.0);
    }

    #[test]
    fn delta_of_constant_and_ramp() {
        let c = vec![3.25f32; 2 * 20];
        assert!(delta(&c, 2, 20).unwrap().iter().all(|&v| v == 0.0));
        let ramp: Vec<f64> = (0..20).map(|t| t as f64).collect();
        let d = delta(&ramp, 1, 20).unwrap();
        for v in &d[4..16] {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (bands, frames) = (128, 128);
        let x: Vec<f64> = (0..bands * frames).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let d = delta(&x, bands, frames).unwrap();
        let at = |b: usize, t: isize| x[b * frames + t.clamp(0, frames as isize - 1) as usize];
        for b in 0..bands {
            for t in 0..frames as isize {
                let num: f64 = (1..=4).map(|k| k as f64 * (at(b, t + k) - at(b, t - k))).sum();
                let want = num / 60.0;
                assert!((d[b * frames + t as usize] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_needs_nine_frames() {
        assert!(matches!(
            delta(&[0.0f32; 8], 1, 8),
            Err(FeatureError::TooFewFrames { .. })
        ));
    }
}
