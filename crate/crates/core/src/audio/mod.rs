//! Mono audio clips: WAV loading, peak normalization, resampling and the
//! two deformations used for data augmentation.

mod resample;
mod vocoder;

use std::path::Path;

use thiserror::Error;

pub use resample::{resample, resample_by_ratio, SINC_TAPS};
pub use vocoder::{pitch_shift, time_stretch, VOCODER_HOP, VOCODER_WINDOW};

/// Rate every feature pipeline works at.
pub const TARGET_SAMPLE_RATE: u32 = 44_100;

/// Offline augmentation grid: four stretch rates and four pitch shifts.
pub const STRETCH_RATES: [f64; 4] = [0.81, 0.93, 1.07, 1.23];
pub const PITCH_SHIFTS: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV file: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("audio contains no frames")]
    EmptyAudio,
    #[error("invalid deformation: {0}")]
    InvalidDeform(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        AudioClip {
            samples,
            sample_rate,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        AudioClip {
            samples,
            sample_rate: self.sample_rate,
            source_id: self.source_id.clone(),
        }
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV with one or two channels; stereo
/// is averaged to mono. The clip id is the file stem.
pub fn load_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(AudioError::UnsupportedEncoding(format!("{} channels", spec.channels)));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!("{bits}-bit {format:?}")));
        }
    };
    let samples: Vec<f64> = if spec.channels == 2 {
        interleaved.chunks_exact(2).map(|lr| (lr[0] + lr[1]) / 2.0).collect()
    } else {
        interleaved
    };
    if samples.is_empty() {
        return Err(AudioError::EmptyAudio);
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(AudioClip::new(samples, spec.sample_rate, id))
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in &clip.samples {
        writer.write_sample(s as f32).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::IoError(io) => AudioError::Io(io),
        hound::Error::FormatError(msg) => AudioError::MalformedWav(msg.to_string()),
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("format not supported".into()),
        other => AudioError::MalformedWav(other.to_string()),
    }
}

/// Peak normalization to [-1, 1]. Silence is returned unchanged, and a
/// normalized clip maps to itself bit for bit.
pub fn normalize(clip: &AudioClip) -> AudioClip {
    let peak = clip.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return clip.clone();
    }
    clip.with_samples(clip.samples.iter().map(|v| v / peak).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeformSpec {
    TimeStretch { rate: f64 },
    PitchShift { semitones: f64 },
}

impl DeformSpec {
    pub fn validate(&self) -> Result<(), AudioError> {
        match *self {
            DeformSpec::TimeStretch { rate } if !(0.5..=2.0).contains(&rate) => Err(AudioError::InvalidDeform(
                format!("stretch rate {rate} outside [0.5, 2]"),
            )),
            DeformSpec::PitchShift { semitones } if !(semitones.is_finite() && semitones.abs() <= 12.0) => Err(
                AudioError::InvalidDeform(format!("pitch shift {semitones} beyond 12 semitones")),
            ),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, clip: &AudioClip) -> Result<AudioClip, AudioError> {
        self.validate()?;
        Ok(match *self {
            DeformSpec::TimeStretch { rate } => time_stretch(clip, rate),
            DeformSpec::PitchShift { semitones } => pitch_shift(clip, semitones),
        })
    }

    /// Short stable tag used to name derived clips, e.g. `ts1.07`, `ps-2`.
    pub fn tag(&self) -> String {
        match *self {
            DeformSpec::TimeStretch { rate } => format!("ts{rate}"),
            DeformSpec::PitchShift { semitones } => format!("ps{semitones}"),
        }
    }

    /// The eight deformations of the offline augmentation grid.
    pub fn augmentation_grid() -> Vec<DeformSpec> {
        STRETCH_RATES
            .iter()
            .map(|&rate| DeformSpec::TimeStretch { rate })
            .chain(
                PITCH_SHIFTS
                    .iter()
                    .map(|&semitones| DeformSpec::PitchShift { semitones }),
            )
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use std::f64::consts::PI;

    pub fn sine(freq: f64, sr: u32, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| (2.0 * PI * freq * n as f64 / sr as f64).sin())
            .collect()
    }

    /// Bin of the largest O(N^2) DFT magnitude over `0..=N/2`, with a Hann
    /// taper so leakage cannot move the peak.
    pub fn dft_peak_bin(x: &[f64]) -> usize {
        let n = x.len();
        let tapered: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
            .collect();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in tapered.iter().enumerate() {
                    let ang = -2.0 * PI * ((k * i) % n) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (k, re * re + im * im)
            })
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    /// Peak frequency in Hz of a centered `n`-sample window of `x`.
    pub fn peak_hz(x: &[f64], sr: u32, n: usize) -> (f64, f64) {
        let start = (x.len() - n) / 2;
        let bin = dft_peak_bin(&x[start..start + n]);
        let bin_hz = sr as f64 / n as f64;
        (bin as f64 * bin_hz, bin_hz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 44_100, "t")
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&clip(vec![0.1, -0.5])).samples, vec![0.2, -1.0]);
        assert_eq!(normalize(&clip(vec![0.0; 3])).samples, vec![0.0; 3]);
        assert_eq!(normalize(&clip(vec![0.25])).samples, vec![1.0]);
    }

    #[test]
    fn normalize_is_idempotent_and_hits_unit_peak() {
        let c = clip(vec![0.3, -0.7, 0.123456789, 0.69999]);
        let once = normalize(&c);
        assert_eq!(once.samples.iter().fold(0.0f64, |m, v| m.max(v.abs())), 1.0);
        assert_eq!(normalize(&once), once);
    }

    fn write_pcm16(path: &Path, channels: u16, frames: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in frames {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_scaling_and_stereo_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let mono = dir.path().join("mono.wav");
        write_pcm16(&mono, 1, &[16384; 10]);
        let c = load_wav(&mono).unwrap();
        assert_eq!(c.samples, vec![0.5; 10]);
        assert_eq!(c.source_id, "mono");

        let stereo = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44_100,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0.2f32).unwrap();
        w.write_sample(0.6f32).unwrap();
        w.finalize().unwrap();
        let c = load_wav(&stereo).unwrap();
        assert!((c.samples[0] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn five_seconds_at_44k() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("long.wav");
        write_wav(&p, &clip(vec![0.0; 5 * 44_100])).unwrap();
        assert_eq!(load_wav(&p).unwrap().len(), 220_500);
    }

    #[test]
    fn wav_errors() {
        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.wav");
        std::fs::write(&junk, b"definitely not a riff header").unwrap();
        assert!(matches!(load_wav(&junk), Err(AudioError::MalformedWav(_))));

        let empty = dir.path().join("empty.wav");
        write_pcm16(&empty, 1, &[]);
        assert!(matches!(load_wav(&empty), Err(AudioError::EmptyAudio)));

        let deep = dir.path().join("deep.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&deep, spec).unwrap();
        w.write_sample(1000i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&deep), Err(AudioError::UnsupportedEncoding(_))));
    }

    #[test]
    fn deform_bounds() {
        assert!(DeformSpec::TimeStretch { rate: 0.4 }.validate().is_err());
        assert!(DeformSpec::TimeStretch { rate: 2.0 }.validate().is_ok());
        assert!(DeformSpec::PitchShift { semitones: -12.5 }.validate().is_err());
        assert!(DeformSpec::PitchShift { semitones: f64::NAN }.validate().is_err());
        assert_eq!(DeformSpec::augmentation_grid().len(), 8);
    }
}
