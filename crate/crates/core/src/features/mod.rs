//! Two-channel log-spectrogram features: STFT, mel or gammatone bands, log
//! scaling, silence dropping, 128-frame segments and their deltas.

mod escf;
mod filterbank;
mod spectrogram;
mod stft;

use thiserror::Error;

use crate::audio::{resample, AudioClip, TARGET_SAMPLE_RATE};

pub use escf::{read_escf, read_escf_file, write_escf, write_escf_file, ESCF_MAGIC, ESCF_VERSION};
pub use filterbank::{
    erb, erb_rate_to_hz, gammatone_filterbank, hz_to_erb_rate, hz_to_mel, mel_filterbank, mel_to_hz, FilterKind,
    Filterbank,
};
pub use spectrogram::{
    apply_filterbank_log, delta, drop_silence, segment, segment_starts, BandType, Spectrogram, DELTA_HALF_WIDTH,
    LOG_FLOOR, SILENCE_POWER_FLOOR,
};
pub use stft::{hamming, stft_frame_count, stft_power, PowerSpectrogram};

pub const N_FFT: usize = 1024;
pub const HOP: usize = 512;
pub const N_BANDS: usize = 128;
pub const SEGMENT_FRAMES: usize = 128;
pub const SEGMENT_OVERLAP: f64 = 0.5;
pub const DEFAULT_SILENCE_DB: f64 = 60.0;
pub const CHANNELS: usize = 2;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip has {samples} samples, at least {needed} required")]
    ClipTooShort { samples: usize, needed: usize },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("{frames} frames is fewer than the {needed} a delta needs")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("malformed feature file: {0}")]
    MalformedEscf(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One network input: `(bands, frames, channels)` with channel 0 the log
/// spectrogram and channel 1 its delta, channel-minor in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub values: Vec<f32>,
    pub clip_id: String,
    pub segment_index: usize,
}

impl FeatureTensor {
    pub const SHAPE: [usize; 3] = [N_BANDS, SEGMENT_FRAMES, CHANNELS];

    /// Interleaves a spectrogram segment with its delta.
    pub fn from_segment(segment: &[f32], clip_id: &str, segment_index: usize) -> Result<Self, FeatureError> {
        let n = N_BANDS * SEGMENT_FRAMES;
        if segment.len() != n {
            return Err(FeatureError::ShapeMismatch {
                expected: n,
                found: segment.len(),
            });
        }
        let d = delta(segment, N_BANDS, SEGMENT_FRAMES)?;
        let mut values = Vec::with_capacity(2 * n);
        for (s, d) in segment.iter().zip(&d) {
            values.push(*s);
            values.push(*d);
        }
        Ok(FeatureTensor {
            values,
            clip_id: clip_id.to_string(),
            segment_index,
        })
    }

    /// One channel as a `(bands, frames)` array.
    pub fn channel(&self, c: usize) -> Vec<f32> {
        self.values.iter().skip(c).step_by(CHANNELS).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub band_type: BandType,
    pub silence_db: f64,
    pub segment_frames: usize,
    pub overlap: f64,
}

impl FeatureConfig {
    pub fn new(band_type: BandType) -> Self {
        FeatureConfig {
            band_type,
            silence_db: DEFAULT_SILENCE_DB,
            segment_frames: SEGMENT_FRAMES,
            overlap: SEGMENT_OVERLAP,
        }
    }
}

/// Feature extractor with its filterbank built once.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub config: FeatureConfig,
    filterbank: Filterbank,
}

impl Featurizer {
    pub fn new(config: FeatureConfig) -> Self {
        let filterbank = match config.band_type {
            BandType::LogMel => mel_filterbank(N_BANDS, TARGET_SAMPLE_RATE, N_FFT),
            BandType::LogGammatone => gammatone_filterbank(N_BANDS, TARGET_SAMPLE_RATE, N_FFT),
        };
        Featurizer { config, filterbank }
    }

    pub fn filterbank(&self) -> &Filterbank {
        &self.filterbank
    }

    /// Full-length log spectrogram, before silence dropping. Clips at other
    /// rates are resampled to 44.1 kHz first.
    pub fn spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram, FeatureError> {
        let clip = resample(clip, TARGET_SAMPLE_RATE);
        let power = stft_power(&clip.samples, N_FFT, HOP)?;
        apply_filterbank_log(&power, &self.filterbank, HOP as f64 / TARGET_SAMPLE_RATE as f64)
    }

    /// Silence drop, segmentation and deltas on a stored spectrogram.
    pub fn tensors(&self, spec: &Spectrogram, clip_id: &str) -> Result<Vec<FeatureTensor>, FeatureError> {
        if spec.bands != N_BANDS {
            return Err(FeatureError::ShapeMismatch {
                expected: N_BANDS,
                found: spec.bands,
            });
        }
        let kept = drop_silence(spec, self.config.silence_db);
        segment(&kept, self.config.segment_frames, self.config.overlap)
            .iter()
            .enumerate()
            .map(|(i, seg)| FeatureTensor::from_segment(seg, clip_id, i))
            .collect()
    }

    pub fn featurize(&self, clip: &AudioClip) -> Result<Vec<FeatureTensor>, FeatureError> {
        let spec = self.spectrogram(clip)?;
        self.tensors(&spec, &clip.source_id)
    }
}

/// One-shot convenience wrapper around [`Featurizer`].
pub fn featurize(clip: &AudioClip, band_type: BandType) -> Result<Vec<FeatureTensor>, FeatureError> {
    Featurizer::new(FeatureConfig::new(band_type)).featurize(clip)
}

/// Per-channel standardization statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats {
        mean: [0.0; CHANNELS],
        std: [1.0; CHANNELS],
    };

    /// Population mean and standard deviation of each channel over all
    /// given tensors. A constant channel gets std 1 so it maps to zero.
    pub fn fit<'a>(tensors: impl IntoIterator<Item = &'a FeatureTensor>) -> ChannelStats {
        let mut sum = [0.0f64; CHANNELS];
        let mut sq = [0.0f64; CHANNELS];
        let mut count = 0usize;
        let tensors: Vec<&FeatureTensor> = tensors.into_iter().collect();
        for t in &tensors {
            for px in t.values.chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    sum[c] += px[c] as f64;
                }
            }
            count += t.values.len() / CHANNELS;
        }
        if count == 0 {
            return ChannelStats::IDENTITY;
        }
        let mean = sum.map(|s| s / count as f64);
        for t in &tensors {
            for px in t.values.chunks_exact(CHANNELS) {
                for c in 0..CHANNELS {
                    let d = px[c] as f64 - mean[c];
                    sq[c] += d * d;
                }
            }
        }
        let std = sq.map(|s| {
            let sd = (s / count as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        });
        ChannelStats { mean, std }
    }

    pub fn apply(&self, t: &mut FeatureTensor) {
        let scale = self.std.map(|s| (1.0 / s) as f32);
        let shift = self.mean.map(|m| m as f32);
        for px in t.values.chunks_exact_mut(CHANNELS) {
            for c in 0..CHANNELS {
                px[c] = (px[c] - shift[c]) * scale[c];
            }
        }
    }

    /// `mean0 mean1 std0 std1` in shortest round-trip decimal form.
    pub fn to_text(&self) -> String {
        format!("{} {} {} {}\n", self.mean[0], self.mean[1], self.std[0], self.std[1])
    }

    pub fn from_text(text: &str) -> Option<ChannelStats> {
        let v: Vec<f64> = text.split_whitespace().map(str::parse).collect::<Result<_, _>>().ok()?;
        match v[..] {
            [m0, m1, s0, s1] if s0 > 0.0 && s1 > 0.0 => Some(ChannelStats {
                mean: [m0, m1],
                std: [s0, s1],
            }),
            _ => None,
        }
    }
}
