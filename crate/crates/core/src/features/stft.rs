use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::FeatureError;

/// Squared-magnitude spectrogram, row-major `(bins, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }
}

/// Periodic Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn stft_frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Hamming-windowed short-time power spectrum without centering: frame `t`
/// covers samples `[t * hop, t * hop + window)`, and bins run `0..=window/2`.
pub fn stft_power(samples: &[f64], window: usize, hop: usize) -> Result<PowerSpectrogram, FeatureError> {
    if samples.len() < window {
        return Err(FeatureError::ClipTooShort {
            samples: samples.len(),
            needed: window,
        });
    }
    let frames = stft_frame_count(samples.len(), window, hop);
    let bins = window / 2 + 1;
    let w = hamming(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let mut values = vec![0.0; bins * frames];
    for t in 0..frames {
        let start = t * hop;
        for (b, (s, w)) in buf.iter_mut().zip(samples[start..start + window].iter().zip(&w)) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf[..bins].iter().enumerate() {
            values[k * frames + t] = c.norm_sqr();
        }
    }
    Ok(PowerSpectrogram { bins, frames, values })
}
