use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{resample_by_ratio, AudioClip};

pub const VOCODER_WINDOW: usize = 2048;
pub const VOCODER_HOP: usize = 512;

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Centered STFT (zero padding of half a window on both sides), one row of
/// `n/2 + 1` bins per frame.
fn analyze(x: &[f64], window: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Vec<Complex<f64>>> {
    let n = window.len();
    let half = n / 2;
    let mut padded = vec![0.0; x.len() + n];
    padded[half..half + x.len()].copy_from_slice(x);
    let frames = 1 + (padded.len() - n) / VOCODER_HOP;
    let fft = planner.plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    (0..frames)
        .map(|f| {
            let start = f * VOCODER_HOP;
            for (b, (s, w)) in buf.iter_mut().zip(padded[start..start + n].iter().zip(window)) {
                *b = Complex::new(s * w, 0.0);
            }
            fft.process(&mut buf);
            buf[..=half].to_vec()
        })
        .collect()
}

/// Overlap-add inverse of [`analyze`], normalized by the summed squared
/// window, trimmed to `len` samples.
fn synthesize(frames: &[Vec<Complex<f64>>], window: &[f64], len: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = window.len();
    let half = n / 2;
    let total = n + VOCODER_HOP * frames.len().saturating_sub(1);
    let mut out = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let ifft = planner.plan_fft_inverse(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (f, spec) in frames.iter().enumerate() {
        buf[..=half].copy_from_slice(spec);
        for k in 1..half {
            buf[n - k] = spec[k].conj();
        }
        ifft.process(&mut buf);
        let start = f * VOCODER_HOP;
        for (i, (b, w)) in buf.iter().zip(window).enumerate() {
            out[start + i] += b.re / n as f64 * w;
            norm[start + i] += w * w;
        }
    }
    (0..len)
        .map(|i| match (out.get(i + half), norm.get(i + half)) {
            (Some(&v), Some(&w)) if w > 1e-10 => v / w,
            _ => 0.0,
        })
        .collect()
}

fn wrap_phase(p: f64) -> f64 {
    p - 2.0 * PI * ((p + PI) / (2.0 * PI)).floor()
}

/// For each bin, the index of the nearest local magnitude peak.
fn peak_regions(mag: &[f64]) -> Vec<usize> {
    let n = mag.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&k| (k == 0 || mag[k] > mag[k - 1]) && (k + 1 == n || mag[k] >= mag[k + 1]))
        .collect();
    if peaks.is_empty() {
        // only reachable with NaN magnitudes
        peaks.push(0);
    }
    let mut owner = vec![0; n];
    let mut j = 0;
    for (k, o) in owner.iter_mut().enumerate() {
        // advance while the next peak is strictly closer
        while j + 1 < peaks.len() && peaks[j + 1].abs_diff(k) < peaks[j].abs_diff(k) {
            j += 1;
        }
        *o = peaks[j];
    }
    owner
}

/// Phase-vocoder time stretch: output lasts `len / rate` samples at the
/// same pitch. Peak bins advance by their instantaneous frequency and the
/// other bins keep their analysis phase offset to the governing peak
/// (identity phase locking).
pub fn time_stretch(clip: &AudioClip, rate: f64) -> AudioClip {
    assert!(rate > 0.0 && rate.is_finite(), "stretch rate must be positive");
    let out_len = (clip.len() as f64 / rate).round() as usize;
    let window = hann(VOCODER_WINDOW);
    let mut planner = FftPlanner::new();
    let spec = analyze(&clip.samples, &window, &mut planner);
    let bins = VOCODER_WINDOW / 2 + 1;
    let zero_frame = vec![Complex::new(0.0, 0.0); bins];
    let expected_advance: Vec<f64> = (0..bins)
        .map(|k| 2.0 * PI * k as f64 * VOCODER_HOP as f64 / VOCODER_WINDOW as f64)
        .collect();

    let steps = (spec.len() as f64 / rate).ceil() as usize;
    let mut acc: Vec<f64> = spec[0].iter().map(|c| c.arg()).collect();
    let mut out_frames = Vec::with_capacity(steps);
    let mut mag = vec![0.0; bins];
    let mut phase = vec![0.0; bins];
    for step in 0..steps {
        let t = step as f64 * rate;
        let i = (t.floor() as usize).min(spec.len() - 1);
        let alpha = t - i as f64;
        let (cur, next) = (&spec[i], spec.get(i + 1).unwrap_or(&zero_frame));
        for k in 0..bins {
            mag[k] = (1.0 - alpha) * cur[k].norm() + alpha * next[k].norm();
        }
        let owner = peak_regions(&mag);
        for k in 0..bins {
            let p = owner[k];
            phase[k] = acc[p] + cur[k].arg() - cur[p].arg();
        }
        out_frames.push(
            (0..bins)
                .map(|k| Complex::from_polar(mag[k], phase[k]))
                .collect::<Vec<_>>(),
        );
        for k in 0..bins {
            let dev = wrap_phase(next[k].arg() - cur[k].arg() - expected_advance[k]);
            acc[k] = phase[k] + expected_advance[k] + dev;
        }
    }
    AudioClip {
        samples: synthesize(&out_frames, &window, out_len, &mut planner),
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    }
}

/// Shifts pitch by `semitones` at constant duration: stretch to
/// `2^(s/12)` times the length, then resample by the inverse factor.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> AudioClip {
    let rate = 2f64.powf(-semitones / 12.0);
    let stretched = time_stretch(clip, rate);
    let mut samples = resample_by_ratio(&stretched.samples, rate);
    samples.resize(clip.len(), 0.0);
    AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::{peak_hz, sine};
    use super::*;

    const SR: u32 = 44_100;

    fn tone(freq: f64, seconds: f64) -> AudioClip {
        AudioClip::new(sine(freq, SR, (seconds * SR as f64) as usize), SR, "tone")
    }

    #[test]
    fn analysis_synthesis_round_trip() {
        let x = tone(700.0, 0.3).samples;
        let w = hann(VOCODER_WINDOW);
        let mut planner = FftPlanner::new();
        let y = synthesize(&analyze(&x, &w, &mut planner), &w, x.len(), &mut planner);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_rate_reconstructs_input() {
        let c = tone(440.0, 0.5);
        let y = time_stretch(&c, 1.0);
        assert_eq!(y.len(), c.len());
        let err = c
            .samples
            .iter()
            .zip(&y.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "max error {err}");
    }

    #[test]
    fn durations_follow_rate() {
        let c = tone(440.0, 4.0);
        for rate in [0.5, 0.81, 1.23, 2.0] {
            let y = time_stretch(&c, rate);
            let ratio_err = (y.len() as f64 * rate - c.len() as f64).abs();
            assert!(ratio_err <= VOCODER_HOP as f64, "rate {rate}");
        }
        assert!((time_stretch(&c, 2.0).duration_s() - 2.0).abs() < 1e-3);
    }

    #[test]
    fn stretch_preserves_pitch() {
        let y = time_stretch(&tone(440.0, 1.0), 1.23);
        let (hz, bin) = peak_hz(&y.samples, SR, 4096);
        assert!((hz - 440.0).abs() <= bin, "peak at {hz}");
    }

    #[test]
    fn octave_shifts() {
        let c = tone(440.0, 1.0);
        for (s, want) in [(12.0, 880.0), (-12.0, 220.0), (0.0, 440.0)] {
            let y = pitch_shift(&c, s);
            assert_eq!(y.len(), c.len());
            let (hz, bin) = peak_hz(&y.samples, SR, 4096);
            assert!((hz - want).abs() <= bin, "{s} semitones: peak at {hz}");
        }
    }

    #[test]
    fn nearest_peak_assignment() {
        let mag = [0.0, 1.0, 0.5, 0.2, 0.1, 0.3, 2.0, 0.0];
        assert_eq!(peak_regions(&mag), vec![1, 1, 1, 1, 6, 6, 6, 6]);
    }
}
