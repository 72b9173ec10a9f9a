use std::f64::consts::PI;

use super::AudioClip;

/// Kernel length in input samples.
pub const SINC_TAPS: usize = 32;

/// Band-limited resampling to `target_rate`; equal rates return a clone.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    if target_rate == clip.sample_rate {
        return clip.clone();
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    AudioClip {
        samples: resample_by_ratio(&clip.samples, ratio),
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    }
}

/// Resamples to `round(len * ratio)` samples with a 32-tap Hann-windowed
/// sinc whose cutoff drops to `ratio` (in input Nyquist units) when
/// downsampling.
pub fn resample_by_ratio(x: &[f64], ratio: f64) -> Vec<f64> {
    assert!(ratio > 0.0 && ratio.is_finite());
    let out_len = (x.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0);
    let half = (SINC_TAPS / 2) as isize;
    (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let base = t.floor() as isize;
            let mut acc = 0.0;
            for k in (base - half + 1)..=(base + half) {
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                let d = t - k as f64;
                let window = 0.5 * (1.0 + (PI * d / half as f64).cos());
                acc += x[k as usize] * cutoff * sinc(cutoff * d) * window;
            }
            acc
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::{peak_hz, sine};
    use super::*;

    #[test]
    fn doubling_rate_doubles_length() {
        let c = AudioClip::new(vec![0.0; 22_050], 22_050, "x");
        assert_eq!(resample(&c, 44_100).len(), 44_100);
    }

    #[test]
    fn equal_rates_are_identity() {
        let c = AudioClip::new(sine(123.0, 8000, 999), 8000, "x");
        assert_eq!(resample(&c, 8000), c);
    }

    #[test]
    fn integer_positions_reproduce_samples() {
        // ratio 1 lands every output on an input sample where the kernel is
        // a Kronecker delta
        let x = sine(50.0, 1000, 200);
        let y = resample_by_ratio(&x, 1.0);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_keeps_frequency_across_rates() {
        let c = AudioClip::new(sine(440.0, 48_000, 48_000), 48_000, "x");
        let r = resample(&c, 44_100);
        assert_eq!(r.len(), 44_100);
        let (hz, bin) = peak_hz(&r.samples, 44_100, 4096);
        assert!((hz - 440.0).abs() <= bin, "peak at {hz} Hz");
    }
}
