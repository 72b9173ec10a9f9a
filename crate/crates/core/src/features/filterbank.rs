/// Which auditory scale a [`Filterbank`] is laid out on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Mel,
    Gammatone,
}

/// Band weights over FFT bins, row-major `(bands, bins)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    pub kind: FilterKind,
    pub bands: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
    /// Center frequency of every band in Hz.
    pub centers: Vec<f64>,
}

impl Filterbank {
    pub fn row(&self, band: usize) -> &[f64] {
        &self.weights[band * self.bins..(band + 1) * self.bins]
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Equivalent rectangular bandwidth in Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// ERB-rate (number of ERBs below `f`).
pub fn hz_to_erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 4.37 * f / 1000.0).log10()
}

pub fn erb_rate_to_hz(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) * 1000.0 / 4.37
}

fn bin_hz(k: usize, sr: u32, n_fft: usize) -> f64 {
    k as f64 * sr as f64 / n_fft as f64
}

fn nearest_bin(f: f64, sr: u32, n_fft: usize) -> usize {
    ((f * n_fft as f64 / sr as f64).round() as usize).min(n_fft / 2)
}

/// Triangular filters with centers evenly spaced in mel between 0 Hz and
/// Nyquist, unit peak and no area normalization. A band too narrow to
/// contain any bin gets weight 1 at the bin nearest its center, so every
/// row has positive mass.
pub fn mel_filterbank(n_bands: usize, sr: u32, n_fft: usize) -> Filterbank {
    let bins = n_fft / 2 + 1;
    let f_max = sr as f64 / 2.0;
    let top = hz_to_mel(f_max);
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_bands + 1) as f64))
        .collect();
    let mut weights = vec![0.0; n_bands * bins];
    for b in 0..n_bands {
        let (lo, c, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        let row = &mut weights[b * bins..(b + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz(k, sr, n_fft);
            *w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            row[nearest_bin(c, sr, n_fft)] = 1.0;
        }
    }
    Filterbank {
        kind: FilterKind::Mel,
        bands: n_bands,
        bins,
        weights,
        f_min: 0.0,
        f_max,
        centers: edges[1..=n_bands].to_vec(),
    }
}

/// Fourth-order gammatone magnitude responses `|1 + j(f - fc)/b|^-4`
/// with `b = 1.019 ERB(fc)`, centers evenly spaced in ERB-rate over
/// [20 Hz, Nyquist]. Each row is scaled so its largest sampled weight is 1.
pub fn gammatone_filterbank(n_bands: usize, sr: u32, n_fft: usize) -> Filterbank {
    let bins = n_fft / 2 + 1;
    let (f_min, f_max) = (20.0, sr as f64 / 2.0);
    let (e0, e1) = (hz_to_erb_rate(f_min), hz_to_erb_rate(f_max));
    let centers: Vec<f64> = (0..n_bands)
        .map(|i| {
            let t = if n_bands > 1 {
                i as f64 / (n_bands - 1) as f64
            } else {
                0.0
            };
            erb_rate_to_hz(e0 + t * (e1 - e0))
        })
        .collect();
    let mut weights = vec![0.0; n_bands * bins];
    for (b, &fc) in centers.iter().enumerate() {
        let bw = 1.019 * erb(fc);
        let row = &mut weights[b * bins..(b + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let x = (bin_hz(k, sr, n_fft) - fc) / bw;
            *w = (1.0 + x * x).powi(-2);
        }
        let peak = row.iter().fold(0.0f64, |m, &w| m.max(w));
        row.iter_mut().for_each(|w| *w /= peak);
    }
    Filterbank {
        kind: FilterKind::Gammatone,
        bands: n_bands,
        bins,
        weights,
        f_min,
        f_max,
        centers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_scale_values() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
        assert!((hz_to_mel(700.0) - 781.17).abs() < 0.01);
        for f in [100.0, 1000.0, 10000.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() / f < 1e-9);
        }
    }

    #[test]
    fn erb_values() {
        assert!((erb(1000.0) - 132.639).abs() < 1e-9);
        for f in [20.0, 440.0, 22050.0] {
            assert!((erb_rate_to_hz(hz_to_erb_rate(f)) - f).abs() / f < 1e-9);
        }
    }

    #[test]
    fn mel_rows_positive_and_no_holes() {
        let fb = mel_filterbank(128, 44_100, 1024);
        assert_eq!((fb.bands, fb.bins), (128, 513));
        assert!(fb.weights.iter().all(|&w| w >= 0.0));
        for b in 0..fb.bands {
            assert!(fb.row(b).iter().any(|&w| w > 0.0), "band {b} empty");
        }
        let first = nearest_bin(fb.centers[0], 44_100, 1024);
        let last = nearest_bin(fb.centers[127], 44_100, 1024);
        for k in first..=last {
            let col: f64 = (0..fb.bands).map(|b| fb.row(b)[k]).sum();
            assert!(col > 0.0, "hole at bin {k}");
        }
    }

    #[test]
    fn mel_triangle_peaks_at_center_bin() {
        let fb = mel_filterbank(128, 44_100, 1024);
        // high bands are wide enough that a bin sits almost on the center
        let b = 120;
        let k = nearest_bin(fb.centers[b], 44_100, 1024);
        let argmax = (0..fb.bins)
            .max_by(|&i, &j| fb.row(b)[i].total_cmp(&fb.row(b)[j]))
            .unwrap();
        assert_eq!(argmax, k);
    }

    #[test]
    fn gammatone_peaks_at_nearest_bin() {
        let fb = gammatone_filterbank(128, 44_100, 1024);
        assert!((fb.centers[0] - 20.0).abs() < 1e-9);
        assert!((fb.centers[127] - 22_050.0).abs() < 1e-6);
        for b in 0..fb.bands {
            let row = fb.row(b);
            let k = nearest_bin(fb.centers[b], 44_100, 1024);
            assert_eq!(row[k], 1.0, "band {b}");
            assert!(row.iter().all(|&w| w > 0.0 && w <= 1.0));
            let argmax = (0..fb.bins)
                .max_by(|&i, &j| row[i].total_cmp(&row[j]).then(j.cmp(&i)))
                .unwrap();
            assert_eq!(argmax, k, "band {b}");
        }
    }

    #[test]
    fn gammatone_response_shape() {
        // analytic response is exactly 1/4 one bandwidth off center
        let fc = 1000.0;
        let bw = 1.019 * erb(fc);
        let x: f64 = (fc + bw - fc) / bw;
        assert!(((1.0 + x * x).powi(-2) - 0.25).abs() < 1e-12);
    }
}
