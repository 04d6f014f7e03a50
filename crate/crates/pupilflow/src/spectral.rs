//! Spectral estimation for pupil series.
//!
//! Pupil oscillations of interest live below 4 Hz, so the band layout is
//! four octave-ish bands: [0, 0.5), [0.5, 1), [1, 2), [2, 4) Hz. Estimates
//! use Welch averaging: split the signal into `seg_len`-sample segments
//! overlapping by `overlap`, and per segment subtract the segment mean,
//! apply a periodic Hann taper, take the magnitude-squared DFT, and scale by
//! `1 / (fs * sum(w^2))`; one-sided spectra double every bin except DC and
//! Nyquist. Segment periodograms are averaged. With this scaling the PSD
//! integrates to the signal's variance (Parseval), which the tests pin down
//! against a naive direct-DFT periodogram.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

/// Analysis bands in Hz, half-open `[lo, hi)`.
pub const BANDS: [(f64, f64); 4] = [(0.0, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, 4.0)];

/// Upper edge of the analyzed range; also the last band's upper edge.
pub const FREQ_CEILING_HZ: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    /// Welch segment length in samples; must be a power of two.
    pub seg_len: usize,
    /// Fractional overlap between consecutive segments, in [0, 1).
    pub overlap: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig { seg_len: 256, overlap: 0.5 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("signal has {len} samples but the segment length is {seg_len}")]
    TooShort { len: usize, seg_len: usize },
}

/// A one-sided power spectral density estimate. `values[k]` is the density
/// at `freqs[k] = k * df`; bins run from DC to Nyquist inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub df: f64,
}

/// Periodic Hann taper of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

fn tapered_mag_sq(segment: &[f64], taper: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = segment.len();
    let mean = segment.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = segment
        .iter()
        .zip(taper)
        .map(|(x, w)| Complex64::new((x - mean) * w, 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

fn one_sided_scale(mag_sq: &[f64], n: usize, fs: f64, taper_power: f64) -> Vec<f64> {
    let scale = 1.0 / (fs * taper_power);
    mag_sq
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let two_sided = m * scale;
            // interior bins fold in their negative-frequency twins
            if k == 0 || (n % 2 == 0 && k == n / 2) {
                two_sided
            } else {
                2.0 * two_sided
            }
        })
        .collect()
}

/// Welch PSD estimate. Requires `values.len() >= cfg.seg_len`; the tail
/// shorter than one hop is ignored.
pub fn welch_psd(values: &[f64], fs: f64, cfg: &SpectralConfig) -> Result<Psd, SpectralError> {
    assert!(
        cfg.seg_len.is_power_of_two() && cfg.seg_len >= 2,
        "segment length must be a power of two"
    );
    assert!(
        (0.0..1.0).contains(&cfg.overlap),
        "overlap must be in [0, 1)"
    );
    assert!(fs > 0.0, "sample rate must be positive");
    let n = cfg.seg_len;
    if values.len() < n {
        return Err(SpectralError::TooShort { len: values.len(), seg_len: n });
    }
    let hop = ((n as f64 * (1.0 - cfg.overlap)).round() as usize).max(1);
    let taper = hann(n);
    let taper_power: f64 = taper.iter().map(|w| w * w).sum();
    let mut planner = FftPlanner::new();
    let n_segments = (values.len() - n) / hop + 1;
    let mut acc = vec![0.0; n / 2 + 1];
    for s in 0..n_segments {
        let seg = &values[s * hop..s * hop + n];
        for (a, m) in acc.iter_mut().zip(tapered_mag_sq(seg, &taper, &mut planner)) {
            *a += m;
        }
    }
    for a in &mut acc {
        *a /= n_segments as f64;
    }
    let df = fs / n as f64;
    Ok(Psd {
        freqs: (0..=n / 2).map(|k| k as f64 * df).collect(),
        values: one_sided_scale(&acc, n, fs, taper_power),
        df,
    })
}

/// Single mean-removed Hann periodogram over the whole signal, any length.
/// Used for the short sub-windows of the time-frequency features.
pub fn periodogram(values: &[f64], fs: f64) -> Psd {
    assert!(values.len() >= 2, "periodogram needs at least 2 samples");
    let n = values.len();
    let taper = hann(n);
    let taper_power: f64 = taper.iter().map(|w| w * w).sum();
    let mut planner = FftPlanner::new();
    let mag_sq = tapered_mag_sq(values, &taper, &mut planner);
    let df = fs / n as f64;
    Psd {
        freqs: (0..=n / 2).map(|k| k as f64 * df).collect(),
        values: one_sided_scale(&mag_sq, n, fs, taper_power),
        df,
    }
}

/// Power in each analysis band: sum of `psd * df` over bins whose center
/// frequency falls inside the band.
pub fn band_powers(psd: &Psd) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (f, v) in psd.freqs.iter().zip(&psd.values) {
        for (b, (lo, hi)) in BANDS.iter().enumerate() {
            if *f >= *lo && *f < *hi {
                out[b] += v * psd.df;
            }
        }
    }
    out
}

/// Total power in the analyzed 0-4 Hz range.
pub fn total_power(psd: &Psd) -> f64 {
    psd.freqs
        .iter()
        .zip(&psd.values)
        .filter(|(f, _)| **f < FREQ_CEILING_HZ)
        .map(|(_, v)| v * psd.df)
        .sum()
}

/// Center frequency of the strongest bin below 4 Hz; ties go to the lowest
/// frequency, and an all-zero range yields 0.
pub fn peak_frequency(psd: &Psd) -> f64 {
    let mut best_f = 0.0;
    let mut best_v = 0.0;
    for (f, v) in psd.freqs.iter().zip(&psd.values) {
        if *f < FREQ_CEILING_HZ && *v > best_v {
            best_v = *v;
            best_f = *f;
        }
    }
    best_f
}

/// Shannon entropy, in bits, of the bin-power distribution below 4 Hz.
/// Zero total power yields 0 by convention.
pub fn spectral_entropy(psd: &Psd) -> f64 {
    let in_range: Vec<f64> = psd
        .freqs
        .iter()
        .zip(&psd.values)
        .filter(|(f, _)| **f < FREQ_CEILING_HZ)
        .map(|(_, v)| *v)
        .collect();
    let total: f64 = in_range.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    -in_range
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| {
            let p = v / total;
            p * p.log2()
        })
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Direct O(n^2) DFT periodogram used as an independent reference:
    /// mean removal, no taper, same one-sided scaling.
    pub fn reference_periodogram(values: &[f64], fs: f64) -> Psd {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let x: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let mut mag_sq = Vec::with_capacity(n / 2 + 1);
        for k in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            mag_sq.push(re * re + im * im);
        }
        // rectangular taper: sum of squares is n
        let df = fs / n as f64;
        Psd {
            freqs: (0..=n / 2).map(|k| k as f64 * df).collect(),
            values: one_sided_scale(&mag_sq, n, fs, n as f64),
            df,
        }
    }

    fn sine(freq: f64, fs: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn welch_matches_the_direct_dft_on_one_segment() {
        // single Hann-tapered segment vs the same math done by naive DFT
        let mut rng = crate::rng::stream(11, &[99]);
        let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let welch = welch_psd(&x, 120.0, &SpectralConfig::default()).unwrap();
        // naive DFT of the mean-removed, Hann-tapered segment
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let taper = hann(n);
        let tapered: Vec<f64> = x.iter().zip(&taper).map(|(v, w)| (v - mean) * w).collect();
        let mut direct = reference_periodogram(&tapered, 120.0);
        // reference removes the (already zero-mean-ish) tapered mean and
        // scales by n; rescale to the Hann taper power to compare
        let taper_power: f64 = taper.iter().map(|w| w * w).sum();
        for v in &mut direct.values {
            *v *= n as f64 / taper_power;
        }
        // tapered signal is not exactly zero-mean, so allow a loose DC bin
        for k in 1..welch.values.len() {
            let (a, b) = (welch.values[k], direct.values[k]);
            assert!(
                (a - b).abs() <= 1e-9 * b.abs().max(1e-12),
                "bin {k}: welch {a} vs direct {b}"
            );
        }
    }

    #[test]
    fn exact_bin_sine_lands_in_its_bin() {
        // 0.9375 Hz is exactly bin 2 at 120 Hz / 256 samples (df 0.46875)
        let x = sine(0.9375, 120.0, 1200, 1.0);
        let psd = welch_psd(&x, 120.0, &SpectralConfig::default()).unwrap();
        assert!((psd.df - 0.46875).abs() < 1e-12);
        let argmax = psd
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
        // the Hann main lobe spans the peak bin and its direct neighbors;
        // together they hold essentially all the power
        let total: f64 = psd.values.iter().sum();
        let lobe: f64 = psd.values[1..=3].iter().sum();
        assert!(lobe / total > 0.999, "lobe fraction {}", lobe / total);
        // the untapered reference concentrates >95% in the single bin
        let reference = reference_periodogram(&x[..256], 120.0);
        let ref_total: f64 = reference.values.iter().sum();
        assert!(reference.values[2] / ref_total > 0.95);
        // Parseval: integrated PSD equals the sine's variance amp^2/2
        assert!((total_power(&psd) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn white_noise_satisfies_parseval_within_five_percent() {
        let mut rng = crate::rng::stream(5, &[1]);
        let x: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let variance = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
        let psd = welch_psd(&x, 120.0, &SpectralConfig::default()).unwrap();
        let power: f64 = psd.values.iter().map(|v| v * psd.df).sum();
        assert!(
            (power - variance).abs() / variance < 0.05,
            "power {power} vs variance {variance}"
        );
        // the reference periodogram agrees too
        let reference = reference_periodogram(&x, 120.0);
        let ref_power: f64 = reference.values.iter().map(|v| v * reference.df).sum();
        assert!((ref_power - variance).abs() / variance < 0.05);
    }

    #[test]
    fn white_noise_spectrum_is_flat() {
        let mut rng = crate::rng::stream(5, &[2]);
        let x: Vec<f64> = (0..120 * 600).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
        let psd = welch_psd(&x, 120.0, &SpectralConfig::default()).unwrap();
        let interior = &psd.values[1..psd.values.len() - 1];
        let mean = interior.iter().sum::<f64>() / interior.len() as f64;
        for v in interior {
            assert!((v - mean).abs() / mean < 0.5, "bin {v} vs mean {mean}");
        }
    }

    #[test]
    fn band_powers_select_the_right_band() {
        let fs = 120.0;
        for (freq, band) in [(0.2, 0), (0.9, 1), (1.5, 2), (2.8, 3)] {
            let x = sine(freq, fs, 7200, 1.0);
            let psd = welch_psd(&x, fs, &SpectralConfig::default()).unwrap();
            let bp = band_powers(&psd);
            let argmax = bp.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            assert_eq!(argmax, band, "sine at {freq} Hz: band powers {bp:?}");
        }
    }

    #[test]
    fn band_edges_are_half_open() {
        // Membership is by bin center: a center exactly on an edge belongs
        // to the band above it, and 4.0 falls outside every band.
        let psd = Psd {
            freqs: vec![0.0, 0.5, 1.0, 2.0, 3.99, 4.0],
            values: vec![1.0; 6],
            df: 0.5,
        };
        let bp = band_powers(&psd);
        assert_eq!(bp, [0.5, 0.5, 0.5, 1.0]);
        assert_eq!(total_power(&psd), 2.5);
    }

    #[test]
    fn exact_bin_tone_leaks_only_into_adjacent_bins() {
        // At 2.8125 Hz (bin 6 of a 256-point segment at 120 Hz) the window's
        // side bins 5 and 7 stay inside [2, 4), so the band keeps the whole
        // tone's power.
        let x = sine(2.8125, 120.0, 2560, 1.0);
        let psd = welch_psd(&x, 120.0, &SpectralConfig::default()).unwrap();
        let bp = band_powers(&psd);
        assert!(bp[3] > 0.95 * 0.5, "band powers {bp:?}");
        assert!(bp[0] + bp[1] + bp[2] < 0.01 * 0.5, "band powers {bp:?}");
    }

    #[test]
    fn peak_frequency_breaks_ties_low_and_handles_silence() {
        let psd = Psd {
            freqs: vec![0.0, 0.5, 1.0, 1.5],
            values: vec![0.0, 2.0, 2.0, 1.0],
            df: 0.5,
        };
        assert_eq!(peak_frequency(&psd), 0.5);
        let silent = Psd { freqs: vec![0.0, 0.5], values: vec![0.0, 0.0], df: 0.5 };
        assert_eq!(peak_frequency(&silent), 0.0);
        assert_eq!(spectral_entropy(&silent), 0.0);
    }

    #[test]
    fn entropy_grows_with_spectral_spread() {
        let single = sine(0.9375, 120.0, 2560, 1.0);
        let mut double = sine(0.9375, 120.0, 2560, 1.0);
        for (d, v) in double.iter_mut().zip(sine(2.34375, 120.0, 2560, 1.0)) {
            *d += v;
        }
        let e1 = spectral_entropy(&welch_psd(&single, 120.0, &SpectralConfig::default()).unwrap());
        let e2 = spectral_entropy(&welch_psd(&double, 120.0, &SpectralConfig::default()).unwrap());
        assert!(e2 > e1, "two tones {e2} <= one tone {e1}");
    }

    #[test]
    fn too_short_signals_are_rejected() {
        let x = vec![1.0; 255];
        assert_eq!(
            welch_psd(&x, 120.0, &SpectralConfig::default()),
            Err(SpectralError::TooShort { len: 255, seg_len: 256 })
        );
    }

    #[test]
    fn periodogram_handles_arbitrary_lengths() {
        // 150 samples is the default time-frequency sub-window length
        let x = sine(1.6, 120.0, 150, 1.0);
        let psd = periodogram(&x, 120.0);
        assert_eq!(psd.freqs.len(), 76);
        assert!((psd.df - 0.8).abs() < 1e-12);
        let bp = band_powers(&psd);
        let argmax = bp.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(argmax, 2);
    }

    #[test]
    fn constant_signals_have_an_empty_spectrum() {
        // Mean removal is exact only in theory; the FFT of the residue
        // leaves values at the square of f64 rounding error.
        let psd = periodogram(&vec![3.3; 300], 120.0);
        assert!(psd.values.iter().all(|v| *v < 1e-20));
        assert!(total_power(&psd) < 1e-20);
    }
}
