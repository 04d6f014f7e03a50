//! Shows the spectral toolkit on a known two-tone signal: Welch PSD, band
//! powers over the four analysis bands, peak frequency, and entropy.
//!
//! Run with: cargo run --example spectral_probe

use pupilflow::spectral::{
    band_powers, peak_frequency, spectral_entropy, total_power, welch_psd, SpectralConfig, BANDS,
};

fn main() -> anyhow::Result<()> {
    let fs = 120.0;
    // 0.3 Hz and 2.5 Hz tones: one per outer band, the slow one stronger.
    let x: Vec<f64> = (0..7200)
        .map(|i| {
            let t = i as f64 / fs;
            let tau = 2.0 * std::f64::consts::PI;
            3.0 + 0.4 * (tau * 0.3 * t).sin() + 0.2 * (tau * 2.5 * t).sin()
        })
        .collect();

    let psd = welch_psd(&x, fs, &SpectralConfig::default())?;
    println!("{} frequency bins, resolution {:.5} Hz", psd.freqs.len(), psd.df);

    let bp = band_powers(&psd);
    for (b, (lo, hi)) in BANDS.iter().enumerate() {
        println!("  band {b} [{lo}, {hi}) Hz: power {:.6} mm^2", bp[b]);
    }
    println!("total power  {:.6} mm^2", total_power(&psd));
    println!("peak         {:.4} Hz", peak_frequency(&psd));
    println!("entropy      {:.4} bits", spectral_entropy(&psd));
    Ok(())
}
