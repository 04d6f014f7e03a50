//! Cuts sliding windows over cleaned recordings and computes the 53-column
//! feature matrix: 25 per eye across time, frequency, and time-frequency
//! domains, plus 3 cross-eye columns.
//!
//! Run with: cargo run --example extract_features

use pupilflow::features::{extract, FeatureCatalog};
use pupilflow::preprocess::remove_artifacts;
use pupilflow::spectral::SpectralConfig;
use pupilflow::synth::{generate_dataset, SynthConfig};
use pupilflow::window::WindowConfig;

fn main() -> anyhow::Result<()> {
    let cfg = SynthConfig {
        duration_s: 120.0,
        seed: 42,
        ..SynthConfig::default()
    };
    let series: Vec<_> = generate_dataset(&cfg)
        .into_iter()
        .map(|rec| remove_artifacts(&rec))
        .collect::<Result<_, _>>()?;

    let (fm, stats) = extract(&series, &WindowConfig::default(), &SpectralConfig::default())?;
    println!(
        "{} rows x {} features ({} degenerate, {} short windows dropped)",
        fm.n_rows(),
        fm.width(),
        stats.dropped_degenerate,
        stats.dropped_short,
    );

    let catalog = FeatureCatalog::default_catalog();
    println!("catalog fingerprint {}", catalog.fingerprint());

    // First row, a few named columns.
    for name in ["le_time_mean", "le_freq_peak_hz", "re_tf_b0_std", "xy_time_corr"] {
        let j = catalog.index_of(name).expect("name is in the catalog");
        println!("  {:<16} = {:.6}", name, fm.row(0)[j]);
    }
    println!(
        "row 0 is a {} window of {} starting at {} ms",
        fm.labels[0], fm.provenance[0].source_name, fm.provenance[0].window_start_ms,
    );
    Ok(())
}
