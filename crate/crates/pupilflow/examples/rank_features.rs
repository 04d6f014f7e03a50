//! Ranks features by mutual-information relevance minus mean redundancy
//! against the already-picked set, and prints the head of the ranking.
//!
//! Run with: cargo run --example rank_features

use pupilflow::features::extract;
use pupilflow::mrmr::mrmr_select;
use pupilflow::preprocess::remove_artifacts;
use pupilflow::spectral::SpectralConfig;
use pupilflow::synth::{generate_dataset, SynthConfig};
use pupilflow::window::WindowConfig;

fn main() -> anyhow::Result<()> {
    let cfg = SynthConfig {
        duration_s: 180.0,
        seed: 42,
        ..SynthConfig::default()
    };
    let series: Vec<_> = generate_dataset(&cfg)
        .into_iter()
        .map(|rec| remove_artifacts(&rec))
        .collect::<Result<_, _>>()?;
    let (fm, _) = extract(&series, &WindowConfig::default(), &SpectralConfig::default())?;

    let result = mrmr_select(&fm, 10, 10)?;
    println!("rank  feature                relevance  redundancy  objective");
    for (i, (&j, s)) in result.selected.iter().zip(&result.scores).enumerate() {
        println!(
            "{:>4}  {:<22} {:>9.4} {:>11.4} {:>10.4}",
            i + 1,
            fm.catalog.features[j].name,
            s.relevance_bits,
            s.redundancy_bits,
            s.objective,
        );
    }
    Ok(())
}
