//! Strips blink and dropout sentinels from generated recordings and prints
//! one `source,kept,dropped` report line per recording.
//!
//! Run with: cargo run --example clean_recordings

use pupilflow::preprocess::{remove_artifacts, remove_artifacts_with_margin, report_line};
use pupilflow::synth::{generate_dataset, SynthConfig};

fn main() -> anyhow::Result<()> {
    let cfg = SynthConfig {
        duration_s: 120.0,
        seed: 7,
        ..SynthConfig::default()
    };

    println!("source,kept,dropped");
    for rec in generate_dataset(&cfg) {
        let clean = remove_artifacts(&rec)?;
        println!("{}", report_line(&clean));
        assert_eq!(clean.samples.len() + clean.dropped_count, rec.samples.len());
    }

    // A margin widens each removed gap: samples adjacent to a blink carry
    // partial-occlusion artifacts in real trackers.
    let rec = generate_dataset(&cfg)[0].clone();
    let plain = remove_artifacts(&rec)?;
    let wide = remove_artifacts_with_margin(&rec, 3)?;
    println!(
        "margin 3 drops {} extra samples around the gaps",
        wide.dropped_count - plain.dropped_count,
    );
    Ok(())
}
