//! Generates one labeled recording per emotion and writes them as session
//! CSV files, then prints what each file holds.
//!
//! Run with: cargo run --example synth_sessions

use pupilflow::ingest::write_recording;
use pupilflow::run::session_file;
use pupilflow::synth::{generate_dataset, SynthConfig};

fn main() -> anyhow::Result<()> {
    let out = std::env::temp_dir().join("pupilflow_example_synth");
    std::fs::create_dir_all(&out)?;

    // 60 s per emotion keeps the example quick; the default is 600 s.
    let cfg = SynthConfig {
        duration_s: 60.0,
        seed: 42,
        ..SynthConfig::default()
    };

    for rec in generate_dataset(&cfg) {
        let path = out.join(session_file(rec.label));
        write_recording(&rec, &path)?;
        let sentinels = rec.samples.iter().filter(|s| s.is_sentinel()).count();
        let clean: Vec<f64> = rec
            .samples
            .iter()
            .filter(|s| !s.is_sentinel())
            .map(|s| s.left_mm)
            .collect();
        let mean = clean.iter().sum::<f64>() / clean.len() as f64;
        println!(
            "{}: {} samples, {} sentinel rows, mean left diameter {:.3} mm",
            path.display(),
            rec.samples.len(),
            sentinels,
            mean,
        );
    }
    Ok(())
}
