//! Scores a trained model on held-out rows and prints the full report:
//! confusion matrix, accuracy, macro recall/precision/specificity, F-score,
//! and the multiclass Matthews correlation coefficient.
//!
//! Run with: cargo run --example evaluate_model

use pupilflow::eval::{evaluate, report_text, shuffle_split, SplitConfig};
use pupilflow::features::extract;
use pupilflow::gbm::{self, Hyperparams};
use pupilflow::preprocess::remove_artifacts;
use pupilflow::spectral::SpectralConfig;
use pupilflow::synth::{generate_dataset, SynthConfig};
use pupilflow::window::WindowConfig;

fn main() -> anyhow::Result<()> {
    let seed = 42;
    let cfg = SynthConfig {
        duration_s: 180.0,
        seed,
        ..SynthConfig::default()
    };
    let series: Vec<_> = generate_dataset(&cfg)
        .into_iter()
        .map(|rec| remove_artifacts(&rec))
        .collect::<Result<_, _>>()?;
    let (fm, _) = extract(&series, &WindowConfig::default(), &SpectralConfig::default())?;

    let split = SplitConfig { train_fraction: 0.7, seed, stratified: true };
    let (train, test) = shuffle_split(&fm, &split)?;

    let hp = Hyperparams {
        min_samples_split: 40,
        min_samples_leaf: 10,
        ..Hyperparams::default()
    };
    let model = gbm::fit(&train, &hp)?;
    let pred = model.predict_matrix(&test)?;
    let report = evaluate(&test.labels, &pred)?;
    print!("{}", report_text(&report));
    Ok(())
}
