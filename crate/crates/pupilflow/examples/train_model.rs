//! Splits a feature matrix, grid-searches boosting hyperparameters on an
//! inner validation split, fits the final model, and saves it.
//!
//! Run with: cargo run --example train_model

use pupilflow::eval::{grid_search, shuffle_split, GridSpec, SplitConfig, StageRule};
use pupilflow::features::extract;
use pupilflow::gbm;
use pupilflow::mrmr::mrmr_select;
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

    // Keep the top half of the catalog, then split 70/30 stratified.
    let selection = mrmr_select(&fm, 26, 10)?;
    let projected = fm.project(&selection.selected);
    let split = SplitConfig { train_fraction: 0.7, seed, stratified: true };
    let (train, test) = shuffle_split(&projected, &split)?;
    println!("{} train rows, {} test rows", train.n_rows(), test.n_rows());

    // The grid scans learning rates; the validation split picks the best
    // boosting stage within each cell.
    let grid = GridSpec {
        learning_rate: vec![0.05, 0.1],
        min_samples_split: vec![40],
        min_samples_leaf: vec![10],
        ..GridSpec::default()
    };
    let outcome = grid_search(&train, &grid, seed, 10, StageRule::Mse)?;
    let h = &outcome.best;
    println!(
        "best cell: lr {}, {} stages, depth {}, subsample {}",
        h.learning_rate, h.n_estimators, h.max_depth, h.subsample,
    );

    let model = gbm::fit(&train, &outcome.best)?;
    let path = std::env::temp_dir().join("pupilflow_example_model.txt");
    model.write_file(&path)?;
    println!(
        "saved {} ({} stages, mean train deviance {:.4} at the last stage)",
        path.display(),
        model.stages.len(),
        model.train_deviance.last().unwrap(),
    );
    Ok(())
}
