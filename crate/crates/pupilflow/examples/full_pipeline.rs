//! Runs every stage through the file-based runners: generate, clean,
//! featurize, rank, train, evaluate, and list top features, all inside one
//! scratch directory. This is what the `pipeline` subcommand does.
//!
//! Run with: cargo run --example full_pipeline

use pupilflow::eval::report_text;
use pupilflow::run::{run_pipeline, OutputLock, RunConfig};

fn main() -> anyhow::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.out_dir = std::env::temp_dir().join("pupilflow_example_pipeline");
    // Shorter recordings than the 600 s default keep the example fast; the
    // tree-size floors scale down with the row count they were sized for.
    cfg.synth.duration_s = 120.0;
    cfg.grid.min_samples_split = vec![40];
    cfg.grid.min_samples_leaf = vec![10];

    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    let summary = run_pipeline(&cfg)?;

    println!("artifacts in {}", cfg.out_dir.display());
    println!(
        "{} feature rows, {} selected, best cell {} stages at lr {}",
        summary.feature_rows,
        summary.selected,
        summary.train.best.n_estimators,
        summary.train.best.learning_rate,
    );
    print!("{}", report_text(&summary.report));
    Ok(())
}
