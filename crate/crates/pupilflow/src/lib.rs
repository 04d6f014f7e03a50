//! Emotion recognition from pupil diameter time series.
//!
//! The crate turns raw eye-tracker exports (wall clock, left pupil mm, right
//! pupil mm, optional emotion token) into a per-window feature matrix, ranks
//! the features by mutual information, trains a small multinomial gradient
//! boosting model from scratch, and reports standard multiclass metrics.
//! A seeded synthetic recording generator makes the whole path runnable
//! without access to eye-tracker hardware.
//!
//! Stages, each usable on its own:
//!
//! * [`ingest`]: parse raw CSV rows into [`ingest::Recording`]s.
//! * [`preprocess`]: drop blink sentinels, validate plausibility.
//! * [`features`]: sliding windows to a 53-column [`features::FeatureMatrix`]
//!   (time, frequency, and time-frequency descriptors per eye plus
//!   cross-eye terms; spectral estimates come from [`spectral`]).
//! * [`mrmr`]: minimum-redundancy maximum-relevance feature ranking.
//! * [`gbm`]: multinomial deviance boosting with depth-limited regression
//!   trees, staged prediction, and stage selection.
//! * [`eval`]: seeded shuffle splits, confusion matrices, macro metrics,
//!   grid search.
//! * [`synth`]: deterministic synthetic recordings with known class
//!   structure and injected blinks.
//! * [`run`]: file-level orchestration shared by the CLI binary and the
//!   examples; owns the on-disk formats between stages.
//!
//! Every random decision in the crate flows from explicit 64-bit seeds
//! through the derivation rules in [`rng`], so any two runs with the same
//! inputs and seeds produce byte-identical artifacts.
//!
//! The `examples/` directory has one runnable program per stage; start with
//! `cargo run --example full_pipeline`.

pub mod eval;
pub mod features;
pub mod gbm;
pub mod ingest;
pub mod label;
pub mod mrmr;
pub mod preprocess;
pub mod rng;
pub mod run;
pub mod spectral;
pub mod synth;
pub mod window;

pub use label::EmotionLabel;
