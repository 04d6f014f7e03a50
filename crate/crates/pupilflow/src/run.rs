//! Stage runners that chain the pipeline through files in an output
//! directory, plus the flat `key = value` run configuration they share.
//!
//! Every stage reads its inputs from files and writes its outputs to files,
//! so running `pipeline` produces byte-identical artifacts to running the
//! stages one at a time with the same configuration.
//!
//! Config keys (one `key = value` per line, `#` comments, unknown keys are
//! errors; command-line flags override file values):
//!
//! ```text
//! seed = 42                     root seed; synth and split derive from it
//! out_dir = out                 directory for all stage artifacts
//! data_dir = <out_dir>          where preprocess looks for session files
//! synth.duration_s = 600
//! synth.sample_rate_hz = 120
//! synth.noise_sigma_mm = 0.05
//! synth.ar_coefficient = 0.95
//! synth.blink_rate_per_min = 15
//! synth.blink_min_ms = 100
//! synth.blink_max_ms = 300
//! synth.dropout_prob = 0.002
//! synth.<label>.baseline_mm     <label> is happy|sad|anger|fear
//! synth.<label>.osc_freq_hz
//! synth.<label>.osc_amp_mm
//! preprocess.margin = 0         samples also dropped on each side of a gap
//! window.length_s = 5
//! window.hop_s = 2.5
//! window.min_fill = 0.8
//! spectral.segment_len = 256
//! spectral.overlap = 0.5
//! select.k = 51
//! select.bins = 10
//! split.train_fraction = 0.7
//! split.stratified = true
//! grid.learning_rate = 0.05,0.051    (grid.* keys take comma lists)
//! grid.max_depth = 5
//! grid.n_estimators = 20
//! grid.max_features = 7
//! grid.min_samples_split = 200
//! grid.min_samples_leaf = 30
//! grid.subsample = 0.8
//! train.model_seed = 10
//! train.stage_rule = mse        mse | deviance
//! train.select_on_test = false  pick the boosting stage on the test split
//! report.top_n = 30
//! ```

use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::eval::{
    self, grid_search, grid_search_with, grid_table_csv, shuffle_split, EvalError,
    EvaluationReport, GridSpec, SplitConfig, StageRule,
};
use crate::features::{extract, ExtractStats, FeatureError, FeatureMatrix};
use crate::gbm::{self, GbmError, GbmModel, Hyperparams};
use crate::ingest::{load_recording, write_recording, IngestError};
use crate::label::EmotionLabel;
use crate::mrmr::{mrmr_select, read_selection_report, selection_report_csv, MrmrError};
use crate::preprocess::{
    read_clean, remove_artifacts_with_margin, report_line, write_clean, PreprocessError,
};
use crate::spectral::SpectralConfig;
use crate::synth::{generate_dataset, SynthConfig};
use crate::window::WindowConfig;

pub const FEATURES_FILE: &str = "features.csv";
pub const SELECTION_FILE: &str = "selection.csv";
pub const GRID_TABLE_FILE: &str = "grid_table.csv";
pub const MODEL_FILE: &str = "model.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const TOP_FEATURES_FILE: &str = "top_features.txt";
pub const LOCK_FILE: &str = ".pupilflow.lock";

/// Raw session file name for a label, as written by the generator.
pub fn session_file(label: EmotionLabel) -> String {
    format!("session_{label}.csv")
}

/// Cleaned series file name for a label.
pub fn clean_file(label: EmotionLabel) -> String {
    format!("clean_{label}.csv")
}

/// A stage failure, carrying enough context for a one-line diagnostic and a
/// process exit code.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {reason}")]
    Config { reason: String },
    #[error("missing input: {path}")]
    MissingInput { path: String },
    #[error("malformed data: {reason}")]
    Malformed { reason: String },
    #[error("insufficient data: {reason}")]
    Insufficient { reason: String },
    #[error("model error: {reason}")]
    Model { reason: String },
    #[error("output directory is locked ({path}); remove the file if no other run is active")]
    Locked { path: String },
    #[error("i/o error: {reason}")]
    Io { reason: String },
}

impl RunError {
    /// Process exit code for this failure. Success is 0; 1 is reserved for
    /// uncategorized i/o failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io { .. } => 1,
            RunError::Config { .. } => 2,
            RunError::MissingInput { .. } => 3,
            RunError::Malformed { .. } => 4,
            RunError::Insufficient { .. } => 5,
            RunError::Model { .. } => 6,
            RunError::Locked { .. } => 7,
        }
    }

    fn from_io(path: &str, source: std::io::Error) -> RunError {
        if source.kind() == std::io::ErrorKind::NotFound {
            RunError::MissingInput { path: path.to_string() }
        } else {
            RunError::Io { reason: format!("{path}: {source}") }
        }
    }
}

/// Prefixes the offending file onto data errors from per-file stages, so a
/// failure among several inputs names its source. Path-carrying variants
/// pass through untouched.
fn tag_source(path: &Path, e: RunError) -> RunError {
    match e {
        RunError::Malformed { reason } => {
            RunError::Malformed { reason: format!("{}: {reason}", path.display()) }
        }
        RunError::Insufficient { reason } => {
            RunError::Insufficient { reason: format!("{}: {reason}", path.display()) }
        }
        other => other,
    }
}

impl From<IngestError> for RunError {
    fn from(e: IngestError) -> RunError {
        match e {
            IngestError::Io { path, source } => RunError::from_io(&path, source),
            other => RunError::Malformed { reason: other.to_string() },
        }
    }
}

impl From<PreprocessError> for RunError {
    fn from(e: PreprocessError) -> RunError {
        match e {
            PreprocessError::Io { path, source } => RunError::from_io(&path, source),
            other => RunError::Malformed { reason: other.to_string() },
        }
    }
}

impl From<FeatureError> for RunError {
    fn from(e: FeatureError) -> RunError {
        match e {
            FeatureError::Io { path, source } => RunError::from_io(&path, source),
            FeatureError::TooShort { .. }
            | FeatureError::DegenerateWindow { .. }
            | FeatureError::EmptyOutput => RunError::Insufficient { reason: e.to_string() },
            other => RunError::Malformed { reason: other.to_string() },
        }
    }
}

impl From<MrmrError> for RunError {
    fn from(e: MrmrError) -> RunError {
        match e {
            MrmrError::Io { path, source } => RunError::from_io(&path, source),
            MrmrError::BadK { .. } | MrmrError::BadBins { .. } => {
                RunError::Config { reason: e.to_string() }
            }
            MrmrError::EmptyMatrix => RunError::Insufficient { reason: e.to_string() },
            other @ MrmrError::BadFormat { .. } => {
                RunError::Malformed { reason: other.to_string() }
            }
        }
    }
}

impl From<GbmError> for RunError {
    fn from(e: GbmError) -> RunError {
        match e {
            GbmError::Io { path, source } => RunError::from_io(&path, source),
            GbmError::BadHyperparams { .. } => RunError::Config { reason: e.to_string() },
            GbmError::SingleClassInput => RunError::Insufficient { reason: e.to_string() },
            other => RunError::Model { reason: other.to_string() },
        }
    }
}

impl From<EvalError> for RunError {
    fn from(e: EvalError) -> RunError {
        match e {
            EvalError::Gbm(g) => g.into(),
            EvalError::EmptyGrid { .. } => RunError::Config { reason: e.to_string() },
            EvalError::TooFewRows { .. } | EvalError::EmptyInput | EvalError::EmptyMatrix => {
                RunError::Insufficient { reason: e.to_string() }
            }
            EvalError::LengthMismatch { .. } => RunError::Model { reason: e.to_string() },
        }
    }
}

/// Everything the stage runners need, assembled from defaults, an optional
/// config file, and command-line overrides (in that order).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Root seed. The generator and the train/test split run on substreams
    /// derived from it; the model's own seed is `model_seed`.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Where `preprocess` looks for session files; `out_dir` when unset.
    pub data_dir: Option<PathBuf>,
    /// Generator settings. Its `seed` field is ignored: stages substitute
    /// the root seed at use.
    pub synth: SynthConfig,
    pub preprocess_margin: usize,
    pub window: WindowConfig,
    pub spectral: SpectralConfig,
    pub select_k: usize,
    pub select_bins: usize,
    pub train_fraction: f64,
    pub stratified: bool,
    pub grid: GridSpec,
    pub model_seed: u64,
    pub stage_rule: StageRule,
    /// Pick the boosting stage on the evaluation split instead of an inner
    /// validation split. Optimistic; training emits a warning.
    pub select_on_test: bool,
    pub report_top_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            data_dir: None,
            synth: SynthConfig::default(),
            preprocess_margin: 0,
            window: WindowConfig::default(),
            spectral: SpectralConfig::default(),
            select_k: crate::mrmr::DEFAULT_K,
            select_bins: crate::mrmr::DEFAULT_BINS,
            train_fraction: 0.7,
            stratified: true,
            grid: GridSpec::default(),
            model_seed: 10,
            stage_rule: StageRule::Mse,
            select_on_test: false,
            report_top_n: 30,
        }
    }
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, RunError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| RunError::Config {
        reason: format!("key {key}: cannot parse {value:?}: {e}"),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, RunError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|part| parse_scalar(key, part.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, RunError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(RunError::Config {
            reason: format!("key {key}: expected true or false, got {other:?}"),
        }),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting. Unknown keys are errors so typos
    /// fail loudly instead of silently running on defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RunError> {
        match key {
            "seed" => self.seed = parse_scalar(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "data_dir" => self.data_dir = Some(PathBuf::from(value)),
            "synth.duration_s" => self.synth.duration_s = parse_scalar(key, value)?,
            "synth.sample_rate_hz" => self.synth.sample_rate_hz = parse_scalar(key, value)?,
            "synth.noise_sigma_mm" => self.synth.noise_sigma_mm = parse_scalar(key, value)?,
            "synth.ar_coefficient" => self.synth.ar_coefficient = parse_scalar(key, value)?,
            "synth.blink_rate_per_min" => {
                self.synth.blink_rate_per_min = parse_scalar(key, value)?
            }
            "synth.blink_min_ms" => self.synth.blink_duration_ms.0 = parse_scalar(key, value)?,
            "synth.blink_max_ms" => self.synth.blink_duration_ms.1 = parse_scalar(key, value)?,
            "synth.dropout_prob" => self.synth.one_eye_dropout_prob = parse_scalar(key, value)?,
            "preprocess.margin" => self.preprocess_margin = parse_scalar(key, value)?,
            "window.length_s" => self.window.window_s = parse_scalar(key, value)?,
            "window.hop_s" => self.window.hop_s = parse_scalar(key, value)?,
            "window.min_fill" => self.window.min_fill = parse_scalar(key, value)?,
            "spectral.segment_len" => self.spectral.seg_len = parse_scalar(key, value)?,
            "spectral.overlap" => self.spectral.overlap = parse_scalar(key, value)?,
            "select.k" => self.select_k = parse_scalar(key, value)?,
            "select.bins" => self.select_bins = parse_scalar(key, value)?,
            "split.train_fraction" => self.train_fraction = parse_scalar(key, value)?,
            "split.stratified" => self.stratified = parse_bool(key, value)?,
            "grid.learning_rate" => self.grid.learning_rate = parse_list(key, value)?,
            "grid.max_depth" => self.grid.max_depth = parse_list(key, value)?,
            "grid.n_estimators" => self.grid.n_estimators = parse_list(key, value)?,
            "grid.max_features" => self.grid.max_features = parse_list(key, value)?,
            "grid.min_samples_split" => self.grid.min_samples_split = parse_list(key, value)?,
            "grid.min_samples_leaf" => self.grid.min_samples_leaf = parse_list(key, value)?,
            "grid.subsample" => self.grid.subsample = parse_list(key, value)?,
            "train.model_seed" => self.model_seed = parse_scalar(key, value)?,
            "train.stage_rule" => {
                self.stage_rule = value
                    .parse()
                    .map_err(|reason| RunError::Config { reason })?
            }
            "train.select_on_test" => self.select_on_test = parse_bool(key, value)?,
            "report.top_n" => self.report_top_n = parse_scalar(key, value)?,
            _ => {
                if let Some(rest) = key.strip_prefix("synth.") {
                    if let Some((token, field)) = rest.split_once('.') {
                        if let Some(label) = EmotionLabel::parse_token(token) {
                            let p = &mut self.synth.class_params[label.id()];
                            match field {
                                "baseline_mm" => p.baseline_mm = parse_scalar(key, value)?,
                                "osc_freq_hz" => p.osc_freq_hz = parse_scalar(key, value)?,
                                "osc_amp_mm" => p.osc_amp_mm = parse_scalar(key, value)?,
                                _ => {
                                    return Err(RunError::Config {
                                        reason: format!("unknown config key {key:?}"),
                                    })
                                }
                            }
                            return Ok(());
                        }
                    }
                }
                return Err(RunError::Config {
                    reason: format!("unknown config key {key:?}"),
                });
            }
        }
        Ok(())
    }

    /// Parses a config file's text on top of `self`. Lines are
    /// `key = value`; blank lines and `#` comments are skipped.
    pub fn apply_str(&mut self, text: &str, path: &str) -> Result<(), RunError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(RunError::Config {
                    reason: format!("{path}:{}: expected key = value, got {line:?}", i + 1),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                RunError::Config { reason } => RunError::Config {
                    reason: format!("{path}:{}: {reason}", i + 1),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// Loads a config file on top of defaults.
    pub fn load(path: &Path) -> Result<RunConfig, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::from_io(&path.display().to_string(), e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_str(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Generator settings with the root seed substituted in.
    pub fn synth_config(&self) -> SynthConfig {
        let mut c = self.synth.clone();
        c.seed = self.seed;
        c
    }

    /// Train/test split settings derived from the root seed.
    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            train_fraction: self.train_fraction,
            seed: self.seed,
            stratified: self.stratified,
        }
    }

    /// Directory `preprocess` reads session files from.
    pub fn input_dir(&self) -> &Path {
        self.data_dir.as_deref().unwrap_or(&self.out_dir)
    }
}

/// Exclusive claim on an output directory, held as a lock file for the
/// lifetime of this value. A second claim on the same directory fails until
/// the first is dropped.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out_dir: &Path) -> Result<OutputLock, RunError> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| RunError::from_io(&out_dir.display().to_string(), e))?;
        let path = out_dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut file) => {
                let _ = writeln!(file, "pid {}", std::process::id());
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(RunError::Locked {
                path: path.display().to_string(),
            }),
            Err(e) => Err(RunError::Io {
                reason: format!("{}: {e}", path.display()),
            }),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<(), RunError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| RunError::from_io(&cfg.out_dir.display().to_string(), e))
}

/// Generates one session file per label into the output directory.
pub fn run_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let synth_cfg = cfg.synth_config();
    synth_cfg
        .validate()
        .map_err(|reason| RunError::Config { reason })?;
    ensure_out_dir(cfg)?;
    let mut written = Vec::with_capacity(4);
    for rec in generate_dataset(&synth_cfg) {
        let path = cfg.out_dir.join(session_file(rec.label));
        write_recording(&rec, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Cleans each session file into a clean-series file. Returns one
/// `source,kept,dropped` report line per recording.
pub fn run_preprocess(cfg: &RunConfig) -> Result<Vec<String>, RunError> {
    ensure_out_dir(cfg)?;
    let mut lines = Vec::with_capacity(4);
    for label in EmotionLabel::ALL {
        let path = cfg.input_dir().join(session_file(label));
        let rec = load_recording(&path, cfg.synth.sample_rate_hz)
            .map_err(|e| tag_source(&path, e.into()))?;
        let clean = remove_artifacts_with_margin(&rec, cfg.preprocess_margin)
            .map_err(|e| tag_source(&path, e.into()))?;
        write_clean(&clean, &cfg.out_dir.join(clean_file(label)))?;
        lines.push(report_line(&clean));
    }
    Ok(lines)
}

/// Cuts windows over every clean series and writes the combined feature
/// matrix. Returns the row count and the window drop counters.
pub fn run_featurize(cfg: &RunConfig) -> Result<(usize, ExtractStats), RunError> {
    cfg.window
        .validate(cfg.synth.sample_rate_hz)
        .map_err(|reason| RunError::Config { reason })?;
    ensure_out_dir(cfg)?;
    let mut series = Vec::with_capacity(4);
    for label in EmotionLabel::ALL {
        let path = cfg.out_dir.join(clean_file(label));
        series.push(read_clean(&path).map_err(|e| tag_source(&path, e.into()))?);
    }
    let (fm, stats) = extract(&series, &cfg.window, &cfg.spectral)?;
    fm.write_csv(&cfg.out_dir.join(FEATURES_FILE))?;
    Ok((fm.n_rows(), stats))
}

/// Ranks features on the full matrix and writes the selection report.
/// Returns the number of features selected.
pub fn run_select(cfg: &RunConfig) -> Result<usize, RunError> {
    ensure_out_dir(cfg)?;
    let fm = FeatureMatrix::read_csv(&cfg.out_dir.join(FEATURES_FILE))?;
    let result = mrmr_select(&fm, cfg.select_k, cfg.select_bins)?;
    let csv = selection_report_csv(&result, &fm.catalog);
    let path = cfg.out_dir.join(SELECTION_FILE);
    std::fs::write(&path, csv).map_err(|e| RunError::from_io(&path.display().to_string(), e))?;
    Ok(result.selected.len())
}

/// What training did: the winning cell, its validation accuracy, and the
/// split shape it saw.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub best: Hyperparams,
    pub best_accuracy: f64,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Set when stage selection ran on the test split; metrics reported
    /// downstream are optimistic in that mode.
    pub leakage_warning: bool,
}

fn load_projected(cfg: &RunConfig) -> Result<FeatureMatrix, RunError> {
    let fm = FeatureMatrix::read_csv(&cfg.out_dir.join(FEATURES_FILE))?;
    let report = read_selection_report(&cfg.out_dir.join(SELECTION_FILE))?;
    let names: Vec<&str> = report.names.iter().map(String::as_str).collect();
    Ok(fm.project_by_names(&names)?)
}

/// Splits the selected features, scans the hyperparameter grid, fits the
/// final model on the training rows, and writes the grid table and model.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary, RunError> {
    ensure_out_dir(cfg)?;
    let projected = load_projected(cfg)?;
    let (train, test) = shuffle_split(&projected, &cfg.split_config())?;
    let outcome = if cfg.select_on_test {
        grid_search_with(&train, &test, &cfg.grid, cfg.model_seed, cfg.stage_rule)?
    } else {
        grid_search(&train, &cfg.grid, cfg.seed, cfg.model_seed, cfg.stage_rule)?
    };
    let table_path = cfg.out_dir.join(GRID_TABLE_FILE);
    std::fs::write(&table_path, grid_table_csv(&outcome))
        .map_err(|e| RunError::from_io(&table_path.display().to_string(), e))?;
    let model = gbm::fit(&train, &outcome.best)?;
    model.write_file(&cfg.out_dir.join(MODEL_FILE))?;
    let best_accuracy = outcome
        .table
        .iter()
        .map(|c| c.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(TrainSummary {
        best: outcome.best,
        best_accuracy,
        train_rows: train.n_rows(),
        test_rows: test.n_rows(),
        leakage_warning: cfg.select_on_test,
    })
}

/// Recreates the train/test split, scores the saved model on the test rows,
/// and writes both report forms.
pub fn run_evaluate(cfg: &RunConfig) -> Result<EvaluationReport, RunError> {
    ensure_out_dir(cfg)?;
    let projected = load_projected(cfg)?;
    let (_, test) = shuffle_split(&projected, &cfg.split_config())?;
    let model = GbmModel::read_file(&cfg.out_dir.join(MODEL_FILE))?;
    let pred = model.predict_matrix(&test)?;
    let report = eval::evaluate(&test.labels, &pred)?;
    let csv_path = cfg.out_dir.join(REPORT_CSV_FILE);
    std::fs::write(&csv_path, eval::report_csv(&report))
        .map_err(|e| RunError::from_io(&csv_path.display().to_string(), e))?;
    let text_path = cfg.out_dir.join(REPORT_TEXT_FILE);
    std::fs::write(&text_path, eval::report_text(&report))
        .map_err(|e| RunError::from_io(&text_path.display().to_string(), e))?;
    Ok(report)
}

/// Writes the human-readable top of the feature ranking. Returns how many
/// features were listed and the table text itself.
pub fn run_report_features(cfg: &RunConfig) -> Result<(usize, String), RunError> {
    ensure_out_dir(cfg)?;
    let report = read_selection_report(&cfg.out_dir.join(SELECTION_FILE))?;
    let n = cfg.report_top_n.min(report.names.len());
    let mut out = format!(
        "top {n} of {} ranked features (relevance/redundancy/objective in bits)\n",
        report.names.len()
    );
    for (i, (name, s)) in report.names.iter().zip(&report.scores).take(n).enumerate() {
        out.push_str(&format!(
            "{:>3}  {:<24} {:>10.4} {:>10.4} {:>10.4}\n",
            i + 1,
            name,
            s.relevance_bits,
            s.redundancy_bits,
            s.objective,
        ));
    }
    let path = cfg.out_dir.join(TOP_FEATURES_FILE);
    std::fs::write(&path, &out)
        .map_err(|e| RunError::from_io(&path.display().to_string(), e))?;
    Ok((n, out))
}

/// Everything the full pipeline produced, stage by stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub session_files: Vec<PathBuf>,
    pub preprocess_lines: Vec<String>,
    pub feature_rows: usize,
    pub extract_stats: ExtractStats,
    pub selected: usize,
    pub train: TrainSummary,
    pub report: EvaluationReport,
    pub top_listed: usize,
}

/// Runs every stage in order against the same configuration. Each stage
/// reads only the files the previous stages wrote, so the artifacts are
/// byte-identical to running the stages individually.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineSummary, RunError> {
    let session_files = run_synth(cfg)?;
    let preprocess_lines = run_preprocess(cfg)?;
    let (feature_rows, extract_stats) = run_featurize(cfg)?;
    let selected = run_select(cfg)?;
    let train = run_train(cfg)?;
    let report = run_evaluate(cfg)?;
    let (top_listed, _) = run_report_features(cfg)?;
    Ok(PipelineSummary {
        session_files,
        preprocess_lines,
        feature_rows,
        extract_stats,
        selected,
        train,
        report,
        top_listed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_module_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
        assert_eq!(cfg.data_dir, None);
        assert_eq!(cfg.synth, SynthConfig::default());
        assert_eq!(cfg.window, WindowConfig::default());
        assert_eq!(cfg.spectral, SpectralConfig::default());
        assert_eq!(cfg.select_k, 51);
        assert_eq!(cfg.select_bins, 10);
        assert_eq!(cfg.train_fraction, 0.7);
        assert!(cfg.stratified);
        assert_eq!(cfg.grid, GridSpec::default());
        assert_eq!(cfg.model_seed, 10);
        assert_eq!(cfg.stage_rule, StageRule::Mse);
        assert!(!cfg.select_on_test);
        assert_eq!(cfg.report_top_n, 30);
    }

    #[test]
    fn empty_config_text_changes_nothing() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("", "test").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.apply_str("\n# comment\n   \n", "test").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn every_documented_key_parses() {
        let text = "\
seed = 7
out_dir = scratch
data_dir = raw
synth.duration_s = 60
synth.sample_rate_hz = 60
synth.noise_sigma_mm = 0.02
synth.ar_coefficient = 0.9
synth.blink_rate_per_min = 5
synth.blink_min_ms = 50
synth.blink_max_ms = 150
synth.dropout_prob = 0.001
synth.happy.baseline_mm = 3.1
synth.sad.osc_freq_hz = 1.25
synth.fear.osc_amp_mm = 0.5
preprocess.margin = 2
window.length_s = 4
window.hop_s = 2
window.min_fill = 0.9
spectral.segment_len = 128
spectral.overlap = 0.25
select.k = 10
select.bins = 8
split.train_fraction = 0.6
split.stratified = false
grid.learning_rate = 0.1, 0.2
grid.max_depth = 3,4
grid.n_estimators = 10
grid.max_features = 5
grid.min_samples_split = 20
grid.min_samples_leaf = 5
grid.subsample = 1.0
train.model_seed = 99
train.stage_rule = deviance
train.select_on_test = true
report.top_n = 5
";
        let mut cfg = RunConfig::default();
        cfg.apply_str(text, "test").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.out_dir, PathBuf::from("scratch"));
        assert_eq!(cfg.data_dir, Some(PathBuf::from("raw")));
        assert_eq!(cfg.synth.duration_s, 60.0);
        assert_eq!(cfg.synth.sample_rate_hz, 60.0);
        assert_eq!(cfg.synth.noise_sigma_mm, 0.02);
        assert_eq!(cfg.synth.ar_coefficient, 0.9);
        assert_eq!(cfg.synth.blink_rate_per_min, 5.0);
        assert_eq!(cfg.synth.blink_duration_ms, (50.0, 150.0));
        assert_eq!(cfg.synth.one_eye_dropout_prob, 0.001);
        assert_eq!(cfg.synth.class_params[0].baseline_mm, 3.1);
        assert_eq!(cfg.synth.class_params[1].osc_freq_hz, 1.25);
        assert_eq!(cfg.synth.class_params[3].osc_amp_mm, 0.5);
        assert_eq!(cfg.preprocess_margin, 2);
        assert_eq!(cfg.window.window_s, 4.0);
        assert_eq!(cfg.window.hop_s, 2.0);
        assert_eq!(cfg.window.min_fill, 0.9);
        assert_eq!(cfg.spectral.seg_len, 128);
        assert_eq!(cfg.spectral.overlap, 0.25);
        assert_eq!(cfg.select_k, 10);
        assert_eq!(cfg.select_bins, 8);
        assert_eq!(cfg.train_fraction, 0.6);
        assert!(!cfg.stratified);
        assert_eq!(cfg.grid.learning_rate, vec![0.1, 0.2]);
        assert_eq!(cfg.grid.max_depth, vec![3, 4]);
        assert_eq!(cfg.grid.n_estimators, vec![10]);
        assert_eq!(cfg.grid.max_features, vec![5]);
        assert_eq!(cfg.grid.min_samples_split, vec![20]);
        assert_eq!(cfg.grid.min_samples_leaf, vec![5]);
        assert_eq!(cfg.grid.subsample, vec![1.0]);
        assert_eq!(cfg.model_seed, 99);
        assert_eq!(cfg.stage_rule, StageRule::Deviance);
        assert!(cfg.select_on_test);
        assert_eq!(cfg.report_top_n, 5);
    }

    #[test]
    fn unknown_key_is_an_error_with_location() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_str("seed = 1\nbogus.key = 3\n", "conf").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("conf:2"), "{msg}");
        assert!(msg.contains("bogus.key"), "{msg}");
    }

    #[test]
    fn unknown_synth_label_or_field_rejected() {
        let mut cfg = RunConfig::default();
        assert_eq!(
            cfg.set("synth.bored.baseline_mm", "3.0").unwrap_err().exit_code(),
            2
        );
        assert_eq!(
            cfg.set("synth.happy.sparkle", "3.0").unwrap_err().exit_code(),
            2
        );
    }

    #[test]
    fn bad_value_is_a_config_error() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_str("seed = banana\n", "conf").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("banana"));
        let err = cfg.apply_str("split.stratified = yes\n", "conf").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = cfg.apply_str("train.stage_rule = magic\n", "conf").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn line_without_equals_is_an_error() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_str("seed 42\n", "conf").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("conf:1"));
    }

    #[test]
    fn values_may_contain_equals_and_spaces_are_trimmed() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("  out_dir   =  my out=dir  \n", "conf").unwrap();
        assert_eq!(cfg.out_dir, PathBuf::from("my out=dir"));
    }

    #[test]
    fn derived_configs_substitute_the_root_seed() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "7").unwrap();
        assert_eq!(cfg.synth_config().seed, 7);
        assert_eq!(cfg.split_config().seed, 7);
        assert_eq!(cfg.split_config().train_fraction, 0.7);
        assert!(cfg.split_config().stratified);
    }

    #[test]
    fn input_dir_defaults_to_out_dir() {
        let mut cfg = RunConfig::default();
        cfg.set("out_dir", "artifacts").unwrap();
        assert_eq!(cfg.input_dir(), Path::new("artifacts"));
        cfg.set("data_dir", "raw").unwrap();
        assert_eq!(cfg.input_dir(), Path::new("raw"));
    }

    #[test]
    fn exit_codes_cover_every_failure_class() {
        let cases: Vec<(RunError, i32)> = vec![
            (RunError::Io { reason: String::new() }, 1),
            (RunError::Config { reason: String::new() }, 2),
            (RunError::MissingInput { path: String::new() }, 3),
            (RunError::Malformed { reason: String::new() }, 4),
            (RunError::Insufficient { reason: String::new() }, 5),
            (RunError::Model { reason: String::new() }, 6),
            (RunError::Locked { path: String::new() }, 7),
        ];
        for (err, code) in cases {
            assert_eq!(err.exit_code(), code);
        }
    }

    #[test]
    fn module_errors_map_to_documented_codes() {
        let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e: RunError = IngestError::Io { path: "x".into(), source: missing }.into();
        assert_eq!(e.exit_code(), 3);

        let denied = std::io::Error::new(std::io::ErrorKind::PermissionDenied, "no");
        let e: RunError = IngestError::Io { path: "x".into(), source: denied }.into();
        assert_eq!(e.exit_code(), 1);

        let e: RunError = IngestError::MalformedLine {
            line: 3,
            field: "left",
            reason: "bad".into(),
        }
        .into();
        assert_eq!(e.exit_code(), 4);

        let e: RunError = FeatureError::EmptyOutput.into();
        assert_eq!(e.exit_code(), 5);
        let e: RunError = FeatureError::BadColumnName { name: "x".into() }.into();
        assert_eq!(e.exit_code(), 4);

        let e: RunError = MrmrError::BadK { k: 99, width: 53 }.into();
        assert_eq!(e.exit_code(), 2);
        let e: RunError = MrmrError::EmptyMatrix.into();
        assert_eq!(e.exit_code(), 5);

        let e: RunError = GbmError::SingleClassInput.into();
        assert_eq!(e.exit_code(), 5);
        let e: RunError = GbmError::NoStages.into();
        assert_eq!(e.exit_code(), 6);
        let e: RunError = GbmError::FingerprintMismatch {
            expected: "a".into(),
            got: "b".into(),
        }
        .into();
        assert_eq!(e.exit_code(), 6);
        let e: RunError = GbmError::BadHyperparams { reason: "lr".into() }.into();
        assert_eq!(e.exit_code(), 2);

        let e: RunError = EvalError::TooFewRows { n: 1 }.into();
        assert_eq!(e.exit_code(), 5);
        let e: RunError = EvalError::EmptyGrid { axis: "max_depth" }.into();
        assert_eq!(e.exit_code(), 2);
        let e: RunError = EvalError::Gbm(GbmError::NoStages).into();
        assert_eq!(e.exit_code(), 6);
    }

    #[test]
    fn lock_is_exclusive_and_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(dir.path().join(LOCK_FILE).exists());
        let second = OutputLock::acquire(dir.path());
        match second {
            Err(RunError::Locked { .. }) => {}
            other => panic!("expected Locked, got {other:?}"),
        }
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
        let third = OutputLock::acquire(dir.path()).unwrap();
        drop(third);
    }

    #[test]
    fn lock_creates_the_directory() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("a/b");
        let lock = OutputLock::acquire(&nested).unwrap();
        assert!(nested.join(LOCK_FILE).exists());
        drop(lock);
    }

    #[test]
    fn stage_file_names() {
        assert_eq!(session_file(EmotionLabel::Happy), "session_happy.csv");
        assert_eq!(session_file(EmotionLabel::Fear), "session_fear.csv");
        assert_eq!(clean_file(EmotionLabel::Anger), "clean_anger.csv");
    }

    #[test]
    fn missing_features_file_maps_to_exit_3() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.out_dir = dir.path().to_path_buf();
        let err = run_select(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
    }
}
