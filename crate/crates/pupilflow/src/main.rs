use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pupilflow::run::{
    run_evaluate, run_featurize, run_pipeline, run_preprocess, run_report_features, run_select,
    run_synth, run_train, OutputLock, RunConfig, RunError, TrainSummary,
};

fn version_string() -> &'static str {
    let text = format!(
        "{} (model format {:?}, clean format {:?})",
        env!("CARGO_PKG_VERSION"),
        pupilflow::gbm::MODEL_FORMAT,
        pupilflow::preprocess::CLEAN_FORMAT,
    );
    Box::leak(text.into_boxed_str())
}

const EXIT_CODE_HELP: &str = "\
exit codes:
  0  success
  1  i/o failure
  2  config error
  3  missing input
  4  malformed data
  5  insufficient data
  6  model error
  7  output directory locked";

#[derive(Parser)]
#[command(
    name = "pupilflow",
    version = version_string(),
    about = "Pupil-diameter emotion recognition: generate sessions, clean them, \
             extract windowed features, rank them, train a boosted-tree \
             classifier, and evaluate it.",
    after_help = EXIT_CODE_HELP
)]
struct Cli {
    #[command(flatten)]
    opts: CommonOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Config file of `key = value` lines; flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for all stage artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Directory preprocess reads session files from (default: the output directory).
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Root seed; the generator and the train/test split derive from it.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Pick the boosting stage on the test split (optimistic; prints a warning).
    #[arg(long, global = true)]
    select_on_test: bool,
    /// Stage selection signal: mse or deviance.
    #[arg(long, global = true, value_name = "RULE")]
    stage_rule: Option<String>,
    /// How many ranked features report-features lists.
    #[arg(long, global = true, value_name = "N")]
    top: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one labeled session file per emotion.
    Synth,
    /// Remove blink and dropout samples from each session file.
    Preprocess,
    /// Cut sliding windows and write the feature matrix.
    Featurize,
    /// Rank features by relevance minus redundancy.
    Select,
    /// Grid-search hyperparameters and fit the final model.
    Train,
    /// Score the saved model on the held-out test rows.
    Evaluate,
    /// List the top-ranked features in readable form.
    ReportFeatures,
    /// Run every stage in order against one configuration.
    Pipeline,
}

fn assemble_config(opts: &CommonOpts) -> Result<RunConfig, RunError> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &opts.out {
        cfg.out_dir = out.clone();
    }
    if let Some(data) = &opts.data {
        cfg.data_dir = Some(data.clone());
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if opts.select_on_test {
        cfg.select_on_test = true;
    }
    if let Some(rule) = &opts.stage_rule {
        cfg.stage_rule = rule.parse().map_err(|reason| RunError::Config { reason })?;
    }
    if let Some(top) = opts.top {
        cfg.report_top_n = top;
    }
    Ok(cfg)
}

fn print_train_summary(s: &TrainSummary) {
    if s.leakage_warning {
        eprintln!(
            "warning: boosting stage selected on the test split; reported metrics are optimistic"
        );
    }
    let h = &s.best;
    println!(
        "trained on {} rows ({} held out): {} stages, learning rate {}, depth {}, \
         validation accuracy {:.4}",
        s.train_rows, s.test_rows, h.n_estimators, h.learning_rate, h.max_depth, s.best_accuracy
    );
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    let cfg = assemble_config(&cli.opts)?;
    let _lock = OutputLock::acquire(&cfg.out_dir)?;
    match cli.command {
        Command::Synth => {
            for path in run_synth(&cfg)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Preprocess => {
            println!("source,kept,dropped");
            for line in run_preprocess(&cfg)? {
                println!("{line}");
            }
        }
        Command::Featurize => {
            let (rows, stats) = run_featurize(&cfg)?;
            println!(
                "extracted {rows} feature rows ({} degenerate, {} short windows dropped)",
                stats.dropped_degenerate, stats.dropped_short
            );
        }
        Command::Select => {
            let n = run_select(&cfg)?;
            println!("ranked {n} features");
        }
        Command::Train => {
            print_train_summary(&run_train(&cfg)?);
        }
        Command::Evaluate => {
            let report = run_evaluate(&cfg)?;
            print!("{}", pupilflow::eval::report_text(&report));
        }
        Command::ReportFeatures => {
            let (_, table) = run_report_features(&cfg)?;
            print!("{table}");
        }
        Command::Pipeline => {
            let summary = run_pipeline(&cfg)?;
            for path in &summary.session_files {
                println!("wrote {}", path.display());
            }
            println!("source,kept,dropped");
            for line in &summary.preprocess_lines {
                println!("{line}");
            }
            println!(
                "extracted {} feature rows ({} degenerate, {} short windows dropped)",
                summary.feature_rows,
                summary.extract_stats.dropped_degenerate,
                summary.extract_stats.dropped_short
            );
            println!("ranked {} features", summary.selected);
            print_train_summary(&summary.train);
            print!("{}", pupilflow::eval::report_text(&summary.report));
            println!("listed {} features", summary.top_listed);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("pupilflow: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
