//! Train/test splitting, grid search, and the evaluation report.
//!
//! The report carries a 4x4 confusion matrix (rows = true, columns =
//! predicted, canonical label order) and six scalars: accuracy, macro
//! recall, macro precision, macro specificity, the F-score of the macro
//! pair, and the multiclass Matthews correlation coefficient (the R_K
//! generalization). Degenerate denominators never error: the affected rate
//! contributes 0 and the report records a flag saying so.
//!
//! Splitting shuffles with a seeded generator. Stratified mode (the
//! default) shuffles within each class, sizes the per-class train counts by
//! largest-remainder rounding of the train fraction, then shuffles the
//! assembled train and test row lists so neither is grouped by class.

use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::gbm::{self, GbmError, GbmModel, Hyperparams};
use crate::label::EmotionLabel;
use crate::rng::{derive_seed, stream, STAGE_GRID, STAGE_SPLIT};

const K: usize = EmotionLabel::COUNT;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 rows to split, got {n}")]
    TooFewRows { n: usize },
    #[error("truth has {truth} rows but predictions have {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("no rows to tally")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("grid axis {axis} has no values")]
    EmptyGrid { axis: &'static str },
    #[error(transparent)]
    Gbm(#[from] GbmError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    /// Root seed; the shuffle itself runs on this seed's split substream.
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { train_fraction: 0.7, seed: 42, stratified: true }
    }
}

fn shuffle(v: &mut [usize], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::Rng;
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
}

/// Largest-remainder apportionment of `train_total` across class counts:
/// every class gets the floor of its proportional share, leftovers go to
/// the largest fractional remainders, ties to the lower class id. Integer
/// arithmetic throughout, so there are no float ties.
fn stratified_train_counts(counts: &[usize; 4], train_total: usize) -> [usize; 4] {
    let n: usize = counts.iter().sum();
    let mut train = [0usize; 4];
    let mut rems = [0usize; 4];
    let mut assigned = 0;
    for k in 0..K {
        train[k] = counts[k] * train_total / n;
        rems[k] = counts[k] * train_total % n;
        assigned += train[k];
    }
    let mut order: Vec<usize> = (0..K).collect();
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &k in order.iter().take(train_total - assigned) {
        train[k] += 1;
    }
    train
}

/// Splits row indices into (train, test). Deterministic for a fixed seed;
/// both sides are non-empty, disjoint, and cover every row.
pub fn split_indices(
    labels: &[EmotionLabel],
    cfg: &SplitConfig,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    assert!(
        cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0,
        "train fraction must be inside (0, 1)"
    );
    let n = labels.len();
    if n < 2 {
        return Err(EvalError::TooFewRows { n });
    }
    let train_total =
        ((cfg.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = stream(cfg.seed, &[STAGE_SPLIT]);
    if !cfg.stratified {
        let mut idx: Vec<usize> = (0..n).collect();
        shuffle(&mut idx, &mut rng);
        let test = idx.split_off(train_total);
        return Ok((idx, test));
    }
    let mut by_class: [Vec<usize>; 4] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.id()].push(i);
    }
    let mut counts = [0usize; 4];
    for k in 0..K {
        shuffle(&mut by_class[k], &mut rng);
        counts[k] = by_class[k].len();
    }
    let per_class_train = stratified_train_counts(&counts, train_total);
    let mut train = Vec::with_capacity(train_total);
    let mut test = Vec::with_capacity(n - train_total);
    for k in 0..K {
        train.extend(&by_class[k][..per_class_train[k]]);
        test.extend(&by_class[k][per_class_train[k]..]);
    }
    shuffle(&mut train, &mut rng);
    shuffle(&mut test, &mut rng);
    Ok((train, test))
}

pub fn shuffle_split(
    fm: &FeatureMatrix,
    cfg: &SplitConfig,
) -> Result<(FeatureMatrix, FeatureMatrix), EvalError> {
    let (train, test) = split_indices(&fm.labels, cfg)?;
    Ok((fm.take_rows(&train), fm.take_rows(&test)))
}

pub fn confusion_matrix(
    truth: &[EmotionLabel],
    pred: &[EmotionLabel],
) -> Result<[[usize; 4]; 4], EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch { truth: truth.len(), pred: pred.len() });
    }
    if truth.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut cm = [[0usize; 4]; 4];
    for (t, p) in truth.iter().zip(pred) {
        cm[t.id()][p.id()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    pub label: EmotionLabel,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub tn: usize,
    pub recall: f64,
    pub precision: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub confusion: [[usize; 4]; 4],
    pub accuracy: f64,
    pub recall_macro: f64,
    pub precision_macro: f64,
    pub specificity_macro: f64,
    pub f_score: f64,
    pub mcc: f64,
    pub per_class: [ClassStats; 4],
    /// One entry per rate that had a zero denominator and was scored 0.
    pub flags: Vec<String>,
}

/// Six-metric report from a confusion matrix. Per-class rates come from
/// one-vs-rest tallies and are macro-averaged; the F-score combines the
/// macro precision and recall; the correlation coefficient is the
/// multiclass R_K form over row, column, and diagonal sums.
pub fn metrics(cm: &[[usize; 4]; 4]) -> Result<EvaluationReport, EvalError> {
    let total: usize = cm.iter().flatten().sum();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let trace: usize = (0..K).map(|k| cm[k][k]).sum();
    let row_sums: Vec<usize> = (0..K).map(|i| cm[i].iter().sum()).collect();
    let col_sums: Vec<usize> = (0..K).map(|j| (0..K).map(|i| cm[i][j]).sum()).collect();

    let mut flags = Vec::new();
    let mut rate = |num: usize, den: usize, what: &str, label: EmotionLabel| -> f64 {
        if den == 0 {
            flags.push(format!("{what}({label}): zero denominator, scored 0"));
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let mut per_class = Vec::with_capacity(K);
    for k in 0..K {
        let label = EmotionLabel::from_id(k).unwrap();
        let tp = cm[k][k];
        let fp = col_sums[k] - tp;
        let fn_count = row_sums[k] - tp;
        let tn = total - tp - fp - fn_count;
        per_class.push(ClassStats {
            label,
            tp,
            fp,
            fn_count,
            tn,
            recall: rate(tp, tp + fn_count, "recall", label),
            precision: rate(tp, tp + fp, "precision", label),
            specificity: rate(tn, tn + fp, "specificity", label),
        });
    }
    let per_class: [ClassStats; 4] = per_class.try_into().unwrap();
    let recall_macro = per_class.iter().map(|c| c.recall).sum::<f64>() / K as f64;
    let precision_macro = per_class.iter().map(|c| c.precision).sum::<f64>() / K as f64;
    let specificity_macro = per_class.iter().map(|c| c.specificity).sum::<f64>() / K as f64;
    let f_score = if precision_macro + recall_macro == 0.0 {
        flags.push("f_score: zero denominator, scored 0".to_string());
        0.0
    } else {
        2.0 * precision_macro * recall_macro / (precision_macro + recall_macro)
    };

    let s = total as f64;
    let c = trace as f64;
    let dot_pt: f64 = (0..K).map(|k| col_sums[k] as f64 * row_sums[k] as f64).sum();
    let dot_pp: f64 = col_sums.iter().map(|&p| (p * p) as f64).sum();
    let dot_tt: f64 = row_sums.iter().map(|&t| (t * t) as f64).sum();
    let denom = ((s * s - dot_pp) * (s * s - dot_tt)).sqrt();
    let mcc = if denom == 0.0 {
        flags.push("mcc: zero denominator, scored 0".to_string());
        0.0
    } else {
        (c * s - dot_pt) / denom
    };

    Ok(EvaluationReport {
        confusion: *cm,
        accuracy: trace as f64 / s,
        recall_macro,
        precision_macro,
        specificity_macro,
        f_score,
        mcc,
        per_class,
        flags,
    })
}

pub fn accuracy_of(pred: &[EmotionLabel], truth: &[EmotionLabel]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// Builds the full report for a prediction run.
pub fn evaluate(
    truth: &[EmotionLabel],
    pred: &[EmotionLabel],
) -> Result<EvaluationReport, EvalError> {
    metrics(&confusion_matrix(truth, pred)?)
}

/// Machine-readable report: one `metric,value` row per scalar (full float
/// precision), then the confusion block with label-token headers.
pub fn report_csv(r: &EvaluationReport) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("accuracy,{}\n", r.accuracy));
    out.push_str(&format!("recall_macro,{}\n", r.recall_macro));
    out.push_str(&format!("precision_macro,{}\n", r.precision_macro));
    out.push_str(&format!("specificity_macro,{}\n", r.specificity_macro));
    out.push_str(&format!("f_score,{}\n", r.f_score));
    out.push_str(&format!("mcc,{}\n", r.mcc));
    out.push_str("confusion");
    for l in EmotionLabel::ALL {
        out.push_str(&format!(",{l}"));
    }
    out.push('\n');
    for (i, l) in EmotionLabel::ALL.iter().enumerate() {
        out.push_str(&l.to_string());
        for j in 0..K {
            out.push_str(&format!(",{}", r.confusion[i][j]));
        }
        out.push('\n');
    }
    out
}

/// Human-readable report with the per-class table and any flags.
pub fn report_text(r: &EvaluationReport) -> String {
    let total: usize = r.confusion.iter().flatten().sum();
    let mut out = String::new();
    out.push_str(&format!("rows evaluated      {total}\n"));
    out.push_str(&format!("accuracy            {:.4}\n", r.accuracy));
    out.push_str(&format!("recall (macro)      {:.4}\n", r.recall_macro));
    out.push_str(&format!("precision (macro)   {:.4}\n", r.precision_macro));
    out.push_str(&format!("specificity (macro) {:.4}\n", r.specificity_macro));
    out.push_str(&format!("f-score             {:.4}\n", r.f_score));
    out.push_str(&format!("mcc                 {:.4}\n", r.mcc));
    out.push_str("\nconfusion matrix (rows = true, cols = predicted)\n");
    out.push_str(&format!("{:>8}", ""));
    for l in EmotionLabel::ALL {
        out.push_str(&format!("{:>8}", l.token()));
    }
    out.push('\n');
    for (i, l) in EmotionLabel::ALL.iter().enumerate() {
        out.push_str(&format!("{:>8}", l.token()));
        for j in 0..K {
            out.push_str(&format!("{:>8}", r.confusion[i][j]));
        }
        out.push('\n');
    }
    out.push_str("\nper class\n");
    out.push_str(&format!(
        "{:>8}{:>6}{:>6}{:>6}{:>6}{:>10}{:>11}{:>13}\n",
        "label", "tp", "fp", "fn", "tn", "recall", "precision", "specificity"
    ));
    for c in &r.per_class {
        out.push_str(&format!(
            "{:>8}{:>6}{:>6}{:>6}{:>6}{:>10.4}{:>11.4}{:>13.4}\n",
            c.label.token(),
            c.tp,
            c.fp,
            c.fn_count,
            c.tn,
            c.recall,
            c.precision,
            c.specificity
        ));
    }
    if r.flags.is_empty() {
        out.push_str("\nflags: none\n");
    } else {
        out.push_str("\nflags:\n");
        for f in &r.flags {
            out.push_str(&format!("  {f}\n"));
        }
    }
    out
}

/// Hyperparameter axes scanned by grid search. Cells enumerate in nested
/// order with learning_rate outermost and subsample innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub n_estimators: Vec<usize>,
    pub max_features: Vec<usize>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub subsample: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            learning_rate: vec![0.05, 0.051],
            max_depth: vec![5],
            n_estimators: vec![20],
            max_features: vec![7],
            min_samples_split: vec![200],
            min_samples_leaf: vec![30],
            subsample: vec![0.8],
        }
    }
}

impl GridSpec {
    pub fn cells(&self, model_seed: u64) -> Result<Vec<Hyperparams>, EvalError> {
        let axes: [(&'static str, bool); 7] = [
            ("learning_rate", self.learning_rate.is_empty()),
            ("max_depth", self.max_depth.is_empty()),
            ("n_estimators", self.n_estimators.is_empty()),
            ("max_features", self.max_features.is_empty()),
            ("min_samples_split", self.min_samples_split.is_empty()),
            ("min_samples_leaf", self.min_samples_leaf.is_empty()),
            ("subsample", self.subsample.is_empty()),
        ];
        for (axis, empty) in axes {
            if empty {
                return Err(EvalError::EmptyGrid { axis });
            }
        }
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &max_depth in &self.max_depth {
                for &n_estimators in &self.n_estimators {
                    for &max_features in &self.max_features {
                        for &min_samples_split in &self.min_samples_split {
                            for &min_samples_leaf in &self.min_samples_leaf {
                                for &subsample in &self.subsample {
                                    out.push(Hyperparams {
                                        max_depth,
                                        learning_rate,
                                        n_estimators,
                                        max_features,
                                        min_samples_split,
                                        min_samples_leaf,
                                        subsample,
                                        seed: model_seed,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Which signal picks the boosting stage after a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageRule {
    /// Mean squared error between integer label encodings (the default).
    Mse,
    /// Mean multinomial deviance.
    Deviance,
}

impl std::str::FromStr for StageRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mse" => Ok(StageRule::Mse),
            "deviance" => Ok(StageRule::Deviance),
            other => Err(format!("unknown stage rule {other:?} (use mse or deviance)")),
        }
    }
}

impl std::fmt::Display for StageRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StageRule::Mse => "mse",
            StageRule::Deviance => "deviance",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    /// As evaluated (n_estimators is the scanned stage budget).
    pub hp: Hyperparams,
    /// 1-based stage the rule picked on the scoring set.
    pub selected_stage: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutcome {
    /// Best cell's hyperparameters with n_estimators set to its selected
    /// stage count.
    pub best: Hyperparams,
    pub table: Vec<GridCell>,
}

fn score_cell(
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    hp: &Hyperparams,
    rule: StageRule,
) -> Result<(GbmModel, GridCell), EvalError> {
    let model = gbm::fit(train, hp)?;
    let staged = model.staged_predict(val)?;
    let stage = match rule {
        StageRule::Mse => gbm::select_best_stage(&staged, &val.labels),
        StageRule::Deviance => gbm::select_best_stage_by_deviance(&model, val)?,
    };
    let acc = accuracy_of(&staged[stage - 1], &val.labels);
    Ok((model, GridCell { hp: hp.clone(), selected_stage: stage, accuracy: acc }))
}

/// Scores every grid cell by fitting on `train` and selecting a stage on
/// `val`. The best cell is the highest validation accuracy, first in grid
/// order on ties.
pub fn grid_search_with(
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    grid: &GridSpec,
    model_seed: u64,
    rule: StageRule,
) -> Result<GridOutcome, EvalError> {
    let cells = grid.cells(model_seed)?;
    let mut table = Vec::with_capacity(cells.len());
    for hp in &cells {
        let (_, cell) = score_cell(train, val, hp, rule)?;
        table.push(cell);
    }
    let mut best_i = 0;
    for (i, cell) in table.iter().enumerate() {
        if cell.accuracy > table[best_i].accuracy {
            best_i = i;
        }
    }
    let mut best = table[best_i].hp.clone();
    best.n_estimators = table[best_i].selected_stage;
    Ok(GridOutcome { best, table })
}

/// Leakage-free grid search: carves an inner 80/20 validation split out of
/// the training rows (seeded by the grid substream of `root_seed`) and
/// scores cells on the inner validation set only.
pub fn grid_search(
    fm: &FeatureMatrix,
    grid: &GridSpec,
    root_seed: u64,
    model_seed: u64,
    rule: StageRule,
) -> Result<GridOutcome, EvalError> {
    let cfg = SplitConfig {
        train_fraction: 0.8,
        seed: derive_seed(root_seed, &[STAGE_GRID]),
        stratified: true,
    };
    let (inner_train, inner_val) = shuffle_split(fm, &cfg)?;
    grid_search_with(&inner_train, &inner_val, grid, model_seed, rule)
}

/// Grid table as headered CSV, rows in grid order.
pub fn grid_table_csv(outcome: &GridOutcome) -> String {
    let mut out = String::from(
        "learning_rate,max_depth,n_estimators,max_features,min_samples_split,\
         min_samples_leaf,subsample,selected_stage,accuracy\n",
    );
    for cell in &outcome.table {
        let h = &cell.hp;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            h.learning_rate,
            h.max_depth,
            h.n_estimators,
            h.max_features,
            h.min_samples_split,
            h.min_samples_leaf,
            h.subsample,
            cell.selected_stage,
            cell.accuracy,
        ));
    }
    out
}
