//! Greedy minimum-redundancy maximum-relevance feature selection.
//!
//! Columns are discretized into equal-width histogram bins and scored by
//! mutual information against the label. Selection is the MID (difference)
//! variant: the first pick maximizes relevance, every later pick maximizes
//! relevance minus the mean mutual information with the features already
//! chosen. Ties go to the lower catalog index, so the procedure is fully
//! deterministic.

use std::path::Path;

use thiserror::Error;

use crate::features::{FeatureCatalog, FeatureMatrix};

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_K: usize = 51;

#[derive(Debug, Error)]
pub enum MrmrError {
    #[error("cannot select from an empty feature matrix")]
    EmptyMatrix,
    #[error("k = {k} is outside 1..={width}")]
    BadK { k: usize, width: usize },
    #[error("need at least 2 histogram bins, got {n_bins}")]
    BadBins { n_bins: usize },
    #[error("{path}:{line}: bad selection report: {reason}")]
    BadFormat { path: String, line: usize, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Scores behind one greedy pick. The objective is
/// `relevance_bits - redundancy_bits`; on the first pick the redundancy
/// term is zero by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScore {
    pub relevance_bits: f64,
    pub redundancy_bits: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Catalog indices in pick order; no duplicates.
    pub selected: Vec<usize>,
    /// Aligned with `selected`.
    pub scores: Vec<StepScore>,
    pub k: usize,
    pub n_bins: usize,
}

/// Maps values onto `n_bins` equal-width bins over [min, max]. The maximum
/// lands in the last bin; a constant column maps everything to bin 0.
pub fn discretize(column: &[f64], n_bins: usize) -> Vec<usize> {
    assert!(n_bins >= 2, "need at least 2 bins");
    let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![0; column.len()];
    }
    let width = (max - min) / n_bins as f64;
    column
        .iter()
        .map(|v| (((v - min) / width) as usize).min(n_bins - 1))
        .collect()
}

/// Empirical mutual information in bits between two id sequences of equal
/// length, from the dense joint histogram. Zero-count cells contribute
/// nothing; tiny negative rounding residue clamps to 0.
pub fn mutual_information(x: &[usize], y: &[usize]) -> f64 {
    assert_eq!(x.len(), y.len(), "sequences must pair up");
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let x_card = x.iter().max().unwrap() + 1;
    let y_card = y.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; x_card * y_card];
    let mut px = vec![0usize; x_card];
    let mut py = vec![0usize; y_card];
    for (&a, &b) in x.iter().zip(y) {
        joint[a * y_card + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let n = n as f64;
    let mut mi = 0.0;
    for a in 0..x_card {
        for b in 0..y_card {
            let c = joint[a * y_card + b];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            mi += pxy * (pxy * n * n / (px[a] as f64 * py[b] as f64)).log2();
        }
    }
    mi.max(0.0)
}

/// Greedy MID selection of `k` features from the matrix. Mutual information
/// between selected features and remaining candidates is accumulated
/// incrementally, so each pair is measured once.
pub fn mrmr_select(
    fm: &FeatureMatrix,
    k: usize,
    n_bins: usize,
) -> Result<SelectionResult, MrmrError> {
    let width = fm.width();
    if fm.n_rows() == 0 || width == 0 {
        return Err(MrmrError::EmptyMatrix);
    }
    if k == 0 || k > width {
        return Err(MrmrError::BadK { k, width });
    }
    if n_bins < 2 {
        return Err(MrmrError::BadBins { n_bins });
    }
    let cols: Vec<Vec<usize>> = (0..width).map(|j| discretize(&fm.column(j), n_bins)).collect();
    let y: Vec<usize> = fm.labels.iter().map(|l| l.id()).collect();
    let relevance: Vec<f64> = cols.iter().map(|c| mutual_information(c, &y)).collect();

    let mut selected = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    let mut taken = vec![false; width];
    let mut redundancy_sum = vec![0.0; width];
    for _ in 0..k {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..width {
            if taken[j] {
                continue;
            }
            let red = if selected.is_empty() {
                0.0
            } else {
                redundancy_sum[j] / selected.len() as f64
            };
            let obj = relevance[j] - red;
            // strict > keeps the lower index on ties
            if best.map_or(true, |(_, _, b)| obj > b) {
                best = Some((j, red, obj));
            }
        }
        let (j, red, obj) = best.expect("k <= width leaves a candidate");
        taken[j] = true;
        selected.push(j);
        scores.push(StepScore {
            relevance_bits: relevance[j],
            redundancy_bits: red,
            objective: obj,
        });
        for cand in 0..width {
            if !taken[cand] {
                redundancy_sum[cand] += mutual_information(&cols[cand], &cols[j]);
            }
        }
    }
    Ok(SelectionResult { selected, scores, k, n_bins })
}

/// The parsed form of a selection report file.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    /// Feature names in rank order.
    pub names: Vec<String>,
    pub scores: Vec<StepScore>,
}

/// Renders the ranked selection as CSV: one line per pick with its scores.
/// This file is both the human-readable ranking and the handoff that tells
/// the training stage which columns to keep.
pub fn selection_report_csv(result: &SelectionResult, catalog: &FeatureCatalog) -> String {
    let mut out = String::from("rank,feature,relevance_bits,redundancy_bits,objective\n");
    for (rank, (&j, s)) in result.selected.iter().zip(&result.scores).enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            rank + 1,
            catalog.features[j].name,
            s.relevance_bits,
            s.redundancy_bits,
            s.objective,
        ));
    }
    out
}

pub fn parse_selection_report(text: &str, path: &str) -> Result<SelectionReport, MrmrError> {
    let bad = |line: usize, reason: String| MrmrError::BadFormat {
        path: path.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "rank,feature,relevance_bits,redundancy_bits,objective")) => {}
        _ => return Err(bad(1, "missing report header".to_string())),
    }
    let mut names = Vec::new();
    let mut scores = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(i + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let rank: usize = fields[0]
            .parse()
            .map_err(|e| bad(i + 1, format!("rank: {e}")))?;
        if rank != names.len() + 1 {
            return Err(bad(i + 1, format!("rank {rank} out of sequence")));
        }
        let mut nums = [0.0; 3];
        for (slot, field) in nums.iter_mut().zip(&fields[2..]) {
            *slot = field
                .parse()
                .map_err(|e| bad(i + 1, format!("score: {e}")))?;
        }
        names.push(fields[1].to_string());
        scores.push(StepScore {
            relevance_bits: nums[0],
            redundancy_bits: nums[1],
            objective: nums[2],
        });
    }
    if names.is_empty() {
        return Err(bad(1, "report lists no features".to_string()));
    }
    Ok(SelectionReport { names, scores })
}

pub fn read_selection_report(path: &Path) -> Result<SelectionReport, MrmrError> {
    let text = std::fs::read_to_string(path).map_err(|source| MrmrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_selection_report(&text, &path.display().to_string())
}
