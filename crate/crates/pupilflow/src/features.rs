//! Per-window feature extraction.
//!
//! Each surviving window yields 53 features: 25 per eye plus 3 cross-eye
//! terms. Per eye the split is 10 time-domain descriptors, 7 frequency
//! descriptors from a Welch PSD, and 8 time-frequency descriptors (per-band
//! mean and spread across four sub-windows). Column names encode their
//! origin: `{le|re|xy}_{time|freq|tf}_{name}`.
//!
//! The `core` flag marks the compact descriptor set (mean, spread,
//! kurtosis, band powers, cross-eye covariance); everything else is an
//! extension that the selection stage is free to discard.
//!
//! Windows where either eye is constant carry no usable variation and are
//! dropped (counted, not padded); so are windows too short for a spectral
//! estimate. Extraction is sequential and free of ambient randomness, so a
//! given input always produces a bit-identical matrix.

use std::path::Path;

use thiserror::Error;

use crate::label::EmotionLabel;
use crate::preprocess::CleanSeries;
use crate::spectral::{self, SpectralConfig};
use crate::window::{make_windows, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogEye {
    Left,
    Right,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Time,
    Freq,
    TimeFreq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDescriptor {
    pub name: String,
    pub eye: CatalogEye,
    pub domain: Domain,
    pub core: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCatalog {
    pub features: Vec<FeatureDescriptor>,
}

pub const TIME_NAMES: [&str; 10] = [
    "mean",
    "std",
    "kurtosis",
    "min",
    "max",
    "range",
    "median",
    "mean_abs_diff",
    "std_diff",
    "skewness",
];

pub const FREQ_NAMES: [&str; 7] = [
    "power_b0",
    "power_b1",
    "power_b2",
    "power_b3",
    "total_power",
    "peak_hz",
    "spectral_entropy",
];

pub const TF_NAMES: [&str; 8] = [
    "b0_mean",
    "b0_std",
    "b1_mean",
    "b1_std",
    "b2_mean",
    "b2_std",
    "b3_mean",
    "b3_std",
];

pub const CROSS_NAMES: [&str; 3] = ["cov", "corr", "mean_diff"];

const CORE_TIME: [&str; 3] = ["mean", "std", "kurtosis"];
const CORE_FREQ: [&str; 5] = ["power_b0", "power_b1", "power_b2", "power_b3", "total_power"];

impl FeatureCatalog {
    /// The full 53-feature catalog in its fixed column order: the left eye
    /// block (time, freq, time-frequency), the right eye block, then the
    /// cross-eye terms.
    pub fn default_catalog() -> FeatureCatalog {
        let mut features = Vec::with_capacity(53);
        for (prefix, eye) in [("le", CatalogEye::Left), ("re", CatalogEye::Right)] {
            for name in TIME_NAMES {
                features.push(FeatureDescriptor {
                    name: format!("{prefix}_time_{name}"),
                    eye,
                    domain: Domain::Time,
                    core: CORE_TIME.contains(&name),
                });
            }
            for name in FREQ_NAMES {
                features.push(FeatureDescriptor {
                    name: format!("{prefix}_freq_{name}"),
                    eye,
                    domain: Domain::Freq,
                    core: CORE_FREQ.contains(&name),
                });
            }
            for name in TF_NAMES {
                features.push(FeatureDescriptor {
                    name: format!("{prefix}_tf_{name}"),
                    eye,
                    domain: Domain::TimeFreq,
                    core: false,
                });
            }
        }
        for name in CROSS_NAMES {
            features.push(FeatureDescriptor {
                name: format!("xy_time_{name}"),
                eye: CatalogEye::Cross,
                domain: Domain::Time,
                core: name == "cov",
            });
        }
        FeatureCatalog { features }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// FNV-1a hash of the column names, as 16 hex digits. Models record it
    /// so that a matrix with different columns is rejected at predict time.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for f in &self.features {
            for b in f.name.bytes().chain([b'\n']) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureCatalog {
        FeatureCatalog {
            features: indices.iter().map(|i| self.features[*i].clone()).collect(),
        }
    }

    /// Rebuilds descriptors from column names (the CSV header). Eye and
    /// domain come from the name's prefix; the core flag is recovered from
    /// the default catalog where the name is known.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<FeatureCatalog, FeatureError> {
        let default = FeatureCatalog::default_catalog();
        let mut features = Vec::with_capacity(names.len());
        for n in names {
            let name = n.as_ref();
            let eye = if name.starts_with("le_") {
                CatalogEye::Left
            } else if name.starts_with("re_") {
                CatalogEye::Right
            } else if name.starts_with("xy_") {
                CatalogEye::Cross
            } else {
                return Err(FeatureError::BadColumnName { name: name.to_string() });
            };
            let rest = &name[3..];
            let domain = if rest.starts_with("time_") {
                Domain::Time
            } else if rest.starts_with("freq_") {
                Domain::Freq
            } else if rest.starts_with("tf_") {
                Domain::TimeFreq
            } else {
                return Err(FeatureError::BadColumnName { name: name.to_string() });
            };
            let core = default
                .index_of(name)
                .map(|i| default.features[i].core)
                .unwrap_or(false);
            features.push(FeatureDescriptor { name: name.to_string(), eye, domain, core });
        }
        Ok(FeatureCatalog { features })
    }
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("window has {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },
    #[error("degenerate window: {reason}")]
    DegenerateWindow { reason: String },
    #[error("no windows survived extraction")]
    EmptyOutput,
    #[error("unrecognized feature column name {name:?}")]
    BadColumnName { name: String },
    #[error("{path}:{line}: bad feature file: {reason}")]
    BadFormat { path: String, line: usize, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn central_moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (mean, m2 / n, m3 / n, m4 / n)
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Time-domain descriptors of one eye's samples, in [`TIME_NAMES`] order:
/// mean, sample standard deviation, kurtosis (m4/m2^2, so a normal signal
/// sits near 3), min, max, range, median, mean absolute first difference,
/// sample standard deviation of first differences, and skewness
/// (m3/m2^1.5). Needs at least 3 samples and a non-constant signal.
pub fn time_features(values: &[f64]) -> Result<[f64; 10], FeatureError> {
    if values.len() < 3 {
        return Err(FeatureError::TooShort { len: values.len(), need: 3 });
    }
    let (mean, m2, m3, m4) = central_moments(values);
    if m2 == 0.0 {
        return Err(FeatureError::DegenerateWindow {
            reason: "all samples identical".to_string(),
        });
    }
    let std = sample_std(values);
    let kurtosis = m4 / (m2 * m2);
    let skewness = m3 / m2.powf(1.5);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_abs_diff = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
    let std_diff = sample_std(&diffs);
    Ok([
        mean,
        std,
        kurtosis,
        min,
        max,
        max - min,
        median(values),
        mean_abs_diff,
        std_diff,
        skewness,
    ])
}

/// Cross-eye descriptors in [`CROSS_NAMES`] order: sample covariance,
/// Pearson correlation, and the mean left-minus-right difference. Both
/// series must have the same length, at least 2 samples, and variation in
/// each eye.
pub fn cross_features(le: &[f64], re: &[f64]) -> Result<[f64; 3], FeatureError> {
    assert_eq!(le.len(), re.len(), "eyes must have paired samples");
    let n = le.len();
    if n < 2 {
        return Err(FeatureError::TooShort { len: n, need: 2 });
    }
    let mean_l = le.iter().sum::<f64>() / n as f64;
    let mean_r = re.iter().sum::<f64>() / n as f64;
    let (mut ss_l, mut ss_r, mut sxy, mut diff_sum) = (0.0, 0.0, 0.0, 0.0);
    for (l, r) in le.iter().zip(re) {
        let dl = l - mean_l;
        let dr = r - mean_r;
        ss_l += dl * dl;
        ss_r += dr * dr;
        sxy += dl * dr;
        diff_sum += l - r;
    }
    if ss_l == 0.0 || ss_r == 0.0 {
        return Err(FeatureError::DegenerateWindow {
            reason: "one eye is constant".to_string(),
        });
    }
    let cov = sxy / (n - 1) as f64;
    let corr = sxy / (ss_l.sqrt() * ss_r.sqrt());
    Ok([cov, corr, diff_sum / n as f64])
}

/// Frequency-domain descriptors of one eye, in [`FREQ_NAMES`] order: the
/// four band powers, total 0-4 Hz power, peak frequency, and spectral
/// entropy, all from a Welch PSD of the window.
pub fn freq_features(
    values: &[f64],
    fs: f64,
    cfg: &SpectralConfig,
) -> Result<[f64; 7], FeatureError> {
    let psd = spectral::welch_psd(values, fs, cfg).map_err(|e| match e {
        spectral::SpectralError::TooShort { len, seg_len } => {
            FeatureError::TooShort { len, need: seg_len }
        }
    })?;
    let bp = spectral::band_powers(&psd);
    Ok([
        bp[0],
        bp[1],
        bp[2],
        bp[3],
        spectral::total_power(&psd),
        spectral::peak_frequency(&psd),
        spectral::spectral_entropy(&psd),
    ])
}

/// Time-frequency descriptors of one eye, in [`TF_NAMES`] order. The window
/// splits into four equal sub-windows; each contributes band powers from a
/// single mean-removed Hann periodogram, and per band the four values are
/// summarized by mean and sample standard deviation. A stationary signal
/// has near-zero spreads; power drifting through the window shows up as
/// positive spread in its band.
pub fn timefreq_features(values: &[f64], fs: f64) -> Result<[f64; 8], FeatureError> {
    let n = values.len();
    if n < 256 {
        return Err(FeatureError::TooShort { len: n, need: 256 });
    }
    let mut per_band = [[0.0; 4]; 4]; // [band][sub-window]
    for s in 0..4 {
        let sub = &values[s * n / 4..(s + 1) * n / 4];
        let bp = spectral::band_powers(&spectral::periodogram(sub, fs));
        for b in 0..4 {
            per_band[b][s] = bp[b];
        }
    }
    let mut out = [0.0; 8];
    for b in 0..4 {
        out[2 * b] = per_band[b].iter().sum::<f64>() / 4.0;
        out[2 * b + 1] = sample_std(&per_band[b]);
    }
    Ok(out)
}

/// Where a feature row came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RowProvenance {
    pub source_name: String,
    pub window_start_ms: i64,
}

/// A labeled feature matrix. Row `i` of `data` (flat, row-major) pairs with
/// `labels[i]` and `provenance[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub catalog: FeatureCatalog,
    pub data: Vec<f64>,
    pub labels: Vec<EmotionLabel>,
    pub provenance: Vec<RowProvenance>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn width(&self) -> usize {
        self.catalog.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width()..(i + 1) * self.width()]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }

    /// Rows carrying each label, in canonical label order.
    pub fn class_counts(&self) -> [usize; EmotionLabel::COUNT] {
        let mut counts = [0; EmotionLabel::COUNT];
        for l in &self.labels {
            counts[l.id()] += 1;
        }
        counts
    }

    /// A new matrix keeping only the given columns, in the given order.
    pub fn project(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.n_rows() * indices.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            data.extend(indices.iter().map(|j| row[*j]));
        }
        FeatureMatrix {
            catalog: self.catalog.subset(indices),
            data,
            labels: self.labels.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn project_by_names(&self, names: &[&str]) -> Result<FeatureMatrix, FeatureError> {
        let indices = names
            .iter()
            .map(|n| {
                self.catalog
                    .index_of(n)
                    .ok_or_else(|| FeatureError::BadColumnName { name: n.to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.project(&indices))
    }

    /// A new matrix keeping only the given rows, in the given order.
    pub fn take_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.width());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            catalog: self.catalog.clone(),
            data,
            labels: indices.iter().map(|i| self.labels[*i]).collect(),
            provenance: indices.iter().map(|i| self.provenance[*i].clone()).collect(),
        }
    }

    /// Headered CSV: a `label` column followed by one column per feature.
    /// Values use 17 significant digits, enough to reproduce each f64 bit
    /// for bit on re-read.
    pub fn write_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str("label");
        for f in &self.catalog.features {
            out.push(',');
            out.push_str(&f.name);
        }
        out.push('\n');
        for i in 0..self.n_rows() {
            out.push_str(self.labels[i].token());
            for v in self.row(i) {
                out.push(',');
                out.push_str(&format!("{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.write_csv_string()).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<FeatureMatrix, FeatureError> {
        let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        FeatureMatrix::read_csv_from_str(&text, &path.display().to_string())
    }

    /// Parses the CSV shape written by [`write_csv_string`]. Window
    /// provenance is not part of the file format, so re-read rows carry a
    /// placeholder pointing at the file itself.
    pub fn read_csv_from_str(text: &str, path: &str) -> Result<FeatureMatrix, FeatureError> {
        let bad = |line: usize, reason: String| FeatureError::BadFormat {
            path: path.to_string(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".to_string()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("label") {
            return Err(bad(1, "first column must be `label`".to_string()));
        }
        let names: Vec<&str> = cols.collect();
        if names.is_empty() {
            return Err(bad(1, "no feature columns".to_string()));
        }
        let catalog = FeatureCatalog::from_names(&names)?;
        let width = catalog.len();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut provenance = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let token = fields.next().unwrap();
            let label = EmotionLabel::parse_token(token)
                .ok_or_else(|| bad(i + 1, format!("unknown emotion token {token:?}")))?;
            let mut count = 0;
            for field in fields {
                let v: f64 = field
                    .parse()
                    .map_err(|e| bad(i + 1, format!("column {}: {e}", count + 2)))?;
                data.push(v);
                count += 1;
            }
            if count != width {
                return Err(bad(i + 1, format!("expected {width} values, got {count}")));
            }
            labels.push(label);
            provenance.push(RowProvenance {
                source_name: path.to_string(),
                window_start_ms: -1,
            });
        }
        Ok(FeatureMatrix { catalog, data, labels, provenance })
    }
}

/// Counters for what extraction did with the candidate windows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub rows_emitted: usize,
    pub dropped_degenerate: usize,
    pub dropped_short: usize,
}

fn feature_row(
    le: &[f64],
    re: &[f64],
    fs: f64,
    scfg: &SpectralConfig,
) -> Result<Vec<f64>, FeatureError> {
    let mut row = Vec::with_capacity(53);
    for eye in [le, re] {
        row.extend(time_features(eye)?);
        row.extend(freq_features(eye, fs, scfg)?);
        row.extend(timefreq_features(eye, fs)?);
    }
    row.extend(cross_features(le, re)?);
    Ok(row)
}

/// Extracts the feature matrix for a set of cleaned series. Windows are cut
/// per series (never spanning two), and windows that are degenerate or too
/// short for spectral analysis are dropped and counted in the stats.
pub fn extract(
    series: &[CleanSeries],
    wcfg: &WindowConfig,
    scfg: &SpectralConfig,
) -> Result<(FeatureMatrix, ExtractStats), FeatureError> {
    let catalog = FeatureCatalog::default_catalog();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    let mut stats = ExtractStats::default();
    for s in series {
        for w in make_windows(s, wcfg) {
            let le = w.left();
            let re = w.right();
            match feature_row(&le, &re, s.sample_rate_hz, scfg) {
                Ok(row) => {
                    debug_assert_eq!(row.len(), catalog.len());
                    data.extend(row);
                    labels.push(s.label);
                    provenance.push(RowProvenance {
                        source_name: s.source_name.clone(),
                        window_start_ms: w.start_ms,
                    });
                    stats.rows_emitted += 1;
                }
                Err(FeatureError::DegenerateWindow { .. }) => stats.dropped_degenerate += 1,
                Err(FeatureError::TooShort { .. }) => stats.dropped_short += 1,
                Err(other) => return Err(other),
            }
        }
    }
    if labels.is_empty() {
        return Err(FeatureError::EmptyOutput);
    }
    Ok((FeatureMatrix { catalog, data, labels, provenance }, stats))
}
