//! Blink and artifact removal.
//!
//! Trackers emit -1 in place of a diameter while an eye is closed or lost.
//! Preprocessing drops every sample where either eye carries the sentinel
//! (losing one eye invalidates the pair) and then enforces the sensor's
//! plausible range on the survivors: diameters must lie in (0, 8] mm.
//! Sample times are kept as-is, so the cleaned series has gaps where blinks
//! were; windowing later decides whether a gap starves a window.

use std::path::Path;

use thiserror::Error;

use crate::ingest::{PupilSample, Recording};
use crate::label::EmotionLabel;

/// Upper plausibility bound for a pupil diameter, in mm.
pub const MAX_DIAMETER_MM: f64 = 8.0;

/// A recording with sentinel rows removed. Invariants: no sample carries a
/// sentinel, all diameters lie in (0, 8], `t_ms` is strictly increasing, and
/// `samples.len() + dropped_count` equals the source recording's length.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanSeries {
    pub samples: Vec<PupilSample>,
    pub label: EmotionLabel,
    pub source_name: String,
    pub sample_rate_hz: f64,
    pub dropped_count: usize,
}

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("{source_name} t={t_ms}ms: implausible {eye} diameter {value} (want (0, {MAX_DIAMETER_MM}] mm)")]
    ImplausibleValue {
        source_name: String,
        t_ms: i64,
        eye: &'static str,
        value: f64,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad clean-series file: {reason}")]
    BadFormat {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Removes sentinel samples. Equivalent to
/// [`remove_artifacts_with_margin`] with a margin of 0.
pub fn remove_artifacts(rec: &Recording) -> Result<CleanSeries, PreprocessError> {
    remove_artifacts_with_margin(rec, 0)
}

/// Removes every sample within `margin` samples of a sentinel sample, plus
/// the sentinels themselves. The default margin of 0 removes only sentinel
/// rows; a positive margin also discards the recovery samples around a
/// blink, where diameters can be distorted.
pub fn remove_artifacts_with_margin(
    rec: &Recording,
    margin: usize,
) -> Result<CleanSeries, PreprocessError> {
    let n = rec.samples.len();
    let mut drop = vec![false; n];
    for (i, s) in rec.samples.iter().enumerate() {
        if s.is_sentinel() {
            let lo = i.saturating_sub(margin);
            let hi = (i + margin).min(n.saturating_sub(1));
            for flag in &mut drop[lo..=hi] {
                *flag = true;
            }
        }
    }
    let mut samples = Vec::with_capacity(n);
    for (i, s) in rec.samples.iter().enumerate() {
        if drop[i] {
            continue;
        }
        for (eye, value) in [("left", s.left_mm), ("right", s.right_mm)] {
            if !(value > 0.0 && value <= MAX_DIAMETER_MM) {
                return Err(PreprocessError::ImplausibleValue {
                    source_name: rec.source_name.clone(),
                    t_ms: s.t_ms,
                    eye,
                    value,
                });
            }
        }
        samples.push(*s);
    }
    let dropped_count = n - samples.len();
    Ok(CleanSeries {
        samples,
        label: rec.label,
        source_name: rec.source_name.clone(),
        sample_rate_hz: rec.sample_rate_hz,
        dropped_count,
    })
}

/// One-line summary used by the CLI's `--report` flag.
pub fn report_line(series: &CleanSeries) -> String {
    format!(
        "{},{},{}",
        series.source_name,
        series.samples.len(),
        series.dropped_count
    )
}

pub const CLEAN_FORMAT: &str = "pupilflow-clean v1";

/// Serializes a clean series to the stage file format: a small header and
/// one `t_ms,left_mm,right_mm` row per sample, floats in shortest
/// round-trip form.
pub fn write_clean_to_string(series: &CleanSeries) -> String {
    let mut out = String::new();
    out.push_str(CLEAN_FORMAT);
    out.push('\n');
    out.push_str(&format!("label = {}\n", series.label));
    out.push_str(&format!("sample_rate_hz = {}\n", series.sample_rate_hz));
    out.push_str(&format!("source_name = {}\n", series.source_name));
    out.push_str(&format!("dropped_count = {}\n", series.dropped_count));
    out.push_str("t_ms,left_mm,right_mm\n");
    for s in &series.samples {
        out.push_str(&format!("{},{},{}\n", s.t_ms, s.left_mm, s.right_mm));
    }
    out
}

pub fn write_clean(series: &CleanSeries, path: &Path) -> Result<(), PreprocessError> {
    std::fs::write(path, write_clean_to_string(series)).map_err(|source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_clean(path: &Path) -> Result<CleanSeries, PreprocessError> {
    let text = std::fs::read_to_string(path).map_err(|source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_clean_from_str(&text, &path.display().to_string())
}

pub fn read_clean_from_str(text: &str, path: &str) -> Result<CleanSeries, PreprocessError> {
    let bad = |line: usize, reason: String| PreprocessError::BadFormat {
        path: path.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, magic) = lines
        .next()
        .ok_or_else(|| bad(1, "empty file".to_string()))?;
    if magic != CLEAN_FORMAT {
        return Err(bad(1, format!("expected {CLEAN_FORMAT:?}, got {magic:?}")));
    }
    let mut label = None;
    let mut rate = None;
    let mut source_name = None;
    let mut dropped = None;
    for (i, line) in lines.by_ref() {
        if line == "t_ms,left_mm,right_mm" {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(i + 1, format!("expected `key = value`, got {line:?}")))?;
        let value = value.trim();
        match key.trim() {
            "label" => {
                label = Some(EmotionLabel::parse_token(value).ok_or_else(|| {
                    bad(i + 1, format!("unknown emotion token {value:?}"))
                })?)
            }
            "sample_rate_hz" => {
                rate = Some(value.parse::<f64>().map_err(|e| bad(i + 1, e.to_string()))?)
            }
            "source_name" => source_name = Some(value.to_string()),
            "dropped_count" => {
                dropped = Some(value.parse::<usize>().map_err(|e| bad(i + 1, e.to_string()))?)
            }
            other => return Err(bad(i + 1, format!("unknown header key {other:?}"))),
        }
    }
    let mut samples = Vec::new();
    let mut prev_t = i64::MIN;
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(bad(i + 1, format!("expected 3 fields, got {}", parts.len())));
        }
        let t_ms: i64 = parts[0].parse().map_err(|e| bad(i + 1, format!("t_ms: {e}")))?;
        let left_mm: f64 = parts[1].parse().map_err(|e| bad(i + 1, format!("left: {e}")))?;
        let right_mm: f64 = parts[2].parse().map_err(|e| bad(i + 1, format!("right: {e}")))?;
        if t_ms <= prev_t {
            return Err(bad(i + 1, format!("t_ms not strictly increasing at {t_ms}")));
        }
        for (eye, v) in [("left", left_mm), ("right", right_mm)] {
            if !(v > 0.0 && v <= MAX_DIAMETER_MM) {
                return Err(bad(i + 1, format!("implausible {eye} diameter {v}")));
            }
        }
        prev_t = t_ms;
        samples.push(PupilSample { t_ms, left_mm, right_mm });
    }
    Ok(CleanSeries {
        samples,
        label: label.ok_or_else(|| bad(0, "missing label header".to_string()))?,
        source_name: source_name.ok_or_else(|| bad(0, "missing source_name header".to_string()))?,
        sample_rate_hz: rate.ok_or_else(|| bad(0, "missing sample_rate_hz header".to_string()))?,
        dropped_count: dropped.ok_or_else(|| bad(0, "missing dropped_count header".to_string()))?,
    })
}
