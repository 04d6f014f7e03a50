//! Raw recording ingest.
//!
//! Input rows look like
//!
//! ```text
//! 3/3/2023 6:09:33 AM,3.234989,2.993118, happy
//! ```
//!
//! wall clock, left pupil diameter in mm, right pupil diameter in mm, and an
//! optional emotion token. Many rows share one wall-clock second because the
//! tracker samples far faster than the clock column's resolution, so the
//! wall clock is only validated (nondecreasing) and then discarded; sample
//! times are synthesized from the row index at the declared sample rate.
//!
//! Ingest is deliberately permissive about diameters: the blink sentinel
//! (exactly -1) and any positive finite value are accepted here, and
//! plausibility limits are enforced later by [`crate::preprocess`]. Values
//! that can never be a diameter reading (zero, negatives other than the
//! sentinel, non-finite) are rejected as malformed.

use std::fmt;
use std::path::Path;

use chrono::NaiveDateTime;
use thiserror::Error;

use crate::label::EmotionLabel;

/// One tracker sample. `t_ms` is synthesized as `round(i * 1000 / rate)` for
/// row index `i`, so it is strictly increasing for rates up to 1000 Hz.
/// Each diameter is either exactly -1.0 (blink sentinel) or positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilSample {
    pub t_ms: i64,
    pub left_mm: f64,
    pub right_mm: f64,
}

impl PupilSample {
    /// True when either eye carries the blink sentinel.
    pub fn is_sentinel(&self) -> bool {
        self.left_mm == -1.0 || self.right_mm == -1.0
    }
}

/// A labeled recording from one source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Vec<PupilSample>,
    pub label: EmotionLabel,
    pub source_name: String,
    pub sample_rate_hz: f64,
}

/// One parsed input row, before sample times are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLine {
    pub wallclock: String,
    pub left_mm: f64,
    pub right_mm: f64,
    pub label: Option<EmotionLabel>,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed {field}: {reason}")]
    MalformedLine {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error("cannot determine a label for {source_name}: no label column and {reason}")]
    LabelUndeterminable { source_name: String, reason: String },
    #[error("line {line}: label column says {second} but earlier rows said {first}")]
    MixedLabels {
        line: usize,
        first: EmotionLabel,
        second: EmotionLabel,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const WALLCLOCK_PARSE_FMT: &str = "%m/%d/%Y %I:%M:%S %p";
const WALLCLOCK_WRITE_FMT: &str = "%-m/%-d/%Y %-I:%M:%S %p";

fn parse_diameter(text: &str, field: &'static str, line: usize) -> Result<f64, IngestError> {
    let value: f64 = text.parse().map_err(|_| IngestError::MalformedLine {
        line,
        field,
        reason: format!("not a number: {text:?}"),
    })?;
    if value == -1.0 || (value.is_finite() && value > 0.0) {
        Ok(value)
    } else {
        Err(IngestError::MalformedLine {
            line,
            field,
            reason: format!("diameter must be -1 or positive, got {value}"),
        })
    }
}

/// Parses one input row. `line_no` is 1-based and only used in errors.
pub fn parse_line(line: &str, line_no: usize) -> Result<ParsedLine, IngestError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 3 && fields.len() != 4 {
        return Err(IngestError::MalformedLine {
            line: line_no,
            field: "row",
            reason: format!("expected 3 or 4 comma-separated fields, got {}", fields.len()),
        });
    }
    let left_mm = parse_diameter(fields[1], "left diameter", line_no)?;
    let right_mm = parse_diameter(fields[2], "right diameter", line_no)?;
    let label = match fields.get(3) {
        None => None,
        Some(raw) => Some(EmotionLabel::parse_token(raw).ok_or_else(|| {
            IngestError::MalformedLine {
                line: line_no,
                field: "label",
                reason: format!("unknown emotion token {:?}", raw.trim()),
            }
        })?),
    };
    Ok(ParsedLine {
        wallclock: fields[0].to_string(),
        left_mm,
        right_mm,
        label,
    })
}

/// Sample time for row `index` at `rate` Hz: `round(index * 1000 / rate)`.
pub fn sample_time_ms(index: usize, rate: f64) -> i64 {
    (index as f64 * 1000.0 / rate).round() as i64
}

/// Loads a recording from text already split out of a file.
///
/// The label comes from the 4th column when present (all rows must agree),
/// otherwise from an emotion token in `source_name`. When both exist the
/// column wins. Wall clocks that parse in the `3/3/2023 6:09:33 AM` shape
/// must be nondecreasing; unparseable wall clocks are treated as opaque.
pub fn load_recording_from_str(
    text: &str,
    source_name: &str,
    sample_rate_hz: f64,
) -> Result<Recording, IngestError> {
    assert!(
        sample_rate_hz > 0.0 && sample_rate_hz <= 1000.0,
        "sample rate must be in (0, 1000] Hz"
    );
    let mut samples = Vec::new();
    let mut column_label: Option<(EmotionLabel, usize)> = None;
    let mut prev_clock: Option<NaiveDateTime> = None;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let parsed = parse_line(line, line_no)?;
        if let Some(l) = parsed.label {
            match column_label {
                None => column_label = Some((l, line_no)),
                Some((first, _)) if first != l => {
                    return Err(IngestError::MixedLabels {
                        line: line_no,
                        first,
                        second: l,
                    });
                }
                Some(_) => {}
            }
        }
        if let Ok(clock) = NaiveDateTime::parse_from_str(&parsed.wallclock, WALLCLOCK_PARSE_FMT) {
            if let Some(prev) = prev_clock {
                if clock < prev {
                    return Err(IngestError::MalformedLine {
                        line: line_no,
                        field: "wall clock",
                        reason: format!("goes backwards: {} after {}", clock, prev),
                    });
                }
            }
            prev_clock = Some(clock);
        }
        samples.push(PupilSample {
            t_ms: sample_time_ms(samples.len(), sample_rate_hz),
            left_mm: parsed.left_mm,
            right_mm: parsed.right_mm,
        });
    }
    let label = match column_label {
        Some((l, _)) => l,
        None => {
            let found = EmotionLabel::find_tokens(source_name);
            match found.as_slice() {
                [single] => *single,
                [] => {
                    return Err(IngestError::LabelUndeterminable {
                        source_name: source_name.to_string(),
                        reason: "no emotion token in the file name".to_string(),
                    });
                }
                several => {
                    return Err(IngestError::LabelUndeterminable {
                        source_name: source_name.to_string(),
                        reason: format!(
                            "file name contains several emotion tokens: {}",
                            several
                                .iter()
                                .map(|l| l.token())
                                .collect::<Vec<_>>()
                                .join(", ")
                        ),
                    });
                }
            }
        }
    };
    Ok(Recording {
        samples,
        label,
        source_name: source_name.to_string(),
        sample_rate_hz,
    })
}

/// Loads a recording from a file. See [`load_recording_from_str`].
pub fn load_recording(path: &Path, sample_rate_hz: f64) -> Result<Recording, IngestError> {
    let bytes = std::fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let text = String::from_utf8(bytes).map_err(|e| IngestError::MalformedLine {
        line: 0,
        field: "file",
        reason: format!("not valid UTF-8 text: {e}"),
    })?;
    let source_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    load_recording_from_str(&text, &source_name, sample_rate_hz)
}

/// Base wall clock used when serializing recordings whose real clock text is
/// gone. Any fixed instant works; loaders only check that clocks do not go
/// backwards.
fn base_clock() -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2024, 1, 1)
        .unwrap()
        .and_hms_opt(9, 0, 0)
        .unwrap()
}

/// Serializes a recording back to the raw row shape, synthesizing a
/// 1-second-resolution wall clock from each sample's time. Diameters are
/// written with Rust's shortest round-trip float formatting, so loading the
/// output reproduces the recording exactly.
pub fn write_recording_to_string(rec: &Recording) -> String {
    let base = base_clock();
    let mut out = String::new();
    for s in &rec.samples {
        let clock = base + chrono::Duration::seconds(s.t_ms.div_euclid(1000));
        out.push_str(&format!(
            "{},{},{}, {}\n",
            clock.format(WALLCLOCK_WRITE_FMT),
            s.left_mm,
            s.right_mm,
            rec.label
        ));
    }
    out
}

/// Writes the raw row shape to a file. See [`write_recording_to_string`].
pub fn write_recording(rec: &Recording, path: &Path) -> Result<(), IngestError> {
    std::fs::write(path, write_recording_to_string(rec)).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl fmt::Display for Recording {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} samples at {} Hz, label {}",
            self.source_name,
            self.samples.len(),
            self.sample_rate_hz,
            self.label
        )
    }
}
