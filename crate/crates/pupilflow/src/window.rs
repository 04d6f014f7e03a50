//! Sliding windows over cleaned series.
//!
//! Windows start at t=0 and advance by `hop_s`; a window covers
//! `[start, start + window_s)` in sample time. Because cleaned series keep
//! their gaps, a window overlapping a long blink contains fewer samples than
//! `window_s * rate`; windows holding less than `min_fill` of the expected
//! count are discarded rather than padded. Windows never span series.

use crate::ingest::PupilSample;
use crate::preprocess::CleanSeries;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    /// Window length in seconds.
    pub window_s: f64,
    /// Start-to-start distance in seconds.
    pub hop_s: f64,
    /// Minimum fraction of the expected sample count a window must hold.
    pub min_fill: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { window_s: 5.0, hop_s: 2.5, min_fill: 0.8 }
    }
}

impl WindowConfig {
    /// Checks the configuration against a sample rate: positive lengths,
    /// hop no longer than the window, fill in (0, 1], and a window long
    /// enough (>= 64 expected samples) for spectral estimates downstream.
    pub fn validate(&self, sample_rate_hz: f64) -> Result<(), String> {
        if !(self.window_s > 0.0) {
            return Err(format!("window_s must be positive, got {}", self.window_s));
        }
        if !(self.hop_s > 0.0 && self.hop_s <= self.window_s) {
            return Err(format!(
                "hop_s must be in (0, window_s={}], got {}",
                self.window_s, self.hop_s
            ));
        }
        if !(self.min_fill > 0.0 && self.min_fill <= 1.0) {
            return Err(format!("min_fill must be in (0, 1], got {}", self.min_fill));
        }
        if self.window_s * sample_rate_hz < 64.0 {
            return Err(format!(
                "window_s={} at {} Hz yields under 64 samples",
                self.window_s, sample_rate_hz
            ));
        }
        Ok(())
    }
}

/// One window: a contiguous run of samples from a clean series.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub start_ms: i64,
    pub samples: &'a [PupilSample],
}

impl Window<'_> {
    pub fn left(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.left_mm).collect()
    }

    pub fn right(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.right_mm).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Cuts a clean series into windows. Start times are 0, hop, 2*hop, ...
/// while the window still fits inside the series duration (last sample time
/// plus one sample period). Only windows meeting the fill requirement are
/// returned.
pub fn make_windows<'a>(series: &'a CleanSeries, cfg: &WindowConfig) -> Vec<Window<'a>> {
    cfg.validate(series.sample_rate_hz)
        .expect("invalid window configuration");
    if series.samples.is_empty() {
        return Vec::new();
    }
    let window_ms = (cfg.window_s * 1000.0).round() as i64;
    let hop_ms = (cfg.hop_s * 1000.0).round() as i64;
    let period_ms = (1000.0 / series.sample_rate_hz).round().max(1.0) as i64;
    let duration_ms = series.samples.last().unwrap().t_ms + period_ms;
    let expected = cfg.window_s * series.sample_rate_hz;
    let min_count = cfg.min_fill * expected;

    let mut out = Vec::new();
    let mut start = 0i64;
    while start + window_ms <= duration_ms {
        let end = start + window_ms;
        let lo = series.samples.partition_point(|s| s.t_ms < start);
        let hi = series.samples.partition_point(|s| s.t_ms < end);
        let count = hi - lo;
        if count as f64 >= min_count {
            out.push(Window { start_ms: start, samples: &series.samples[lo..hi] });
        }
        start += hop_ms;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::sample_time_ms;
    use crate::label::EmotionLabel;

    fn series_seconds(total_s: f64, gap: Option<(f64, f64)>) -> CleanSeries {
        let rate = 120.0;
        let n = (total_s * rate).round() as usize;
        let mut samples = Vec::new();
        let mut dropped = 0;
        for i in 0..n {
            let t = i as f64 / rate;
            if let Some((g0, g1)) = gap {
                if t >= g0 && t < g1 {
                    dropped += 1;
                    continue;
                }
            }
            samples.push(PupilSample {
                t_ms: sample_time_ms(i, rate),
                left_mm: 3.0,
                right_mm: 3.0,
            });
        }
        CleanSeries {
            samples,
            label: EmotionLabel::Happy,
            source_name: "session_happy.csv".to_string(),
            sample_rate_hz: rate,
            dropped_count: dropped,
        }
    }

    #[test]
    fn default_config_on_ten_minutes_yields_239_windows() {
        let series = series_seconds(600.0, None);
        let windows = make_windows(&series, &WindowConfig::default());
        assert_eq!(windows.len(), 239);
        assert_eq!(windows[0].start_ms, 0);
        assert_eq!(windows[1].start_ms, 2500);
        assert_eq!(windows.last().unwrap().start_ms, 595_000);
        for w in &windows {
            assert_eq!(w.len(), 600);
        }
    }

    #[test]
    fn windows_starved_by_a_gap_are_dropped() {
        // 10 s series, 2 s artifact gap in the middle: with min_fill 0.8 a
        // 5 s window may lose at most 1 s, so windows overlapping the gap
        // by more are dropped
        let series = series_seconds(10.0, Some((4.0, 6.0)));
        let windows = make_windows(&series, &WindowConfig::default());
        let starts: Vec<i64> = windows.iter().map(|w| w.start_ms).collect();
        // start 0: covers [0,5), loses 1 s -> kept (exactly at threshold)
        // start 2500: covers [2.5,7.5), loses 2 s -> dropped
        // start 5000: covers [5,10), loses 1 s -> kept
        assert_eq!(starts, vec![0, 5000]);
        for w in &windows {
            assert_eq!(w.len(), 480);
        }
    }

    #[test]
    fn short_series_yield_no_windows() {
        let series = series_seconds(3.0, None);
        assert!(make_windows(&series, &WindowConfig::default()).is_empty());
        let empty = CleanSeries { samples: vec![], ..series };
        assert!(make_windows(&empty, &WindowConfig::default()).is_empty());
    }

    #[test]
    fn exact_fit_series_yields_one_window() {
        let series = series_seconds(5.0, None);
        let windows = make_windows(&series, &WindowConfig::default());
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].len(), 600);
    }

    #[test]
    fn hop_equal_to_window_gives_disjoint_cover() {
        let series = series_seconds(20.0, None);
        let cfg = WindowConfig { window_s: 5.0, hop_s: 5.0, min_fill: 0.8 };
        let windows = make_windows(&series, &cfg);
        assert_eq!(windows.len(), 4);
        let total: usize = windows.iter().map(|w| w.len()).sum();
        assert_eq!(total, series.samples.len());
    }

    #[test]
    fn validation_rejects_bad_configs() {
        assert!(WindowConfig { window_s: 0.0, hop_s: 1.0, min_fill: 0.8 }
            .validate(120.0)
            .is_err());
        assert!(WindowConfig { window_s: 5.0, hop_s: 6.0, min_fill: 0.8 }
            .validate(120.0)
            .is_err());
        assert!(WindowConfig { window_s: 5.0, hop_s: 2.5, min_fill: 0.0 }
            .validate(120.0)
            .is_err());
        assert!(WindowConfig { window_s: 0.25, hop_s: 0.25, min_fill: 0.8 }
            .validate(120.0)
            .is_err());
        assert!(WindowConfig::default().validate(120.0).is_ok());
    }
}
