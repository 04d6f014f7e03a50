//! Seeded generator of labeled synthetic pupil recordings.
//!
//! Each class gets a baseline diameter, one oscillation frequency, and
//! shared noise/blink statistics. The left eye is
//! `baseline + amp * sin(2*pi*f*t + phase) + AR(1) noise`, clamped to
//! [2, 5] mm; the right eye tracks `0.97 * left` (post-clamp) plus its own
//! independent AR(1) noise, clamped the same way. Blinks arrive by a
//! Poisson process and overwrite both eyes with the -1 sentinel for a
//! uniformly drawn duration; rare one-eye dropouts overwrite a single eye.
//!
//! Class parameters are chosen so that no single feature family separates
//! everything: happy/sad and anger/fear sit on near-identical baselines
//! (well inside the noise of a window mean), while the four oscillation
//! frequencies land in four different spectral bands. Mean diameter still
//! orders the classes sad < happy < anger < fear.
//!
//! Every random channel is its own substream of the seed, per label, so
//! changing one class's parameters or consuming one channel differently
//! leaves every other recording bit-identical.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{sample_time_ms, PupilSample, Recording};
use crate::label::EmotionLabel;
use crate::rng::{
    stream, STAGE_SYNTH, SYNTH_BLINKS, SYNTH_DROPOUTS, SYNTH_NOISE_LEFT, SYNTH_NOISE_RIGHT,
    SYNTH_PHASE,
};

pub const CLAMP_MM: (f64, f64) = (2.0, 5.0);
pub const RIGHT_EYE_RATIO: f64 = 0.97;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassParams {
    pub baseline_mm: f64,
    pub osc_freq_hz: f64,
    pub osc_amp_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Indexed by label id.
    pub class_params: [ClassParams; 4],
    pub noise_sigma_mm: f64,
    /// AR(1) coefficient of the drift noise.
    pub ar_coefficient: f64,
    pub blink_rate_per_min: f64,
    pub blink_duration_ms: (f64, f64),
    pub one_eye_dropout_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 600.0,
            sample_rate_hz: 120.0,
            class_params: [
                ClassParams { baseline_mm: 3.25, osc_freq_hz: 0.2, osc_amp_mm: 0.3 }, // happy
                ClassParams { baseline_mm: 3.22, osc_freq_hz: 1.5, osc_amp_mm: 0.3 }, // sad
                ClassParams { baseline_mm: 3.80, osc_freq_hz: 0.9, osc_amp_mm: 0.3 }, // anger
                ClassParams { baseline_mm: 3.83, osc_freq_hz: 2.8, osc_amp_mm: 0.3 }, // fear
            ],
            noise_sigma_mm: 0.05,
            ar_coefficient: 0.95,
            blink_rate_per_min: 15.0,
            blink_duration_ms: (100.0, 300.0),
            one_eye_dropout_prob: 0.002,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration_s > 0.0) {
            return Err("duration_s must be positive".to_string());
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err("sample_rate_hz must be positive".to_string());
        }
        if !(self.noise_sigma_mm >= 0.0) {
            return Err("noise_sigma_mm must be nonnegative".to_string());
        }
        if !(self.ar_coefficient >= 0.0 && self.ar_coefficient < 1.0) {
            return Err("ar_coefficient must be in [0, 1)".to_string());
        }
        if !(self.blink_rate_per_min >= 0.0) {
            return Err("blink_rate_per_min must be nonnegative".to_string());
        }
        if !(self.blink_duration_ms.0 > 0.0 && self.blink_duration_ms.1 >= self.blink_duration_ms.0)
        {
            return Err("blink_duration_ms range must be ordered and positive".to_string());
        }
        if !(self.one_eye_dropout_prob >= 0.0 && self.one_eye_dropout_prob < 1.0) {
            return Err("one_eye_dropout_prob must be in [0, 1)".to_string());
        }
        for (i, p) in self.class_params.iter().enumerate() {
            if !(p.baseline_mm > CLAMP_MM.0 && p.baseline_mm < CLAMP_MM.1) {
                return Err(format!("class {i}: baseline_mm must sit inside the clamp range"));
            }
            if !(p.osc_freq_hz >= 0.0 && p.osc_amp_mm >= 0.0) {
                return Err(format!("class {i}: oscillation parameters must be nonnegative"));
            }
        }
        Ok(())
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// AR(1) noise source started from its stationary distribution.
struct Ar1 {
    rng: ChaCha8Rng,
    rho: f64,
    sigma: f64,
    state: f64,
}

impl Ar1 {
    fn new(mut rng: ChaCha8Rng, rho: f64, sigma: f64) -> Ar1 {
        let stationary = sigma / (1.0 - rho * rho).sqrt();
        let state = stationary * gauss(&mut rng);
        Ar1 { rng, rho, sigma, state }
    }

    fn next(&mut self) -> f64 {
        let out = self.state;
        self.state = self.rho * self.state + self.sigma * gauss(&mut self.rng);
        out
    }
}

fn clamp_mm(v: f64) -> f64 {
    v.clamp(CLAMP_MM.0, CLAMP_MM.1)
}

/// Generates one labeled recording. Channel draw order per label: the
/// phase stream yields one uniform; each noise stream yields one gaussian
/// per sample (plus its stationary start); the blink stream alternates
/// exponential gaps with uniform durations; the dropout stream draws one
/// uniform per sample and a coin only when a dropout triggers.
pub fn generate(cfg: &SynthConfig, label: EmotionLabel) -> Recording {
    cfg.validate().expect("synth config must be valid");
    let n = (cfg.duration_s * cfg.sample_rate_hz).round() as usize;
    let lid = label.id() as u64;
    let params = cfg.class_params[label.id()];

    let mut phase_rng = stream(cfg.seed, &[STAGE_SYNTH, lid, SYNTH_PHASE]);
    let phase: f64 = phase_rng.gen::<f64>() * std::f64::consts::TAU;
    let mut noise_left = Ar1::new(
        stream(cfg.seed, &[STAGE_SYNTH, lid, SYNTH_NOISE_LEFT]),
        cfg.ar_coefficient,
        cfg.noise_sigma_mm,
    );
    let mut noise_right = Ar1::new(
        stream(cfg.seed, &[STAGE_SYNTH, lid, SYNTH_NOISE_RIGHT]),
        cfg.ar_coefficient,
        cfg.noise_sigma_mm,
    );

    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / cfg.sample_rate_hz;
        let clean = params.baseline_mm
            + params.osc_amp_mm * (std::f64::consts::TAU * params.osc_freq_hz * t + phase).sin()
            + noise_left.next();
        let l = clamp_mm(clean);
        left.push(l);
        right.push(clamp_mm(RIGHT_EYE_RATIO * l + noise_right.next()));
    }

    // blinks: Poisson arrivals, both eyes blanked for the drawn duration
    let mut blink_rng = stream(cfg.seed, &[STAGE_SYNTH, lid, SYNTH_BLINKS]);
    if cfg.blink_rate_per_min > 0.0 {
        let rate_per_s = cfg.blink_rate_per_min / 60.0;
        let mut t = -(1.0 - blink_rng.gen::<f64>()).ln() / rate_per_s;
        while t < cfg.duration_s {
            let dur_ms = blink_rng.gen_range(cfg.blink_duration_ms.0..=cfg.blink_duration_ms.1);
            let end = t + dur_ms / 1000.0;
            let first = (t * cfg.sample_rate_hz).ceil() as usize;
            let mut i = first;
            while (i as f64) < end * cfg.sample_rate_hz && i < n {
                left[i] = -1.0;
                right[i] = -1.0;
                i += 1;
            }
            t += -(1.0 - blink_rng.gen::<f64>()).ln() / rate_per_s;
        }
    }

    // one-eye dropouts
    let mut drop_rng = stream(cfg.seed, &[STAGE_SYNTH, lid, SYNTH_DROPOUTS]);
    if cfg.one_eye_dropout_prob > 0.0 {
        for i in 0..n {
            if drop_rng.gen::<f64>() < cfg.one_eye_dropout_prob {
                if drop_rng.gen::<bool>() {
                    left[i] = -1.0;
                } else {
                    right[i] = -1.0;
                }
            }
        }
    }

    let samples = (0..n)
        .map(|i| PupilSample {
            t_ms: sample_time_ms(i, cfg.sample_rate_hz),
            left_mm: left[i],
            right_mm: right[i],
        })
        .collect();
    Recording {
        samples,
        label,
        source_name: format!("session_{label}.csv"),
        sample_rate_hz: cfg.sample_rate_hz,
    }
}

/// One recording per emotion, canonical label order. Labels never share
/// random streams, so the dataset is stable under any per-class change
/// elsewhere.
pub fn generate_dataset(cfg: &SynthConfig) -> [Recording; 4] {
    EmotionLabel::ALL.map(|l| generate(cfg, l))
}
