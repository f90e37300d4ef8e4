//! Deterministic dual-label IMU stand-in.
//!
//! Sedentary class `s` drives channels 0-5 with a sinusoid at
//! [`SED_FREQS_HZ`]`[s]`; social class `c` drives channels 6-12 with a
//! [`SOC_CARRIER_HZ`] sinusoid of amplitude [`SOC_AMPLITUDES`]`[c]`. With
//! coupling `λ`, `λ·a_c` of the social carrier also leaks onto channels 0-5.
//! Phases are drawn per window and channel; noise is Gaussian.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::ingest::{RawRecording, SEGMENT_SAMPLES};
use crate::dataset::labels::{SED_CLASSES, SOC_CLASSES, NUM_SED, NUM_SOC};
use crate::dataset::LabeledWindow;
use crate::dsp::{SensorSegment, NUM_CHANNELS, RAW_RATE_HZ, TARGET_RATE_HZ, WINDOW_LEN};
use crate::error::{config_err, Result};

pub const SED_FREQS_HZ: [f64; NUM_SED] = [1.0, 2.0, 3.0, 4.0];
pub const SOC_AMPLITUDES: [f64; NUM_SOC] = [0.5, 1.0, 1.5];
pub const SOC_CARRIER_HZ: f64 = 6.0;
/// Synthetic windows are spread over this many participant ids.
pub const SYNTH_PARTICIPANTS: usize = 8;
const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub samples_per_joint_class: usize,
    pub noise_std: f64,
    pub coupling: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_joint_class == 0 {
            return Err(config_err!("samples_per_joint_class must be at least 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(config_err!("noise_std must be finite and non-negative, got {}", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return Err(config_err!("coupling must lie in [0, 1], got {}", self.coupling));
        }
        Ok(())
    }
}

/// Draws one `13×n` signal at `fs` for the given classes, channel-major.
fn draw(
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
    sed: usize,
    soc: usize,
    coupling: f64,
    n: usize,
    fs: f64,
) -> Vec<Vec<f64>> {
    let f_s = SED_FREQS_HZ[sed];
    let a_c = SOC_AMPLITUDES[soc];
    (0..NUM_CHANNELS)
        .map(|c| {
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let psi: f64 = rng.random_range(0.0..2.0 * PI);
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    let carrier = (2.0 * PI * SOC_CARRIER_HZ * t + psi).sin();
                    let clean = if c < 6 {
                        (2.0 * PI * f_s * t + phi).sin() + coupling * a_c * carrier
                    } else {
                        a_c * carrier
                    };
                    clean + noise.sample(rng)
                })
                .collect()
        })
        .collect()
}

fn noise(cfg: &SynthConfig) -> Result<Normal<f64>> {
    Normal::new(0.0, cfg.noise_std).map_err(|e| config_err!("noise_std: {e}"))
}

/// `12·samples_per_joint_class` windows of `13×100` at 40 Hz, ordered by
/// joint class (sedentary-major) then sample index.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<LabeledWindow>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = noise(cfg)?;
    let mut out = Vec::with_capacity(SED_CLASSES.len() * SOC_CLASSES.len() * cfg.samples_per_joint_class);
    for sed in 0..NUM_SED {
        for soc in 0..NUM_SOC {
            for i in 0..cfg.samples_per_joint_class {
                let sig = draw(&mut rng, &noise, sed, soc, cfg.coupling, WINDOW_LEN, TARGET_RATE_HZ);
                out.push(LabeledWindow {
                    features: sig.concat(),
                    sed: sed as u8,
                    soc: soc as u8,
                    participant_id: format!("P{:02}", i % SYNTH_PARTICIPANTS),
                    source_segment_id: format!("synth-{sed}{soc}-{i:04}"),
                });
            }
        }
    }
    Ok(out)
}

/// Raw 60 s recordings at 50 Hz with the same class recipe, plus gravity on
/// the accelerometer z axis; `samples_per_joint_class` recordings per class.
pub fn synth_raw(cfg: &SynthConfig) -> Result<Vec<RawRecording>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = noise(cfg)?;
    let mut out = Vec::new();
    for sed in 0..NUM_SED {
        for soc in 0..NUM_SOC {
            for i in 0..cfg.samples_per_joint_class {
                let mut sig = draw(&mut rng, &noise, sed, soc, cfg.coupling, SEGMENT_SAMPLES, RAW_RATE_HZ);
                sig[2].iter_mut().for_each(|v| *v += GRAVITY);
                let index = out.len() as i64;
                out.push(RawRecording {
                    segment_id: format!("synth-{sed}{soc}-{i:04}"),
                    participant_id: format!("P{:02}", i % SYNTH_PARTICIPANTS),
                    segment: SensorSegment::new(sig, RAW_RATE_HZ, 1_700_000_000_000 + 3_600_000 * index)?,
                    sedentary: SED_CLASSES[sed],
                    social: SOC_CLASSES[soc],
                });
            }
        }
    }
    Ok(out)
}
