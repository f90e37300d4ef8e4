//! IIR low/high-pass design as cascaded second-order sections.
//!
//! Normalized analog prototype poles are scaled to the pre-warped cutoff
//! `2·fs·tan(π·fc/fs)` and mapped through the bilinear transform. All
//! zeros sit at `z = -1` (lowpass) or `z = +1` (highpass).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{config_err, input_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Butterworth,
    Chebyshev1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`. First-order sections
/// have `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    pub fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    /// Gain at DC (`z = 1`).
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Roots of `z² + a1·z + a2` (one root is 0 for first-order sections).
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    /// Second-order stability triangle: `|a2| < 1` and `|a1| < 1 + a2`.
    pub fn is_stable(&self) -> bool {
        self.a[1].abs() < 1.0 && self.a[0].abs() < 1.0 + self.a[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDesign {
    pub family: Family,
    pub kind: FilterKind,
    pub order: usize,
    pub cutoff_hz: f64,
    pub ripple_db: Option<f64>,
    pub sample_rate_hz: f64,
    pub sections: Vec<Section>,
}

pub const MAX_ORDER: usize = 8;

fn validate(order: usize, cutoff_hz: f64, fs_hz: f64) -> Result<()> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(config_err!("filter order must be in 1..={MAX_ORDER}, got {order}"));
    }
    if !(fs_hz > 0.0 && fs_hz.is_finite()) {
        return Err(config_err!("sample rate must be positive, got {fs_hz}"));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
        return Err(config_err!("cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)", fs_hz / 2.0));
    }
    Ok(())
}

/// Butterworth prototype: `n` poles evenly spaced on the left unit half-circle.
fn butterworth_poles(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64))
        .collect()
}

/// Chebyshev type-I prototype with passband edge at 1 rad/s.
fn chebyshev1_poles(n: usize, ripple_db: f64) -> Vec<Complex64> {
    let eps = (10f64.powf(ripple_db / 10.0) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / n as f64;
    (0..n)
        .map(|k| {
            let theta = PI * (2 * k + 1) as f64 / (2 * n) as f64;
            Complex64::new(-mu.sinh() * theta.sin(), mu.cosh() * theta.cos())
        })
        .collect()
}

fn build(
    family: Family,
    kind: FilterKind,
    order: usize,
    cutoff_hz: f64,
    fs_hz: f64,
    ripple_db: Option<f64>,
    prototype: Vec<Complex64>,
) -> FilterDesign {
    let fs2 = 2.0 * fs_hz;
    let warped = fs2 * (PI * cutoff_hz / fs_hz).tan();
    let digital: Vec<Complex64> = prototype
        .iter()
        .map(|&p| {
            let s = match kind {
                FilterKind::Lowpass => p * warped,
                FilterKind::Highpass => warped / p,
            };
            (fs2 + s) / (fs2 - s)
        })
        .collect();

    let mut sections = Vec::new();
    // Upper-half-plane poles pair with their conjugates; a real pole (odd
    // order) gets a first-order section.
    for p in digital.iter().filter(|p| p.im > 1e-12) {
        sections.push(section(kind, [-2.0 * p.re, p.norm_sqr()], true));
    }
    if let Some(p) = digital.iter().find(|p| p.im.abs() <= 1e-12) {
        sections.push(section(kind, [-p.re, 0.0], false));
    }
    if family == Family::Chebyshev1 && order % 2 == 0 {
        // even-order Chebyshev sits at the bottom of the ripple band at DC
        let g = 10f64.powf(-ripple_db.unwrap_or(0.0) / 20.0);
        sections[0].b.iter_mut().for_each(|b| *b *= g);
    }
    FilterDesign { family, kind, order, cutoff_hz, ripple_db, sample_rate_hz: fs_hz, sections }
}

/// Numerator zeros at `∓1` with unit gain at DC (lowpass) or Nyquist
/// (highpass).
fn section(kind: FilterKind, a: [f64; 2], second_order: bool) -> Section {
    let (b, den) = match (kind, second_order) {
        (FilterKind::Lowpass, true) => ([1.0, 2.0, 1.0], 1.0 + a[0] + a[1]),
        (FilterKind::Highpass, true) => ([1.0, -2.0, 1.0], 1.0 - a[0] + a[1]),
        (FilterKind::Lowpass, false) => ([1.0, 1.0, 0.0], 1.0 + a[0]),
        (FilterKind::Highpass, false) => ([1.0, -1.0, 0.0], 1.0 - a[0]),
    };
    let norm: f64 = b.iter().map(|v: &f64| v.abs()).sum();
    let g = den / norm;
    Section { b: b.map(|v| v * g), a }
}

pub fn design_butterworth(order: usize, cutoff_hz: f64, fs_hz: f64, kind: FilterKind) -> Result<FilterDesign> {
    validate(order, cutoff_hz, fs_hz)?;
    Ok(build(Family::Butterworth, kind, order, cutoff_hz, fs_hz, None, butterworth_poles(order)))
}

/// Chebyshev type-I design; `cutoff_hz` is the passband edge, where the
/// gain first leaves the ripple band.
pub fn design_chebyshev1(
    order: usize,
    ripple_db: f64,
    cutoff_hz: f64,
    fs_hz: f64,
    kind: FilterKind,
) -> Result<FilterDesign> {
    validate(order, cutoff_hz, fs_hz)?;
    if !(ripple_db > 0.0 && ripple_db.is_finite()) {
        return Err(config_err!("passband ripple must be positive, got {ripple_db} dB"));
    }
    let poles = chebyshev1_poles(order, ripple_db);
    Ok(build(Family::Chebyshev1, kind, order, cutoff_hz, fs_hz, Some(ripple_db), poles))
}

impl FilterDesign {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq_hz / self.sample_rate_hz);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections
            .iter()
            .flat_map(|s| {
                if s.a[1] == 0.0 && s.b[2] == 0.0 {
                    vec![Complex64::new(-s.a[0], 0.0)]
                } else {
                    s.poles().to_vec()
                }
            })
            .collect()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Section::is_stable)
    }

    /// Edge padding used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }

    /// Causal filtering with transposed direct form II; `zi` holds two
    /// delay states per section.
    pub fn lfilter(&self, x: &[f64], zi: &mut [[f64; 2]]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z) in self.sections.iter().zip(zi.iter_mut()) {
            for v in y.iter_mut() {
                let inp = *v;
                let out = s.b[0] * inp + z[0];
                z[0] = s.b[1] * inp - s.a[0] * out + z[1];
                z[1] = s.b[2] * inp - s.a[1] * out;
                *v = out;
            }
        }
        y
    }

    /// Delay states for a unit-step input already at steady state.
    pub fn step_zi(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = s.dc_gain();
                let out = g * level;
                let z = [out - s.b[0] * level, s.b[2] * level - s.a[1] * out];
                level = out;
                z
            })
            .collect()
    }
}

/// Zero-phase forward-backward filtering with odd reflection padding of
/// `3·order` samples at each end and steady-state initial conditions.
pub fn filtfilt(design: &FilterDesign, x: &[f64]) -> Result<Vec<f64>> {
    let pad = design.pad_len();
    let n = x.len();
    if n <= pad {
        return Err(input_err!("filtfilt needs more than {pad} samples, got {n}"));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = design.step_zi();
    let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
    let mut fwd = design.lfilter(&ext, &mut scaled(ext[0]));
    fwd.reverse();
    let mut back = design.lfilter(&fwd, &mut scaled(fwd[0]));
    back.reverse();
    Ok(back[pad..pad + n].to_vec())
}
