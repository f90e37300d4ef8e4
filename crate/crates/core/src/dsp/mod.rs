//! IMU conditioning: per-sensor filtering, gravity removal, resampling to
//! 40 Hz, windowing and per-channel standardization.
//!
//! Segments are channel-major (`channels[c][t]`). Windows are flattened
//! channel-major `C×L` buffers.

mod filter;

pub use filter::{design_butterworth, design_chebyshev1, filtfilt, Family, FilterDesign, FilterKind, Section, MAX_ORDER};

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};

pub const NUM_CHANNELS: usize = 13;
pub const RAW_RATE_HZ: f64 = 50.0;
pub const TARGET_RATE_HZ: f64 = 40.0;
pub const WINDOW_LEN: usize = 100;
pub const WINDOW_HOP: usize = 50;

/// Channel ranges within a 13-channel segment.
pub const ACCEL: std::ops::Range<usize> = 0..3;
pub const GYRO: std::ops::Range<usize> = 3..6;
pub const MAG: std::ops::Range<usize> = 6..9;
pub const QUAT: std::ops::Range<usize> = 9..13;

pub const GRAVITY_CUTOFF_HZ: f64 = 0.3;
pub const HIGHPASS_CUTOFF_HZ: f64 = 0.3;
pub const LOWPASS_CUTOFF_HZ: f64 = 20.0;
pub const BUTTERWORTH_ORDER: usize = 3;
pub const MAG_ORDER: usize = 2;
pub const MAG_RIPPLE_DB: f64 = 0.001;
/// Passband edge of the magnetometer smoother, set to the 40 Hz Nyquist.
pub const MAG_CUTOFF_HZ: f64 = 20.0;

/// Standardization floor for (near) constant channels.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSegment {
    pub channels: Vec<Vec<f64>>,
    pub sample_rate_hz: f64,
    pub start_time_ms: i64,
}

impl SensorSegment {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate_hz: f64, start_time_ms: i64) -> Result<Self> {
        if let Some(first) = channels.first() {
            if channels.iter().any(|c| c.len() != first.len()) {
                return Err(input_err!("segment channels have unequal lengths"));
            }
        }
        Ok(Self { channels, sample_rate_hz, start_time_ms })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}

/// Subtracts a zero-phase 0.3 Hz low-pass gravity estimate from each axis.
pub fn remove_gravity(accel: &[Vec<f64>], fs_hz: f64) -> Result<Vec<Vec<f64>>> {
    let lp = design_butterworth(BUTTERWORTH_ORDER, GRAVITY_CUTOFF_HZ, fs_hz, FilterKind::Lowpass)?;
    accel
        .iter()
        .map(|axis| {
            let g = filtfilt(&lp, axis)?;
            Ok(axis.iter().zip(g).map(|(a, g)| a - g).collect())
        })
        .collect()
}

/// The per-sensor filtering chain, at the segment's own sample rate.
pub fn preprocess_segment(raw: &SensorSegment) -> Result<SensorSegment> {
    if raw.channels.len() != NUM_CHANNELS {
        return Err(input_err!("expected {NUM_CHANNELS} channels, got {}", raw.channels.len()));
    }
    let fs = raw.sample_rate_hz;
    let hp = design_butterworth(BUTTERWORTH_ORDER, HIGHPASS_CUTOFF_HZ, fs, FilterKind::Highpass)?;
    let lp = design_butterworth(BUTTERWORTH_ORDER, LOWPASS_CUTOFF_HZ, fs, FilterKind::Lowpass)?;
    let mag = design_chebyshev1(MAG_ORDER, MAG_RIPPLE_DB, MAG_CUTOFF_HZ, fs, FilterKind::Lowpass)?;

    let mut out = Vec::with_capacity(NUM_CHANNELS);
    for linear in remove_gravity(&raw.channels[ACCEL], fs)? {
        out.push(filtfilt(&lp, &filtfilt(&hp, &linear)?)?);
    }
    for c in GYRO {
        out.push(filtfilt(&lp, &raw.channels[c])?);
    }
    for c in MAG {
        out.push(filtfilt(&mag, &raw.channels[c])?);
    }
    out.extend(raw.channels[QUAT].iter().cloned());
    SensorSegment::new(out, fs, raw.start_time_ms)
}

/// Linear interpolation of one channel onto the 40 Hz grid: output sample
/// `k` sits at input position `1.25·k`, and `floor(4N/5)` samples are kept.
pub fn resample_channel_50_to_40(x: &[f64]) -> Vec<f64> {
    let n_out = x.len() * 4 / 5;
    (0..n_out)
        .map(|k| {
            let i = 5 * k / 4;
            let frac = (5 * k % 4) as f64 / 4.0;
            if frac == 0.0 { x[i] } else { x[i] + frac * (x[i + 1] - x[i]) }
        })
        .collect()
}

pub fn resample_50_to_40(segment: &SensorSegment) -> Result<SensorSegment> {
    if segment.sample_rate_hz != RAW_RATE_HZ {
        return Err(input_err!("resampling expects {RAW_RATE_HZ} Hz input, got {} Hz", segment.sample_rate_hz));
    }
    let channels = segment.channels.iter().map(|c| resample_channel_50_to_40(c)).collect();
    SensorSegment::new(channels, TARGET_RATE_HZ, segment.start_time_ms)
}

/// Number of full windows in `n` samples.
pub fn window_count(n: usize) -> usize {
    if n < WINDOW_LEN { 0 } else { (n - WINDOW_LEN) / WINDOW_HOP + 1 }
}

/// Cuts 100-sample windows at hop 50; the trailing remainder is dropped.
/// Each window is flattened channel-major.
pub fn segment_windows(channels: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = channels.first().map_or(0, Vec::len);
    if n < WINDOW_LEN {
        return Err(input_err!("segment of {n} samples is shorter than one {WINDOW_LEN}-sample window"));
    }
    Ok((0..window_count(n))
        .map(|w| {
            let start = w * WINDOW_HOP;
            channels.iter().flat_map(|c| c[start..start + WINDOW_LEN].iter().copied()).collect()
        })
        .collect())
}

/// Full pipeline for one raw 50 Hz recording: filter, resample, window.
pub fn windows_from_raw(raw: &SensorSegment) -> Result<Vec<Vec<f64>>> {
    let filtered = preprocess_segment(raw)?;
    let resampled = resample_50_to_40(&filtered)?;
    segment_windows(&resampled.channels)
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Mean and population standard deviation (floored at [`STD_FLOOR`]) of
    /// each channel over every window and time step.
    pub fn fit<'a, I>(windows: I, channels: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let windows: Vec<&[f64]> = windows.into_iter().collect();
        if windows.len() < 2 {
            return Err(Error::Usage(format!("standardization needs at least 2 training windows, got {}", windows.len())));
        }
        let len = windows[0].len() / channels.max(1);
        if channels == 0 || windows.iter().any(|w| w.len() != channels * len) {
            return Err(input_err!("windows must all be {channels}×{len}"));
        }
        if let Some(i) = windows.iter().position(|w| w.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric(format!("non-finite value in standardization window {i}")));
        }
        let count = (windows.len() * len) as f64;
        let mut mean = vec![0.0; channels];
        for w in &windows {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += w[c * len..(c + 1) * len].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; channels];
        for w in &windows {
            for (c, v) in var.iter_mut().enumerate() {
                *v += w[c * len..(c + 1) * len].iter().map(|x| (x - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, window: &mut [f64]) -> Result<()> {
        let c = self.channels();
        if c == 0 || window.len() % c != 0 {
            return Err(input_err!("window of {} values does not split into {c} channels", window.len()));
        }
        let len = window.len() / c;
        for (ch, chunk) in window.chunks_mut(len).enumerate() {
            chunk.iter_mut().for_each(|v| *v = (*v - self.mean[ch]) / self.std[ch]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_lengths() {
        assert_eq!(resample_channel_50_to_40(&vec![0.0; 3000]).len(), 2400);
        assert_eq!(resample_channel_50_to_40(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).len(), 4);
    }

    #[test]
    fn resample_interpolates_ramp_exactly() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y = resample_channel_50_to_40(&x);
        for (k, v) in y.iter().enumerate() {
            assert_eq!(*v, 1.25 * k as f64);
        }
    }

    #[test]
    fn standardization_rejects_non_finite_windows() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![1.0, f64::NAN, 3.0, 4.0];
        let err = Standardization::fit([a.as_slice(), b.as_slice()], 2).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_count(2400), 47);
        assert_eq!(window_count(100), 1);
        assert_eq!(window_count(149), 1);
        assert_eq!(window_count(150), 2);
        assert_eq!(window_count(99), 0);
        assert!(segment_windows(&[vec![0.0; 99]]).is_err());
    }

    #[test]
    fn wrong_channel_count_is_input_error() {
        let seg = SensorSegment::new(vec![vec![0.0; 300]; 12], 50.0, 0).unwrap();
        assert!(matches!(preprocess_segment(&seg), Err(Error::Input(_))));
    }

    #[test]
    fn standardization_needs_two_windows() {
        let w = vec![0.0; 26];
        assert!(matches!(Standardization::fit([w.as_slice()], 13), Err(Error::Usage(_))));
        assert!(matches!(Standardization::fit(std::iter::empty(), 13), Err(Error::Usage(_))));
    }
}
