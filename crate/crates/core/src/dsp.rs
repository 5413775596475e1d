//! Measurement-side DSP: digital lock-in, Welch PSD estimation, and the
//! birefringence conversions.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

const TWO_PI: f64 = std::f64::consts::TAU;

/// Dual-phase lock-in settings.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockInConfig {
    pub reference_frequency_hz: f64,
    /// Time constant of each cascaded single-pole low-pass, seconds.
    pub time_constant_s: f64,
    /// Number of cascaded single poles.
    pub filter_order: u32,
}

impl LockInConfig {
    /// Defaults for a given reference: order 2, time constant 100 periods.
    pub fn for_reference(reference_frequency_hz: f64) -> Self {
        Self {
            reference_frequency_hz,
            time_constant_s: 100.0 / reference_frequency_hz,
            filter_order: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.reference_frequency_hz > 0.0 && self.reference_frequency_hz.is_finite(),
            "reference_frequency_hz",
            "must be finite and positive",
        )?;
        ensure(
            self.time_constant_s > 1.0 / self.reference_frequency_hz,
            "time_constant_s",
            "must exceed one reference period",
        )?;
        ensure(self.filter_order >= 1, "filter_order", "must be at least 1")?;
        Ok(())
    }

    /// Equivalent noise bandwidth of the cascaded low-pass, Hz:
    /// (1 / 2 pi tau) * integral (1+x^2)^-k dx over the positive axis.
    pub fn equivalent_noise_bandwidth_hz(&self) -> f64 {
        // sqrt(pi)/2 * Gamma(k - 1/2) / Gamma(k), by recurrence from k = 1.
        let k = self.filter_order;
        let mut ratio = std::f64::consts::PI / 2.0; // k = 1: Gamma(1/2)/Gamma(1) * sqrt(pi)/2
        for m in 1..k {
            let m = m as f64;
            ratio *= (m - 0.5) / m;
        }
        ratio / (TWO_PI * self.time_constant_s)
    }
}

/// Lock-in output: amplitude (same units as input) and phase in radians.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LockInReading {
    pub magnitude: f64,
    pub phase_rad: f64,
}

fn lockin_filtered(
    series: &[f64],
    sample_rate_hz: f64,
    config: &LockInConfig,
) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    let min_len = (10.0 * config.time_constant_s * sample_rate_hz) as usize;
    ensure(
        series.len() >= min_len,
        "series",
        format!(
            "too short for the time constant: {} samples, need {}",
            series.len(),
            min_len
        ),
    )?;
    let w = TWO_PI * config.reference_frequency_hz / sample_rate_hz;
    let alpha = 1.0 - (-1.0 / (config.time_constant_s * sample_rate_hz)).exp();
    let order = config.filter_order as usize;
    let mut i_states = vec![0.0_f64; order];
    let mut q_states = vec![0.0_f64; order];
    let mut out = Vec::with_capacity(series.len());
    for (n, &x) in series.iter().enumerate() {
        let phase = w * n as f64;
        // Factor 2 so a pure sine of amplitude A reads A.
        let mut i = 2.0 * x * phase.sin();
        let mut q = 2.0 * x * phase.cos();
        for k in 0..order {
            i_states[k] += alpha * (i - i_states[k]);
            q_states[k] += alpha * (q - q_states[k]);
            i = i_states[k];
            q = q_states[k];
        }
        out.push((i, q));
    }
    Ok(out)
}

/// Dual-phase lock-in: mixes with quadrature references at the reference
/// frequency and cascades single-pole low-passes. Returns the final
/// magnitude and phase; a pure sine of amplitude A at the reference reads A.
pub fn lock_in(series: &[f64], sample_rate_hz: f64, config: &LockInConfig) -> Result<LockInReading> {
    let filtered = lockin_filtered(series, sample_rate_hz, config)?;
    let &(i, q) = filtered.last().expect("non-empty by validation");
    Ok(LockInReading {
        magnitude: (i * i + q * q).sqrt(),
        phase_rad: q.atan2(i),
    })
}

/// Lock-in magnitude averaged over the trailing `fraction` of the series,
/// after settling. Robust against the sample-to-sample flutter of a noisy
/// magnitude; used for floor measurements.
pub fn lock_in_tail_mean(
    series: &[f64],
    sample_rate_hz: f64,
    config: &LockInConfig,
    fraction: f64,
) -> Result<f64> {
    ensure(
        fraction > 0.0 && fraction <= 0.9,
        "fraction",
        "must be in (0, 0.9]",
    )?;
    let filtered = lockin_filtered(series, sample_rate_hz, config)?;
    let start = ((1.0 - fraction) * filtered.len() as f64) as usize;
    let tail = &filtered[start..];
    let sum: f64 = tail.iter().map(|&(i, q)| (i * i + q * q).sqrt()).sum();
    Ok(sum / tail.len() as f64)
}

/// Window selection for the Welch estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rectangular,
}

/// One-sided Welch power spectral density estimate.
#[derive(Debug, Clone)]
pub struct Psd {
    pub frequencies_hz: Vec<f64>,
    /// One-sided PSD, input-units squared per Hz.
    pub values: Vec<f64>,
    pub segments_averaged: usize,
}

/// Welch PSD: windowed, overlapped, averaged periodograms, normalized so
/// the PSD integrates to the series variance (one-sided convention).
pub fn welch_psd(
    series: &[f64],
    sample_rate_hz: f64,
    segment_length: usize,
    overlap_fraction: f64,
    window: Window,
) -> Result<Psd> {
    ensure(
        segment_length >= 8 && segment_length <= series.len(),
        "segment_length",
        format!(
            "must be in [8, series length = {}], got {segment_length}",
            series.len()
        ),
    )?;
    ensure(
        (0.0..1.0).contains(&overlap_fraction),
        "overlap_fraction",
        "must be in [0, 1)",
    )?;
    let hop = ((segment_length as f64) * (1.0 - overlap_fraction)).round() as usize;
    ensure(hop >= 1, "overlap_fraction", "degenerate hop size")?;

    let win: Vec<f64> = match window {
        Window::Rectangular => vec![1.0; segment_length],
        Window::Hann => (0..segment_length)
            .map(|i| {
                let x = TWO_PI * i as f64 / segment_length as f64;
                0.5 * (1.0 - x.cos())
            })
            .collect(),
    };
    let win_power: f64 = win.iter().map(|w| w * w).sum();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(segment_length);
    let n_bins = segment_length / 2 + 1;
    let mut acc = vec![0.0_f64; n_bins];
    let mut buf = vec![Complex64::default(); segment_length];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut segments = 0usize;
    let mut start = 0usize;
    while start + segment_length <= series.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(series[start + i] * win[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, a) in acc.iter_mut().enumerate() {
            *a += buf[k].norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    ensure(segments >= 1, "series", "no complete segment fits")?;

    let scale = 1.0 / (sample_rate_hz * win_power * segments as f64);
    let values: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || (segment_length % 2 == 0 && k == n_bins - 1) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    let frequencies_hz = (0..n_bins)
        .map(|k| k as f64 * sample_rate_hz / segment_length as f64)
        .collect();
    Ok(Psd {
        frequencies_hz,
        values,
        segments_averaged: segments,
    })
}

/// Fractional frequency shift interpreted as a refractive-index anisotropy.
pub fn birefringence_from_frequency(delta_nu_hz: f64, optical_frequency_hz: f64) -> Result<f64> {
    ensure(
        optical_frequency_hz > 0.0 && optical_frequency_hz.is_finite(),
        "optical_frequency_hz",
        "must be finite and positive",
    )?;
    Ok(delta_nu_hz / optical_frequency_hz)
}

/// Noise-equivalent birefringence delta_n * sqrt(4 tau) for a measurement
/// of duration tau, 1/sqrt(Hz).
pub fn noise_equivalent_birefringence(delta_n: f64, measurement_time_s: f64) -> Result<f64> {
    ensure(
        measurement_time_s > 0.0 && measurement_time_s.is_finite(),
        "measurement_time_s",
        "must be finite and positive",
    )?;
    Ok(delta_n * (4.0 * measurement_time_s).sqrt())
}
