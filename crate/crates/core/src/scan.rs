//! Calibrated sensitivity scan: drive the cw-path EOM with a series of FM
//! amplitudes, read the tone back out of the ccw error signal with a
//! lock-in, and fit the transfer on log-log axes. A zero-drive point
//! measures the detection floor.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Scenario;
use crate::dsp::{lock_in_tail_mean, LockInConfig};
use crate::error::{ensure, Error, Result};
use crate::sim::run_lock;

/// One injection amplitude and its readout.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SensitivityPoint {
    pub drive_amplitude_v: f64,
    /// Injected FM amplitude depth * V * f, Hz.
    pub fm_amplitude_hz: f64,
    /// Lock-in magnitude of the ccw error at the drive frequency, W.
    pub lockin_reading_w: f64,
    /// Reading divided by the discriminator slope, Hz.
    pub equivalent_frequency_hz: f64,
    pub locked: bool,
}

/// Scan outcome: per-point readings, log-log response fit, and the
/// zero-injection floor.
#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub points: Vec<SensitivityPoint>,
    /// Slope of ln(equivalent frequency) vs ln(injected amplitude); unity
    /// for a linear chain.
    pub response_slope: f64,
    /// Recovered amplitude per injected amplitude at the scan midpoint.
    pub response_gain: f64,
    /// Amplitude spectral density equivalent of the zero-drive lock-in
    /// reading, Hz/sqrt(Hz).
    pub noise_floor_asd_hz_per_sqrt_hz: f64,
    /// Floor expressed as an rms amplitude at the run's averaging time, Hz.
    pub noise_floor_hz: f64,
    /// Floor extrapolated to 1000 s of averaging, Hz.
    pub noise_floor_1000s_hz: f64,
    /// Lock-in noise-equivalent bandwidth used for the floor, Hz.
    pub lockin_enbw_hz: f64,
}

/// Fraction of the run the lock-in output is averaged over, skipping the
/// settling transient.
const TAIL_FRACTION: f64 = 0.5;

fn measure_point(base: &Scenario, drive_v: f64, seed_offset: u64) -> Result<SensitivityPoint> {
    let mut sc = base.clone();
    let mut inj = sc.injection.unwrap_or_default();
    inj.drive_amplitude_v = drive_v;
    sc.injection = Some(inj);
    sc.noise.rng_seed = sc.noise.rng_seed.wrapping_add(seed_offset);
    let outcome = run_lock(&sc)?;
    let trace = &outcome.trace;
    let ccw = trace
        .channel("ccw_error_w")
        .ok_or_else(|| Error::DegenerateTrace("missing ccw error channel".into()))?;
    let cfg = LockInConfig::for_reference(inj.drive_frequency_hz);
    let reading = lock_in_tail_mean(ccw, trace.sample_rate_hz(), &cfg, TAIL_FRACTION)?;
    Ok(SensitivityPoint {
        drive_amplitude_v: drive_v,
        fm_amplitude_hz: inj.fm_amplitude_hz(),
        lockin_reading_w: reading,
        equivalent_frequency_hz: reading / outcome.report.discriminator_slope_w_per_hz,
        locked: outcome.report.locked,
    })
}

/// Run the scan over the given drive amplitudes (volts). A zero amplitude
/// is always measured in addition, for the floor. `workers` bounds the
/// number of concurrent runs; 0 means one per CPU.
pub fn sensitivity_scan(
    base: &Scenario,
    drive_amplitudes_v: &[f64],
    workers: usize,
) -> Result<ScanResult> {
    ensure(
        !drive_amplitudes_v.is_empty(),
        "drive_amplitudes_v",
        "empty amplitude list",
    )?;
    for &a in drive_amplitudes_v {
        ensure(
            a >= 0.0 && a.is_finite(),
            "drive_amplitudes_v",
            "amplitudes must be finite and non-negative",
        )?;
    }
    let inj = base.injection.unwrap_or_default();
    inj.validate()?;
    ensure(
        inj.drive_frequency_hz < base.run.sample_rate_hz / (2.0 * base.run.trace_decimation as f64),
        "drive_frequency_hz",
        "drive tone aliased by the trace decimation",
    )?;

    // Zero-drive floor point first; per-point seeds are offset by index so
    // the scan is reproducible regardless of scheduling.
    let mut drives = vec![0.0];
    drives.extend_from_slice(drive_amplitudes_v);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Scenario(e.to_string()))?;
    let measured: Result<Vec<SensitivityPoint>> = pool.install(|| {
        drives
            .par_iter()
            .enumerate()
            .map(|(i, &a)| measure_point(base, a, i as u64))
            .collect()
    });
    let measured = measured?;

    let floor_point = measured[0];
    let points: Vec<SensitivityPoint> = measured[1..].to_vec();

    // Log-log fit over the locked, nonzero points.
    let fit: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.locked && p.fm_amplitude_hz > 0.0 && p.equivalent_frequency_hz > 0.0)
        .map(|p| (p.fm_amplitude_hz.ln(), p.equivalent_frequency_hz.ln()))
        .collect();
    ensure(
        fit.len() >= 2,
        "drive_amplitudes_v",
        "need at least two locked nonzero points for the response fit",
    )?;
    let n = fit.len() as f64;
    let mx = fit.iter().map(|p| p.0).sum::<f64>() / n;
    let my = fit.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = fit.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    ensure(sxx > 0.0, "drive_amplitudes_v", "amplitudes must not all coincide")?;
    let slope = sxy / sxx;
    // Recovered-over-injected amplitude, geometric mean across the points.
    let gain = (my - mx).exp();

    let cfg = LockInConfig::for_reference(inj.drive_frequency_hz);
    let enbw = cfg.equivalent_noise_bandwidth_hz();
    // A Rayleigh-distributed magnitude of white noise in the lock-in band
    // has mean sqrt(pi) * gamma * sqrt(ENBW); invert that for the ASD.
    let asd = floor_point.equivalent_frequency_hz / (std::f64::consts::PI * enbw).sqrt();
    let averaging_time = TAIL_FRACTION * base.run.duration_s;
    let floor_now = asd / (4.0 * averaging_time).sqrt();
    let floor_1000 = asd / (4.0 * 1000.0f64).sqrt();

    Ok(ScanResult {
        points,
        response_slope: slope,
        response_gain: gain,
        noise_floor_asd_hz_per_sqrt_hz: asd,
        noise_floor_hz: floor_now,
        noise_floor_1000s_hz: floor_1000,
        lockin_enbw_hz: enbw,
    })
}
