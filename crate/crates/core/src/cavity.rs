//! Static and dynamic model of the square ring cavity.
//!
//! The cavity is modeled as an effective two-port resonator with all mirror
//! losses lumped into a single round-trip amplitude `rho`, derived from the
//! finesse via F = pi * sqrt(rho) / (1 - rho). The input coupler is
//! impedance-matched by default (reflection dips to zero on resonance), with
//! a mismatch parameter available.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constants::SPEED_OF_LIGHT;
use crate::error::{ensure, Error, Result};
use crate::trace::Trace;

/// Geometry and quality of the ring cavity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityConfig {
    /// Arm length between adjacent mirrors, meters.
    pub arm_length_m: f64,
    /// Number of mirrors forming the ring (4 for a square).
    #[serde(default = "default_mirror_count")]
    pub mirror_count: u32,
    /// Finesse, FSR / linewidth.
    pub finesse: f64,
    /// Vacuum wavelength of the injected light, meters.
    pub vacuum_wavelength_m: f64,
    /// Resonance offset of the ccw direction relative to cw, Hz.
    /// This is the measurand: the detuning the ccw beam acquires when the
    /// laser is locked to the cw resonance.
    #[serde(default)]
    pub anisotropy_detuning_hz: f64,
    /// Input-coupler mismatch: 0 = impedance matched (reflection nulls on
    /// resonance). Shifts the coupler reflectivity towards 1 as it grows.
    #[serde(default)]
    pub coupling_mismatch: f64,
}

fn default_mirror_count() -> u32 {
    4
}

impl Default for CavityConfig {
    fn default() -> Self {
        Self {
            arm_length_m: 0.4,
            mirror_count: 4,
            finesse: 50_000.0,
            vacuum_wavelength_m: 1.064e-6,
            anisotropy_detuning_hz: 0.0,
            coupling_mismatch: 0.0,
        }
    }
}

impl CavityConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.arm_length_m.is_finite() && self.arm_length_m > 0.0,
            "arm_length_m",
            format!("must be finite and positive, got {}", self.arm_length_m),
        )?;
        ensure(
            self.mirror_count >= 3,
            "mirror_count",
            format!("a ring needs at least 3 mirrors, got {}", self.mirror_count),
        )?;
        ensure(
            self.finesse.is_finite() && self.finesse > 1.0,
            "finesse",
            format!("must be finite and > 1, got {}", self.finesse),
        )?;
        ensure(
            self.vacuum_wavelength_m.is_finite() && self.vacuum_wavelength_m > 0.0,
            "vacuum_wavelength_m",
            format!("must be finite and positive, got {}", self.vacuum_wavelength_m),
        )?;
        ensure(
            self.anisotropy_detuning_hz.is_finite(),
            "anisotropy_detuning_hz",
            "must be finite",
        )?;
        ensure(
            self.coupling_mismatch.is_finite()
                && self.coupling_mismatch >= 0.0
                && self.coupling_mismatch < 1.0,
            "coupling_mismatch",
            format!("must be in [0, 1), got {}", self.coupling_mismatch),
        )?;
        Ok(())
    }

    /// Ring perimeter, meters.
    pub fn perimeter_m(&self) -> f64 {
        self.mirror_count as f64 * self.arm_length_m
    }

    /// Optical carrier frequency c / lambda, Hz.
    pub fn optical_frequency_hz(&self) -> f64 {
        SPEED_OF_LIGHT / self.vacuum_wavelength_m
    }
}

/// Spectral quantities derived from a [`CavityConfig`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CavityParams {
    /// Free spectral range c / perimeter, Hz.
    pub fsr_hz: f64,
    /// Cavity linewidth FSR / finesse, Hz.
    pub linewidth_hz: f64,
    /// Photon lifetime 1 / (2 pi linewidth), seconds.
    pub photon_lifetime_s: f64,
    /// Amplitude attenuation per round trip, in (0, 1).
    pub roundtrip_amplitude: f64,
    /// Input-coupler amplitude reflectivity (sqrt(rho) when matched).
    pub coupler_reflectivity: f64,
    /// Finesse echoed from the config (defines roundtrip_amplitude).
    pub finesse: f64,
}

/// Solve F = pi sqrt(rho) / (1 - rho) for rho.
///
/// With x = sqrt(rho) this is the quadratic F x^2 + pi x - F = 0, whose
/// positive root is exact; no iteration needed.
fn roundtrip_amplitude_from_finesse(finesse: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let x = (-pi + (pi * pi + 4.0 * finesse * finesse).sqrt()) / (2.0 * finesse);
    x * x
}

/// Forward relation: finesse implied by a round-trip amplitude.
pub fn finesse_from_roundtrip_amplitude(rho: f64) -> f64 {
    std::f64::consts::PI * rho.sqrt() / (1.0 - rho)
}

/// Derive all spectral parameters from the cavity geometry and finesse.
pub fn derive_params(config: &CavityConfig) -> Result<CavityParams> {
    config.validate()?;
    let fsr_hz = SPEED_OF_LIGHT / config.perimeter_m();
    let linewidth_hz = fsr_hz / config.finesse;
    let photon_lifetime_s = 1.0 / (2.0 * std::f64::consts::PI * linewidth_hz);
    let rho = roundtrip_amplitude_from_finesse(config.finesse);
    // Matched coupler: r1 = sqrt(rho). The mismatch parameter pushes r1
    // towards 1, leaving a residual reflection dip on resonance.
    let r1 = rho.sqrt() + config.coupling_mismatch * (1.0 - rho.sqrt());
    Ok(CavityParams {
        fsr_hz,
        linewidth_hz,
        photon_lifetime_s,
        roundtrip_amplitude: rho,
        coupler_reflectivity: r1,
        finesse: config.finesse,
    })
}

/// Complex amplitude reflection coefficient at a given carrier detuning.
///
/// Two-mirror equivalent: r(phi) = (r1 - r2 e^{i phi}) / (1 - r1 r2 e^{i phi})
/// with r2 = rho / r1 and phi = 2 pi detuning / FSR. Periodic in the FSR,
/// zero on resonance for the matched lossless model.
pub fn reflection_coefficient(params: &CavityParams, detuning_hz: f64) -> Result<Complex64> {
    ensure(detuning_hz.is_finite(), "detuning_hz", "must be finite")?;
    Ok(reflection_unchecked(params, detuning_hz))
}

#[inline]
pub(crate) fn reflection_unchecked(params: &CavityParams, detuning_hz: f64) -> Complex64 {
    let phi = 2.0 * std::f64::consts::PI * detuning_hz / params.fsr_hz;
    let r1 = params.coupler_reflectivity;
    let r2 = params.roundtrip_amplitude / r1;
    let e = Complex64::from_polar(1.0, phi);
    (r1 - r2 * e) / (1.0 - r1 * r2 * e)
}

/// Optional additive white noise for synthetic ring-down traces.
#[derive(Debug, Clone, Copy)]
pub struct RingdownNoise {
    /// Gaussian rms as a fraction of the initial power.
    pub relative_rms: f64,
    pub seed: u64,
}

/// Synthesize an exponential ring-down power trace on a uniform grid.
pub fn ringdown_trace(
    params: &CavityParams,
    duration_s: f64,
    sample_rate_hz: f64,
    initial_power_w: f64,
    noise: Option<RingdownNoise>,
) -> Result<Trace> {
    ensure(
        duration_s.is_finite() && duration_s > 0.0,
        "duration_s",
        "must be finite and positive",
    )?;
    ensure(
        initial_power_w.is_finite() && initial_power_w > 0.0,
        "initial_power_w",
        "must be finite and positive",
    )?;
    let tau = params.photon_lifetime_s;
    ensure(
        sample_rate_hz >= 10.0 / tau,
        "sample_rate_hz",
        format!(
            "undersampled: need at least 10/tau = {:.3e} Hz, got {:.3e} Hz",
            10.0 / tau,
            sample_rate_hz
        ),
    )?;
    let n = (duration_s * sample_rate_hz).floor() as usize + 1;
    let dt = 1.0 / sample_rate_hz;
    let mut power: Vec<f64> = (0..n)
        .map(|i| initial_power_w * (-(i as f64) * dt / tau).exp())
        .collect();
    if let Some(noise) = noise {
        ensure(
            noise.relative_rms >= 0.0 && noise.relative_rms.is_finite(),
            "relative_rms",
            "must be finite and non-negative",
        )?;
        if noise.relative_rms > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
            let dist = Normal::new(0.0, noise.relative_rms * initial_power_w).unwrap();
            for p in &mut power {
                *p += dist.sample(&mut rng);
            }
        }
    }
    let mut trace = Trace::new(sample_rate_hz)?;
    trace.push_channel("power_w", power)?;
    Ok(trace)
}

/// Result of a ring-down fit.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RingdownFit {
    pub tau_s: f64,
    pub finesse: f64,
}

/// Recover the decay constant, then the finesse via F = 2 pi fsr tau.
///
/// A weighted log-linear least-squares fit seeds a direct Gauss-Newton fit
/// of A exp(-t/tau) over the full trace. The log fit alone carries a small
/// positive bias from additive noise (censoring at the fit floor plus the
/// concavity of the log); the nonlinear refinement removes it.
///
/// For the seed fit, samples below `exp(-2.5)` of the peak are excluded so
/// the log transform is not dominated by noise on the tail; weights are
/// proportional to the squared sample value, matching the variance of
/// log(P + n) for additive n.
pub fn fit_ringdown(trace: &Trace, fsr_hz: f64) -> Result<RingdownFit> {
    let power = trace
        .channel("power_w")
        .ok_or_else(|| Error::DegenerateTrace("missing power_w channel".into()))?;
    if power.len() < 16 {
        return Err(Error::DegenerateTrace(format!(
            "too short: {} samples",
            power.len()
        )));
    }
    let pmax = power.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(pmax.is_finite() && pmax > 0.0) {
        return Err(Error::DegenerateTrace("no positive samples".into()));
    }
    let floor = pmax * (-2.5_f64).exp();
    let dt = trace.time_step_s();

    // Weighted least squares on (t, ln P) with weights P^2.
    let (mut sw, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut used = 0usize;
    for (i, &p) in power.iter().enumerate() {
        if p <= floor {
            continue;
        }
        let t = i as f64 * dt;
        let y = p.ln();
        let w = p * p;
        sw += w;
        st += w * t;
        sy += w * y;
        stt += w * t * t;
        sty += w * t * y;
        used += 1;
    }
    if used < 8 {
        return Err(Error::DegenerateTrace(format!(
            "only {used} usable samples above the fit floor"
        )));
    }
    let denom = sw * stt - st * st;
    if denom.abs() < 1e-300 {
        return Err(Error::DegenerateTrace("singular fit".into()));
    }
    let slope = (sw * sty - st * sy) / denom;
    if !(slope.is_finite() && slope < 0.0) {
        return Err(Error::DegenerateTrace(format!(
            "non-decaying trace (log slope {slope:.3e})"
        )));
    }
    // Guard against essentially constant input: require at least one decade
    // of decay inside the fit window.
    let mut tau_s = -1.0 / slope;
    let span = (used as f64) * dt;
    if span < 0.5 * tau_s {
        return Err(Error::DegenerateTrace(
            "trace too short relative to the fitted decay constant".into(),
        ));
    }
    let amp = ((sy - slope * st) / sw).exp();
    let mut amp = if amp.is_finite() && amp > 0.0 { amp } else { pmax };

    // Gauss-Newton refinement of (A, tau) on the raw samples.
    for _ in 0..30 {
        let (mut jaa, mut jat, mut jtt, mut ga, mut gt) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &p) in power.iter().enumerate() {
            let t = i as f64 * dt;
            let e = (-t / tau_s).exp();
            let r = p - amp * e;
            let da = e;
            let dtau = amp * e * t / (tau_s * tau_s);
            jaa += da * da;
            jat += da * dtau;
            jtt += dtau * dtau;
            ga += da * r;
            gt += dtau * r;
        }
        let det = jaa * jtt - jat * jat;
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = (jtt * ga - jat * gt) / det;
        let step_t = (jaa * gt - jat * ga) / det;
        let (next_a, next_t) = (amp + step_a, tau_s + step_t);
        if !(next_a.is_finite() && next_a > 0.0 && next_t.is_finite() && next_t > 0.0) {
            break;
        }
        let converged = step_a.abs() < 1e-12 * amp && step_t.abs() < 1e-12 * tau_s;
        amp = next_a;
        tau_s = next_t;
        if converged {
            break;
        }
    }

    let finesse = 2.0 * std::f64::consts::PI * fsr_hz * tau_s;
    Ok(RingdownFit { tau_s, finesse })
}
