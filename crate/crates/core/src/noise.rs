//! Closed-form shot-noise budget and seeded stochastic sample generators.
//!
//! The budget follows the photodetection chain: mean reflected power on the
//! locked photodiode, white shot-noise power spectral density, conversion to
//! frequency noise through the discriminator, and conversion to an
//! equivalent birefringence. Two independent algebraic routes to the
//! frequency-noise density are implemented and must agree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bessel::{j0, j1};
use crate::constants::PLANCK;
use crate::error::{ensure, Result};
use crate::pdh::{discriminator_slope, SidebandPowers};

/// Closed-form shot-noise results.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NoiseBudget {
    /// Mean power on the reflection photodiode at resonance: 2 Ps + Pc/4, W.
    pub reflected_power_w: f64,
    /// Shot-noise PSD of the detected power, W/sqrt(Hz).
    pub shot_power_psd_w_per_sqrt_hz: f64,
    /// Frequency-noise floor after the discriminator, Hz/sqrt(Hz).
    pub shot_freq_psd_hz_per_sqrt_hz: f64,
    /// Equivalent birefringence floor, 1/sqrt(Hz).
    pub shot_birefringence_psd_per_sqrt_hz: f64,
}

/// Evaluate the shot-noise budget.
///
/// The frequency floor is computed twice: by dividing the power PSD by the
/// discriminator, and from the closed-form expression in terms of FSR,
/// finesse and the power split. The two routes must agree to 1e-10 relative.
pub fn noise_budget(
    powers: &SidebandPowers,
    linewidth_hz: f64,
    optical_frequency_hz: f64,
) -> Result<NoiseBudget> {
    ensure(
        powers.carrier_w > 0.0 && powers.carrier_w.is_finite(),
        "carrier_w",
        "budget needs a positive carrier power",
    )?;
    ensure(
        powers.sideband_w > 0.0 && powers.sideband_w.is_finite(),
        "sideband_w",
        "budget needs a positive sideband power",
    )?;
    ensure(
        linewidth_hz > 0.0 && linewidth_hz.is_finite(),
        "linewidth_hz",
        "must be finite and positive",
    )?;
    ensure(
        optical_frequency_hz > 0.0 && optical_frequency_hz.is_finite(),
        "optical_frequency_hz",
        "must be finite and positive",
    )?;
    let (pc, ps) = (powers.carrier_w, powers.sideband_w);
    let reflected = 2.0 * ps + pc / 4.0;
    let shot_power = (2.0 * PLANCK * optical_frequency_hz * reflected).sqrt();

    // Route 1: through the discriminator.
    let d = discriminator_slope(powers, linewidth_hz)?;
    let via_discriminator = shot_power / d;

    // Route 2: the closed-form expression. The linewidth stands in for
    // FSR / finesse.
    let closed_form = (PLANCK * optical_frequency_hz).sqrt() / (2.0 * 2.0_f64.sqrt())
        * linewidth_hz
        * ((pc / 4.0 + 2.0 * ps) / (pc * ps)).sqrt();

    let rel = (via_discriminator - closed_form).abs() / closed_form;
    debug_assert!(rel < 1e-10, "budget route mismatch: {rel:e}");

    Ok(NoiseBudget {
        reflected_power_w: reflected,
        shot_power_psd_w_per_sqrt_hz: shot_power,
        shot_freq_psd_hz_per_sqrt_hz: via_discriminator,
        shot_birefringence_psd_per_sqrt_hz: via_discriminator / optical_frequency_hz,
    })
}

/// Scan the modulation depth for the value minimizing the shot-noise
/// frequency floor at fixed input power. Returns (beta, floor).
pub fn optimal_mod_depth(
    input_power_w: f64,
    linewidth_hz: f64,
    optical_frequency_hz: f64,
) -> Result<(f64, f64)> {
    ensure(
        input_power_w > 0.0 && input_power_w.is_finite(),
        "input_power_w",
        "must be finite and positive",
    )?;
    let floor = |beta: f64| -> Result<f64> {
        let powers = SidebandPowers {
            carrier_w: j0(beta).powi(2) * input_power_w,
            sideband_w: j1(beta).powi(2) * input_power_w,
        };
        Ok(noise_budget(&powers, linewidth_hz, optical_frequency_hz)?
            .shot_freq_psd_hz_per_sqrt_hz)
    };
    let n = 2000;
    let mut best = (f64::NAN, f64::INFINITY);
    for i in 1..n {
        let beta = 2.0 * i as f64 / n as f64;
        let f = floor(beta)?;
        if f < best.1 {
            best = (beta, f);
        }
    }
    Ok(best)
}

/// A technical noise line added to the laser frequency.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TechnicalLine {
    pub frequency_hz: f64,
    pub amplitude_hz_rms: f64,
}

/// Configuration of the stochastic sources in a time-domain run.
///
/// The seed fully determines every generated sample; independent streams
/// (laser frequency noise, per-photodiode detector noise) draw from
/// distinct ChaCha streams of the same seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub shot_noise_enabled: bool,
    /// Detector white-noise PSD used when shot noise is enabled, W/sqrt(Hz).
    /// Resolved from the budget by the simulation; may be set directly for
    /// standalone generation.
    #[serde(default)]
    pub shot_psd_w_per_sqrt_hz: f64,
    #[serde(default)]
    pub technical_lines: Vec<TechnicalLine>,
    /// Corner below which the laser frequency noise rises as 1/f, Hz.
    #[serde(default)]
    pub flicker_corner_hz: f64,
    /// White laser frequency-noise floor, Hz/sqrt(Hz).
    #[serde(default)]
    pub flicker_level_hz_per_sqrt_hz: f64,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            shot_noise_enabled: false,
            shot_psd_w_per_sqrt_hz: 0.0,
            technical_lines: Vec::new(),
            flicker_corner_hz: 0.0,
            flicker_level_hz_per_sqrt_hz: 0.0,
            rng_seed: 1,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        for line in &self.technical_lines {
            ensure(
                line.amplitude_hz_rms >= 0.0 && line.amplitude_hz_rms.is_finite(),
                "technical_lines",
                "amplitudes must be finite and non-negative",
            )?;
            ensure(
                line.frequency_hz > 0.0 && line.frequency_hz < sample_rate_hz / 2.0,
                "technical_lines",
                format!(
                    "line at {} Hz aliased at sample rate {} Hz",
                    line.frequency_hz, sample_rate_hz
                ),
            )?;
        }
        ensure(
            self.flicker_corner_hz >= 0.0 && self.flicker_corner_hz.is_finite(),
            "flicker_corner_hz",
            "must be finite and non-negative",
        )?;
        ensure(
            self.flicker_level_hz_per_sqrt_hz >= 0.0
                && self.flicker_level_hz_per_sqrt_hz.is_finite(),
            "flicker_level_hz_per_sqrt_hz",
            "must be finite and non-negative",
        )?;
        ensure(
            self.shot_psd_w_per_sqrt_hz >= 0.0 && self.shot_psd_w_per_sqrt_hz.is_finite(),
            "shot_psd_w_per_sqrt_hz",
            "must be finite and non-negative",
        )?;
        Ok(())
    }

    /// An illustrative technical-noise profile: a handful of acoustic and
    /// mains lines leaving the few-hundred-Hz region about 15 dB above a
    /// shot-limited floor. Not a measurement; a plausible lab environment.
    pub fn illustrative_lab_profile(seed: u64) -> Self {
        Self {
            shot_noise_enabled: true,
            shot_psd_w_per_sqrt_hz: 0.0,
            technical_lines: vec![
                TechnicalLine {
                    frequency_hz: 50.0,
                    amplitude_hz_rms: 2.0e-3,
                },
                TechnicalLine {
                    frequency_hz: 150.0,
                    amplitude_hz_rms: 8.0e-4,
                },
                TechnicalLine {
                    frequency_hz: 1210.0,
                    amplitude_hz_rms: 5.0e-4,
                },
            ],
            flicker_corner_hz: 300.0,
            flicker_level_hz_per_sqrt_hz: 6.0e-5,
            rng_seed: seed,
        }
    }
}

/// Streaming per-sample noise generator. One instance per run; independent
/// runs with distinct seeds may execute concurrently.
#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    config: NoiseConfig,
    sample_rate_hz: f64,
    laser_rng: ChaCha8Rng,
    det_cw_rng: ChaCha8Rng,
    det_ccw_rng: ChaCha8Rng,
    white_sigma_hz: f64,
    det_sigma_w: f64,
    // Three-pole pink filter state (Paul Kellet style), feeding the 1/f
    // part of the laser frequency noise.
    pink: [f64; 3],
    pink_scale: f64,
    sample_index: u64,
}

impl NoiseGenerator {
    pub fn new(config: &NoiseConfig, sample_rate_hz: f64) -> Result<Self> {
        config.validate(sample_rate_hz)?;
        let mut laser_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        laser_rng.set_stream(0);
        let mut det_cw_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        det_cw_rng.set_stream(1);
        let mut det_ccw_rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        det_ccw_rng.set_stream(2);
        let white_sigma_hz = config.flicker_level_hz_per_sqrt_hz * (sample_rate_hz / 2.0).sqrt();
        let det_sigma_w = if config.shot_noise_enabled {
            config.shot_psd_w_per_sqrt_hz * (sample_rate_hz / 2.0).sqrt()
        } else {
            0.0
        };
        // The pink filter has unit-ish PSD around fs/1e4; scale so that the
        // 1/f branch crosses the white floor near the flicker corner. This
        // profile is illustrative, not calibrated.
        let pink_scale = if config.flicker_corner_hz > 0.0 {
            config.flicker_level_hz_per_sqrt_hz
                * (config.flicker_corner_hz * sample_rate_hz / 2.0).sqrt()
                / 15.0
        } else {
            0.0
        };
        Ok(Self {
            config: config.clone(),
            sample_rate_hz,
            laser_rng,
            det_cw_rng,
            det_ccw_rng,
            white_sigma_hz,
            det_sigma_w,
            pink: [0.0; 3],
            pink_scale,
            sample_index: 0,
        })
    }

    #[inline]
    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller on explicit uniforms keeps the draw count per sample
        // fixed, which keeps streams aligned and runs reproducible.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Laser frequency noise for the current sample, Hz.
    #[inline]
    pub fn laser_frequency_hz(&mut self) -> f64 {
        let t = self.sample_index as f64 / self.sample_rate_hz;
        let mut total = 0.0;
        for line in &self.config.technical_lines {
            total += line.amplitude_hz_rms
                * std::f64::consts::SQRT_2
                * (std::f64::consts::TAU * line.frequency_hz * t).sin();
        }
        if self.white_sigma_hz > 0.0 || self.pink_scale > 0.0 {
            let w = Self::gauss(&mut self.laser_rng);
            total += self.white_sigma_hz * w;
            if self.pink_scale > 0.0 {
                self.pink[0] = 0.99886 * self.pink[0] + w * 0.0555179;
                self.pink[1] = 0.99332 * self.pink[1] + w * 0.0750759;
                self.pink[2] = 0.96900 * self.pink[2] + w * 0.1538520;
                total += self.pink_scale * (self.pink[0] + self.pink[1] + self.pink[2]);
            }
        }
        total
    }

    /// Detector noise on the cw reflection photodiode, W.
    #[inline]
    pub fn detector_cw_w(&mut self) -> f64 {
        if self.det_sigma_w > 0.0 {
            self.det_sigma_w * Self::gauss(&mut self.det_cw_rng)
        } else {
            0.0
        }
    }

    /// Detector noise on the ccw reflection photodiode, W.
    #[inline]
    pub fn detector_ccw_w(&mut self) -> f64 {
        if self.det_sigma_w > 0.0 {
            self.det_sigma_w * Self::gauss(&mut self.det_ccw_rng)
        } else {
            0.0
        }
    }

    /// Advance to the next sample instant.
    #[inline]
    pub fn advance(&mut self) {
        self.sample_index += 1;
    }
}

/// Generated standalone noise series.
#[derive(Debug, Clone)]
pub struct NoiseSeries {
    /// Laser frequency noise, Hz.
    pub laser_frequency_hz: Vec<f64>,
    /// Detector (photodiode) noise, W.
    pub detector_w: Vec<f64>,
}

/// Generate `count` samples of laser frequency noise and detector noise.
pub fn sample_noise(config: &NoiseConfig, count: usize, sample_rate_hz: f64) -> Result<NoiseSeries> {
    ensure(count > 0, "count", "must be positive")?;
    let mut gen = NoiseGenerator::new(config, sample_rate_hz)?;
    let mut laser = Vec::with_capacity(count);
    let mut det = Vec::with_capacity(count);
    for _ in 0..count {
        laser.push(gen.laser_frequency_hz());
        det.push(gen.detector_cw_w());
        gen.advance();
    }
    Ok(NoiseSeries {
        laser_frequency_hz: laser,
        detector_w: det,
    })
}
