//! Phase-modulation sidebands and the PDH error signal.
//!
//! The reflected beat at the modulation frequency is built from the
//! three-wave (carrier plus first-order sidebands) cavity response. The
//! sweep is normalized so that its small-detuning slope reproduces the
//! discriminator D = 4 sqrt(Pc Ps) / linewidth; the unnormalized
//! demodulation product is exposed for diagnostics.
//!
//! Sign convention: positive detuning yields a positive error signal at the
//! quadrature demodulation phase (pi/2). The hardware sign is not specified
//! by the apparatus description; this is a documented choice.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bessel::{j0, j1};
use crate::cavity::{reflection_unchecked, CavityParams};
use crate::error::{ensure, Result};

/// PDH phase-modulation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationConfig {
    /// Modulation frequency Omega / 2 pi, Hz.
    pub mod_frequency_hz: f64,
    /// Modulation depth beta, radians.
    pub mod_depth_rad: f64,
    /// Total optical power before the modulator, W.
    pub input_power_w: f64,
    /// Demodulation phase, radians. pi/2 selects the dispersive quadrature
    /// of the lossless matched model.
    #[serde(default = "default_demod_phase")]
    pub demod_phase_rad: f64,
}

fn default_demod_phase() -> f64 {
    std::f64::consts::FRAC_PI_2
}

impl Default for ModulationConfig {
    fn default() -> Self {
        Self {
            mod_frequency_hz: 1.0e7,
            mod_depth_rad: 1.0,
            // Chosen so the carrier power matches the 10 mW working point.
            input_power_w: 0.017_078,
            demod_phase_rad: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.mod_frequency_hz.is_finite() && self.mod_frequency_hz > 0.0,
            "mod_frequency_hz",
            "must be finite and positive",
        )?;
        ensure(
            self.mod_depth_rad.is_finite() && self.mod_depth_rad >= 0.0,
            "mod_depth_rad",
            "must be finite and non-negative",
        )?;
        ensure(
            self.input_power_w.is_finite() && self.input_power_w >= 0.0,
            "input_power_w",
            "must be finite and non-negative",
        )?;
        ensure(
            self.demod_phase_rad.is_finite(),
            "demod_phase_rad",
            "must be finite",
        )?;
        Ok(())
    }
}

/// Carrier / first-order sideband power split.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SidebandPowers {
    /// Carrier power J0(beta)^2 P0, W.
    pub carrier_w: f64,
    /// Power in each first-order sideband J1(beta)^2 P0, W.
    pub sideband_w: f64,
}

/// Bessel-weighted carrier/sideband split of the input power.
pub fn sideband_powers(config: &ModulationConfig) -> Result<SidebandPowers> {
    config.validate()?;
    let b = config.mod_depth_rad;
    Ok(SidebandPowers {
        carrier_w: j0(b).powi(2) * config.input_power_w,
        sideband_w: j1(b).powi(2) * config.input_power_w,
    })
}

/// Discriminator slope D = 4 sqrt(Pc Ps) / linewidth, W/Hz.
pub fn discriminator_slope(powers: &SidebandPowers, linewidth_hz: f64) -> Result<f64> {
    ensure(
        linewidth_hz.is_finite() && linewidth_hz > 0.0,
        "linewidth_hz",
        "must be finite and positive",
    )?;
    Ok(4.0 * (powers.carrier_w * powers.sideband_w).sqrt() / linewidth_hz)
}

/// Complex demodulation product of the three-wave reflected field at a
/// given carrier detuning: F(d) F*(d+Omega) - F*(d) F(d-Omega).
#[inline]
pub(crate) fn beat_product(params: &CavityParams, mod_frequency_hz: f64, detuning_hz: f64) -> Complex64 {
    let f0 = reflection_unchecked(params, detuning_hz);
    let fp = reflection_unchecked(params, detuning_hz + mod_frequency_hz);
    let fm = reflection_unchecked(params, detuning_hz - mod_frequency_hz);
    f0 * fp.conj() - f0.conj() * fm
}

/// Raw (unnormalized) demodulated reflection response, W.
pub fn raw_demodulated(
    params: &CavityParams,
    config: &ModulationConfig,
    detuning_hz: f64,
) -> Result<f64> {
    config.validate()?;
    ensure(detuning_hz.is_finite(), "detuning_hz", "must be finite")?;
    let powers = sideband_powers(config)?;
    let chi = beat_product(params, config.mod_frequency_hz, detuning_hz);
    let rotated = chi * Complex64::from_polar(1.0, -config.demod_phase_rad);
    Ok(2.0 * (powers.carrier_w * powers.sideband_w).sqrt() * rotated.re)
}

/// Responder bundling everything needed for fast per-sample evaluation of
/// the normalized PDH error signal.
#[derive(Debug, Clone, Copy)]
pub struct PdhResponder {
    params: CavityParams,
    mod_frequency_hz: f64,
    demod_phase_rad: f64,
    sqrt_pc_ps: f64,
    carrier_w: f64,
    sideband_w: f64,
}

impl PdhResponder {
    pub fn new(params: CavityParams, config: &ModulationConfig) -> Result<Self> {
        config.validate()?;
        let powers = sideband_powers(config)?;
        Ok(Self {
            params,
            mod_frequency_hz: config.mod_frequency_hz,
            demod_phase_rad: config.demod_phase_rad,
            sqrt_pc_ps: (powers.carrier_w * powers.sideband_w).sqrt(),
            carrier_w: powers.carrier_w,
            sideband_w: powers.sideband_w,
        })
    }

    /// Normalized error signal: small-detuning slope equals the
    /// discriminator D of [`discriminator_slope`].
    #[inline]
    pub fn error(&self, detuning_hz: f64) -> f64 {
        let chi = beat_product(&self.params, self.mod_frequency_hz, detuning_hz);
        let rotated = chi * Complex64::from_polar(1.0, -self.demod_phase_rad);
        -self.sqrt_pc_ps * rotated.re
    }

    /// Error signal plus the total reflected and transmitted powers of the
    /// three-wave field, for the monitor photodiodes.
    #[inline]
    pub fn error_and_powers(&self, detuning_hz: f64) -> (f64, f64, f64) {
        let f0 = reflection_unchecked(&self.params, detuning_hz);
        let fp = reflection_unchecked(&self.params, detuning_hz + self.mod_frequency_hz);
        let fm = reflection_unchecked(&self.params, detuning_hz - self.mod_frequency_hz);
        let chi = f0 * fp.conj() - f0.conj() * fm;
        let rotated = chi * Complex64::from_polar(1.0, -self.demod_phase_rad);
        let error = -self.sqrt_pc_ps * rotated.re;
        let reflected = self.carrier_w * f0.norm_sqr()
            + self.sideband_w * (fp.norm_sqr() + fm.norm_sqr());
        let total = self.carrier_w + 2.0 * self.sideband_w;
        let transmitted = (total - reflected).max(0.0);
        (error, reflected, transmitted)
    }

    pub fn params(&self) -> &CavityParams {
        &self.params
    }
}

/// Swept, normalized PDH error signal over a list of detunings.
///
/// The modulation frequency should sit far above the cavity linewidth for
/// the textbook regime; a narrower spacing still evaluates but the slope
/// normalization no longer matches the analytic discriminator.
pub fn error_signal_sweep(
    params: &CavityParams,
    config: &ModulationConfig,
    detunings_hz: &[f64],
) -> Result<Vec<f64>> {
    ensure(
        !detunings_hz.is_empty(),
        "detunings_hz",
        "empty detuning list",
    )?;
    let responder = PdhResponder::new(*params, config)?;
    Ok(detunings_hz.iter().map(|&d| responder.error(d)).collect())
}

/// Whether the sweep is in the regime where the slope normalization holds.
pub fn is_sideband_resolved(params: &CavityParams, config: &ModulationConfig) -> bool {
    config.mod_frequency_hz >= 10.0 * params.linewidth_hz
}

/// Numerically find the demodulation phase maximizing the error-signal
/// swing across resonance.
pub fn auto_demod_phase(params: &CavityParams, config: &ModulationConfig) -> Result<f64> {
    let span = 2.0 * params.linewidth_hz;
    let n = 201;
    let detunings: Vec<f64> = (0..n)
        .map(|i| (i as f64 / (n - 1) as f64 - 0.5) * span)
        .collect();
    let chis: Vec<Complex64> = detunings
        .iter()
        .map(|&d| beat_product(params, config.mod_frequency_hz, d))
        .collect();
    let swing = |phase: f64| -> f64 {
        let rot = Complex64::from_polar(1.0, -phase);
        let vals = chis.iter().map(|c| (c * rot).re);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in vals {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    };
    // Coarse scan then golden-section refine.
    let mut best = (0.0, f64::NEG_INFINITY);
    let coarse = 360;
    for i in 0..coarse {
        let phase = i as f64 / coarse as f64 * std::f64::consts::PI;
        let s = swing(phase);
        if s > best.1 {
            best = (phase, s);
        }
    }
    let (mut a, mut b) = (
        best.0 - std::f64::consts::PI / coarse as f64,
        best.0 + std::f64::consts::PI / coarse as f64,
    );
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let x1 = b - inv_phi * (b - a);
        let x2 = a + inv_phi * (b - a);
        if swing(x1) > swing(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cavity::{derive_params, CavityConfig};
    use approx::assert_relative_eq;

    fn params_with_linewidth(linewidth_hz: f64) -> CavityParams {
        let cfg = CavityConfig::default();
        let fsr = crate::constants::SPEED_OF_LIGHT / cfg.perimeter_m();
        derive_params(&CavityConfig {
            finesse: fsr / linewidth_hz,
            ..cfg
        })
        .unwrap()
    }

    #[test]
    fn sideband_powers_at_zero_depth() {
        let cfg = ModulationConfig {
            mod_depth_rad: 0.0,
            input_power_w: 1.0,
            ..ModulationConfig::default()
        };
        let p = sideband_powers(&cfg).unwrap();
        assert_relative_eq!(p.carrier_w, 1.0, max_relative = 1e-14);
        assert_relative_eq!(p.sideband_w, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sideband_powers_at_unit_depth() {
        // Frozen from the series evaluation of J0(1)^2 and J1(1)^2.
        let cfg = ModulationConfig {
            mod_depth_rad: 1.0,
            input_power_w: 1.0,
            ..ModulationConfig::default()
        };
        let p = sideband_powers(&cfg).unwrap();
        assert_relative_eq!(p.carrier_w, 0.585_527_5, max_relative = 1e-6);
        assert_relative_eq!(p.sideband_w, 0.193_644_5, max_relative = 1e-6);
        // Consistent with the quoted 3 mW / 10 mW working point.
        assert_relative_eq!(p.sideband_w / p.carrier_w, 0.331, max_relative = 2e-3);
        // Power conservation up to higher orders.
        let total = p.carrier_w + 2.0 * p.sideband_w;
        assert!(total <= 1.0 + 1e-12);
        assert!(1.0 - total < 0.20, "defect {} too large", 1.0 - total);
    }

    #[test]
    fn discriminator_slope_paper_point() {
        let powers = SidebandPowers {
            carrier_w: 10.0e-3,
            sideband_w: 3.0e-3,
        };
        let d = discriminator_slope(&powers, 4000.0).unwrap();
        assert_relative_eq!(d, 5.477e-6, max_relative = 1e-3);
    }

    #[test]
    fn discriminator_degenerate_cases() {
        let powers = SidebandPowers {
            carrier_w: 1.0,
            sideband_w: 0.0,
        };
        assert_eq!(discriminator_slope(&powers, 4000.0).unwrap(), 0.0);
        assert!(discriminator_slope(&powers, 0.0).is_err());
        // Homogeneity: scaling both powers by k scales D by k.
        let base = SidebandPowers {
            carrier_w: 0.01,
            sideband_w: 0.003,
        };
        let scaled = SidebandPowers {
            carrier_w: 0.07,
            sideband_w: 0.021,
        };
        let d1 = discriminator_slope(&base, 4000.0).unwrap();
        let d2 = discriminator_slope(&scaled, 4000.0).unwrap();
        assert_relative_eq!(d2, 7.0 * d1, max_relative = 1e-12);
    }

    #[test]
    fn error_nulls_at_resonance() {
        let params = params_with_linewidth(4000.0);
        let config = ModulationConfig::default();
        let sweep = error_signal_sweep(&params, &config, &[0.0]).unwrap();
        let full_scale = error_signal_sweep(&params, &config, &[params.linewidth_hz]).unwrap()[0]
            .abs()
            .max(1e-30);
        assert!(sweep[0].abs() / full_scale < 1e-12);
    }

    #[test]
    fn error_is_antisymmetric() {
        let params = params_with_linewidth(4000.0);
        let config = ModulationConfig::default();
        let detunings: Vec<f64> = (1..100).map(|i| i as f64 * 80.0).collect();
        let plus = error_signal_sweep(&params, &config, &detunings).unwrap();
        let neg: Vec<f64> = detunings.iter().map(|d| -d).collect();
        let minus = error_signal_sweep(&params, &config, &neg).unwrap();
        let scale = plus.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
        for (p, m) in plus.iter().zip(&minus) {
            assert!((p + m).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn numeric_slope_matches_discriminator() {
        let params = params_with_linewidth(4000.0);
        let config = ModulationConfig::default();
        let powers = sideband_powers(&config).unwrap();
        let d_analytic = discriminator_slope(&powers, params.linewidth_hz).unwrap();
        let h = params.linewidth_hz / 1000.0;
        let sweep = error_signal_sweep(&params, &config, &[h, -h]).unwrap();
        let d_numeric = (sweep[0] - sweep[1]) / (2.0 * h);
        assert_relative_eq!(d_numeric, d_analytic, max_relative = 0.02);
        assert!(d_numeric > 0.0, "positive detuning gives positive error");
    }

    #[test]
    fn slope_consistency_over_configs() {
        // Any (beta, P0, F) with Omega >= 100 linewidths keeps the 2% contract.
        for &(beta, p0, lw) in &[(0.5, 0.001, 1.0e4), (1.0, 0.02, 5.0e4), (1.8, 0.1, 9.0e4)] {
            let params = params_with_linewidth(lw);
            let config = ModulationConfig {
                mod_depth_rad: beta,
                input_power_w: p0,
                ..ModulationConfig::default()
            };
            assert!(config.mod_frequency_hz >= 100.0 * lw);
            let powers = sideband_powers(&config).unwrap();
            let d_analytic = discriminator_slope(&powers, params.linewidth_hz).unwrap();
            let h = params.linewidth_hz / 1000.0;
            let sweep = error_signal_sweep(&params, &config, &[h, -h]).unwrap();
            let d_numeric = (sweep[0] - sweep[1]) / (2.0 * h);
            assert_relative_eq!(d_numeric, d_analytic, max_relative = 0.02);
        }
    }

    #[test]
    fn auto_phase_finds_quadrature() {
        let params = params_with_linewidth(4000.0);
        let config = ModulationConfig::default();
        let phase = auto_demod_phase(&params, &config).unwrap();
        // For the lossless matched model the optimum is the quadrature.
        let err = (phase - std::f64::consts::FRAC_PI_2).abs();
        assert!(err < 0.05, "auto phase {phase} not near pi/2");
    }

    #[test]
    fn empty_sweep_rejected() {
        let params = params_with_linewidth(4000.0);
        assert!(error_signal_sweep(&params, &ModulationConfig::default(), &[]).is_err());
    }
}
