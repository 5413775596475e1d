//! Scenario files: sectioned plain-text (TOML) configuration with explicit
//! SI-unit suffixes in every key. Unknown keys are hard errors so that a
//! misspelled key can never fall back to a silent default.

use serde::{Deserialize, Serialize};

use crate::cavity::{derive_params, CavityConfig};
use crate::error::{ensure, Error, Result};
use crate::noise::{noise_budget, NoiseConfig};
use crate::pdh::{sideband_powers, ModulationConfig};
use crate::servo::{calibrate, FilterStage, LeadFilter, ServoChain};

/// Calibrated frequency-modulation injection through the broadband EOM on
/// the cw beampath.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionConfig {
    /// Sinusoidal drive amplitude, volts.
    #[serde(default)]
    pub drive_amplitude_v: f64,
    /// Drive frequency, Hz.
    #[serde(default = "default_drive_frequency")]
    pub drive_frequency_hz: f64,
    /// EOM modulation depth, rad/V.
    #[serde(default = "default_eom_depth")]
    pub eom_depth_rad_per_v: f64,
}

fn default_drive_frequency() -> f64 {
    217.0
}

fn default_eom_depth() -> f64 {
    0.85e-3
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            drive_amplitude_v: 0.0,
            drive_frequency_hz: default_drive_frequency(),
            eom_depth_rad_per_v: default_eom_depth(),
        }
    }
}

impl InjectionConfig {
    /// Frequency-modulation amplitude: depth * V * f, Hz.
    pub fn fm_amplitude_hz(&self) -> f64 {
        self.eom_depth_rad_per_v * self.drive_amplitude_v * self.drive_frequency_hz
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.drive_amplitude_v >= 0.0 && self.drive_amplitude_v.is_finite(),
            "drive_amplitude_v",
            "must be finite and non-negative",
        )?;
        ensure(
            self.drive_frequency_hz > 0.0 && self.drive_frequency_hz.is_finite(),
            "drive_frequency_hz",
            "must be finite and positive",
        )?;
        ensure(
            self.eom_depth_rad_per_v >= 0.0 && self.eom_depth_rad_per_v.is_finite(),
            "eom_depth_rad_per_v",
            "must be finite and non-negative",
        )?;
        Ok(())
    }
}

/// Time-domain run settings and actuator limits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
    /// Detuning the acquisition starts from, Hz.
    #[serde(default)]
    pub initial_detuning_hz: f64,
    /// Boxcar decimation factor applied to the stored trace.
    #[serde(default = "default_decimation")]
    pub trace_decimation: u32,
    #[serde(default = "default_aom_range")]
    pub aom_range_hz: f64,
    #[serde(default = "default_pzt_range")]
    pub pzt_range_hz: f64,
    #[serde(default = "default_tec_range")]
    pub tec_range_hz: f64,
    /// How long the detuning may sit outside half a linewidth before the
    /// run is declared lock-lost.
    #[serde(default = "default_dwell")]
    pub lock_loss_dwell_s: f64,
}

fn default_duration() -> f64 {
    10.0
}
fn default_sample_rate() -> f64 {
    2.0e6
}
fn default_decimation() -> u32 {
    100
}
fn default_aom_range() -> f64 {
    5.0e6
}
fn default_pzt_range() -> f64 {
    1.0e9
}
fn default_tec_range() -> f64 {
    1.0e10
}
fn default_dwell() -> f64 {
    0.01
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            duration_s: default_duration(),
            sample_rate_hz: default_sample_rate(),
            initial_detuning_hz: 0.0,
            trace_decimation: default_decimation(),
            aom_range_hz: default_aom_range(),
            pzt_range_hz: default_pzt_range(),
            tec_range_hz: default_tec_range(),
            lock_loss_dwell_s: default_dwell(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.duration_s > 0.0 && self.duration_s.is_finite(),
            "duration_s",
            "must be finite and positive",
        )?;
        ensure(
            self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite(),
            "sample_rate_hz",
            "must be finite and positive",
        )?;
        ensure(self.trace_decimation >= 1, "trace_decimation", "must be >= 1")?;
        ensure(
            self.initial_detuning_hz.is_finite(),
            "initial_detuning_hz",
            "must be finite",
        )?;
        for (name, v) in [
            ("aom_range_hz", self.aom_range_hz),
            ("pzt_range_hz", self.pzt_range_hz),
            ("tec_range_hz", self.tec_range_hz),
            ("lock_loss_dwell_s", self.lock_loss_dwell_s),
        ] {
            ensure(v > 0.0 && v.is_finite(), "run", format!("{name} must be finite and positive"))?;
        }
        Ok(())
    }
}

/// The `[servo.fast]` section of a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServoFastSection {
    corner_frequencies_hz: Vec<f64>,
    #[serde(default)]
    stage_gains: Option<Vec<f64>>,
    #[serde(default = "default_lead_zero")]
    lead_zero_hz: f64,
    #[serde(default = "default_lead_pole")]
    lead_pole_hz: f64,
    /// Absent: calibrated at load time against the resonance targets.
    #[serde(default)]
    overall_gain: Option<f64>,
    #[serde(default)]
    loop_delay_s: Option<f64>,
}

fn default_lead_zero() -> f64 {
    90_000.0
}
fn default_lead_pole() -> f64 {
    1.0e6
}

/// One PID section (`[servo.pzt]` / `[servo.tec]`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServoPidSection {
    proportional_gain: f64,
    integrator_corner_hz: f64,
    differentiator_corner_hz: f64,
    /// Actuator bandwidth limiting the path, Hz.
    actuator_bandwidth_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServoSection {
    fast: ServoFastSection,
    pzt: ServoPidSection,
    tec: ServoPidSection,
}

/// On-disk scenario layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    cavity: CavityConfig,
    modulation: ModulationConfig,
    servo: ServoSection,
    noise: NoiseConfig,
    #[serde(default)]
    injection: Option<InjectionConfig>,
    run: RunConfig,
}

/// A fully resolved simulation description: servo calibrated, detector
/// shot-noise level filled in from the budget.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cavity: CavityConfig,
    pub modulation: ModulationConfig,
    pub servo: ServoChain,
    pub noise: NoiseConfig,
    pub injection: Option<InjectionConfig>,
    pub run: RunConfig,
}

const CALIBRATION_RESONANCE_HZ: f64 = 180_000.0;
const CALIBRATION_PEAK_DB: f64 = 10.0;

impl Scenario {
    /// Parse and resolve a scenario from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::Scenario(e.message().to_string()))?;
        Self::resolve(file)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// The built-in default scenario, resolved.
    pub fn default_resolved() -> Result<Self> {
        Self::resolve(ScenarioFile {
            cavity: CavityConfig::default(),
            modulation: ModulationConfig::default(),
            servo: ServoSection {
                fast: ServoFastSection {
                    corner_frequencies_hz: vec![30_000.0, 5_000.0, 3_000.0],
                    stage_gains: None,
                    lead_zero_hz: default_lead_zero(),
                    lead_pole_hz: default_lead_pole(),
                    overall_gain: None,
                    loop_delay_s: None,
                },
                pzt: ServoPidSection {
                    proportional_gain: 0.0159,
                    integrator_corner_hz: 100.0,
                    differentiator_corner_hz: 1_000.0,
                    actuator_bandwidth_hz: 500.0,
                },
                tec: ServoPidSection {
                    proportional_gain: 0.106,
                    integrator_corner_hz: 0.015,
                    differentiator_corner_hz: 0.15,
                    actuator_bandwidth_hz: 0.5,
                },
            },
            noise: NoiseConfig::default(),
            injection: Some(InjectionConfig::default()),
            run: RunConfig::default(),
        })
    }

    fn resolve(file: ScenarioFile) -> Result<Self> {
        let params = derive_params(&file.cavity)?;
        file.modulation.validate()?;
        file.run.validate()?;
        if let Some(injection) = &file.injection {
            injection.validate()?;
        }

        let fast = &file.servo.fast;
        ensure(
            !fast.corner_frequencies_hz.is_empty(),
            "servo.fast",
            "corner_frequencies_hz must not be empty",
        )?;
        let gains = match &fast.stage_gains {
            Some(g) => {
                ensure(
                    g.len() == fast.corner_frequencies_hz.len(),
                    "servo.fast",
                    "stage_gains length must match corner_frequencies_hz",
                )?;
                g.clone()
            }
            None => vec![1.0; fast.corner_frequencies_hz.len()],
        };
        let mut chain = ServoChain {
            fast_stages: fast
                .corner_frequencies_hz
                .iter()
                .zip(&gains)
                .map(|(&fc, &g)| FilterStage::pi(g, fc))
                .collect(),
            lead: Some(LeadFilter {
                zero_hz: fast.lead_zero_hz,
                pole_hz: fast.lead_pole_hz,
            }),
            pzt_stage: FilterStage::pid(
                file.servo.pzt.proportional_gain,
                file.servo.pzt.integrator_corner_hz,
                file.servo.pzt.differentiator_corner_hz,
            ),
            pzt_bandwidth_hz: file.servo.pzt.actuator_bandwidth_hz,
            tec_stage: FilterStage::pid(
                file.servo.tec.proportional_gain,
                file.servo.tec.integrator_corner_hz,
                file.servo.tec.differentiator_corner_hz,
            ),
            tec_bandwidth_hz: file.servo.tec.actuator_bandwidth_hz,
            loop_delay_s: fast.loop_delay_s.unwrap_or(0.0),
            overall_gain: fast.overall_gain.unwrap_or(0.0),
        };
        let plant_pole = params.linewidth_hz / 2.0;
        if fast.overall_gain.is_none() || fast.loop_delay_s.is_none() {
            calibrate(
                &mut chain,
                plant_pole,
                CALIBRATION_RESONANCE_HZ,
                CALIBRATION_PEAK_DB,
            )?;
            // Keep explicitly supplied values over the calibrated ones.
            if let Some(g) = fast.overall_gain {
                chain.overall_gain = g;
            }
            if let Some(d) = fast.loop_delay_s {
                chain.loop_delay_s = d;
            }
        }
        chain.validate()?;

        let mut noise = file.noise;
        noise.validate(file.run.sample_rate_hz)?;
        if noise.shot_noise_enabled && noise.shot_psd_w_per_sqrt_hz == 0.0 {
            let powers = sideband_powers(&file.modulation)?;
            let budget = noise_budget(
                &powers,
                params.linewidth_hz,
                file.cavity.optical_frequency_hz(),
            )?;
            noise.shot_psd_w_per_sqrt_hz = budget.shot_power_psd_w_per_sqrt_hz;
        }

        Ok(Self {
            cavity: file.cavity,
            modulation: file.modulation,
            servo: chain,
            noise,
            injection: file.injection,
            run: file.run,
        })
    }

    /// Serialize the fully resolved configuration (calibrated gains made
    /// explicit) back to scenario TOML.
    pub fn to_toml_string(&self) -> Result<String> {
        let fast = ServoFastSection {
            corner_frequencies_hz: self
                .servo
                .fast_stages
                .iter()
                .map(|s| s.integrator_corner_hz)
                .collect(),
            stage_gains: Some(
                self.servo
                    .fast_stages
                    .iter()
                    .map(|s| s.proportional_gain)
                    .collect(),
            ),
            lead_zero_hz: self.servo.lead.map_or(default_lead_zero(), |l| l.zero_hz),
            lead_pole_hz: self.servo.lead.map_or(default_lead_pole(), |l| l.pole_hz),
            overall_gain: Some(self.servo.overall_gain),
            loop_delay_s: Some(self.servo.loop_delay_s),
        };
        let file = ScenarioFile {
            cavity: self.cavity.clone(),
            modulation: self.modulation.clone(),
            servo: ServoSection {
                fast,
                pzt: ServoPidSection {
                    proportional_gain: self.servo.pzt_stage.proportional_gain,
                    integrator_corner_hz: self.servo.pzt_stage.integrator_corner_hz,
                    differentiator_corner_hz: self.servo.pzt_stage.differentiator_corner_hz,
                    actuator_bandwidth_hz: self.servo.pzt_bandwidth_hz,
                },
                tec: ServoPidSection {
                    proportional_gain: self.servo.tec_stage.proportional_gain,
                    integrator_corner_hz: self.servo.tec_stage.integrator_corner_hz,
                    differentiator_corner_hz: self.servo.tec_stage.differentiator_corner_hz,
                    actuator_bandwidth_hz: self.servo.tec_bandwidth_hz,
                },
            },
            noise: self.noise.clone(),
            injection: self.injection,
            run: self.run,
        };
        toml::to_string_pretty(&file).map_err(|e| Error::Scenario(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_resolves_with_calibrated_servo() {
        let sc = Scenario::default_resolved().unwrap();
        assert!(sc.servo.overall_gain > 0.0);
        assert!(sc.servo.loop_delay_s > 0.0);
    }

    #[test]
    fn roundtrip_through_toml() {
        let sc = Scenario::default_resolved().unwrap();
        let text = sc.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(back.servo.overall_gain, sc.servo.overall_gain);
        assert_eq!(back.servo.loop_delay_s, sc.servo.loop_delay_s);
        assert_eq!(back.cavity.finesse, sc.cavity.finesse);
    }

    #[test]
    fn missing_servo_section_names_it() {
        let sc = Scenario::default_resolved().unwrap();
        let text = sc.to_toml_string().unwrap();
        // Strip the whole [servo.*] block.
        let filtered: String = text
            .lines()
            .scan(false, |in_servo, line| {
                if line.starts_with('[') {
                    *in_servo = line.starts_with("[servo");
                }
                Some(if *in_servo { None } else { Some(line) })
            })
            .flatten()
            .map(|l| format!("{l}\n"))
            .collect();
        let err = Scenario::from_toml_str(&filtered).unwrap_err();
        assert!(
            err.to_string().contains("servo"),
            "error does not name the section: {err}"
        );
    }

    #[test]
    fn unknown_key_is_hard_error() {
        let sc = Scenario::default_resolved().unwrap();
        let mut text = sc.to_toml_string().unwrap();
        text = text.replace("arm_length_m", "arm_lenght_m");
        let err = Scenario::from_toml_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("arm_lenght_m") || msg.contains("unknown"), "{msg}");
    }

    #[test]
    fn injection_fm_amplitude_formula() {
        let inj = InjectionConfig {
            drive_amplitude_v: 1.0,
            drive_frequency_hz: 217.0,
            eom_depth_rad_per_v: 0.85e-3,
        };
        approx::assert_relative_eq!(inj.fm_amplitude_hz(), 0.18445, max_relative = 1e-10);
    }

    #[test]
    fn shot_psd_resolved_from_budget() {
        let mut sc = Scenario::default_resolved().unwrap();
        sc.noise.shot_noise_enabled = true;
        sc.noise.shot_psd_w_per_sqrt_hz = 0.0;
        let text = sc.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert!(back.noise.shot_psd_w_per_sqrt_hz > 0.0);
    }
}
