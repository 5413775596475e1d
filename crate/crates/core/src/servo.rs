//! The three-tier controller: fast AOM path (3 PI stages plus lead
//! compensation), medium PZT PID and slow TEC PID, as analyzable
//! continuous-time transfer functions and runnable discrete-time filters.
//!
//! The loop transport delay is modeled as a pure delay phasor; its default
//! value and the overall gain are calibrated so that the closed loop shows
//! the expected noise-amplification bounce at the loop resonance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;

/// The PID derivative branch is first-order filtered at this multiple of
/// the derivative corner, bounding its high-frequency gain at kp times the
/// ratio. Without the filter a discretized slow PID (sub-Hz corners, MHz
/// sample rate) amplifies sample-to-sample steps by many orders of
/// magnitude.
const DERIV_FILTER_RATIO: f64 = 10.0;

/// Kind of a servo filter stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    Pi,
    Pid,
    PureGain,
}

/// One controller stage as a continuous-time transfer function.
///
/// PI:  kp (1 + w_i / s)
/// PID: kp (1 + w_i / s + s / w_d)
/// with corner frequencies w = 2 pi f.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterStage {
    pub kind: StageKind,
    pub proportional_gain: f64,
    #[serde(default)]
    pub integrator_corner_hz: f64,
    #[serde(default)]
    pub differentiator_corner_hz: f64,
}

impl FilterStage {
    pub fn pi(proportional_gain: f64, integrator_corner_hz: f64) -> Self {
        Self {
            kind: StageKind::Pi,
            proportional_gain,
            integrator_corner_hz,
            differentiator_corner_hz: 0.0,
        }
    }

    pub fn pid(
        proportional_gain: f64,
        integrator_corner_hz: f64,
        differentiator_corner_hz: f64,
    ) -> Self {
        Self {
            kind: StageKind::Pid,
            proportional_gain,
            integrator_corner_hz,
            differentiator_corner_hz,
        }
    }

    pub fn gain(proportional_gain: f64) -> Self {
        Self {
            kind: StageKind::PureGain,
            proportional_gain,
            integrator_corner_hz: 0.0,
            differentiator_corner_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.proportional_gain.is_finite(),
            "proportional_gain",
            "must be finite",
        )?;
        match self.kind {
            StageKind::Pi => ensure(
                self.integrator_corner_hz > 0.0 && self.integrator_corner_hz.is_finite(),
                "integrator_corner_hz",
                "PI stage needs a positive corner",
            ),
            StageKind::Pid => {
                ensure(
                    self.integrator_corner_hz > 0.0 && self.integrator_corner_hz.is_finite(),
                    "integrator_corner_hz",
                    "PID stage needs a positive corner",
                )?;
                ensure(
                    self.differentiator_corner_hz > 0.0
                        && self.differentiator_corner_hz.is_finite(),
                    "differentiator_corner_hz",
                    "PID stage needs a positive corner",
                )
            }
            StageKind::PureGain => Ok(()),
        }
    }

    /// Frequency response at `frequency_hz`.
    pub fn response(&self, frequency_hz: f64) -> Complex64 {
        let kp = self.proportional_gain;
        match self.kind {
            StageKind::PureGain => Complex64::new(kp, 0.0),
            StageKind::Pi => {
                Complex64::new(kp, -kp * self.integrator_corner_hz / frequency_hz)
            }
            StageKind::Pid => {
                let derivative = Complex64::new(0.0, frequency_hz / self.differentiator_corner_hz)
                    / Complex64::new(
                        1.0,
                        frequency_hz / (DERIV_FILTER_RATIO * self.differentiator_corner_hz),
                    );
                Complex64::new(kp, -kp * self.integrator_corner_hz / frequency_hz)
                    + kp * derivative
            }
        }
    }
}

/// First-order lead compensation (1 + s/w_z) / (1 + s/w_p).
///
/// The fast analog chain needs a high-frequency zero to show the measured
/// loop shape: with flat PI stages above their corners the open-loop
/// magnitude falls as 1/f through the plant pole, which pins the unity-gain
/// frequency right below the loop resonance. The lead flattens the
/// magnitude between the bandwidth and the resonance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadFilter {
    pub zero_hz: f64,
    pub pole_hz: f64,
}

impl LeadFilter {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.zero_hz > 0.0 && self.zero_hz.is_finite(),
            "lead zero_hz",
            "must be finite and positive",
        )?;
        ensure(
            self.pole_hz > self.zero_hz && self.pole_hz.is_finite(),
            "lead pole_hz",
            "must be finite and above the zero",
        )
    }

    pub fn response(&self, frequency_hz: f64) -> Complex64 {
        Complex64::new(1.0, frequency_hz / self.zero_hz)
            / Complex64::new(1.0, frequency_hz / self.pole_hz)
    }
}

/// The full three-tier controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServoChain {
    /// Fast AOM-path stages (3 PI stages by default).
    pub fast_stages: Vec<FilterStage>,
    /// Lead compensation in the fast path.
    pub lead: Option<LeadFilter>,
    /// Medium-speed stage driving the laser PZT, fed by the AOM command.
    pub pzt_stage: FilterStage,
    /// PZT actuator bandwidth, Hz (keeps the slow path out of the fast loop).
    pub pzt_bandwidth_hz: f64,
    /// Slow stage driving the laser TEC, fed by the PZT command.
    pub tec_stage: FilterStage,
    /// TEC actuator bandwidth, Hz.
    pub tec_bandwidth_hz: f64,
    /// Transport delay of the fast loop, seconds.
    pub loop_delay_s: f64,
    /// Overall dimensionless loop gain of the fast path.
    pub overall_gain: f64,
}

impl ServoChain {
    /// Uncalibrated default chain: corners fixed, gain and delay zero until
    /// [`calibrate`] fills them in.
    pub fn default_uncalibrated() -> Self {
        Self {
            fast_stages: vec![
                FilterStage::pi(1.0, 30_000.0),
                FilterStage::pi(1.0, 5_000.0),
                FilterStage::pi(1.0, 3_000.0),
            ],
            lead: Some(LeadFilter {
                zero_hz: 90_000.0,
                pole_hz: 1.0e6,
            }),
            // Damps the mean AOM command to zero with ~0.1 s closed-loop
            // time constant: 1 / (kp * 2 pi * 100 Hz) = 0.1 s.
            pzt_stage: FilterStage::pid(0.0159, 100.0, 1_000.0),
            pzt_bandwidth_hz: 500.0,
            // Nulls the mean PZT command with ~100 s: 1 / (kp * 2 pi * 15 mHz).
            tec_stage: FilterStage::pid(0.106, 0.015, 0.15),
            tec_bandwidth_hz: 0.5,
            loop_delay_s: 0.0,
            overall_gain: 0.0,
        }
    }

    /// Default chain calibrated against a given plant pole.
    pub fn calibrated_default(plant_pole_hz: f64) -> Result<Self> {
        let mut chain = Self::default_uncalibrated();
        calibrate(&mut chain, plant_pole_hz, 180_000.0, 10.0)?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            !self.fast_stages.is_empty(),
            "fast_stages",
            "an active loop needs at least one stage",
        )?;
        for s in &self.fast_stages {
            s.validate()?;
        }
        if let Some(lead) = &self.lead {
            lead.validate()?;
        }
        self.pzt_stage.validate()?;
        self.tec_stage.validate()?;
        ensure(
            self.loop_delay_s >= 0.0 && self.loop_delay_s.is_finite(),
            "loop_delay_s",
            "must be finite and non-negative",
        )?;
        ensure(self.overall_gain.is_finite(), "overall_gain", "must be finite")?;
        Ok(())
    }
}

/// Open-loop transfer of the fast path: product of stage responses, lead,
/// single-pole plant at `plant_pole_hz`, delay phasor, and the overall gain.
pub fn open_loop_transfer(
    chain: &ServoChain,
    plant_pole_hz: f64,
    frequency_hz: f64,
) -> Result<Complex64> {
    ensure(
        frequency_hz > 0.0 && frequency_hz.is_finite(),
        "frequency_hz",
        "must be finite and positive",
    )?;
    Ok(open_loop_unchecked(chain, plant_pole_hz, frequency_hz))
}

fn open_loop_unchecked(chain: &ServoChain, plant_pole_hz: f64, f: f64) -> Complex64 {
    let mut g = Complex64::new(chain.overall_gain, 0.0);
    for stage in &chain.fast_stages {
        g *= stage.response(f);
    }
    if let Some(lead) = &chain.lead {
        g *= lead.response(f);
    }
    g /= Complex64::new(1.0, f / plant_pole_hz);
    g * Complex64::from_polar(1.0, -TWO_PI * f * chain.loop_delay_s)
}

/// Open-loop phase in radians, continuous in frequency (no wrapping): each
/// factor contributes its arctangent branch plus the linear delay term.
fn open_loop_phase(chain: &ServoChain, plant_pole_hz: f64, f: f64) -> f64 {
    let mut phase = 0.0;
    for stage in &chain.fast_stages {
        let r = stage.response(f);
        phase += r.im.atan2(r.re);
    }
    if let Some(lead) = &chain.lead {
        phase += (f / lead.zero_hz).atan() - (f / lead.pole_hz).atan();
    }
    phase -= (f / plant_pole_hz).atan();
    phase -= TWO_PI * f * chain.loop_delay_s;
    phase
}

/// Stability and shape summary of the fast loop.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LoopReport {
    pub unity_gain_frequency_hz: f64,
    pub gain_margin_db: f64,
    pub phase_margin_deg: f64,
    pub resonance_frequency_hz: f64,
    pub resonance_peak_db: f64,
}

const REPORT_F_MIN: f64 = 1e-2;
const REPORT_F_MAX: f64 = 1e7;

fn log_grid(f_lo: f64, f_hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (l0, l1) = (f_lo.ln(), f_hi.ln());
    (0..n).map(move |i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
}

/// Compute unity-gain frequency, margins and the closed-loop resonance.
pub fn loop_report(chain: &ServoChain, plant_pole_hz: f64) -> Result<LoopReport> {
    chain.validate()?;
    ensure(
        plant_pole_hz > 0.0 && plant_pole_hz.is_finite(),
        "plant_pole_hz",
        "must be finite and positive",
    )?;
    let mag = |f: f64| open_loop_unchecked(chain, plant_pole_hz, f).norm();

    // Unity-gain crossing: scan a log grid for a sign change of ln|G|,
    // then bisect.
    let n = 3000;
    let grid: Vec<f64> = log_grid(REPORT_F_MIN, REPORT_F_MAX, n).collect();
    let mut bracket = None;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (mag(a) - 1.0) > 0.0 && (mag(b) - 1.0) <= 0.0 {
            bracket = Some((a, b));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or(Error::LoopInactive)?;
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if mag(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ugf = (lo * hi).sqrt();

    // Phase crossover: first crossing of -pi above the UGF region.
    let phase = |f: f64| open_loop_phase(chain, plant_pole_hz, f);
    let mut crossover = None;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if phase(a) > -std::f64::consts::PI && phase(b) <= -std::f64::consts::PI {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..100 {
                let mid = (lo * hi).sqrt();
                if phase(mid) > -std::f64::consts::PI {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossover = Some((lo * hi).sqrt());
            break;
        }
    }
    let (gain_margin_db, f180) = match crossover {
        Some(f180) => {
            let g = mag(f180);
            if g > 1.0 {
                return Err(Error::UnstableLoop {
                    frequency_hz: f180,
                    gain_at_crossover: g,
                });
            }
            (-20.0 * g.log10(), f180)
        }
        None => (f64::INFINITY, REPORT_F_MAX),
    };
    let phase_margin_deg = 180.0 + phase(ugf).to_degrees();

    // Resonance: peak of |1/(1+G)| above the unity-gain frequency.
    let sens = |f: f64| {
        1.0 / (Complex64::new(1.0, 0.0) + open_loop_unchecked(chain, plant_pole_hz, f)).norm()
    };
    let search_hi = (f180 * 4.0).min(REPORT_F_MAX);
    let mut best = (ugf, sens(ugf));
    for f in log_grid(ugf, search_hi, 4000) {
        let s = sens(f);
        if s > best.1 {
            best = (f, s);
        }
    }
    // Golden-section refinement around the grid peak.
    let (mut a, mut b) = (best.0 * 0.98, best.0 * 1.02);
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let x1 = b - inv_phi * (b - a);
        let x2 = a + inv_phi * (b - a);
        if sens(x1) > sens(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    let f_res = 0.5 * (a + b);
    Ok(LoopReport {
        unity_gain_frequency_hz: ugf,
        gain_margin_db,
        phase_margin_deg,
        resonance_frequency_hz: f_res,
        resonance_peak_db: 20.0 * sens(f_res).log10(),
    })
}

/// Disturbance suppression 20 log10 |1 + G(f)| in dB. Positive values mean
/// the disturbance is suppressed; negative values mark the servo bounce.
pub fn suppression_db(chain: &ServoChain, plant_pole_hz: f64, frequency_hz: f64) -> Result<f64> {
    let g = open_loop_transfer(chain, plant_pole_hz, frequency_hz)?;
    Ok(20.0 * (Complex64::new(1.0, 0.0) + g).norm().log10())
}

/// Calibrate `overall_gain` and `loop_delay_s` so the closed loop shows a
/// `target_peak_db` resonance at `target_resonance_hz`.
///
/// The delay follows in closed form from the phase condition at the target
/// (total phase = -180 deg there); the gain from |G| = 1 - 10^(-peak/20).
pub fn calibrate(
    chain: &mut ServoChain,
    plant_pole_hz: f64,
    target_resonance_hz: f64,
    target_peak_db: f64,
) -> Result<()> {
    ensure(
        target_resonance_hz > 0.0 && target_resonance_hz.is_finite(),
        "target_resonance_hz",
        "must be finite and positive",
    )?;
    ensure(
        target_peak_db > 0.0 && target_peak_db.is_finite(),
        "target_peak_db",
        "must be finite and positive",
    )?;
    chain.loop_delay_s = 0.0;
    chain.overall_gain = 1.0;
    chain.validate()?;
    let phase_wo_delay = open_loop_phase(chain, plant_pole_hz, target_resonance_hz);
    ensure(
        phase_wo_delay > -std::f64::consts::PI,
        "target_resonance_hz",
        "stage phases already exceed -180 deg at the target; no delay can place the crossover there",
    )?;
    chain.loop_delay_s = (phase_wo_delay + std::f64::consts::PI) / (TWO_PI * target_resonance_hz);
    let unit_mag = open_loop_unchecked(chain, plant_pole_hz, target_resonance_hz).norm();
    chain.overall_gain = (1.0 - 10f64.powf(-target_peak_db / 20.0)) / unit_mag;
    Ok(())
}

// ---------------------------------------------------------------------------
// Discrete-time realizations (bilinear transform).
// ---------------------------------------------------------------------------

/// Discrete realization of a [`FilterStage`] with anti-windup clamping of
/// the integrator state.
#[derive(Debug, Clone)]
pub struct DiscreteStage {
    stage: FilterStage,
    dt: f64,
    /// Anti-windup bound on the integrator state (output units).
    windup_limit: f64,
    integrator: f64,
    derivative: f64,
    prev_input: f64,
    primed: bool,
}

impl DiscreteStage {
    pub fn new(stage: FilterStage, sample_rate_hz: f64, windup_limit: Option<f64>) -> Result<Self> {
        stage.validate()?;
        ensure(
            sample_rate_hz > 0.0 && sample_rate_hz.is_finite(),
            "sample_rate_hz",
            "must be finite and positive",
        )?;
        let max_corner = stage
            .integrator_corner_hz
            .max(stage.differentiator_corner_hz);
        ensure(
            sample_rate_hz >= 10.0 * max_corner,
            "sample_rate_hz",
            format!(
                "need at least 10x the highest stage corner ({max_corner} Hz), got {sample_rate_hz} Hz"
            ),
        )?;
        Ok(Self {
            stage,
            dt: 1.0 / sample_rate_hz,
            windup_limit: windup_limit.unwrap_or(f64::INFINITY),
            integrator: 0.0,
            derivative: 0.0,
            prev_input: 0.0,
            primed: false,
        })
    }

    /// Advance one sample. A non-finite input freezes the state and errors.
    #[inline]
    pub fn step(&mut self, input: f64) -> Result<f64> {
        if !input.is_finite() {
            return Err(Error::NonFiniteSample);
        }
        let kp = self.stage.proportional_gain;
        let mut out = kp * input;
        match self.stage.kind {
            StageKind::PureGain => {}
            StageKind::Pi | StageKind::Pid => {
                let wi = TWO_PI * self.stage.integrator_corner_hz;
                if self.primed {
                    self.integrator += kp * wi * self.dt * 0.5 * (input + self.prev_input);
                } else {
                    self.integrator += kp * wi * self.dt * 0.5 * input;
                }
                self.integrator = self.integrator.clamp(-self.windup_limit, self.windup_limit);
                out += self.integrator;
                if self.stage.kind == StageKind::Pid {
                    let wd = TWO_PI * self.stage.differentiator_corner_hz;
                    let wf = DERIV_FILTER_RATIO * wd;
                    let diff = if self.primed {
                        input - self.prev_input
                    } else {
                        0.0
                    };
                    // Bilinear form of kp (s / wd) wf / (s + wf).
                    let k = 2.0 / self.dt;
                    self.derivative = ((k - wf) * self.derivative
                        + kp * (wf / wd) * k * diff)
                        / (k + wf);
                    out += self.derivative;
                }
            }
        }
        self.prev_input = input;
        self.primed = true;
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.integrator = 0.0;
        self.derivative = 0.0;
        self.prev_input = 0.0;
        self.primed = false;
    }
}

/// Discrete first-order lead via bilinear transform.
#[derive(Debug, Clone)]
pub struct DiscreteLead {
    b0: f64,
    b1: f64,
    a1: f64,
    prev_in: f64,
    prev_out: f64,
}

impl DiscreteLead {
    pub fn new(lead: &LeadFilter, sample_rate_hz: f64) -> Result<Self> {
        lead.validate()?;
        let k = 2.0 * sample_rate_hz;
        let (wz, wp) = (TWO_PI * lead.zero_hz, TWO_PI * lead.pole_hz);
        let a0 = 1.0 + k / wp;
        Ok(Self {
            b0: (1.0 + k / wz) / a0,
            b1: (1.0 - k / wz) / a0,
            a1: (1.0 - k / wp) / a0,
            prev_in: 0.0,
            prev_out: 0.0,
        })
    }

    #[inline]
    pub fn step(&mut self, input: f64) -> f64 {
        let out = self.b0 * input + self.b1 * self.prev_in - self.a1 * self.prev_out;
        self.prev_in = input;
        self.prev_out = out;
        out
    }
}

/// One-pole low-pass (matched-z), used for the cavity storage pole and the
/// slow-actuator bandwidth limits.
#[derive(Debug, Clone)]
pub struct OnePole {
    alpha: f64,
    state: f64,
}

impl OnePole {
    pub fn new(pole_hz: f64, sample_rate_hz: f64) -> Self {
        Self {
            alpha: 1.0 - (-TWO_PI * pole_hz / sample_rate_hz).exp(),
            state: 0.0,
        }
    }

    #[inline]
    pub fn step(&mut self, input: f64) -> f64 {
        self.state += self.alpha * (input - self.state);
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Steady-state amplitude of a discrete filter driven by a unit sine,
    /// projected over an integer number of trailing periods.
    fn measure_gain(step: &mut dyn FnMut(f64) -> f64, f: f64, fs: f64) -> f64 {
        let periods_settle = 50;
        let periods_measure = 20;
        let n_per = (fs / f).round() as usize;
        let n_settle = periods_settle * n_per;
        let n_measure = periods_measure * n_per;
        let w = TWO_PI * f / fs;
        let mut outputs = Vec::with_capacity(n_measure);
        for i in 0..(n_settle + n_measure) {
            let y = step((w * i as f64).sin());
            if i >= n_settle {
                outputs.push((i, y));
            }
        }
        let (mut a, mut b) = (0.0, 0.0);
        for &(i, y) in &outputs {
            a += y * (w * i as f64).sin();
            b += y * (w * i as f64).cos();
        }
        let norm = 2.0 / n_measure as f64;
        ((a * norm).powi(2) + (b * norm).powi(2)).sqrt()
    }

    #[test]
    fn pi_asymptotics() {
        let stage = FilterStage::pi(2.0, 30_000.0);
        // Flat at proportional gain far above the corner.
        assert_relative_eq!(stage.response(3.0e7).norm(), 2.0, max_relative = 1e-3);
        // -20 dB/dec below the corner: tenfold frequency drop, tenfold gain.
        let low = stage.response(30.0).norm();
        let lower = stage.response(3.0).norm();
        assert_relative_eq!(lower / low, 10.0, max_relative = 1e-3);
    }

    #[test]
    fn pure_gain_chain_is_flat() {
        let chain = ServoChain {
            fast_stages: vec![FilterStage::gain(7.5)],
            lead: None,
            loop_delay_s: 0.0,
            overall_gain: 1.0,
            ..ServoChain::default_uncalibrated()
        };
        let g = open_loop_transfer(&chain, 2000.0, 2.0).unwrap();
        assert_relative_eq!(g.norm(), 7.5, max_relative = 1e-3);
    }

    #[test]
    fn default_chain_gain_at_217_hz() {
        let chain = ServoChain::calibrated_default(1874.0).unwrap();
        let g = open_loop_transfer(&chain, 1874.0, 217.0).unwrap();
        assert!(g.norm() >= 1.0e3, "|G(217)| = {} below 60 dB", g.norm());
    }

    #[test]
    fn calibrated_report_matches_targets() {
        let chain = ServoChain::calibrated_default(1874.0).unwrap();
        let report = loop_report(&chain, 1874.0).unwrap();
        assert!(
            (report.resonance_peak_db - 10.0).abs() <= 2.0,
            "peak {} dB",
            report.resonance_peak_db
        );
        assert!(
            (report.resonance_frequency_hz - 180_000.0).abs() <= 0.15 * 180_000.0,
            "resonance at {} Hz",
            report.resonance_frequency_hz
        );
        assert!(
            (60_000.0..=90_000.0).contains(&report.unity_gain_frequency_hz),
            "UGF {} Hz",
            report.unity_gain_frequency_hz
        );
        assert!(report.phase_margin_deg > 0.0);
        assert!(report.gain_margin_db > 0.0);
    }

    #[test]
    fn zero_gain_chain_is_inactive() {
        let mut chain = ServoChain::default_uncalibrated();
        chain.overall_gain = 0.0;
        chain.loop_delay_s = 1e-6;
        assert!(matches!(
            loop_report(&chain, 1874.0),
            Err(Error::LoopInactive)
        ));
    }

    #[test]
    fn report_invariant_under_stage_order() {
        let chain = ServoChain::calibrated_default(1874.0).unwrap();
        let mut shuffled = chain.clone();
        shuffled.fast_stages.rotate_left(1);
        let a = loop_report(&chain, 1874.0).unwrap();
        let b = loop_report(&shuffled, 1874.0).unwrap();
        assert_relative_eq!(
            a.unity_gain_frequency_hz,
            b.unity_gain_frequency_hz,
            max_relative = 1e-9
        );
        assert_relative_eq!(a.gain_margin_db, b.gain_margin_db, max_relative = 1e-9);
        assert_relative_eq!(a.phase_margin_deg, b.phase_margin_deg, max_relative = 1e-9);
    }

    #[test]
    fn suppression_examples() {
        let chain = ServoChain::calibrated_default(1874.0).unwrap();
        assert!(suppression_db(&chain, 1874.0, 217.0).unwrap() >= 60.0);
        let report = loop_report(&chain, 1874.0).unwrap();
        let at_res = suppression_db(&chain, 1874.0, report.resonance_frequency_hz).unwrap();
        assert!(at_res < 0.0, "no bounce: {at_res} dB at resonance");
        let mut idle = ServoChain::default_uncalibrated();
        idle.overall_gain = 0.0;
        assert_relative_eq!(
            suppression_db(&idle, 1874.0, 100.0).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn discrete_step_response_of_pi() {
        let fs = 1.0e6;
        let stage = FilterStage::pi(2.0, 300.0);
        let mut d = DiscreteStage::new(stage, fs, None).unwrap();
        let amplitude = 0.5;
        let n = 200_000; // 0.2 s
        let mut last = 0.0;
        for _ in 0..n {
            last = d.step(amplitude).unwrap();
        }
        let t = n as f64 / fs;
        let expected = 2.0 * amplitude * (1.0 + TWO_PI * 300.0 * t);
        assert_relative_eq!(last, expected, max_relative = 0.01);
    }

    #[test]
    fn discrete_matches_continuous_below_fs_over_20() {
        let fs = 1.0e6;
        let stages = [
            FilterStage::pi(1.3, 3_000.0),
            FilterStage::pid(0.7, 100.0, 1_000.0),
            FilterStage::gain(4.2),
        ];
        for stage in stages {
            for &f in &[500.0, 5_000.0, fs / 20.0] {
                let mut d = DiscreteStage::new(stage, fs, None).unwrap();
                let measured = measure_gain(&mut |x| d.step(x).unwrap(), f, fs);
                let analytic = stage.response(f).norm();
                assert_relative_eq!(measured, analytic, max_relative = 0.02);
            }
        }
    }

    #[test]
    fn discrete_lead_matches_continuous() {
        let fs = 2.0e6;
        let lead = LeadFilter {
            zero_hz: 90_000.0,
            pole_hz: 1.0e6,
        };
        let mut d = DiscreteLead::new(&lead, fs).unwrap();
        for &f in &[10_000.0, 50_000.0, 100_000.0] {
            let mut d2 = d.clone();
            let measured = measure_gain(&mut |x| d2.step(x), f, fs);
            let analytic = lead.response(f).norm();
            assert_relative_eq!(measured, analytic, max_relative = 0.02);
        }
        let _ = d.step(0.0);
    }

    #[test]
    fn high_frequency_pi_gain_approaches_kp() {
        let fs = 1.0e6;
        let stage = FilterStage::pi(1.7, 300.0);
        let mut d = DiscreteStage::new(stage, fs, None).unwrap();
        let f = 30_000.0; // 100x the corner
        let measured = measure_gain(&mut |x| d.step(x).unwrap(), f, fs);
        assert_relative_eq!(measured, 1.7, max_relative = 0.02);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut d = DiscreteStage::new(FilterStage::pi(1.0, 100.0), 1.0e6, None).unwrap();
        for _ in 0..1000 {
            assert_eq!(d.step(0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn non_finite_input_freezes_state() {
        let mut d = DiscreteStage::new(FilterStage::pi(1.0, 100.0), 1.0e6, None).unwrap();
        for _ in 0..100 {
            d.step(1.0).unwrap();
        }
        let before = d.integrator;
        assert!(d.step(f64::NAN).is_err());
        assert_eq!(d.integrator, before);
        d.step(1.0).unwrap();
    }

    #[test]
    fn anti_windup_clamps_integrator() {
        let mut d = DiscreteStage::new(FilterStage::pi(1.0, 1000.0), 1.0e6, Some(0.5)).unwrap();
        for _ in 0..1_000_000 {
            d.step(1.0).unwrap();
        }
        assert!(d.integrator <= 0.5 + 1e-12);
    }
}
