//! Time-domain closed-loop simulation: nonlinear error signal, discrete
//! controller chain, transport delay, actuator limits, noise injection.
//!
//! The loop runs at the full sample rate; the stored trace is boxcar
//! decimated, which preserves both the sub-kHz tones of interest and the
//! white-noise floor of the decimated band.

use serde::Serialize;

use crate::cavity::derive_params;
use crate::config::Scenario;
use crate::error::{ensure, Error, Result};
use crate::pdh::{discriminator_slope, sideband_powers, PdhResponder};
use crate::servo::{DiscreteLead, DiscreteStage, OnePole};
use crate::trace::Trace;

/// Channel names of the stored trace, in storage order.
pub const TRACE_CHANNELS: [&str; 9] = [
    "cw_error_w",
    "ccw_error_w",
    "aom_cmd_hz",
    "pzt_cmd_hz",
    "tec_cmd_hz",
    "true_cw_detuning_hz",
    "true_ccw_detuning_hz",
    "reflected_cw_w",
    "transmitted_cw_w",
];

/// Summary of a closed-loop run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub locked: bool,
    /// Time the lock was declared lost, if it was.
    pub lock_loss_time_s: Option<f64>,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// RMS of the true cw detuning over the evaluation window, Hz.
    pub residual_cw_rms_hz: f64,
    /// RMS of the true ccw detuning over the evaluation window, Hz.
    pub residual_ccw_rms_hz: f64,
    /// Mean ccw error over the evaluation window, W. With a resonance
    /// anisotropy this sits at slope * anisotropy.
    pub mean_ccw_error_w: f64,
    pub mean_aom_cmd_hz: f64,
    pub mean_pzt_cmd_hz: f64,
    pub mean_tec_cmd_hz: f64,
    /// Discriminator slope used for normalization, W/Hz.
    pub discriminator_slope_w_per_hz: f64,
    pub linewidth_hz: f64,
    pub fsr_hz: f64,
    pub overall_gain: f64,
    /// Requested transport delay, seconds.
    pub loop_delay_s: f64,
    /// Delay actually realized on the sample grid.
    pub delay_samples: u32,
    pub realized_delay_s: f64,
}

/// A completed run: decimated multichannel trace plus the report.
#[derive(Debug, Clone)]
pub struct LockOutcome {
    pub trace: Trace,
    pub report: RunReport,
}

struct Engine {
    responder: PdhResponder,
    slope_w_per_hz: f64,
    anisotropy_hz: f64,
    fm_amplitude_hz: f64,
    fm_frequency_hz: f64,
    // Discrete loop elements.
    pole_cw: OnePole,
    pole_ccw: OnePole,
    lead: Option<DiscreteLead>,
    fast: Vec<DiscreteStage>,
    pzt: DiscreteStage,
    pzt_bw: OnePole,
    tec: DiscreteStage,
    tec_bw: OnePole,
    overall_gain: f64,
    delay_ring: Vec<f64>,
    delay_pos: usize,
    // Applied actuator values (one-sample-old by construction).
    aom_applied: f64,
    pzt_applied: f64,
    tec_applied: f64,
}

struct StepOutput {
    cw_error_w: f64,
    ccw_error_w: f64,
    aom_cmd_hz: f64,
    pzt_cmd_hz: f64,
    tec_cmd_hz: f64,
    cw_detuning_hz: f64,
    ccw_detuning_hz: f64,
    reflected_w: f64,
    transmitted_w: f64,
}

impl Engine {
    fn new(scenario: &Scenario) -> Result<Self> {
        let run = &scenario.run;
        let params = derive_params(&scenario.cavity)?;
        let powers = sideband_powers(&scenario.modulation)?;
        let slope = discriminator_slope(&powers, params.linewidth_hz)?;
        let responder = PdhResponder::new(params, &scenario.modulation)?;
        let chain = &scenario.servo;
        chain.validate()?;
        if chain.overall_gain <= 0.0 {
            return Err(Error::LoopInactive);
        }
        let fs = run.sample_rate_hz;
        // The ring buffer absorbs both the transport delay and the
        // one-sample compute latency, so at least one slot is needed.
        let delay_samples = ((chain.loop_delay_s * fs).round() as usize).max(1);
        let fast_windup = run.aom_range_hz / chain.overall_gain;
        let fast = chain
            .fast_stages
            .iter()
            .map(|s| DiscreteStage::new(*s, fs, Some(fast_windup)))
            .collect::<Result<Vec<_>>>()?;
        let lead = chain
            .lead
            .as_ref()
            .map(|l| DiscreteLead::new(l, fs))
            .transpose()?;
        Ok(Self {
            responder,
            slope_w_per_hz: slope,
            anisotropy_hz: scenario.cavity.anisotropy_detuning_hz,
            fm_amplitude_hz: scenario
                .injection
                .map_or(0.0, |inj| inj.fm_amplitude_hz()),
            fm_frequency_hz: scenario
                .injection
                .map_or(0.0, |inj| inj.drive_frequency_hz),
            pole_cw: OnePole::new(params.linewidth_hz / 2.0, fs),
            pole_ccw: OnePole::new(params.linewidth_hz / 2.0, fs),
            lead,
            fast,
            pzt: DiscreteStage::new(chain.pzt_stage, fs, Some(run.pzt_range_hz))?,
            pzt_bw: OnePole::new(chain.pzt_bandwidth_hz, fs),
            tec: DiscreteStage::new(chain.tec_stage, fs, Some(run.tec_range_hz))?,
            tec_bw: OnePole::new(chain.tec_bandwidth_hz, fs),
            overall_gain: chain.overall_gain,
            delay_ring: vec![0.0; delay_samples],
            delay_pos: 0,
            aom_applied: 0.0,
            pzt_applied: 0.0,
            tec_applied: 0.0,
        })
    }

    fn delay_samples(&self) -> usize {
        self.delay_ring.len()
    }

    #[inline]
    fn step(
        &mut self,
        t: f64,
        nu_free_hz: f64,
        det_cw_w: f64,
        det_ccw_w: f64,
        run: &crate::config::RunConfig,
    ) -> Result<StepOutput> {
        let correction = self.aom_applied + self.pzt_applied + self.tec_applied;
        let injection = if self.fm_amplitude_hz != 0.0 {
            self.fm_amplitude_hz * (std::f64::consts::TAU * self.fm_frequency_hz * t).cos()
        } else {
            0.0
        };
        let cw_detuning = nu_free_hz + injection - correction;
        let ccw_detuning = nu_free_hz + self.anisotropy_hz - correction;

        let (raw_cw, reflected, transmitted) = self.responder.error_and_powers(cw_detuning);
        // The cavity storage time low-passes the error signal; detector
        // noise enters after it (flat at the photodiode).
        let cw_error = self.pole_cw.step(raw_cw) + det_cw_w;
        let ccw_error = self.pole_ccw.step(self.responder.error(ccw_detuning)) + det_ccw_w;

        // Fast AOM path: normalize to a detuning estimate, shape, delay.
        let mut u = cw_error / self.slope_w_per_hz;
        if let Some(lead) = &mut self.lead {
            u = lead.step(u);
        }
        for stage in &mut self.fast {
            u = stage.step(u)?;
        }
        let cmd = (self.overall_gain * u).clamp(-run.aom_range_hz, run.aom_range_hz);
        let delayed = std::mem::replace(&mut self.delay_ring[self.delay_pos], cmd);
        self.delay_pos = (self.delay_pos + 1) % self.delay_ring.len();
        self.aom_applied = delayed;

        // Slow paths null the mean of the stage upstream of them. Each
        // reads a band-limited monitor of the upstream command: filtering
        // before the PID bounds the derivative branch at high frequency
        // instead of letting it kick the fast loop during transients.
        self.pzt_applied = self
            .pzt
            .step(self.pzt_bw.step(self.aom_applied))?
            .clamp(-run.pzt_range_hz, run.pzt_range_hz);
        self.tec_applied = self
            .tec
            .step(self.tec_bw.step(self.pzt_applied))?
            .clamp(-run.tec_range_hz, run.tec_range_hz);

        Ok(StepOutput {
            cw_error_w: cw_error,
            ccw_error_w: ccw_error,
            aom_cmd_hz: self.aom_applied,
            pzt_cmd_hz: self.pzt_applied,
            tec_cmd_hz: self.tec_applied,
            cw_detuning_hz: cw_detuning,
            ccw_detuning_hz: ccw_detuning,
            reflected_w: reflected,
            transmitted_w: transmitted,
        })
    }
}

/// Run the closed loop for the scenario's duration.
///
/// The run starts with all controller states zeroed and the laser at the
/// configured initial detuning. If the cw detuning stays outside half a
/// linewidth for the configured dwell, the run terminates early and the
/// report marks the lock lost.
pub fn run_lock(scenario: &Scenario) -> Result<LockOutcome> {
    run_lock_inner(scenario, true)
}

fn run_lock_inner(scenario: &Scenario, terminate_on_loss: bool) -> Result<LockOutcome> {
    let run = scenario.run;
    run.validate()?;
    let params = derive_params(&scenario.cavity)?;
    let mut engine = Engine::new(scenario)?;
    let mut noise = crate::noise::NoiseGenerator::new(&scenario.noise, run.sample_rate_hz)?;

    let fs = run.sample_rate_hz;
    let dt = 1.0 / fs;
    let total = (run.duration_s * fs).round() as usize;
    ensure(total >= 2, "duration_s", "run too short for the sample rate")?;
    let dec = run.trace_decimation as usize;
    let stored = total / dec;

    let mut channels: [Vec<f64>; 9] = std::array::from_fn(|_| Vec::with_capacity(stored));
    let mut acc = [0.0f64; 9];
    let mut acc_count = 0usize;

    // Evaluation window: second half of the run.
    let eval_start = total / 2;
    let mut stats_count = 0usize;
    let mut sum_cw2 = 0.0;
    let mut sum_ccw2 = 0.0;
    let mut sum_ccw_err = 0.0;
    let mut sum_aom = 0.0;
    let mut sum_pzt = 0.0;
    let mut sum_tec = 0.0;

    let dwell_samples = ((run.lock_loss_dwell_s * fs).round() as usize).max(1);
    let half_linewidth = params.linewidth_hz / 2.0;
    let mut out_of_band = 0usize;
    let mut locked = true;
    let mut lock_loss_time_s = None;

    for n in 0..total {
        let t = n as f64 * dt;
        let nu_free = run.initial_detuning_hz + noise.laser_frequency_hz();
        let det_cw = noise.detector_cw_w();
        let det_ccw = noise.detector_ccw_w();
        noise.advance();
        let out = engine.step(t, nu_free, det_cw, det_ccw, &run)?;

        let values = [
            out.cw_error_w,
            out.ccw_error_w,
            out.aom_cmd_hz,
            out.pzt_cmd_hz,
            out.tec_cmd_hz,
            out.cw_detuning_hz,
            out.ccw_detuning_hz,
            out.reflected_w,
            out.transmitted_w,
        ];
        for (a, v) in acc.iter_mut().zip(values) {
            *a += v;
        }
        acc_count += 1;
        if acc_count == dec {
            for (ch, a) in channels.iter_mut().zip(&mut acc) {
                ch.push(*a / dec as f64);
                *a = 0.0;
            }
            acc_count = 0;
        }

        if n >= eval_start {
            stats_count += 1;
            sum_cw2 += out.cw_detuning_hz * out.cw_detuning_hz;
            sum_ccw2 += out.ccw_detuning_hz * out.ccw_detuning_hz;
            sum_ccw_err += out.ccw_error_w;
            sum_aom += out.aom_cmd_hz;
            sum_pzt += out.pzt_cmd_hz;
            sum_tec += out.tec_cmd_hz;
        }

        if out.cw_detuning_hz.abs() > half_linewidth {
            out_of_band += 1;
            if out_of_band >= dwell_samples && terminate_on_loss {
                locked = false;
                lock_loss_time_s = Some(t);
                break;
            }
        } else {
            out_of_band = 0;
        }
    }
    if terminate_on_loss && out_of_band >= dwell_samples {
        locked = false;
    }

    let mut trace = Trace::new(fs / dec as f64)?;
    for (name, data) in TRACE_CHANNELS.iter().zip(channels) {
        trace.push_channel(*name, data)?;
    }

    let inv = if stats_count > 0 {
        1.0 / stats_count as f64
    } else {
        0.0
    };
    let report = RunReport {
        locked,
        lock_loss_time_s,
        duration_s: run.duration_s,
        sample_rate_hz: fs,
        residual_cw_rms_hz: (sum_cw2 * inv).sqrt(),
        residual_ccw_rms_hz: (sum_ccw2 * inv).sqrt(),
        mean_ccw_error_w: sum_ccw_err * inv,
        mean_aom_cmd_hz: sum_aom * inv,
        mean_pzt_cmd_hz: sum_pzt * inv,
        mean_tec_cmd_hz: sum_tec * inv,
        discriminator_slope_w_per_hz: engine.slope_w_per_hz,
        linewidth_hz: params.linewidth_hz,
        fsr_hz: params.fsr_hz,
        overall_gain: scenario.servo.overall_gain,
        loop_delay_s: scenario.servo.loop_delay_s,
        delay_samples: engine.delay_samples() as u32,
        realized_delay_s: engine.delay_samples() as f64 / fs,
    };
    Ok(LockOutcome { trace, report })
}

/// Result of an acquisition run from a deliberate initial detuning.
#[derive(Debug, Clone, Serialize)]
pub struct AcquisitionReport {
    pub acquired: bool,
    /// First instant after which the detuning stays within a twentieth of
    /// a linewidth for 10 ms.
    pub time_to_lock_s: Option<f64>,
    /// Residual cw detuning RMS over the final fifth of the run, Hz.
    pub residual_rms_hz: f64,
}

/// Start the loop at `initial_detuning_hz` and watch it pull in.
///
/// Unlike [`run_lock`] the run is not terminated while the detuning is
/// still outside the linewidth: the transient *is* the object of interest.
pub fn acquire_and_hold(scenario: &Scenario, initial_detuning_hz: f64) -> Result<AcquisitionReport> {
    let mut sc = scenario.clone();
    // Model the offset as a laser-frequency step the loop must absorb:
    // equivalent to starting the free-running laser off resonance.
    sc.run.initial_detuning_hz = initial_detuning_hz;
    let outcome = run_lock_inner(&sc, false)?;
    let trace = &outcome.trace;
    let detuning = trace
        .channel("true_cw_detuning_hz")
        .ok_or_else(|| Error::DegenerateTrace("missing detuning channel".into()))?;
    ensure(!detuning.is_empty(), "duration_s", "no stored samples")?;
    let fs = trace.sample_rate_hz();
    let params = derive_params(&sc.cavity)?;
    let band = params.linewidth_hz / 20.0;
    let hold = ((0.01 * fs).round() as usize).max(1);

    let mut in_band = 0usize;
    let mut lock_index = None;
    for (i, &d) in detuning.iter().enumerate() {
        if d.abs() < band {
            in_band += 1;
            if in_band == hold && lock_index.is_none() {
                lock_index = Some(i + 1 - hold);
            }
        } else {
            in_band = 0;
        }
    }
    // Require the lock to persist to the end of the run.
    let acquired = lock_index.is_some()
        && detuning[detuning.len().saturating_sub(hold)..]
            .iter()
            .all(|d| d.abs() < band);

    let tail_start = detuning.len() - detuning.len() / 5;
    let tail = &detuning[tail_start..];
    let residual = if tail.is_empty() {
        f64::NAN
    } else {
        (tail.iter().map(|d| d * d).sum::<f64>() / tail.len() as f64).sqrt()
    };
    Ok(AcquisitionReport {
        acquired,
        time_to_lock_s: if acquired {
            lock_index.map(|i| i as f64 / fs)
        } else {
            None
        },
        residual_rms_hz: residual,
    })
}
