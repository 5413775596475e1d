//! Simulation and analysis toolkit for a PDH-locked high-finesse ring
//! cavity used as a birefringence-to-frequency transducer.
//!
//! The crate models the optical frontend (cavity reflection, sideband
//! demodulation), the three-tier controller (AOM / laser PZT / laser TEC),
//! the closed-loop time-domain dynamics with noise, and the readout chain
//! (lock-in detection, spectral estimation, shot-noise budget).

pub mod bessel;
pub mod cavity;
pub mod config;
pub mod constants;
pub mod dsp;
pub mod error;
pub mod noise;
pub mod pdh;
pub mod scan;
pub mod servo;
pub mod sim;
pub mod trace;

pub use cavity::{
    derive_params, fit_ringdown, reflection_coefficient, ringdown_trace, CavityConfig,
    CavityParams, RingdownFit, RingdownNoise,
};
pub use config::{InjectionConfig, RunConfig, Scenario};
pub use dsp::{
    birefringence_from_frequency, lock_in, noise_equivalent_birefringence, welch_psd,
    LockInConfig, LockInReading, Psd, Window,
};
pub use error::{Error, Result};
pub use noise::{
    noise_budget, optimal_mod_depth, NoiseBudget, NoiseConfig, NoiseGenerator, TechnicalLine,
};
pub use pdh::{
    discriminator_slope, error_signal_sweep, sideband_powers, ModulationConfig, PdhResponder,
    SidebandPowers,
};
pub use scan::{sensitivity_scan, ScanResult, SensitivityPoint};
pub use servo::{
    calibrate, loop_report, open_loop_transfer, suppression_db, FilterStage, LeadFilter,
    LoopReport, ServoChain,
};
pub use sim::{acquire_and_hold, run_lock, AcquisitionReport, LockOutcome, RunReport};
pub use trace::Trace;
