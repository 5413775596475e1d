//! Acceptance suite: one test per release criterion, each printing a
//! single pass line when its checks hold.

use std::process::Command;

use ringlock_core::{
    acquire_and_hold, birefringence_from_frequency, derive_params, discriminator_slope,
    error_signal_sweep, fit_ringdown, lock_in, loop_report, noise_budget,
    noise_equivalent_birefringence, ringdown_trace, run_lock, sensitivity_scan, sideband_powers,
    welch_psd, CavityConfig, LockInConfig, ModulationConfig, NoiseConfig, RingdownNoise, Scenario,
    ServoChain, SidebandPowers, Window,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn verdict(index: u32, name: &str, ok: bool) {
    println!(
        "acceptance {index:02} {name}: {}",
        if ok { "pass" } else { "FAIL" }
    );
    assert!(ok, "acceptance {index:02} {name} failed");
}

/// Cavity with the paper geometry but the linewidth pinned to 4 kHz.
fn cavity_4khz() -> CavityConfig {
    let mut cfg = CavityConfig::default();
    let fsr = 299_792_458.0 / (4.0 * 0.4);
    cfg.finesse = fsr / 4000.0;
    cfg
}

#[test]
fn acceptance_01_spectral_constants() {
    let params = derive_params(&CavityConfig::default()).unwrap();
    let ok = rel(params.fsr_hz, 187.4e6) < 0.01 && rel(params.photon_lifetime_s, 42e-6) < 0.02;
    verdict(1, "spectral constants", ok);
}

#[test]
fn acceptance_02_ringdown_roundtrip() {
    let mut ok = true;
    for finesse in [15_000.0, 50_000.0] {
        let cfg = CavityConfig {
            finesse,
            ..CavityConfig::default()
        };
        let params = derive_params(&cfg).unwrap();
        let fs = 100.0 / params.photon_lifetime_s;
        for seed in 0..100u64 {
            let trace = ringdown_trace(
                &params,
                7.0 * params.photon_lifetime_s,
                fs,
                1.0e-3,
                Some(RingdownNoise {
                    relative_rms: 0.01,
                    seed,
                }),
            )
            .unwrap();
            let fit = fit_ringdown(&trace, params.fsr_hz).unwrap();
            if rel(fit.finesse, finesse) >= 0.01 {
                eprintln!(
                    "finesse {finesse}, seed {seed}: recovered {} ({:+.3}%)",
                    fit.finesse,
                    100.0 * (fit.finesse / finesse - 1.0)
                );
                ok = false;
            }
        }
    }
    verdict(2, "ring-down round trip", ok);
}

#[test]
fn acceptance_03_pdh_slope() {
    let params = derive_params(&cavity_4khz()).unwrap();
    let modulation = ModulationConfig::default();
    let powers = sideband_powers(&modulation).unwrap();
    let slope = discriminator_slope(&powers, params.linewidth_hz).unwrap();
    let h = params.linewidth_hz * 1e-4;
    let errs = error_signal_sweep(&params, &modulation, &[-h, h]).unwrap();
    let numeric = (errs[1] - errs[0]) / (2.0 * h);
    verdict(3, "PDH slope", rel(numeric, slope) < 0.02);
}

#[test]
fn acceptance_04_shot_noise_budget() {
    let powers = SidebandPowers {
        carrier_w: 10e-3,
        sideband_w: 3e-3,
    };
    let nu = 299_792_458.0 / 1.064e-6;
    let budget = noise_budget(&powers, 4000.0, nu).unwrap();
    let slope = discriminator_slope(&powers, 4000.0).unwrap();
    let consistent = rel(
        budget.shot_freq_psd_hz_per_sqrt_hz * slope,
        budget.shot_power_psd_w_per_sqrt_hz,
    ) < 1e-10;
    let ok = rel(budget.shot_freq_psd_hz_per_sqrt_hz, 1.03e-5) < 0.05 && consistent;
    verdict(4, "shot-noise budget", ok);
}

#[test]
fn acceptance_05_servo_shape() {
    let params = derive_params(&CavityConfig::default()).unwrap();
    let chain = ServoChain::calibrated_default(params.linewidth_hz / 2.0).unwrap();
    let report = loop_report(&chain, params.linewidth_hz / 2.0).unwrap();
    let ok = (report.resonance_peak_db - 10.0).abs() <= 2.0
        && (report.resonance_frequency_hz - 180e3).abs() <= 0.15 * 180e3
        && (60e3..=90e3).contains(&report.unity_gain_frequency_hz);
    verdict(5, "servo shape", ok);
}

fn noiseless_injection_run(drive_v: f64, f_fm: f64, duration_s: f64) -> (f64, f64) {
    let mut sc = Scenario::default_resolved().unwrap();
    sc.run.duration_s = duration_s;
    sc.noise.shot_noise_enabled = false;
    let mut inj = sc.injection.unwrap();
    inj.drive_amplitude_v = drive_v;
    inj.drive_frequency_hz = f_fm;
    sc.injection = Some(inj);
    let outcome = run_lock(&sc).unwrap();
    assert!(outcome.report.locked);
    let ccw = outcome.trace.channel("ccw_error_w").unwrap();
    let cfg = LockInConfig::for_reference(f_fm);
    let n = ccw.len();
    let reading = lock_in(&ccw[n / 2..], outcome.trace.sample_rate_hz(), &cfg)
        .unwrap()
        .magnitude;
    (
        reading / outcome.report.discriminator_slope_w_per_hz,
        inj.fm_amplitude_hz(),
    )
}

#[test]
fn acceptance_06_end_to_end_calibration() {
    let mut ok = true;
    for f_fm in [217.0, 276.0] {
        let (recovered, expected) = noiseless_injection_run(1.0, f_fm, 10.0);
        if rel(recovered, expected) >= 0.02 {
            eprintln!("f_FM {f_fm}: recovered {recovered:.6e}, injected {expected:.6e}");
            ok = false;
        }
    }
    verdict(6, "end-to-end calibration", ok);
}

#[test]
fn acceptance_07_linearity_six_decades() {
    let mut sc = Scenario::default_resolved().unwrap();
    sc.run.duration_s = 5.0;
    sc.noise.shot_noise_enabled = false;
    // 1 mV to 1 kV drive: 6 decades of injected FM amplitude.
    let amplitudes: Vec<f64> = (-3..=3).map(|k| 10f64.powi(k)).collect();
    let result = sensitivity_scan(&sc, &amplitudes, 0).unwrap();
    let span = result
        .points
        .iter()
        .filter(|p| p.fm_amplitude_hz > 0.0)
        .map(|p| p.fm_amplitude_hz)
        .fold((f64::MAX, f64::MIN), |(lo, hi), a| (lo.min(a), hi.max(a)));
    let decades = (span.1 / span.0).log10();
    let ok = decades >= 6.0 - 1e-9 && (result.response_slope - 1.0).abs() <= 0.01;
    if !ok {
        eprintln!(
            "slope {:.4} over {:.1} decades",
            result.response_slope, decades
        );
    }
    verdict(7, "injection linearity", ok);
}

#[test]
fn acceptance_08_sensitivity_floor() {
    // Conversion formulas at the published working point.
    let nu = 299_792_458.0 / 1.064e-6;
    let dn = birefringence_from_frequency(500e-6, nu).unwrap();
    let gamma_n = noise_equivalent_birefringence(dn, 1000.0).unwrap();
    let conversions_ok = rel(dn, 1.77e-18) < 0.005 && rel(gamma_n, 1.12e-16) < 0.005;

    // Measured floor with shot noise only, averaged over seeds.
    let duration = 10.0;
    let mut base = Scenario::default_resolved().unwrap();
    base.run.duration_s = duration;
    base.noise = NoiseConfig {
        shot_noise_enabled: true,
        ..NoiseConfig::default()
    };
    base.injection = None;
    let base = Scenario::from_toml_str(&base.to_toml_string().unwrap()).unwrap();

    let params = derive_params(&base.cavity).unwrap();
    let powers = sideband_powers(&base.modulation).unwrap();
    let budget = noise_budget(&powers, params.linewidth_hz, nu).unwrap();
    let expected_floor = budget.shot_freq_psd_hz_per_sqrt_hz / (4.0 * duration).sqrt();

    let cfg = LockInConfig::for_reference(217.0);
    let enbw = cfg.equivalent_noise_bandwidth_hz();
    let seeds: Vec<u64> = (1..=4).collect();
    let readings: Vec<f64> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut sc = base.clone();
                sc.noise.rng_seed = seed;
                scope.spawn(move || {
                    let outcome = run_lock(&sc).unwrap();
                    let ccw = outcome.trace.channel("ccw_error_w").unwrap();
                    let reading = ringlock_core::dsp::lock_in_tail_mean(
                        ccw,
                        outcome.trace.sample_rate_hz(),
                        &cfg,
                        0.5,
                    )
                    .unwrap();
                    reading / outcome.report.discriminator_slope_w_per_hz
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mean_reading = readings.iter().sum::<f64>() / readings.len() as f64;
    // Rayleigh mean -> ASD -> rms at the averaging time T = duration.
    let asd = mean_reading / (std::f64::consts::PI * enbw).sqrt();
    let measured_floor = asd / (4.0 * duration).sqrt();
    let ratio = measured_floor / expected_floor;
    let floor_ok = ratio > 0.5 && ratio < 2.0;

    // The scan report extrapolates the same floor to 1000 s.
    let extrapolated = asd / (4.0 * 1000.0f64).sqrt();
    let extrapolation_ok = extrapolated > 0.0 && extrapolated < measured_floor;
    if !floor_ok {
        eprintln!("floor {measured_floor:.3e} Hz vs expected {expected_floor:.3e} Hz (x{ratio:.2})");
    }
    verdict(
        8,
        "sensitivity floor",
        conversions_ok && floor_ok && extrapolation_ok,
    );
}

#[test]
fn acceptance_09_spectrum_floor() {
    let mut sc = Scenario::default_resolved().unwrap();
    sc.noise = NoiseConfig {
        shot_noise_enabled: true,
        ..NoiseConfig::default()
    };
    let sc = Scenario::from_toml_str(&sc.to_toml_string().unwrap()).unwrap();
    let gamma_p = sc.noise.shot_psd_w_per_sqrt_hz;

    let fs = 100_000.0;
    let series = ringlock_core::noise::sample_noise(&sc.noise, 1 << 19, fs).unwrap();
    let psd = welch_psd(&series.detector_w, fs, 4096, 0.5, Window::Hann).unwrap();
    // Average over the interior bins; compare to the analytic floor in dB.
    let interior = &psd.values[4..psd.values.len() - 4];
    let mean = interior.iter().sum::<f64>() / interior.len() as f64;
    let db_off = 10.0 * (mean / gamma_p.powi(2)).log10().abs();
    if db_off >= 1.0 {
        eprintln!("PSD floor off by {db_off:.2} dB");
    }
    verdict(9, "spectrum floor", db_off < 1.0);
}

#[test]
fn acceptance_10_cli_determinism() {
    let exe = env!("CARGO_BIN_EXE_ringlock");
    let dir = tempfile::tempdir().unwrap();

    // A short but complete closed-loop scenario.
    let mut sc = Scenario::default_resolved().unwrap();
    sc.run.duration_s = 0.2;
    sc.noise = NoiseConfig::illustrative_lab_profile(11);
    let scenario_path = dir.path().join("scenario.toml");
    std::fs::write(&scenario_path, sc.to_toml_string().unwrap()).unwrap();

    let mut ok = true;
    for (sub, files) in [
        ("lock", vec!["lock_trace.csv", "lock_report.json"]),
        ("budget", vec!["budget_report.json"]),
        ("sweep", vec!["sweep.csv", "sweep_report.json"]),
        ("bode", vec!["bode.csv", "bode_report.json"]),
    ] {
        let out_a = dir.path().join(format!("{sub}_a"));
        let out_b = dir.path().join(format!("{sub}_b"));
        for out in [&out_a, &out_b] {
            let status = Command::new(exe)
                .args([
                    sub,
                    "--scenario",
                    scenario_path.to_str().unwrap(),
                    "--seed",
                    "42",
                    "--out",
                    out.to_str().unwrap(),
                ])
                .status()
                .unwrap();
            assert!(status.success(), "{sub} failed");
        }
        for file in files {
            let a = std::fs::read(out_a.join(file)).unwrap();
            let b = std::fs::read(out_b.join(file)).unwrap();
            if a != b {
                eprintln!("{sub}/{file} differs between identical runs");
                ok = false;
            }
        }
    }
    verdict(10, "CLI determinism", ok);
}

#[test]
fn acquisition_pulls_in_from_half_linewidth() {
    // Not a numbered criterion; guards the transient behavior the
    // closed-loop criteria rely on.
    let mut sc = Scenario::default_resolved().unwrap();
    sc.run.duration_s = 0.5;
    sc.injection = None;
    sc.noise.shot_noise_enabled = false;
    let params = derive_params(&sc.cavity).unwrap();
    let report = acquire_and_hold(&sc, params.linewidth_hz / 2.0).unwrap();
    assert!(report.acquired);
    assert!(report.residual_rms_hz < 1.0);
}
