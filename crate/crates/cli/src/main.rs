//! `ringlock` — command-line front end for the ring-cavity lock toolkit.
//!
//! Every subcommand reads an optional scenario file, writes its data
//! products (CSV traces, JSON reports) into the output directory, and
//! finishes by writing `manifest.json`. Identical scenario + seed inputs
//! produce byte-identical outputs; wall-clock information lives only in
//! the manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ringlock_core::{
    acquire_and_hold, derive_params, discriminator_slope, error_signal_sweep, fit_ringdown,
    loop_report, noise_budget, open_loop_transfer, optimal_mod_depth, ringdown_trace, run_lock,
    sensitivity_scan, sideband_powers, suppression_db, RingdownNoise, Scenario,
};

#[derive(Parser)]
#[command(name = "ringlock", version, about = "Ring-cavity PDH lock simulator")]
struct Cli {
    /// Scenario file (TOML). Defaults to the built-in scenario.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Override the scenario's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for data products.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for multi-run subcommands (0 = one per CPU).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Print the default scenario as TOML and exit.
    #[arg(long, global = true)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a cavity ring-down, fit it, and report the finesse.
    Ringdown,
    /// Sweep the demodulated error signal across resonance.
    Sweep,
    /// Report the open-loop shape: margins, bandwidth, servo resonance.
    Bode,
    /// Run the closed-loop time-domain simulation.
    Lock,
    /// Run the calibrated frequency-injection sensitivity scan.
    Sense,
    /// Evaluate the closed-form shot-noise budget.
    Budget,
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    subcommand: String,
    scenario_path: Option<String>,
    seed: u64,
    output_dir: String,
    outputs: Vec<String>,
    wall_seconds: f64,
}

#[derive(Serialize)]
struct CliError {
    error: String,
}

fn main() {
    let cli = Cli::parse();
    let started = Instant::now();
    match run(&cli, started) {
        Ok(()) => {}
        Err(msg) => {
            let payload = serde_json::to_string(&CliError { error: msg }).unwrap();
            eprintln!("{payload}");
            std::process::exit(1);
        }
    }
}

fn run(cli: &Cli, started: Instant) -> Result<(), String> {
    if cli.print_defaults {
        let sc = Scenario::default_resolved().map_err(|e| e.to_string())?;
        print!("{}", sc.to_toml_string().map_err(|e| e.to_string())?);
        return Ok(());
    }
    let command = cli
        .command
        .as_ref()
        .ok_or_else(|| "no subcommand given (try --help)".to_string())?;

    let mut scenario = match &cli.scenario {
        Some(path) => Scenario::from_path(path).map_err(|e| e.to_string())?,
        None => Scenario::default_resolved().map_err(|e| e.to_string())?,
    };
    if let Some(seed) = cli.seed {
        scenario.noise.rng_seed = seed;
    }

    fs::create_dir_all(&cli.out).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();

    match command {
        Command::Ringdown => cmd_ringdown(&scenario, &cli.out, &mut outputs)?,
        Command::Sweep => cmd_sweep(&scenario, &cli.out, &mut outputs)?,
        Command::Bode => cmd_bode(&scenario, &cli.out, &mut outputs)?,
        Command::Lock => cmd_lock(&scenario, &cli.out, &mut outputs)?,
        Command::Sense => cmd_sense(&scenario, &cli.out, cli.workers, &mut outputs)?,
        Command::Budget => cmd_budget(&scenario, &cli.out, &mut outputs)?,
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        subcommand: subcommand_name(command).to_string(),
        scenario_path: cli
            .scenario
            .as_ref()
            .map(|p| p.display().to_string()),
        seed: scenario.noise.rng_seed,
        output_dir: cli.out.display().to_string(),
        outputs,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&cli.out.join("manifest.json"), &manifest).map_err(|e| e.to_string())?;
    Ok(())
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Ringdown => "ringdown",
        Command::Sweep => "sweep",
        Command::Bode => "bode",
        Command::Lock => "lock",
        Command::Sense => "sense",
        Command::Budget => "budget",
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(value)?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")
}

fn record(outputs: &mut Vec<String>, path: &Path) {
    outputs.push(
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
    );
}

fn cmd_ringdown(sc: &Scenario, out: &Path, outputs: &mut Vec<String>) -> Result<(), String> {
    let params = derive_params(&sc.cavity).map_err(|e| e.to_string())?;
    let tau = params.photon_lifetime_s;
    let fs = 50.0 / tau;
    let trace = ringdown_trace(
        &params,
        6.0 * tau,
        fs,
        1.0e-3,
        Some(RingdownNoise {
            relative_rms: 0.01,
            seed: sc.noise.rng_seed,
        }),
    )
    .map_err(|e| e.to_string())?;
    let fit = fit_ringdown(&trace, params.fsr_hz).map_err(|e| e.to_string())?;

    let csv = out.join("ringdown.csv");
    let file = fs::File::create(&csv).map_err(|e| e.to_string())?;
    trace.write_csv(file).map_err(|e| e.to_string())?;
    record(outputs, &csv);

    #[derive(Serialize)]
    struct Report {
        configured_finesse: f64,
        expected_lifetime_s: f64,
        fitted_lifetime_s: f64,
        fitted_finesse: f64,
        fsr_hz: f64,
        linewidth_hz: f64,
    }
    let report = out.join("ringdown_report.json");
    write_json(
        &report,
        &Report {
            configured_finesse: sc.cavity.finesse,
            expected_lifetime_s: tau,
            fitted_lifetime_s: fit.tau_s,
            fitted_finesse: fit.finesse,
            fsr_hz: params.fsr_hz,
            linewidth_hz: params.linewidth_hz,
        },
    )
    .map_err(|e| e.to_string())?;
    record(outputs, &report);
    Ok(())
}

fn cmd_sweep(sc: &Scenario, out: &Path, outputs: &mut Vec<String>) -> Result<(), String> {
    let params = derive_params(&sc.cavity).map_err(|e| e.to_string())?;
    let span = 3.0 * params.linewidth_hz;
    let n = 4001;
    let detunings: Vec<f64> = (0..n)
        .map(|i| (i as f64 / (n - 1) as f64 - 0.5) * span)
        .collect();
    let errors =
        error_signal_sweep(&params, &sc.modulation, &detunings).map_err(|e| e.to_string())?;

    let csv = out.join("sweep.csv");
    let mut file = fs::File::create(&csv).map_err(|e| e.to_string())?;
    writeln!(file, "detuning_hz,error_w").map_err(|e| e.to_string())?;
    for (d, e) in detunings.iter().zip(&errors) {
        writeln!(file, "{d:.12e},{e:.12e}").map_err(|e| e.to_string())?;
    }
    record(outputs, &csv);

    let powers = sideband_powers(&sc.modulation).map_err(|e| e.to_string())?;
    let slope = discriminator_slope(&powers, params.linewidth_hz).map_err(|e| e.to_string())?;
    #[derive(Serialize)]
    struct Report {
        carrier_w: f64,
        sideband_w: f64,
        discriminator_slope_w_per_hz: f64,
        linewidth_hz: f64,
        peak_to_peak_w: f64,
    }
    let max = errors.iter().cloned().fold(f64::MIN, f64::max);
    let min = errors.iter().cloned().fold(f64::MAX, f64::min);
    let report = out.join("sweep_report.json");
    write_json(
        &report,
        &Report {
            carrier_w: powers.carrier_w,
            sideband_w: powers.sideband_w,
            discriminator_slope_w_per_hz: slope,
            linewidth_hz: params.linewidth_hz,
            peak_to_peak_w: max - min,
        },
    )
    .map_err(|e| e.to_string())?;
    record(outputs, &report);
    Ok(())
}

fn cmd_bode(sc: &Scenario, out: &Path, outputs: &mut Vec<String>) -> Result<(), String> {
    let params = derive_params(&sc.cavity).map_err(|e| e.to_string())?;
    let plant_pole = params.linewidth_hz / 2.0;
    let report = loop_report(&sc.servo, plant_pole).map_err(|e| e.to_string())?;

    let csv = out.join("bode.csv");
    let mut file = fs::File::create(&csv).map_err(|e| e.to_string())?;
    writeln!(
        file,
        "frequency_hz,open_loop_gain_db,open_loop_phase_deg,suppression_db"
    )
    .map_err(|e| e.to_string())?;
    let n = 600;
    for i in 0..n {
        let f = 10f64.powf(1.0 + 5.0 * i as f64 / (n - 1) as f64); // 10 Hz .. 1 MHz
        let g = open_loop_transfer(&sc.servo, plant_pole, f).map_err(|e| e.to_string())?;
        let s = suppression_db(&sc.servo, plant_pole, f).map_err(|e| e.to_string())?;
        writeln!(
            file,
            "{f:.12e},{:.12e},{:.12e},{s:.12e}",
            20.0 * g.norm().log10(),
            g.arg().to_degrees()
        )
        .map_err(|e| e.to_string())?;
    }
    record(outputs, &csv);

    let path = out.join("bode_report.json");
    write_json(&path, &report).map_err(|e| e.to_string())?;
    record(outputs, &path);
    Ok(())
}

fn cmd_lock(sc: &Scenario, out: &Path, outputs: &mut Vec<String>) -> Result<(), String> {
    let outcome = run_lock(sc).map_err(|e| e.to_string())?;

    let csv = out.join("lock_trace.csv");
    let file = fs::File::create(&csv).map_err(|e| e.to_string())?;
    outcome.trace.write_csv(file).map_err(|e| e.to_string())?;
    record(outputs, &csv);

    let path = out.join("lock_report.json");
    write_json(&path, &outcome.report).map_err(|e| e.to_string())?;
    record(outputs, &path);

    if sc.run.initial_detuning_hz != 0.0 {
        let acq = acquire_and_hold(sc, sc.run.initial_detuning_hz).map_err(|e| e.to_string())?;
        let path = out.join("acquisition_report.json");
        write_json(&path, &acq).map_err(|e| e.to_string())?;
        record(outputs, &path);
    }
    Ok(())
}

fn cmd_sense(
    sc: &Scenario,
    out: &Path,
    workers: usize,
    outputs: &mut Vec<String>,
) -> Result<(), String> {
    // Decade ladder spanning the linear range of the injection chain.
    let amplitudes: Vec<f64> = (-3..=3).map(|k| 10f64.powi(k)).collect();
    let result = sensitivity_scan(sc, &amplitudes, workers).map_err(|e| e.to_string())?;

    let csv = out.join("sense.csv");
    let mut file = fs::File::create(&csv).map_err(|e| e.to_string())?;
    writeln!(
        file,
        "drive_amplitude_v,fm_amplitude_hz,lockin_reading_w,equivalent_frequency_hz,locked"
    )
    .map_err(|e| e.to_string())?;
    for p in &result.points {
        writeln!(
            file,
            "{:.12e},{:.12e},{:.12e},{:.12e},{}",
            p.drive_amplitude_v,
            p.fm_amplitude_hz,
            p.lockin_reading_w,
            p.equivalent_frequency_hz,
            p.locked
        )
        .map_err(|e| e.to_string())?;
    }
    record(outputs, &csv);

    let path = out.join("sense_report.json");
    write_json(&path, &result).map_err(|e| e.to_string())?;
    record(outputs, &path);
    Ok(())
}

fn cmd_budget(sc: &Scenario, out: &Path, outputs: &mut Vec<String>) -> Result<(), String> {
    let params = derive_params(&sc.cavity).map_err(|e| e.to_string())?;
    let powers = sideband_powers(&sc.modulation).map_err(|e| e.to_string())?;
    let nu = sc.cavity.optical_frequency_hz();
    let budget = noise_budget(&powers, params.linewidth_hz, nu).map_err(|e| e.to_string())?;
    let (beta_opt, floor_opt) =
        optimal_mod_depth(sc.modulation.input_power_w, params.linewidth_hz, nu)
            .map_err(|e| e.to_string())?;

    #[derive(Serialize)]
    struct Report {
        reflected_power_w: f64,
        shot_power_psd_w_per_sqrt_hz: f64,
        shot_freq_psd_hz_per_sqrt_hz: f64,
        shot_birefringence_psd_per_sqrt_hz: f64,
        optimal_mod_depth_rad: f64,
        optimal_freq_psd_hz_per_sqrt_hz: f64,
    }
    let path = out.join("budget_report.json");
    write_json(
        &path,
        &Report {
            reflected_power_w: budget.reflected_power_w,
            shot_power_psd_w_per_sqrt_hz: budget.shot_power_psd_w_per_sqrt_hz,
            shot_freq_psd_hz_per_sqrt_hz: budget.shot_freq_psd_hz_per_sqrt_hz,
            shot_birefringence_psd_per_sqrt_hz: budget.shot_birefringence_psd_per_sqrt_hz,
            optimal_mod_depth_rad: beta_opt,
            optimal_freq_psd_hz_per_sqrt_hz: floor_opt,
        },
    )
    .map_err(|e| e.to_string())?;
    record(outputs, &path);
    Ok(())
}
