//! Command-line front end: modulator synthesis, impairment simulation,
//! end-to-end link experiments and MRI k-space analysis.
//!
//! Exit codes: 0 success, 2 argument/config error, 3 runtime or simulation
//! failure.

mod config;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dsfl_core::ciff::{compute_stf, realize_ciff, RealizationKind};
use dsfl_core::experiments::{
    clock_ratio_sweep, link_input_sweep, write_clock_sweep_csv, InputSweepSetup,
};
use dsfl_core::kspace::{
    generate_phantom, kspace_dynamic_range, link_fidelity, load_kspace, reconstruct_image,
    save_kspace, Ellipse,
};
use dsfl_core::link::{FilterKind, LinkConfig, MixerMode};
use dsfl_core::metrics::{compute_sndr, compute_snr, BandSpec};
use dsfl_core::ntf::{quantization_noise_power, synthesize_ntf, NtfSpec};
use dsfl_core::presets;
use dsfl_core::scalar::undb20;
use dsfl_core::signal::generate_tone;
use dsfl_core::sim::{
    simulate, sweep_tc_error, write_tc_sweep_csv, ClockModel, ModulatorConfig,
    CT_INPUT_OVERSAMPLING,
};
use dsfl_core::spectrum::{estimate_psd, Window};
use dsfl_core::sqnr::{
    measure_snr_point, peak_snr_for_config, predict_sqnr_detailed, sweep_peak_sqnr,
    write_sweep_csv, SQNR_RUN_LENGTH,
};

#[derive(Parser)]
#[command(
    name = "dsfl",
    about = "Design and simulation toolkit for delta-sigma digital RF-over-fiber links",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a noise transfer function and realize its CIFF loop filter
    Synth(SynthArgs),
    /// Simulate a modulator with impairments; optional parameter sweeps
    Sim(SimArgs),
    /// Run the end-to-end RF-over-fiber chain or an input-power sweep
    Link(LinkArgs),
    /// MRI k-space utilities: phantom generation, DR, reconstruction, link fidelity
    Kspace(KspaceArgs),
    /// Reproduce the peak-SQNR-versus-OSR chart for orders 1..8
    SweepFig5(SweepFig5Args),
}

#[derive(Args)]
struct SynthArgs {
    /// Modulator order (1..=8)
    #[arg(long)]
    order: usize,
    /// Oversampling ratio
    #[arg(long)]
    osr: f64,
    /// Out-of-band NTF gain bound
    #[arg(long, default_value_t = 1.5)]
    h_inf: f64,
    /// Place all NTF zeros at DC instead of optimizing them
    #[arg(long)]
    no_zero_opt: bool,
    /// Loop-filter realization flavour (dt or ct)
    #[arg(long, default_value = "ct")]
    kind: String,
    #[arg(long, default_value = "out/synth")]
    out: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value_t = 50.0)]
    osr: f64,
    /// dt or ct
    #[arg(long, default_value = "ct")]
    kind: String,
    /// Design clock in Hz (defaults: 100 MHz ct, 20 MHz dt)
    #[arg(long)]
    fs: Option<f64>,
    /// Applied clock as a fraction of the design clock
    #[arg(long, default_value_t = 1.0)]
    fs_ratio: f64,
    /// Input amplitude in dBFS
    #[arg(long, default_value_t = -5.0)]
    amp_dbfs: f64,
    /// Record length (bits)
    #[arg(long, default_value_t = 65536)]
    n: usize,
    /// Thermal noise: a per-sample variance, or `auto` for the design
    /// target of 4x the measured quantization noise
    #[arg(long)]
    thermal: Option<String>,
    /// RMS clock jitter in picoseconds
    #[arg(long, default_value_t = 0.0)]
    jitter_ps: f64,
    /// Fractional time-constant error applied to all integrators
    #[arg(long, default_value_t = 0.0)]
    tc_error: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run a parameter sweep: tc | fs | amp | jitter
    #[arg(long)]
    sweep: Option<String>,
    /// Sweep start (tc: dk/k, fs: ratio, amp: dBFS, jitter: ps)
    #[arg(long)]
    from: Option<f64>,
    /// Sweep end
    #[arg(long)]
    to: Option<f64>,
    #[arg(long, default_value_t = 7)]
    steps: usize,
    /// Also emit an SVG spectrum plot
    #[arg(long)]
    svg: bool,
    #[arg(long, default_value = "out/sim")]
    out: PathBuf,
}

#[derive(Args)]
struct LinkArgs {
    /// Key-value config file overriding the bench defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input power sweep `lo:hi[:step]` in dBm (runs the linearity fit)
    #[arg(long)]
    sweep_input: Option<String>,
    /// Single-run input power in dBm
    #[arg(long, default_value_t = -20.0)]
    input_dbm: f64,
    #[arg(long, default_value = "out/link")]
    out: PathBuf,
    /// Also emit an SVG of the sweep
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct KspaceArgs {
    #[command(subcommand)]
    command: KspaceCommand,
}

#[derive(Subcommand)]
enum KspaceCommand {
    /// Generate a synthetic phantom acquisition
    Gen {
        #[arg(long, default_value = "out/phantom.ksp")]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        nx: usize,
        #[arg(long, default_value_t = 64)]
        ny: usize,
        /// Construct a noise floor this many dB below the k-space peak
        #[arg(long, default_value_t = 90.0)]
        dr: f64,
        /// Column dwell time in seconds
        #[arg(long, default_value_t = 5e-7)]
        dwell: f64,
    },
    /// Report the dynamic range of a k-space file
    Dr { file: PathBuf },
    /// Reconstruct the image (PGM magnitude + CSV)
    Recon {
        file: PathBuf,
        #[arg(long, default_value = "out/image.pgm")]
        out_pgm: PathBuf,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Transmit every row through the simulated link and report NRMSE
    Fidelity {
        file: PathBuf,
        /// Modulator class: 52 | 81 | 95 (peak-SNR class in dB)
        #[arg(long, default_value_t = 95)]
        class: usize,
        #[arg(long, default_value = "out/fidelity")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SweepFig5Args {
    /// Comma-separated OSR grid
    #[arg(long, default_value = "8,16,32,50,64,128")]
    osr_list: String,
    #[arg(long, default_value = "out/fig5")]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("DSFL_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .ok();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Sim(a) => cmd_sim(a),
        Command::Link(a) => cmd_link(a),
        Command::Kspace(a) => cmd_kspace(a),
        Command::SweepFig5(a) => cmd_fig5(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn arg(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::runtime(format!("i/o: {e}"))
}

fn parse_kind(kind: &str) -> Result<RealizationKind, CliError> {
    match kind {
        "dt" => Ok(RealizationKind::DiscreteTime),
        "ct" => Ok(RealizationKind::ContinuousTime),
        other => Err(CliError::arg(format!("kind must be dt or ct, got `{other}`"))),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err)
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let kind = parse_kind(&a.kind)?;
    let spec = NtfSpec::new(a.order, a.osr)
        .with_h_inf(a.h_inf)
        .with_optimize_zeros(!a.no_zero_opt);
    let ntf = synthesize_ntf(&spec).map_err(|e| match e {
        dsfl_core::ntf::NtfError::InvalidOrder(_)
        | dsfl_core::ntf::NtfError::InvalidOsr(_)
        | dsfl_core::ntf::NtfError::InvalidHInf(_) => CliError::arg(e.to_string()),
        other => CliError::runtime(other.to_string()),
    })?;
    ensure_dir(&a.out)?;
    std::fs::write(a.out.join("ntf.json"), ntf.to_json()).map_err(io_err)?;

    let coeffs = realize_ciff(&ntf, kind).map_err(|e| CliError::runtime(e.to_string()))?;
    let stf = compute_stf(&coeffs).map_err(|e| CliError::runtime(e.to_string()))?;
    let detail =
        predict_sqnr_detailed(&ntf, a.osr, 2.0).map_err(|e| CliError::runtime(e.to_string()))?;
    let sigma_q2 = quantization_noise_power(&ntf, a.osr, 2.0)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let mut report = String::new();
    report.push_str(&format!(
        "noise shaper: order {} OSR {} ||H||inf {}\n",
        a.order, a.osr, a.h_inf
    ));
    report.push_str(&format!("zeros optimized: {}\n", !a.no_zero_opt));
    report.push_str(&format!(
        "peak SQNR: {:.1} dB at {:.2} dBFS (max stable amplitude {:.3} FS)\n",
        detail.sqnr_db, detail.amplitude_dbfs, detail.a_max
    ));
    report.push_str(&format!(
        "in-band quantization noise (linear model): {:.2} dB rel. full-scale square\n",
        10.0 * sigma_q2.log10()
    ));
    report.push_str(&format!(
        "STF peaking: {:.3} ({:.2} dB) at {:.4} rad/sample; DC gain {:.6}\n",
        stf.peak_magnitude,
        20.0 * stf.peak_magnitude.log10(),
        stf.peak_freq,
        stf.dc_magnitude
    ));
    report.push_str(&format!(
        "realization ({:?}):\n  k = {:?}\n  a = {:?}\n  g = {:?}\n  dac1 = {} dac2 = {} b1 = {}\n",
        kind,
        coeffs.integrator_gains,
        coeffs.feedforward,
        coeffs.resonator_gains,
        coeffs.dac1_gain,
        coeffs.dac2_gain,
        coeffs.input_gain
    ));
    std::fs::write(a.out.join("report.txt"), &report).map_err(io_err)?;
    print!("{report}");
    Ok(())
}

fn build_modulator(a: &SimArgs) -> Result<(ModulatorConfig<f64>, f64), CliError> {
    if a.osr <= 1.0 {
        return Err(CliError::arg(format!("OSR must exceed 1, got {}", a.osr)));
    }
    let kind = parse_kind(&a.kind)?;
    let ntf = synthesize_ntf(&NtfSpec::new(a.order, a.osr)).map_err(|e| match e {
        dsfl_core::ntf::NtfError::InvalidOrder(_) | dsfl_core::ntf::NtfError::InvalidOsr(_) => {
            CliError::arg(e.to_string())
        }
        other => CliError::runtime(other.to_string()),
    })?;
    let coeffs = realize_ciff(&ntf, kind).map_err(|e| CliError::runtime(e.to_string()))?;
    let f_s = a.fs.unwrap_or(match kind {
        RealizationKind::ContinuousTime => 100e6,
        RealizationKind::DiscreteTime => 20e6,
    });
    let mut cfg = ModulatorConfig::new(coeffs, f_s);
    cfg.f_s_actual = f_s * a.fs_ratio;
    cfg.seed = a.seed;
    if a.jitter_ps > 0.0 {
        cfg.jitter = ClockModel::with_rms_jitter(a.jitter_ps * 1e-12);
    }
    if a.tc_error != 0.0 {
        cfg.tc_error = a.tc_error;
    }
    match a.thermal.as_deref() {
        None => {}
        Some("auto") => {
            let clean = ModulatorConfig::new(cfg.coeffs.clone(), f_s);
            cfg.thermal_noise_variance =
                presets::calibrated_thermal_injection(&clean, a.osr, 4.0)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
        }
        Some(v) => {
            cfg.thermal_noise_variance = config::parse_si_number(v)
                .ok_or_else(|| CliError::arg(format!("--thermal `{v}` is not a number")))?;
        }
    }
    Ok((cfg, a.osr))
}

fn cmd_sim(a: SimArgs) -> Result<(), CliError> {
    let (cfg, osr) = build_modulator(&a)?;
    ensure_dir(&a.out)?;

    if let Some(sweep) = a.sweep.as_deref() {
        return run_sim_sweep(&a, &cfg, osr, sweep);
    }

    let n = a.n.next_power_of_two();
    let f_s = cfg.f_s_actual;
    let bin = {
        let t = (n as f64 / (4.0 * osr)).round() as usize;
        if t % 2 == 1 {
            t
        } else {
            t.max(2) - 1
        }
    };
    let f_sig = bin as f64 * f_s / n as f64;
    let amp = undb20(a.amp_dbfs);
    let over = match cfg.kind {
        RealizationKind::ContinuousTime => CT_INPUT_OVERSAMPLING,
        RealizationKind::DiscreteTime => 1,
    };
    let input = generate_tone(f_sig, amp, 0.0, n * over, f_s * over as f64)
        .map_err(|e| CliError::arg(e.to_string()))?;
    let out = simulate(&cfg, &input).map_err(|e| CliError::runtime(e.to_string()))?;

    let f = std::fs::File::create(a.out.join("bitstream.csv")).map_err(io_err)?;
    out.write_csv(std::io::BufWriter::new(f))
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let spec = estimate_psd(&out.waveform(), n, Window::Rectangular, 1)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let f = std::fs::File::create(a.out.join("spectrum.csv")).map_err(io_err)?;
    spec.write_csv(std::io::BufWriter::new(f))
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let band = BandSpec::new(&spec, f_sig, f_s / (2.0 * osr))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let snr = compute_snr(&spec, &band).map_err(|e| CliError::runtime(e.to_string()))?;
    let sndr =
        compute_sndr(&spec, &band, 5).map_err(|e| CliError::runtime(e.to_string()))?;

    let mut report = String::new();
    report.push_str(&format!(
        "modulator: order {} OSR {} kind {:?} f_s {} Hz (applied {} Hz)\n",
        a.order, osr, cfg.kind, cfg.f_s, cfg.f_s_actual
    ));
    report.push_str(&format!(
        "input: {:.2} dBFS at {:.3} kHz, {} samples, seed {}\n",
        a.amp_dbfs,
        f_sig / 1e3,
        n,
        cfg.seed
    ));
    report.push_str(&format!(
        "impairments: thermal {:.3e}, jitter {} ps rms, tc error {}\n",
        cfg.thermal_noise_variance,
        cfg.jitter.sigma_t() * 1e12,
        cfg.tc_error
    ));
    report.push_str(&format!(
        "stable: {} (max integrator state {:.3})\n",
        out.stable, out.max_state
    ));
    report.push_str(&format!("SNR: {snr:.2} dB\n"));
    report.push_str(&format!(
        "SNDR: {:.2} dB in-band, {:.2} dB to fs/2\n",
        sndr.in_band_db, sndr.wideband_db
    ));
    std::fs::write(a.out.join("report.txt"), &report).map_err(io_err)?;
    print!("{report}");

    if a.svg {
        let pts: Vec<(f64, f64)> = spec
            .bin_freqs()
            .iter()
            .zip(spec.psd())
            .skip(1)
            .map(|(&f, &p)| (f, 10.0 * (p / 0.5).log10()))
            .collect();
        let chart = svg::Chart {
            title: "Modulator output spectrum",
            x_label: "frequency (Hz)",
            y_label: "PSD (dBFS/bin)",
            log_x: true,
            series: vec![svg::Series {
                label: "output",
                points: pts,
            }],
        };
        let f = std::fs::File::create(a.out.join("spectrum.svg")).map_err(io_err)?;
        chart.write(std::io::BufWriter::new(f)).map_err(io_err)?;
    }
    Ok(())
}

fn run_sim_sweep(
    a: &SimArgs,
    cfg: &ModulatorConfig<f64>,
    osr: f64,
    sweep: &str,
) -> Result<(), CliError> {
    let steps = a.steps.max(2);
    let grid = |lo: f64, hi: f64| -> Vec<f64> {
        (0..steps)
            .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
            .collect()
    };
    match sweep {
        "tc" => {
            let dk = grid(a.from.unwrap_or(-0.08), a.to.unwrap_or(0.12));
            let amps: Vec<f64> = (0..10).map(|k| 0.08 + 0.08 * k as f64).collect();
            let cells = sweep_tc_error(cfg, osr, &dk, &amps)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let f = std::fs::File::create(a.out.join("tc_sweep.csv")).map_err(io_err)?;
            write_tc_sweep_csv(&cells, std::io::BufWriter::new(f)).map_err(io_err)?;
            println!("tc sweep: {} cells -> tc_sweep.csv", cells.len());
        }
        "fs" => {
            let ratios = grid(a.from.unwrap_or(0.7), a.to.unwrap_or(1.0));
            let amps: Vec<f64> = vec![-12.0, -9.0, -6.0, -4.5, -3.5];
            let points = clock_ratio_sweep(cfg, osr, &ratios, &amps)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let f = std::fs::File::create(a.out.join("fs_sweep.csv")).map_err(io_err)?;
            write_clock_sweep_csv(&points, std::io::BufWriter::new(f)).map_err(io_err)?;
            for p in &points {
                println!(
                    "fs ratio {:.3}: peak SNDR {:.1} dB ({})",
                    p.ratio,
                    p.peak_sndr_db,
                    if p.any_stable { "stable" } else { "unstable" }
                );
            }
        }
        "amp" => {
            let amps = grid(a.from.unwrap_or(-20.0), a.to.unwrap_or(-1.0));
            let mut rows = String::from("amplitude_dbfs,snr_db,stable\n");
            for &amp_db in &amps {
                let s = measure_snr_point(cfg, osr, undb20(amp_db), SQNR_RUN_LENGTH, 0.5)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                rows.push_str(&format!(
                    "{},{},{}\n",
                    amp_db,
                    if s.stable { s.snr_db } else { f64::NAN },
                    s.stable
                ));
            }
            std::fs::write(a.out.join("amp_sweep.csv"), rows).map_err(io_err)?;
            println!("amplitude sweep -> amp_sweep.csv");
        }
        "jitter" => {
            let ps = grid(a.from.unwrap_or(0.0), a.to.unwrap_or(10.0));
            let mut rows = String::from("sigma_t_ps,peak_snr_db,best_amplitude_dbfs\n");
            for &p in &ps {
                let mut c = cfg.clone();
                c.jitter = ClockModel::with_rms_jitter(p * 1e-12);
                let peak = peak_snr_for_config(&c, osr)
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                rows.push_str(&format!("{},{},{}\n", p, peak.sqnr_db, peak.amplitude_dbfs));
                println!("jitter {p:.2} ps: peak SNR {:.1} dB", peak.sqnr_db);
            }
            std::fs::write(a.out.join("jitter_sweep.csv"), rows).map_err(io_err)?;
        }
        other => {
            return Err(CliError::arg(format!(
                "--sweep must be tc|fs|amp|jitter, got `{other}`"
            )))
        }
    }
    Ok(())
}

/// Bench-like defaults: 20 MHz clock second-order part, LO 120 MHz, RF
/// 119.8 MHz (IF 200 kHz, OSR 50), cubic nonlinearity placed so the input
/// 1 dB compression point sits at -5 dBm, configured -86 dBm noise floor.
fn default_link_setup() -> InputSweepSetup<f64> {
    let f_b = 200e3;
    let mut link = LinkConfig::new(120e6, 119.8e6, f_b);
    link.mixer_mode = MixerMode::Single;
    link.retime_delay = 2.5 / (20e6 * 4.0);
    let volts_per_fs = 0.7;
    // a3 sized for P1dB at -5 dBm into 50 ohm: A^2 = (4/3)(1-10^(-1/20))|a1/a3|
    let a_v = (2.0 * 50.0 * 1e-3 * 10f64.powf(-5.0 / 10.0)).sqrt();
    let a_fs = a_v / volts_per_fs;
    let a3 = -(4.0 / 3.0) * (1.0 - 10f64.powf(-0.05)) / (a_fs * a_fs);
    link.nonlinearity = (1.0, a3);
    let modulator = presets::second_order_config(50.0);
    InputSweepSetup {
        link,
        modulator,
        volts_per_fs,
        ref_impedance: 50.0,
        n_bits: 1 << 14,
        noise_floor_dbm: -86.0,
    }
}

fn apply_link_config(setup: &mut InputSweepSetup<f64>, path: &Path) -> Result<(), CliError> {
    let mut kv = config::KeyValues::load(path).map_err(|e| CliError::arg(e.to_string()))?;
    let take = |kv: &mut config::KeyValues, key: &str| -> Result<Option<f64>, CliError> {
        kv.take_number(key).map_err(|e| CliError::arg(e.to_string()))
    };
    if let Some(v) = take(&mut kv, "f_lo")? {
        setup.link.f_lo = v;
    }
    if let Some(v) = take(&mut kv, "f_l")? {
        setup.link.f_l = v;
    }
    if let Some(v) = take(&mut kv, "f_b")? {
        setup.link.f_b = v;
        setup.link.lpf = dsfl_core::link::LpfSpec::for_bandwidth(v);
    }
    if let Some(v) = kv.take_string("mixer_mode") {
        setup.link.mixer_mode = match v.as_str() {
            "single" => MixerMode::Single,
            "quadrature" => MixerMode::Quadrature,
            other => return Err(CliError::arg(format!("mixer_mode `{other}`"))),
        };
    }
    if let Some(v) = take(&mut kv, "lpf_cutoff")? {
        setup.link.lpf.cutoff = v;
    }
    if let Some(v) = take(&mut kv, "lpf_order")? {
        setup.link.lpf.order = v as usize;
    }
    if let Some(v) = kv.take_string("lpf_kind") {
        setup.link.lpf.kind = match v.as_str() {
            "butterworth" => FilterKind::Butterworth,
            "brickwall" => FilterKind::Brickwall,
            other => return Err(CliError::arg(format!("lpf_kind `{other}`"))),
        };
    }
    if let Some(v) = take(&mut kv, "a1")? {
        setup.link.nonlinearity.0 = v;
    }
    if let Some(v) = take(&mut kv, "a3")? {
        setup.link.nonlinearity.1 = v;
    }
    if let Some(v) = take(&mut kv, "i_bias")? {
        setup.link.optical.i_bias = v;
    }
    if let Some(v) = take(&mut kv, "i_threshold")? {
        setup.link.optical.i_threshold = v;
    }
    if let Some(v) = take(&mut kv, "v_ref")? {
        setup.link.optical.v_ref = v;
    }
    if let Some(v) = take(&mut kv, "r2")? {
        setup.link.optical.r2 = v;
        setup.link.optical.i_bias = setup.link.optical.v_ref / v;
    }
    if let Some(v) = take(&mut kv, "attenuation_db")? {
        setup.link.optical.attenuation_db = v;
    }
    if let Some(v) = take(&mut kv, "detector_noise_variance")? {
        setup.link.optical.detector_noise_variance = v;
    }
    if let Some(v) = take(&mut kv, "tia_bandwidth")? {
        setup.link.optical.tia_bandwidth = if v > 0.0 { Some(v) } else { None };
    }
    if let Some(v) = take(&mut kv, "tia_transimpedance")? {
        setup.link.optical.tia_transimpedance = v;
    }
    if let Some(v) = take(&mut kv, "retime_delay")? {
        setup.link.retime_delay = v;
    }
    if let Some(v) = take(&mut kv, "fiber_length")? {
        setup.link.fiber_length = v;
    }
    if let Some(v) = take(&mut kv, "volts_per_fs")? {
        setup.volts_per_fs = v;
    }
    if let Some(v) = take(&mut kv, "ref_impedance")? {
        setup.ref_impedance = v;
    }
    if let Some(v) = take(&mut kv, "noise_floor_dbm")? {
        setup.noise_floor_dbm = v;
    }
    if let Some(v) = take(&mut kv, "n_bits")? {
        setup.n_bits = v as usize;
    }
    if let Some(v) = take(&mut kv, "mod_osr")? {
        setup.modulator = presets::second_order_config(v);
    }
    if let Some(v) = take(&mut kv, "seed")? {
        setup.modulator.seed = v as u64;
    }
    kv.reject_unknown().map_err(|e| CliError::arg(e.to_string()))
}

fn cmd_link(a: LinkArgs) -> Result<(), CliError> {
    let mut setup = default_link_setup();
    if let Some(path) = &a.config {
        apply_link_config(&mut setup, path)?;
    }
    ensure_dir(&a.out)?;

    if let Some(range) = &a.sweep_input {
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(CliError::arg(format!(
                "--sweep-input expects lo:hi[:step], got `{range}`"
            )));
        }
        let lo: f64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| CliError::arg("bad sweep lower bound"))?;
        let hi: f64 = parts[1]
            .trim()
            .parse()
            .map_err(|_| CliError::arg("bad sweep upper bound"))?;
        let step: f64 = if parts.len() == 3 {
            parts[2]
                .trim()
                .parse()
                .map_err(|_| CliError::arg("bad sweep step"))?
        } else {
            2.0
        };
        if !(hi > lo) || !(step > 0.0) {
            return Err(CliError::arg("sweep range must be increasing"));
        }
        let mut powers = Vec::new();
        let mut p = lo;
        while p <= hi + 1e-9 {
            powers.push(p);
            p += step;
        }
        let (sweep, report, dr) =
            link_input_sweep(&setup, &powers).map_err(|e| CliError::runtime(e.to_string()))?;
        let f = std::fs::File::create(a.out.join("sweep.csv")).map_err(io_err)?;
        sweep
            .write_csv(std::io::BufWriter::new(f))
            .map_err(|e| CliError::runtime(e.to_string()))?;

        let mut text = String::new();
        text.push_str(&format!(
            "reference impedance: {} ohm; powers are dBm into that load\n",
            setup.ref_impedance
        ));
        text.push_str(&format!(
            "linear fit: slope {:.4} dB/dB, intercept {:.3} dB ({} points)\n",
            report.fit_slope, report.fit_intercept, report.linear_points
        ));
        match report.p1db_in_dbm {
            Some(p) => text.push_str(&format!("P1dB (input-referred): {p:.2} dBm\n")),
            None => text.push_str("P1dB: not reached within the sweep (open-ended)\n"),
        }
        text.push_str(&format!(
            "configured input-referred noise floor: {} dBm\n",
            setup.noise_floor_dbm
        ));
        match dr {
            Some(d) => text.push_str(&format!("end-to-end dynamic range: {d:.2} dB\n")),
            None => text.push_str("end-to-end dynamic range: undefined (no P1dB)\n"),
        }
        std::fs::write(a.out.join("p1db_report.txt"), &text).map_err(io_err)?;
        print!("{text}");

        if a.svg {
            let pts: Vec<(f64, f64)> = sweep
                .points()
                .iter()
                .map(|p| (p.input_dbm, p.output_dbm))
                .collect();
            let chart = svg::Chart {
                title: "End-to-end linearity",
                x_label: "input power (dBm)",
                y_label: "output power (dBm)",
                log_x: false,
                series: vec![svg::Series {
                    label: "measured",
                    points: pts,
                }],
            };
            let f = std::fs::File::create(a.out.join("sweep.svg")).map_err(io_err)?;
            chart.write(std::io::BufWriter::new(f)).map_err(io_err)?;
        }
        return Ok(());
    }

    // Single run: export the chain trace.
    let r = setup.ref_impedance;
    let p_watts = 1e-3 * 10f64.powf(a.input_dbm / 10.0);
    let amp_v = (2.0 * r * p_watts).sqrt();
    let mod_rate = setup.modulator.f_s_actual;
    let mult = ((2.5 * (setup.link.f_l + setup.link.f_b) / mod_rate).ceil() as usize).max(1);
    let rf_rate = mod_rate * mult as f64;
    let n_rf = setup.n_bits * mult;
    let rf = generate_tone(
        setup.link.f_l,
        amp_v / setup.volts_per_fs,
        0.0,
        n_rf,
        rf_rate,
    )
    .map_err(|e| CliError::arg(e.to_string()))?;
    let trace = dsfl_core::link::run_chain(&rf, &setup.link, &setup.modulator)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    trace
        .export_csv(&a.out.join("trace"))
        .map_err(|e| CliError::runtime(e.to_string()))?;
    println!(
        "chain trace with {} stages exported to {}",
        trace.stages.len(),
        a.out.join("trace").display()
    );
    for (i, rep) in trace.retime.iter().enumerate() {
        println!(
            "retime[{i}]: margin {:.2} ns (violation: {}), fiber mismatch {:.1}-{:.1} ns",
            rep.min_margin_s * 1e9,
            rep.margin_violation,
            rep.mismatch_range_s.0 * 1e9,
            rep.mismatch_range_s.1 * 1e9
        );
    }
    Ok(())
}

fn cmd_kspace(a: KspaceArgs) -> Result<(), CliError> {
    match a.command {
        KspaceCommand::Gen {
            out,
            nx,
            ny,
            dr,
            dwell,
        } => {
            if nx < 8 || ny < 8 {
                return Err(CliError::arg("grid must be at least 8x8"));
            }
            let data = phantom_with_floor(nx, ny, dr, dwell)?;
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    ensure_dir(dir)?;
                }
            }
            save_kspace(&data, &out).map_err(|e| CliError::runtime(e.to_string()))?;
            println!(
                "phantom {}x{} with ~{dr} dB constructed dynamic range -> {}",
                nx,
                ny,
                out.display()
            );
            Ok(())
        }
        KspaceCommand::Dr { file } => {
            let data = load_file(&file)?;
            let dr =
                kspace_dynamic_range(&data).map_err(|e| CliError::runtime(e.to_string()))?;
            println!("k-space dynamic range: {dr:.1} dB");
            println!(
                "grid {}x{}, center ({}, {}), dwell {:.3e} s",
                data.nx(),
                data.ny(),
                data.center().0,
                data.center().1,
                data.dwell_time()
            );
            Ok(())
        }
        KspaceCommand::Recon {
            file,
            out_pgm,
            out_csv,
        } => {
            let data = load_file(&file)?;
            let img = reconstruct_image(&data);
            if let Some(dir) = out_pgm.parent() {
                if !dir.as_os_str().is_empty() {
                    ensure_dir(dir)?;
                }
            }
            let f = std::fs::File::create(&out_pgm).map_err(io_err)?;
            img.write_pgm(std::io::BufWriter::new(f))
                .map_err(|e| CliError::runtime(e.to_string()))?;
            println!("image -> {}", out_pgm.display());
            if let Some(csv) = out_csv {
                let f = std::fs::File::create(&csv).map_err(io_err)?;
                img.write_csv(std::io::BufWriter::new(f))
                    .map_err(|e| CliError::runtime(e.to_string()))?;
                println!("magnitudes -> {}", csv.display());
            }
            Ok(())
        }
        KspaceCommand::Fidelity { file, class, out } => {
            let data = load_file(&file)?;
            let f_b = 1.0 / (2.0 * data.dwell_time());
            let f_l = f_b * 25.0;
            let mut link = LinkConfig::new(f_l, f_l, f_b);
            link.mixer_mode = MixerMode::Quadrature;
            link.lpf.kind = FilterKind::Brickwall;
            link.optical.tia_bandwidth = None;
            let modulator = fidelity_class_modulator(class, f_b)?;
            ensure_dir(&out)?;
            let rep = link_fidelity(&data, &link, &modulator, 0.5)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let f = std::fs::File::create(out.join("reference.pgm")).map_err(io_err)?;
            rep.reference
                .write_pgm(std::io::BufWriter::new(f))
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let f = std::fs::File::create(out.join("received.pgm")).map_err(io_err)?;
            rep.received
                .write_pgm(std::io::BufWriter::new(f))
                .map_err(|e| CliError::runtime(e.to_string()))?;
            println!("link fidelity ({class} dB class): NRMSE = {:.4e}", rep.nrmse);
            std::fs::write(
                out.join("report.txt"),
                format!("class: {class} dB\nNRMSE: {:.6e}\n", rep.nrmse),
            )
            .map_err(io_err)?;
            Ok(())
        }
    }
}

fn load_file(path: &Path) -> Result<dsfl_core::kspace::KSpaceData<f64>, CliError> {
    if !path.exists() {
        return Err(CliError::arg(format!("file not found: {}", path.display())));
    }
    load_kspace(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Two-ellipse phantom plus a pseudo-noise floor whose median magnitude
/// sits `dr` dB below the k-space peak.
fn phantom_with_floor(
    nx: usize,
    ny: usize,
    dr: f64,
    dwell: f64,
) -> Result<dsfl_core::kspace::KSpaceData<f64>, CliError> {
    let data = generate_phantom(
        nx,
        ny,
        &[
            Ellipse {
                center: (0.0, 0.0),
                axes: (0.55, 0.4),
                angle: 0.4,
                intensity: 1.0,
            },
            Ellipse {
                center: (0.2, -0.15),
                axes: (0.18, 0.1),
                angle: -0.7,
                intensity: 0.5,
            },
        ],
        dwell,
    )
    .map_err(|e| CliError::runtime(e.to_string()))?;
    let peak = data.max_magnitude();
    let mut state = 0x9E3779B97F4A7C15u64;
    let mut rnd = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
        ((state >> 33) as f64 / 2f64.powi(31)) - 1.0
    };
    let raw: Vec<num_complex::Complex<f64>> = (0..nx * ny)
        .map(|_| num_complex::Complex::new(rnd(), rnd()))
        .collect();
    let mut mags: Vec<f64> = raw.iter().map(|c| c.norm()).collect();
    mags.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let median = mags[mags.len() / 2];
    let scale = peak * 10f64.powf(-dr / 20.0) / median;
    let noisy: Vec<num_complex::Complex<f64>> = data
        .matrix()
        .iter()
        .zip(&raw)
        .map(|(c, n)| c + n * scale)
        .collect();
    dsfl_core::kspace::KSpaceData::new(noisy, nx, ny, data.center(), dwell)
        .map_err(|e| CliError::runtime(e.to_string()))
}

fn fidelity_class_modulator(class: usize, f_b: f64) -> Result<ModulatorConfig<f64>, CliError> {
    match class {
        95 => {
            let mut cfg = presets::fourth_order_config();
            cfg.f_s = 2.0 * f_b * 50.0;
            cfg.f_s_actual = cfg.f_s;
            Ok(cfg)
        }
        81 => {
            let mut cfg = presets::fourth_order_config();
            cfg.f_s = 2.0 * f_b * 50.0;
            cfg.f_s_actual = cfg.f_s;
            let ntf = presets::fourth_order_ntf::<f64>();
            let sq = quantization_noise_power(&ntf, 50.0, 2.0)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            cfg.thermal_noise_variance = 4.0 * sq * 50.0;
            cfg.jitter = ClockModel::with_rms_jitter(1.2e-12);
            Ok(cfg)
        }
        52 => {
            let mut cfg = presets::second_order_config(20.0);
            cfg.f_s = 2.0 * f_b * 20.0;
            cfg.f_s_actual = cfg.f_s;
            Ok(cfg)
        }
        other => Err(CliError::arg(format!(
            "--class must be 52, 81 or 95, got {other}"
        ))),
    }
}

fn cmd_fig5(a: SweepFig5Args) -> Result<(), CliError> {
    let osrs: Result<Vec<f64>, _> = a
        .osr_list
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect();
    let osrs = osrs.map_err(|_| CliError::arg("bad --osr-list"))?;
    if osrs.is_empty() || osrs.iter().any(|&o| o <= 1.0) {
        return Err(CliError::arg("OSR values must exceed 1"));
    }
    let orders: Vec<usize> = (1..=8).collect();
    ensure_dir(&a.out)?;
    let cells = sweep_peak_sqnr(&orders, &osrs);
    let f = std::fs::File::create(a.out.join("fig5.csv")).map_err(io_err)?;
    write_sweep_csv(&cells, std::io::BufWriter::new(f)).map_err(io_err)?;
    println!("peak SQNR table -> {}", a.out.join("fig5.csv").display());

    if a.svg {
        let labels: Vec<String> = orders.iter().map(|n| format!("N={n}")).collect();
        let mut series = Vec::new();
        for (i, &n) in orders.iter().enumerate() {
            let pts: Vec<(f64, f64)> = cells
                .iter()
                .filter(|c| c.order == n)
                .filter_map(|c| c.peak_sqnr_db.as_ref().ok().map(|&v| (c.osr, v)))
                .collect();
            series.push(svg::Series {
                label: &labels[i],
                points: pts,
            });
        }
        let chart = svg::Chart {
            title: "Available peak SQNR vs OSR",
            x_label: "OSR",
            y_label: "peak SQNR (dB)",
            log_x: true,
            series,
        };
        let f = std::fs::File::create(a.out.join("fig5.svg")).map_err(io_err)?;
        chart.write(std::io::BufWriter::new(f)).map_err(io_err)?;
        println!("chart -> {}", a.out.join("fig5.svg").display());
    }
    Ok(())
}
