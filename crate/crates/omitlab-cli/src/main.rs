//! Command-line front end: config-driven sweeps, oracle comparisons and
//! spectrum fits with deterministic CSV output.
//!
//! Exit codes: 0 success, 2 input error, 3 physics/stability failure,
//! 4 numerical non-convergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use omitlab::config::RunConfig;
use omitlab::oracle::{oracle_sweep, OraclePoint};
use omitlab::output::{
    dispersion_csv, fit_report, fmt_g17, oracle_csv, read_spectrum_csv, respond_csv, sha256_hex,
    OutputDigest, RunRecord,
};
use omitlab::response::{beat_amplitude, spectrum_sweep, SweepMode};
use omitlab::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_PHYSICS: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Oracle runs must reproduce the analytic beat to this relative deviation.
const ORACLE_GATE: f64 = 1e-3;

#[derive(Parser)]
#[command(
    name = "omitlab",
    version,
    about = "Membrane-in-the-middle cavity transparency/amplification toolkit",
    long_about = "Evaluates the analytic beat response of a driven membrane-in-the-middle \
                  cavity, cross-checks it with a time-domain integrator, scans the membrane \
                  dispersion curve, and fits measured beat spectra.\n\n\
                  All runs are driven by a single JSON config (see the bundled configs/ \
                  directory); outputs are CSV files with fixed 17-significant-digit \
                  formatting plus a .run.json record carrying the config snapshot and \
                  output digests. The OMITLAB_THREADS environment variable caps the \
                  worker-thread count.\n\n\
                  Exit codes: 0 success, 2 input error, 3 physics/stability failure, \
                  4 numerical non-convergence."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic beat spectrum over the configured sweep
    Respond(RunArgs),
    /// Membrane dispersion curve (z0 in metres on the sweep grid)
    Dispersion(RunArgs),
    /// Time-domain integration compared point-by-point with the analytic beat
    Oracle(RunArgs),
    /// Fit a spectrum CSV against the analytic response
    Fit(FitArgs),
    /// Print the toolkit version
    Version,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output path (overrides the config's output.path)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep grid start override (rad/s; metres for dispersion)
    #[arg(long)]
    grid_start: Option<f64>,
    /// Sweep grid stop override
    #[arg(long)]
    grid_stop: Option<f64>,
    /// Sweep point count override
    #[arg(long)]
    grid_count: Option<usize>,
    /// Sweep mode override
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Args)]
struct FitArgs {
    /// Spectrum CSV (columns omega_over_2pi_hz, beat_modulus[, beat_phase_rad][, sigma])
    spectrum: PathBuf,
    /// Run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Report path (overrides the config's output.path)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Locked,
    FixedDelta,
}

impl From<ModeArg> for SweepMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Locked => SweepMode::Locked,
            ModeArg::FixedDelta => SweepMode::FixedDelta,
        }
    }
}

fn main() -> ExitCode {
    if let Err(code) = configure_threads() {
        return code;
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn configure_threads() -> Result<(), ExitCode> {
    if let Ok(raw) = std::env::var("OMITLAB_THREADS") {
        let n: usize = raw.parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
            eprintln!("error: OMITLAB_THREADS must be a positive integer (got `{raw}`)");
            ExitCode::from(EXIT_INPUT)
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| {
                eprintln!("error: failed to build thread pool: {e}");
                ExitCode::from(EXIT_INPUT)
            })?;
    }
    Ok(())
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Domain { .. } | Error::Config { .. } | Error::Seeding(_) => EXIT_INPUT,
        Error::Numerical { .. } => EXIT_NUMERICAL,
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Respond(args) => cmd_respond(args),
        Command::Dispersion(args) => cmd_dispersion(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Version => {
            println!("omitlab {}", env!("CARGO_PKG_VERSION"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: &Path, args: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(v) = args.grid_start {
        cfg.sweep.start = v;
    }
    if let Some(v) = args.grid_stop {
        cfg.sweep.stop = v;
    }
    if let Some(v) = args.grid_count {
        cfg.sweep.count = v;
    }
    if let Some(m) = args.mode {
        cfg.sweep.mode = m.into();
    }
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn out_path(cfg: &RunConfig, over: &Option<PathBuf>) -> PathBuf {
    over.clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.path))
}

fn persist(cfg: &RunConfig, path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::Config {
        path: path.display().to_string(),
        reason: format!("cannot write output: {e}"),
    })?;
    let record = RunRecord::new(
        cfg.clone(),
        vec![OutputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(contents.as_bytes()),
        }],
    );
    let record_path = path.with_extension(format!(
        "{}run.json",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    std::fs::write(&record_path, record.to_json()).map_err(|e| Error::Config {
        path: record_path.display().to_string(),
        reason: format!("cannot write run record: {e}"),
    })?;
    Ok(())
}

fn cmd_respond(args: RunArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(&args.config, &args)?;
    let sys = cfg.build_system()?;
    let grid = cfg.grid()?;
    let points = spectrum_sweep(&sys, &grid, cfg.sweep.mode)?;
    let csv = respond_csv(&points);
    let path = out_path(&cfg, &args.out);
    persist(&cfg, &path, &csv)?;
    println!(
        "respond: {} points ({:?} sweep), C = {}, wrote {}",
        points.len(),
        cfg.sweep.mode,
        fmt_g17(sys.coupling.cooperativity),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_dispersion(args: RunArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(&args.config, &args)?;
    let model = cfg.dispersion_model()?;
    let grid = cfg.grid()?;
    let curve = model.sample_curve(&grid)?;
    let csv = dispersion_csv(&curve);
    let path = out_path(&cfg, &args.out);
    persist(&cfg, &path, &csv)?;
    println!(
        "dispersion: {} points, |r_m| = {}, wrote {}",
        curve.z0.len(),
        fmt_g17(model.slab_reflectivity_magnitude()),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle(args: RunArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(&args.config, &args)?;
    let sys = cfg.build_oracle_system()?;
    let grid = cfg.grid()?;
    let settings = cfg.oracle_settings();
    let points = oracle_sweep(&sys, &grid, cfg.sweep.mode, &settings)?;

    let analytic: Vec<_> = points
        .iter()
        .map(|p: &OraclePoint| {
            let local = match cfg.sweep.mode {
                SweepMode::Locked => sys.at_sweep_point(p.omega_probe_offset, p.omega_probe_offset),
                SweepMode::FixedDelta => {
                    sys.at_sweep_point(sys.drive.delta, p.omega_probe_offset)
                }
            };
            beat_amplitude(&local)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let rows: Vec<_> = points.into_iter().zip(analytic).collect();
    let csv = oracle_csv(&rows);
    let path = out_path(&cfg, &args.out);
    persist(&cfg, &path, &csv)?;

    let divergent = rows.iter().filter(|(p, _)| p.diverged).count();
    let max_dev = rows
        .iter()
        .filter_map(|(p, a)| {
            p.demod
                .as_ref()
                .map(|d| (d.beat_complex - a).norm() / a.norm().max(f64::MIN_POSITIVE))
        })
        .fold(0.0f64, f64::max);
    println!(
        "oracle: {} points, {divergent} divergent, max relative deviation {} , wrote {}",
        rows.len(),
        fmt_g17(max_dev),
        path.display()
    );
    if divergent == rows.len() {
        eprintln!("all sweep points are dynamically unstable");
        return Ok(ExitCode::from(EXIT_PHYSICS));
    }
    if max_dev >= ORACLE_GATE {
        eprintln!(
            "time-domain and analytic responses disagree: {} >= {}",
            fmt_g17(max_dev),
            fmt_g17(ORACLE_GATE)
        );
        return Ok(ExitCode::from(EXIT_PHYSICS));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode, Error> {
    let cfg = RunConfig::from_path(&args.config)?;
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let text = std::fs::read_to_string(&args.spectrum).map_err(|e| Error::Config {
        path: args.spectrum.display().to_string(),
        reason: format!("cannot read spectrum: {e}"),
    })?;
    let data = read_spectrum_csv(&text)?;
    let sys = cfg.build_system()?;
    let (mut seed, mask, options) = cfg.fit_setup(&sys)?;
    // Seed the coupling from the spectrum itself unless the config pinned it.
    let g_pinned = cfg
        .fit
        .as_ref()
        .and_then(|f| f.initial.as_ref())
        .and_then(|i| i.g_rad_s)
        .is_some();
    if !g_pinned && mask[0] {
        if let Ok(guess) = omitlab::fit::initial_guess(&data, seed.gamma_m) {
            seed.g = guess.g;
        }
    }
    let result = omitlab::fit::fit_spectrum(&sys, &data, seed, mask, &options)?;

    let report = fit_report(&result);
    let path = out_path(&cfg, &args.out);
    persist(&cfg, &path, &report)?;
    println!(
        "fit: {} points, {} iterations, converged = {}, reduced chi^2 = {}",
        data.detuning.len(),
        result.iterations,
        result.converged,
        fmt_g17(result.reduced_chi_square)
    );
    println!(
        "  |G| = {} rad/s, kappa_T = {} rad/s, gamma_m = {} rad/s",
        fmt_g17(result.params.g),
        fmt_g17(result.params.kappa_t),
        fmt_g17(result.params.gamma_m)
    );
    println!("  report written to {}", path.display());
    if !result.converged {
        return Ok(ExitCode::from(EXIT_NUMERICAL));
    }
    Ok(ExitCode::SUCCESS)
}
