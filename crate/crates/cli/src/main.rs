//! `blindeq` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O or gradient-check failure, 2 invalid
//! configuration or arguments, 3 every point diverged.

mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blindeq::equalizers::{run_grad_suite, GradFault, GradPath};
use blindeq::experiments::{
    artifact_stem, export_constellation, run_convergence, run_experiment, run_launch_power_sweep, run_pa_power_sweep, run_snr_sweep, with_threads,
    write_details_csv, write_record_json, write_results_csv, write_traces, ExperimentConfig, ExperimentRecord, Profile, SweepAxis, CONVERGENCE_GRID,
};
use blindeq::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "blindeq", version, about = "Blind channel equalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every equalizer at every sweep point.
    Sweep(RunArgs),
    /// Train on fresh data for each (batch, learning rate) cell and export SER traces.
    Convergence {
        #[command(flatten)]
        run: RunArgs,
        /// Cells as `BATCHxLR`, comma separated, e.g. `1024x1e-3,64x1e-2`.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Comma-separated paths: all, fir, mlp, elbo, vqvae.
        #[arg(long, default_value = "all")]
        module: String,
        /// Corrupt the analytic gradients (exercises the failure path).
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    SignFlip,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file, or the name of a preset.
    #[arg(long)]
    config: String,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; all cores when unset.
    #[arg(long, env = "BLINDEQ_THREADS")]
    threads: Option<usize>,
    /// Problem size applied to presets.
    #[arg(long, value_enum, default_value = "desk")]
    profile: ProfileArg,
    /// Also write an SVG plot.
    #[arg(long)]
    svg: bool,
    /// Also write equalized constellations of the first test block.
    #[arg(long)]
    constellations: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

enum Failure {
    Config(String),
    Diverged,
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { line, msg } if line > 0 => Failure::Config(format!("line {line}: {msg}")),
            Error::Parse { msg, .. } => Failure::Config(msg),
            Error::InvalidArgument(msg) => Failure::Config(msg),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn io_fail(e: impl std::fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = config::load_config(&args.config, args.profile.into())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.threads == Some(0) {
        return Err(Failure::Config("--threads must be positive".into()));
    }
    Ok(cfg)
}

fn axis_label(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::SnrDb => "SNR (dB)",
        SweepAxis::LaunchPowerDbm => "launch power (dBm)",
        SweepAxis::PaPowerDbm => "PA output power (dBm)",
        SweepAxis::None => "operating point",
    }
}

/// One machine-readable line per point on stdout.
fn summarize(rec: &ExperimentRecord) {
    for p in &rec.points {
        println!(
            "axis_value={}\tequalizer={}\tser={:e}\terrors={}\tsymbols={}\tcensored={}\tdiverged={}\tunstable={}\tsteps={}\twall_ms={}\tchecksum={}",
            p.axis_value, p.equalizer, p.ser, p.errors, p.symbols, p.censored, p.diverged, p.unstable, p.steps, p.wall_ms, p.checksum
        );
    }
}

fn write_outputs(rec: &ExperimentRecord, args: &RunArgs, traces: bool) -> Result<(), Failure> {
    std::fs::create_dir_all(&args.out).map_err(io_fail)?;
    write_results_csv(rec, &args.out.join("results.csv"))?;
    write_details_csv(rec, &args.out.join("details.csv"))?;
    write_record_json(rec, &args.out.join("record.json"))?;
    if traces {
        let dir = args.out.join("traces");
        std::fs::create_dir_all(&dir).map_err(io_fail)?;
        let n = write_traces(rec, &dir)?.len();
        eprintln!("wrote {n} trace files to {}", dir.display());
    }
    if args.constellations {
        let dir = args.out.join("constellations");
        std::fs::create_dir_all(&dir).map_err(io_fail)?;
        for p in rec.points.iter().filter(|p| !p.snapshot.is_empty()) {
            export_constellation(&p.snapshot, &dir.join(format!("{}.csv", artifact_stem(p))))?;
        }
    }
    eprintln!("wrote results to {}", args.out.display());
    Ok(())
}

fn svg(path: &Path, title: &str, x_label: &str, series: &[plot::Series]) {
    match plot::log_plot(path, title, x_label, series) {
        Ok(()) => eprintln!("wrote {}", path.display()),
        Err(e) => eprintln!("plot skipped: {e}"),
    }
}

fn all_diverged(rec: &ExperimentRecord) -> bool {
    let trained: Vec<_> = rec.points.iter().filter(|p| p.kind != "theory").collect();
    !trained.is_empty() && trained.iter().all(|p| p.diverged)
}

fn cmd_sweep(args: RunArgs) -> Result<(), Failure> {
    let cfg = load(&args)?;
    eprintln!("{}: {} points x {} equalizers", cfg.name, cfg.points().len(), cfg.equalizers.len());
    let rec = with_threads(args.threads, || match cfg.sweep.axis {
        SweepAxis::SnrDb => run_snr_sweep(&cfg),
        SweepAxis::LaunchPowerDbm => run_launch_power_sweep(&cfg),
        SweepAxis::PaPowerDbm => run_pa_power_sweep(&cfg),
        SweepAxis::None => run_experiment(&cfg),
    })??;
    summarize(&rec);
    write_outputs(&rec, &args, rec.points.iter().any(|p| !p.trace.is_empty()))?;
    if args.svg {
        let series = plot::group(rec.points.iter().map(|p| (p.equalizer.clone(), p.axis_value, p.ser)));
        svg(&args.out.join("ser.svg"), &cfg.name, axis_label(cfg.sweep.axis), &series);
    }
    if all_diverged(&rec) {
        return Err(Failure::Diverged);
    }
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<(usize, f64)>, Failure> {
    let bad = |c: &str| Failure::Config(format!("invalid grid cell '{c}' (expected BATCHxLR, e.g. 64x1e-2)"));
    let cells: Vec<(usize, f64)> = s
        .split(',')
        .map(str::trim)
        .filter(|c| !c.is_empty())
        .map(|c| {
            let (b, lr) = c.split_once(['x', 'X', '×']).ok_or_else(|| bad(c))?;
            let b: usize = b.trim().parse().map_err(|_| bad(c))?;
            let lr: f64 = lr.trim().parse().map_err(|_| bad(c))?;
            if b == 0 || !lr.is_finite() || lr < 0.0 {
                return Err(bad(c));
            }
            Ok((b, lr))
        })
        .collect::<Result<_, _>>()?;
    if cells.is_empty() {
        return Err(Failure::Config("empty grid".into()));
    }
    Ok(cells)
}

fn cmd_convergence(args: RunArgs, grid: Option<String>) -> Result<(), Failure> {
    let cfg = load(&args)?;
    let grid = match grid {
        Some(g) => parse_grid(&g)?,
        None => CONVERGENCE_GRID.to_vec(),
    };
    eprintln!("{}: {} grid cells x {} equalizers", cfg.name, grid.len(), cfg.equalizers.len());
    let rec = with_threads(args.threads, || run_convergence(&cfg, &grid))??;
    summarize(&rec);
    write_outputs(&rec, &args, true)?;
    if args.svg {
        let series = plot::group(rec.points.iter().flat_map(|p| p.trace.iter().map(|t| (p.equalizer.clone(), t.step as f64, t.ser))));
        svg(&args.out.join("traces.svg"), &cfg.name, "gradient updates", &series);
    }
    if all_diverged(&rec) {
        return Err(Failure::Diverged);
    }
    Ok(())
}

fn cmd_gradcheck(module: &str, fault: Option<FaultArg>) -> Result<(), Failure> {
    let paths = GradPath::parse_list(module)?;
    if paths.is_empty() {
        return Err(Failure::Config("no gradient paths selected".into()));
    }
    let fault = match fault {
        Some(FaultArg::SignFlip) => GradFault::SignFlip,
        None => GradFault::None,
    };
    let cases = run_grad_suite(&paths, fault)?;
    let mut ok = true;
    for p in &paths {
        let worst = cases.iter().filter(|c| c.path == *p).map(|c| c.report.max_rel_err).fold(0.0, f64::max);
        for c in cases.iter().filter(|c| c.path == *p) {
            eprintln!("  {} / {}: max rel err {:.3e}", p.name(), c.case, c.report.max_rel_err);
        }
        let pass = worst < GRAD_TOL;
        ok &= pass;
        println!("path={}\tmax_rel_err={:e}\tpass={}", p.name(), worst, pass);
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Other(format!("gradient check failed (tolerance {GRAD_TOL:e})")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(args) => cmd_sweep(args),
        Command::Convergence { run, grid } => cmd_convergence(run, grid),
        Command::Gradcheck { module, inject_fault } => cmd_gradcheck(&module, inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Diverged) => {
            eprintln!("every point diverged");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
