//! Command-line front end: certify scenarios, cross-check them by seeded
//! simulation, sweep the noise scales, and replay the reference case study.
//!
//! Reports go to stdout (or `--output`); progress and summaries go to
//! stderr. Exit codes: `0` success, `1` input or configuration error, `2`
//! certificate invalid, `3` dominance violation in a sweep, `4` reference
//! reproduction mismatch.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use barriercert::montecarlo::{
    dominance_violations, estimate_detailed, format_trajectory_csv, sweep, MonteCarloConfig,
    Parallelism,
};
use barriercert::repro::{format_repro_table, run_repro};
use barriercert::scenario::{
    certify_scenario, emit_report, emit_sweep_csv, parse_scenario, ReportFormat, Scenario,
    SweepGrid,
};
use barriercert::Error;

const EXIT_INPUT_ERROR: u8 = 1;
const EXIT_INVALID_CERTIFICATE: u8 = 2;
const EXIT_DOMINANCE_VIOLATION: u8 = 3;
const EXIT_REPRO_MISMATCH: u8 = 4;

/// Safety certification for stochastic linear systems with uncertain
/// initial and unsafe sets.
#[derive(Parser)]
#[command(name = "barriercert", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the barrier levels and the safety lower bound for a scenario.
    Certify(CertifyArgs),
    /// Estimate the empirical safety probability by seeded simulation.
    Simulate(SimulateArgs),
    /// Certify and simulate over grids of the three noise scales.
    Sweep(SweepArgs),
    /// Replay the reference case study and compare with the published values.
    PaperRepro(PaperReproArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct IoArgs {
    /// Scenario document to load.
    #[arg(long)]
    scenario: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report encoding.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Master seed for the trajectory streams.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of trajectories.
    #[arg(long, default_value_t = 20000)]
    samples: u64,
    /// Worker threads (default: one per core).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Write every trajectory to this CSV file.
    #[arg(long)]
    dump_trajectories: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Master seed for the trajectory streams (shared by every grid point).
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Trajectories per grid point (default: the scenario's sweep block, or 20000).
    #[arg(long)]
    samples: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Process-noise scales, overriding the scenario's sweep block.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    grid_sigma_w: Vec<f64>,
    /// Initial-set perturbation scales, overriding the scenario's sweep block.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    grid_sigma_i: Vec<f64>,
    /// Unsafe-set perturbation scales, overriding the scenario's sweep block.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    grid_sigma_u: Vec<f64>,
}

#[derive(Args)]
struct PaperReproArgs {
    /// Write the comparison table here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Master seed for the cross-checking simulation.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Trajectories for the cross-checking simulation.
    #[arg(long, default_value_t = 20000)]
    samples: u64,
    /// Worker threads (default: one per core).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Write every simulated trajectory to this CSV file.
    #[arg(long)]
    dump_trajectories: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Certify(args) => run_certify(&args).unwrap_or_else(certify_error_code),
        Command::Simulate(args) => run_simulate(&args).unwrap_or_else(input_error_code),
        Command::Sweep(args) => run_sweep(&args).unwrap_or_else(input_error_code),
        Command::PaperRepro(args) => run_paper_repro(&args).unwrap_or_else(input_error_code),
    };
    ExitCode::from(code)
}

fn log(msg: impl Display) {
    eprintln!("barriercert: {msg}");
}

fn input_error_code(err: Error) -> u8 {
    log(format!("error: {err}"));
    EXIT_INPUT_ERROR
}

/// For `certify`, a rejected certificate matrix is an invalid certificate,
/// not a malformed input.
fn certify_error_code(err: Error) -> u8 {
    let code = match err {
        Error::InvalidCertificate(_) => EXIT_INVALID_CERTIFICATE,
        _ => EXIT_INPUT_ERROR,
    };
    log(format!("error: {err}"));
    code
}

fn load_scenario(path: &Path) -> Result<Scenario, Error> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let scenario = parse_scenario(&text)?;
    log(format!(
        "loaded scenario `{}` from {} (state dimension {}, horizon {})",
        scenario.label,
        path.display(),
        scenario.system.state_dim(),
        scenario.horizon
    ));
    Ok(scenario)
}

fn write_output(target: Option<&PathBuf>, content: &str) -> Result<(), Error> {
    match target {
        Some(path) => {
            fs::write(path, content)?;
            log(format!("report written to {}", path.display()));
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn report_format(arg: FormatArg) -> ReportFormat {
    match arg {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    }
}

fn parallelism(jobs: Option<u64>) -> Parallelism {
    match jobs {
        Some(n) => Parallelism::Fixed(n as usize),
        None => Parallelism::Auto,
    }
}

fn run_certify(args: &CertifyArgs) -> Result<u8, Error> {
    let scenario = load_scenario(&args.io.scenario)?;
    let start = Instant::now();
    let certified = certify_scenario(&scenario)?;
    let report = &certified.report;
    log(format!(
        "certified in {:?}: bound {:.6}, eta {:.6e}, beta {:.6e}, c {:.6e}, valid {}",
        start.elapsed(),
        report.safety_lower_bound,
        report.eta,
        report.beta,
        report.c,
        report.valid
    ));
    for flag in &report.diagnostics {
        log(format!("diagnostic: {flag}"));
    }
    write_output(
        args.io.output.as_ref(),
        &emit_report(report, None, report_format(args.io.format)),
    )?;
    Ok(if report.valid {
        0
    } else {
        EXIT_INVALID_CERTIFICATE
    })
}

fn run_simulate(args: &SimulateArgs) -> Result<u8, Error> {
    let scenario = load_scenario(&args.io.scenario)?;
    let certified = certify_scenario(&scenario)?;
    let mut cfg = MonteCarloConfig::new(args.samples, scenario.horizon, args.seed);
    cfg.parallelism = parallelism(args.jobs);
    let record = args.dump_trajectories.is_some();
    let start = Instant::now();
    let mut out = estimate_detailed(&scenario, &cfg, record, None)?;
    log(format!(
        "simulated {} trajectories with seed {} in {:?}: empirical {:.4}, 95% CI [{:.4}, {:.4}]",
        out.report.samples,
        out.report.master_seed,
        start.elapsed(),
        out.report.p_safe_empirical,
        out.report.ci_low,
        out.report.ci_high
    ));
    if let (Some(path), Some(records)) = (&args.dump_trajectories, &out.records) {
        fs::write(
            path,
            format_trajectory_csv(records, scenario.system.state_dim()),
        )?;
        log(format!(
            "wrote {} trajectories ({} rows) to {}",
            records.len(),
            records.iter().map(|r| r.steps.len()).sum::<usize>(),
            path.display()
        ));
        out.report.trajectory_dump = Some(path.display().to_string());
    }
    write_output(
        args.io.output.as_ref(),
        &emit_report(
            &certified.report,
            Some(&out.report),
            report_format(args.io.format),
        ),
    )?;
    Ok(0)
}

fn run_sweep(args: &SweepArgs) -> Result<u8, Error> {
    let scenario = load_scenario(&args.io.scenario)?;
    let doc_grid = scenario.sweep.clone();
    let pick = |flag: &Vec<f64>, doc: Option<Vec<f64>>, name: &str| -> Result<Vec<f64>, Error> {
        if !flag.is_empty() {
            Ok(flag.clone())
        } else {
            doc.ok_or_else(|| Error::Validation {
                path: format!("sweep.{name}"),
                reason: format!(
                    "no grid for {name}: pass --grid-{} or add a sweep block to the scenario",
                    name.replace('_', "-")
                ),
            })
        }
    };
    let grid = SweepGrid {
        sigma_w: pick(
            &args.grid_sigma_w,
            doc_grid.as_ref().map(|g| g.sigma_w.clone()),
            "sigma_w",
        )?,
        sigma_i: pick(
            &args.grid_sigma_i,
            doc_grid.as_ref().map(|g| g.sigma_i.clone()),
            "sigma_i",
        )?,
        sigma_u: pick(
            &args.grid_sigma_u,
            doc_grid.as_ref().map(|g| g.sigma_u.clone()),
            "sigma_u",
        )?,
        samples: None,
    };
    let samples = args
        .samples
        .or(doc_grid.as_ref().and_then(|g| g.samples))
        .unwrap_or(20000);
    let mut cfg = MonteCarloConfig::new(samples, scenario.horizon, args.seed);
    cfg.parallelism = parallelism(args.jobs);
    log(format!(
        "sweeping {} x {} x {} grid points with {} trajectories each (seed {})",
        grid.sigma_w.len(),
        grid.sigma_i.len(),
        grid.sigma_u.len(),
        samples,
        args.seed
    ));
    let start = Instant::now();
    let rows = sweep(&scenario, &grid, &cfg)?;
    let violations = dominance_violations(&rows, 0.001);
    log(format!(
        "swept {} rows in {:?}: {} violation(s)",
        rows.len(),
        start.elapsed(),
        violations.len()
    ));
    for &i in &violations {
        let r = &rows[i];
        log(format!(
            "dominance violation at sigma_w={}, sigma_i={}, sigma_u={}: ci_high {:.6} < bound {:.6}",
            r.sigma_w, r.sigma_i, r.sigma_u, r.ci_high, r.bound
        ));
    }
    write_output(args.io.output.as_ref(), &emit_sweep_csv(&rows))?;
    Ok(if violations.is_empty() {
        0
    } else {
        EXIT_DOMINANCE_VIOLATION
    })
}

fn run_paper_repro(args: &PaperReproArgs) -> Result<u8, Error> {
    let start = Instant::now();
    let report = run_repro()?;
    log(format!(
        "replayed the reference case study in {:?}: {}",
        start.elapsed(),
        if report.all_pass {
            "all quantities reproduce"
        } else {
            "MISMATCH against the published values"
        }
    ));

    let scenario = barriercert::repro::reference_scenario();
    let mut cfg = MonteCarloConfig::new(args.samples, scenario.horizon, args.seed);
    cfg.parallelism = parallelism(args.jobs);
    let record = args.dump_trajectories.is_some();
    let sim_start = Instant::now();
    let out = estimate_detailed(&scenario, &cfg, record, None)?;
    log(format!(
        "cross-check: {} trajectories with seed {} in {:?}: empirical {:.4}, 95% CI [{:.4}, {:.4}]",
        out.report.samples,
        out.report.master_seed,
        sim_start.elapsed(),
        out.report.p_safe_empirical,
        out.report.ci_low,
        out.report.ci_high
    ));
    if let (Some(path), Some(records)) = (&args.dump_trajectories, &out.records) {
        fs::write(
            path,
            format_trajectory_csv(records, scenario.system.state_dim()),
        )?;
        log(format!(
            "wrote {} trajectories ({} rows) to {}",
            records.len(),
            records.iter().map(|r| r.steps.len()).sum::<usize>(),
            path.display()
        ));
    }

    write_output(args.output.as_ref(), &format_repro_table(&report))?;
    Ok(if report.all_pass {
        0
    } else {
        EXIT_REPRO_MISMATCH
    })
}
