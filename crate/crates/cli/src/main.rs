//! `ness`: steady states, transport sweeps, and scaling fits for open
//! fermionic networks, from the command line.
//!
//! Results go to stdout as JSON (or CSV where noted); diagnostics go to
//! stderr. On failure a single JSON object `{"error", "message", ...}` is
//! printed to stderr and the exit code is 2 for input problems, 1 for
//! runtime failures.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ness_core::dynamics::{integrate, trajectory_to_csv, StepControl};
use ness_core::model::dephasing_pattern;
use ness_core::scaling::{
    fit_sweep_table, large_system_preset, read_sweep_table, run_sweep, small_system_preset,
    ChainParams, SweepPlan, DEFAULT_ALPHA_MAX_FIT,
};
use ness_core::{
    build_long_range_chain, load_model, save_model, solve_steady_state, transport_report, Error,
    NetworkModel, Result, SolveOptions,
};

#[derive(Parser)]
#[command(
    name = "ness",
    version,
    about = "Steady-state transport in open quadratic fermionic networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one model for its steady state and report transport.
    Solve(SolveArgs),
    /// Run a resistance-versus-size sweep over an (alpha, N) grid.
    Sweep(SweepArgs),
    /// Fit a sweep table: per-alpha exponents plus the transition point.
    Fit(FitArgs),
    /// Integrate the equation of motion and emit the trajectory as CSV.
    Dynamics(DynamicsArgs),
    /// Check a model description and report violations.
    Validate(ValidateArgs),
}

/// Where the model comes from: a JSON file or an inline chain.
#[derive(Args)]
struct ModelSource {
    /// Model description file (JSON).
    #[arg(long, value_name = "FILE", conflicts_with = "chain_sites")]
    model: Option<PathBuf>,
    /// Build a boundary-driven long-range chain with this many sites.
    #[arg(long, value_name = "N")]
    chain_sites: Option<usize>,
    /// Chain hopping amplitude.
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    /// Chain hopping range exponent.
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    /// Uniform onsite dephasing rate.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    /// Injection rate on the first site.
    #[arg(long, default_value_t = 1.0)]
    gamma_in: f64,
    /// Extraction rate on the last site.
    #[arg(long, default_value_t = 1.0)]
    gamma_out: f64,
}

impl ModelSource {
    fn build(&self) -> Result<NetworkModel> {
        match (&self.model, self.chain_sites) {
            (Some(path), _) => load_model(path),
            (None, Some(n)) => {
                build_long_range_chain(n, self.v, self.alpha, self.gamma_in, self.gamma_out, self.sigma)
            }
            (None, None) => Err(Error::InvalidInput(
                "provide either --model FILE or --chain-sites N".to_string(),
            )),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Worker threads for formation (default: NESS_WORKERS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Write site occupations to this CSV file.
    #[arg(long, value_name = "FILE")]
    occupations: Option<PathBuf>,
    /// Write the solved model in normalized JSON form.
    #[arg(long, value_name = "FILE")]
    emit_model: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Predefined grid; conflicts with explicit grid flags.
    #[arg(long, value_parser = ["small-system", "large-system"])]
    preset: Option<String>,
    /// Alphas as "start:stop:step" or a comma list, e.g. "1.0:2.0:0.05".
    #[arg(long)]
    alphas: Option<String>,
    /// Comma list of chain sizes, e.g. "512,645,813,1024".
    #[arg(long)]
    sizes: Option<String>,
    /// Chain hopping amplitude (default 1).
    #[arg(long)]
    v: Option<f64>,
    /// Uniform onsite dephasing rate (default 1000).
    #[arg(long)]
    sigma: Option<f64>,
    /// Injection rate (default 1).
    #[arg(long)]
    gamma_in: Option<f64>,
    /// Extraction rate (default 1).
    #[arg(long)]
    gamma_out: Option<f64>,
    /// Output table; written incrementally, one row per solved point.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Keep completed rows from an existing table and retry failed ones.
    #[arg(long)]
    resume: bool,
    /// Worker threads per solve (default: NESS_WORKERS or all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Print the planned grid as JSON and exit without solving.
    #[arg(long)]
    plan_only: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Sweep table produced by `ness sweep`.
    #[arg(long, value_name = "FILE")]
    table: PathBuf,
    /// Upper edge (exclusive) of the alpha window for the transition fit.
    #[arg(long, default_value_t = DEFAULT_ALPHA_MAX_FIT)]
    alpha_max_fit: f64,
}

#[derive(Args)]
struct DynamicsArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Integration end time.
    #[arg(long)]
    t_final: f64,
    /// Number of recorded states, endpoints included.
    #[arg(long, default_value_t = 33)]
    snapshots: usize,
    /// Step safety factor; the step is safety divided by the fastest rate.
    #[arg(long, default_value_t = 0.1)]
    safety: f64,
    /// Hard cap on the step size.
    #[arg(long)]
    max_step: Option<f64>,
    /// Uniform initial occupation of every site.
    #[arg(long, default_value_t = 0.0)]
    initial_occupation: f64,
    /// Trajectory CSV destination (default: stdout).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Model description file (JSON).
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Also write the model back in normalized dense JSON form.
    #[arg(long, value_name = "FILE")]
    emit_model: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => run_solve(args),
        Command::Sweep(args) => run_sweep_cmd(args),
        Command::Fit(args) => run_fit(args),
        Command::Dynamics(args) => run_dynamics(args),
        Command::Validate(args) => run_validate(args),
    };
    if let Err(e) = outcome {
        // Downstream consumers like `head` closing the pipe are not errors.
        if is_broken_pipe(&e) {
            return;
        }
        let payload = match &e {
            Error::InvalidModel(violations) => json!({
                "error": e.kind(),
                "message": e.to_string(),
                "violations": violations,
            }),
            _ => json!({ "error": e.kind(), "message": e.to_string() }),
        };
        eprintln!("{payload}");
        std::process::exit(e.exit_code());
    }
}

/// Print a JSON value to stdout through the fallible path, so a closed
/// pipe surfaces as an error instead of a panic.
fn emit<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(serde_json::to_string_pretty(value)?.as_bytes())?;
    out.write_all(b"\n")?;
    Ok(())
}

fn is_broken_pipe(e: &Error) -> bool {
    match e {
        Error::Io(io) => io.kind() == std::io::ErrorKind::BrokenPipe,
        Error::Csv(csv) => matches!(
            csv.kind(),
            csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe
        ),
        _ => false,
    }
}

fn solve_options(workers: Option<usize>) -> SolveOptions {
    let mut opts = SolveOptions::default();
    if workers.is_some() {
        opts.workers = workers;
    }
    opts
}

fn write_occupations(path: &Path, occ: &[f64]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "site,occupation")?;
    for (i, n) in occ.iter().enumerate() {
        writeln!(file, "{i},{n:.17e}")?;
    }
    Ok(())
}

fn run_solve(args: SolveArgs) -> Result<()> {
    let model = args.source.build()?;
    let opts = solve_options(args.workers);
    let start = Instant::now();
    let solution = solve_steady_state(&model, &opts)?;
    let wall_seconds = start.elapsed().as_secs_f64();

    // Transport only makes sense for boundary-driven models with a
    // nonzero current; anything else is reported as skipped, not fatal.
    let (transport, skipped) = match transport_report(&model, &solution.correlation) {
        Ok(report) => {
            if let Some(path) = &args.occupations {
                write_occupations(path, &report.occupations)?;
            }
            let value = json!({
                "current_in": report.current_in,
                "current_out": report.current_out,
                "conservation_defect": (report.current_in - report.current_out).abs(),
                "resistance": report.resistance,
            });
            (value, None)
        }
        Err(e @ (Error::NotBoundaryDriven | Error::ZeroCurrent { .. })) => {
            if let Some(path) = &args.occupations {
                let occ = ness_core::occupations(&solution.correlation);
                write_occupations(path, occ.as_slice().unwrap())?;
            }
            (serde_json::Value::Null, Some(e.kind()))
        }
        Err(e) => return Err(e),
    };

    if let Some(path) = &args.emit_model {
        save_model(path, &model)?;
    }

    let mut output = json!({
        "report": solution.report,
        "wall_seconds": wall_seconds,
        "transport": transport,
    });
    if let Some(kind) = skipped {
        output["transport_skipped"] = json!(kind);
    }
    emit(&output)?;
    Ok(())
}

fn parse_alphas(text: &str) -> Result<Vec<f64>> {
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidInput(format!("bad alpha value: {s:?}")))
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "alpha range must be start:stop:step, got {text:?}"
            )));
        }
        let (start, stop, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if !(step > 0.0 && stop >= start) {
            return Err(Error::InvalidInput(format!(
                "alpha range needs stop >= start and step > 0, got {text:?}"
            )));
        }
        // Half-step slack keeps the inclusive endpoint despite rounding.
        let count = ((stop - start) / step + 0.5).floor() as usize + 1;
        Ok((0..count).map(|k| start + k as f64 * step).collect())
    } else {
        text.split(',').map(parse).collect()
    }
}

fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad size value: {s:?}")))
        })
        .collect()
}

fn build_plan(args: &SweepArgs) -> Result<SweepPlan> {
    if let Some(preset) = &args.preset {
        let custom = args.alphas.is_some()
            || args.sizes.is_some()
            || args.v.is_some()
            || args.sigma.is_some()
            || args.gamma_in.is_some()
            || args.gamma_out.is_some();
        if custom {
            return Err(Error::InvalidInput(
                "--preset fixes the grid; drop the explicit grid flags".to_string(),
            ));
        }
        return Ok(match preset.as_str() {
            "small-system" => small_system_preset(),
            _ => large_system_preset(),
        });
    }
    let alphas = match &args.alphas {
        Some(text) => parse_alphas(text)?,
        None => return Err(Error::InvalidInput("provide --preset or --alphas".to_string())),
    };
    let sizes = match &args.sizes {
        Some(text) => parse_sizes(text)?,
        None => return Err(Error::InvalidInput("provide --preset or --sizes".to_string())),
    };
    let defaults = ChainParams::default();
    Ok(SweepPlan {
        alphas,
        sizes,
        chain: ChainParams {
            v: args.v.unwrap_or(defaults.v),
            sigma: args.sigma.unwrap_or(defaults.sigma),
            gamma_in: args.gamma_in.unwrap_or(defaults.gamma_in),
            gamma_out: args.gamma_out.unwrap_or(defaults.gamma_out),
        },
    })
}

fn run_sweep_cmd(args: SweepArgs) -> Result<()> {
    let plan = build_plan(&args)?;
    if args.plan_only {
        emit(&plan)?;
        return Ok(());
    }
    let opts = solve_options(args.workers);
    let rows = run_sweep(&plan, &opts, args.out.as_deref(), args.resume)?;
    let ok = rows.iter().filter(|r| r.status == "ok").count();
    let summary = json!({
        "points": rows.len(),
        "ok": ok,
        "failed": rows.len() - ok,
        "out": args.out,
    });
    emit(&summary)?;
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<()> {
    let rows = read_sweep_table(&args.table)?;
    let analysis = fit_sweep_table(&rows, args.alpha_max_fit)?;
    emit(&analysis)?;
    Ok(())
}

fn run_dynamics(args: DynamicsArgs) -> Result<()> {
    let model = args.source.build()?;
    if !(0.0..=1.0).contains(&args.initial_occupation) {
        return Err(Error::InvalidInput(format!(
            "initial occupation must lie in [0, 1], got {}",
            args.initial_occupation
        )));
    }
    let c0 = ness_core::uniform_initial_state(model.n_modes(), args.initial_occupation);
    let control = StepControl {
        safety: args.safety,
        max_step: args.max_step,
        n_snapshots: args.snapshots,
    };
    let trajectory = integrate(&model, &c0, args.t_final, &control)?;
    match &args.out {
        Some(path) => {
            let file = std::io::BufWriter::new(std::fs::File::create(path)?);
            trajectory_to_csv(&trajectory, file)?;
            let summary = json!({
                "snapshots": trajectory.times.len(),
                "final_residual": trajectory.residual_norms.last(),
                "out": path,
            });
            emit(&summary)?;
        }
        None => {
            trajectory_to_csv(&trajectory, std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn run_validate(args: ValidateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    if let Some(path) = &args.emit_model {
        save_model(path, &model)?;
    }
    let pattern = dephasing_pattern(&model.sigma.view(), 0.0);
    let summary = json!({
        "status": "ok",
        "n_modes": model.n_modes(),
        "n_sigma": pattern.n_sigma(),
        "pattern": pattern.kind,
    });
    emit(&summary)?;
    Ok(())
}
