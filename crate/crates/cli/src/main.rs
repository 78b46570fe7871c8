//! Operator surface: validate | run | compare | audit, driven by one TOML
//! config. Exit codes are machine-parsable: 0 success, 1 validation
//! failure, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ldpopt::config::{load, AppConfig, Overrides};
use ldpopt::engine::{self, RunConfig};
use ldpopt::error::{Error, Result};
use ldpopt::output;
use ldpopt::privacy;
use ldpopt::problems::{DataSource, ProblemKind};
use ldpopt::topology;

#[derive(Parser)]
#[command(name = "ldpopt", about = "Privacy-preserving distributed online optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Path to the TOML configuration.
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of rounds.
    #[arg(long)]
    horizon: Option<usize>,
    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the topology and schedule constraints of a configuration.
    Validate(CommonArgs),
    /// Execute a run and write trace, message log and final states.
    Run(CommonArgs),
    /// Run quantized and unquantized with the same seed, side by side.
    Compare(CommonArgs),
    /// Twin-run privacy audit with empirical and analytic accounting.
    Audit(CommonArgs),
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn load_app(args: &CommonArgs) -> Result<AppConfig> {
    load(
        &args.config,
        &Overrides {
            seed: args.seed,
            horizon: args.horizon,
            out_dir: args.out_dir.clone(),
        },
    )
}

/// Build the run context, reusing the cached offline optimum when the
/// corpus fingerprint matches, and caching a fresh solve.
fn prepare_with_cache(run: &RunConfig, out_dir: &std::path::Path) -> Result<engine::RunContext> {
    if let (ProblemKind::Logistic, DataSource::Corpus(corpus)) =
        (&run.problem.kind, &run.problem.source)
    {
        let optimum = match output::load_cached_optimum(out_dir, corpus.fingerprint()) {
            Some(cached) => cached,
            None => {
                let solved = ldpopt::problems::solve_logistic_optimum(corpus, 1e-10, 100_000)?;
                output::store_cached_optimum(out_dir, &solved)?;
                solved
            }
        };
        engine::prepare(run, Some(&optimum))
    } else {
        engine::prepare(run, None)
    }
}

fn cmd_validate(args: &CommonArgs) -> Result<bool> {
    let app = load_app(args)?;
    let report = topology::validate(&app.run.weights);
    print!("{report}");
    match app.run.validate() {
        Ok(()) => {
            println!("schedules: all constraints satisfied");
            println!("config: valid");
            Ok(true)
        }
        Err(e) => {
            println!("{e}");
            println!("config: invalid");
            Ok(false)
        }
    }
}

fn cmd_run(args: &CommonArgs) -> Result<()> {
    let app = load_app(args)?;
    app.run.validate()?;
    std::fs::create_dir_all(&app.out_dir)?;
    let ctx = prepare_with_cache(&app.run, &app.out_dir)?;

    let trace_path = app.out_dir.join("trace.csv");
    let messages_path = app.out_dir.join("messages.csv");
    let mut observer = output::FileObserver::create(&trace_path, Some(&messages_path))?;
    let outcome = engine::run_observed(&app.run, &ctx, &mut observer)?;
    output::write_final_states(&app.out_dir.join("final_states.csv"), &outcome.final_state)?;

    let last = outcome.trace.last().expect("at least the initial row");
    println!("run complete: T={} rounds, {} trace rows", app.run.horizon, outcome.trace.rows.len());
    println!(
        "final: gap={:e} grad_norm={:e} cons_theta={:e} max_delta={:e}",
        last.gap, last.grad_norm, last.cons_theta, last.max_delta
    );
    if let Some(acc) = outcome.final_accuracy {
        println!("held-out accuracy: {acc:.4}");
    }
    println!("outputs in {}", app.out_dir.display());
    Ok(())
}

fn cmd_compare(args: &CommonArgs) -> Result<()> {
    let app = load_app(args)?;
    app.run.validate()?;
    std::fs::create_dir_all(&app.out_dir)?;
    let ctx = prepare_with_cache(&app.run, &app.out_dir)?;

    let outcome = engine::compare(&app.run, &ctx)?;
    let (trace_path, summary_path) = output::write_compare(&app.out_dir, &outcome)?;

    let s = &outcome.summary;
    println!(
        "final gap: quantized {:e} vs baseline {:e} (difference {:e})",
        s.final_gap_quantized, s.final_gap_baseline, s.gap_difference
    );
    if let (Some(q), Some(b), Some(d)) =
        (s.accuracy_quantized, s.accuracy_baseline, s.accuracy_difference)
    {
        println!("held-out accuracy: quantized {q:.4} vs baseline {b:.4} (difference {d:+.4})");
    }
    println!("side-by-side trace: {}", trace_path.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}

fn cmd_audit(args: &CommonArgs) -> Result<()> {
    let app = load_app(args)?;
    app.run.validate()?;
    std::fs::create_dir_all(&app.out_dir)?;
    let ctx = prepare_with_cache(&app.run, &app.out_dir)?;

    let outcome = privacy::audit_run(&app.run, &ctx, &app.audit)?;
    output::write_trace(&app.out_dir.join("trace.csv"), &outcome.trace)?;
    let (ledger_path, summary_path) = output::write_audit(&app.out_dir, &outcome)?;

    println!(
        "constants: {} (c_z={:e}, p_z={:e}), gradient bound d_l={:e}",
        outcome.constants_provenance, outcome.c_z, outcome.p_z, outcome.d_l
    );
    for agent in &outcome.agents {
        println!(
            "agent {}: perturbed round {}, (0, {:e})-ldp, budget check {}",
            agent.series.agent,
            agent.series.perturbation_round,
            agent.accumulation.total,
            if agent.budget.satisfied { "satisfied" } else { "not satisfied" }
        );
    }
    // Trajectory summary of the worst-case budget.
    let deltas: Vec<(usize, f64)> = outcome
        .trace
        .rows
        .iter()
        .map(|r| (r.t, r.max_delta))
        .collect();
    if let (Some(first), Some(mid), Some(last)) = (
        deltas.first(),
        deltas.get(deltas.len() / 2),
        deltas.last(),
    ) {
        println!(
            "max_i delta^i trajectory: t={} -> {:e}, t={} -> {:e}, t={} -> {:e}",
            first.0, first.1, mid.0, mid.1, last.0, last.1
        );
    }
    println!(
        "max_i delta^i = {:e} ({})",
        outcome.max_delta,
        if outcome.max_delta < 1.0 { "within budget" } else { "budget exceeded" }
    );
    println!("ledger: {}", ledger_path.display());
    println!("summary: {}", summary_path.display());
    Ok(())
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Structural(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(args) => match cmd_validate(args) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_VALIDATION),
            Err(e) => Err(e),
        },
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Audit(args) => cmd_audit(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
