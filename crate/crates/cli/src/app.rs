//! Argument parsing and dispatch. Exit codes: 0 success, 1 audit failure, 2 invalid config.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::acceptance;
use crate::commands::{self, Axis, Report};
use crate::config::{Prepared, RunConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "nlad", version, about = "Nonlocal adhesion with degenerate diffusion: runs, sweeps and audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: Global,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps and residual evaluation.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Seed of randomized checks; overrides `audit.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Eps,
    Dt,
    H,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the configured problem and write snapshots, diagnostics and a manifest.
    Run,
    /// Run a schedule along one axis and tabulate Cauchy distances.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, default_value_t = 2.0)]
        factor: f64,
        #[arg(long, default_value_t = 3)]
        count: usize,
    },
    /// Box-counting dimension of the audit set.
    Dim,
    /// Properties of the lattice cutoff family around the audit set.
    Cutoff,
    /// Regularization guarantees over the ε schedule.
    TensorCheck,
    /// Weak residuals of a stored run (`--trajectory`) or of a fresh run of the config.
    WeakResidual {
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// The full acceptance suite.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Sweep { .. } => "sweep",
            Command::Dim => "dim",
            Command::Cutoff => "cutoff",
            Command::TensorCheck => "tensor-check",
            Command::WeakResidual { .. } => "weak-residual",
            Command::Verify => "verify",
        }
    }
}

fn load(global: &Global) -> Result<Prepared, CliError> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    RunConfig::load(path)?.prepare()
}

fn emit(report: &Report) -> bool {
    print!("{}", report.table);
    for l in &report.lines {
        println!("{l}");
    }
    println!("{}", if report.passed { "PASS" } else { "FAIL" });
    report.passed
}

fn audit(global: &Global, name: &str, f: impl FnOnce(&Prepared) -> Result<Report, CliError>) -> Result<bool, CliError> {
    let p = load(global)?;
    let report = f(&p)?;
    if let Some(dir) = global.out.as_deref().or(p.config.output.as_deref()) {
        report.write(dir, name, &p)?;
    }
    Ok(emit(&report))
}

fn dispatch(cli: &Cli) -> Result<bool, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Run => {
            let p = load(g)?;
            let dir = p.output_dir(g.out.as_deref(), "run");
            for w in &p.admissibility.warnings {
                eprintln!("warning: {w}");
            }
            let traj = commands::run(&p, &dir)?;
            let last = traj.rows.last().expect("initial row");
            println!(
                "{} steps to t = {}; mass {} -> {}; output {}",
                traj.steps(),
                traj.t_final(),
                traj.rows[0].mass,
                last.mass,
                dir.display()
            );
            Ok(true)
        }
        Command::Sweep { axis, factor, count } => {
            let p = load(g)?;
            let axis = match axis {
                AxisArg::Eps => Axis::Eps,
                AxisArg::Dt => Axis::Dt,
                AxisArg::H => Axis::H,
            };
            let dir = p.output_dir(g.out.as_deref(), "sweep");
            let workers = g.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let s = commands::sweep(&p, axis, *factor, *count, workers, Some(&dir))?;
            Ok(emit(&s.report))
        }
        Command::Dim => audit(g, "dim", commands::dim),
        Command::Cutoff => audit(g, "cutoff", |p| {
            commands::cutoff(p, g.seed.unwrap_or(p.config.audit.seed))
        }),
        Command::TensorCheck => audit(g, "tensor-check", commands::tensor_check),
        Command::WeakResidual { trajectory } => {
            let config = match (&g.config, trajectory) {
                (Some(_), None) => Some(load(g)?),
                _ => None,
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(g.workers.unwrap_or(0))
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            let (p, report) = pool.install(|| commands::weak_residual_cmd(config.as_ref(), trajectory.as_deref()))?;
            if let Some(dir) = g.out.as_deref() {
                report.write(dir, "weak-residual", &p)?;
            }
            Ok(emit(&report))
        }
        Command::Verify => verify(g.out.as_deref(), g.seed.unwrap_or_else(acceptance::default_seed)),
    }
}

fn verify(out: Option<&Path>, seed: u64) -> Result<bool, CliError> {
    let work = acceptance::scratch_dir(out);
    std::fs::create_dir_all(&work)?;
    let results = acceptance::run_all(&work, seed, |c| println!("{}", c.line()));
    let mut all = results.iter().all(|c| c.passed);
    for c in acceptance::negative_controls(seed) {
        println!("[{}] control: {} ({})", if c.caught { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.caught;
    }
    let mut csv = String::from("id,name,passed,seconds\n");
    for c in &results {
        csv.push_str(&format!("{},{},{},{:.3}\n", c.id, c.name, c.passed, c.elapsed.as_secs_f64()));
    }
    std::fs::write(work.join("verify.csv"), csv)?;
    if out.is_none() {
        let _ = std::fs::remove_dir_all(&work);
    }
    let failing: Vec<String> = results.iter().filter(|c| !c.passed).map(|c| format!("{} {}", c.id, c.name)).collect();
    if failing.is_empty() && all {
        println!("PASS: all {} criteria", results.len());
    } else {
        println!("FAIL: {}", if failing.is_empty() { "negative control".to_string() } else { failing.join("; ") });
    }
    Ok(all)
}

/// Runs a parsed command line and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let record = e.record(cli.command.name());
            eprintln!("{}", serde_json::to_string(&record).expect("plain record"));
            let dir = cli.global.out.clone().or_else(|| {
                cli.global
                    .config
                    .as_deref()
                    .and_then(|p| RunConfig::load(p).ok())
                    .and_then(|c| c.output)
            });
            if let Some(dir) = dir {
                let _ = record.write(&dir);
            }
            record.exit_code
        }
    }
}
