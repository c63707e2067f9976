//! `homog`: cell problems, effective operators, snapshots and convergence sweeps from a JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use homog_core::config::{self, RunConfig};
use homog_core::HomogError;

/// Exit codes.
const EXIT_VALIDATION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_GATES: u8 = 4;

#[derive(Parser)]
#[command(name = "homog", version, about = "Periodic homogenization laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides HOMOG_OUT_DIR and the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed overriding the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the cell problems; writes cell_data.json, Λ/Λ̃ fields and a summary.
    Cell,
    /// Effective coefficients; writes effective.json.
    Effective,
    /// One (ε, t) snapshot; writes snapshot.csv and evolve.json.
    Evolve,
    /// Run the configured sweep; writes report.json, tables.csv, plot data, timings.json.
    Sweep,
    /// Re-emit CSV/plot data from an existing report.json and print the gate summary.
    Report,
}

enum Failure {
    Homog(HomogError),
    Gates,
}

impl From<HomogError> for Failure {
    fn from(e: HomogError) -> Self {
        Failure::Homog(e)
    }
}

fn load(cli: &Cli) -> Result<RunConfig, HomogError> {
    let path = cli.config.as_deref().ok_or_else(|| HomogError::InvalidInput("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    match cfg {
        Some(c) => c.resolve_out_dir(cli.out.as_deref()),
        None => cli.out.clone().or_else(|| std::env::var_os(config::OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from(config::DEFAULT_OUT_DIR)),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Cell => {
            let cfg = load(cli)?;
            let (out, text) = config::run_cell(&cfg)?;
            let dir = out_dir(cli, Some(&cfg));
            config::write_cell(&out, &text, &dir)?;
            print!("{text}");
            eprintln!("wrote {}", dir.display());
        }
        Command::Effective => {
            let cfg = load(cli)?;
            let (out, text) = config::run_effective(&cfg)?;
            let dir = out_dir(cli, Some(&cfg));
            config::write_effective(&out, &dir)?;
            print!("{text}");
        }
        Command::Evolve => {
            let cfg = load(cli)?;
            let out = config::run_evolve(&cfg)?;
            let dir = out_dir(cli, Some(&cfg));
            config::write_evolve(&out, &dir)?;
            println!("eps {} t {} lambda {} ‖u_eps − u0‖_L2 = {:.6e}", out.eps, out.t, out.lambda, out.l2_difference);
            if let Some(d) = out.contour_max_deviation {
                println!("contour vs eigendecomposition relative deviation {d:.3e}");
            }
            eprintln!("wrote {}", dir.join("snapshot.csv").display());
        }
        Command::Sweep => {
            let cfg = load(cli)?;
            let (report, timings) = config::run_sweep(&cfg)?;
            let dir = out_dir(cli, Some(&cfg));
            config::write_sweep(&report, &timings, &dir)?;
            print!("{}", config::summarize(&report));
            if !report.passed {
                return Err(Failure::Gates);
            }
        }
        Command::Report => {
            // the config is optional here: it only supplies output_dir
            let cfg = match &cli.config {
                Some(_) => Some(load(cli)?),
                None => None,
            };
            let dir = out_dir(cli, cfg.as_ref());
            let (report, text) = config::run_report(&dir)?;
            print!("{text}");
            if !report.passed {
                return Err(Failure::Gates);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be ≥ 1");
            return ExitCode::from(EXIT_VALIDATION);
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global().expect("thread pool configured once");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gates) => {
            eprintln!("error: acceptance gates failed (report written)");
            ExitCode::from(EXIT_GATES)
        }
        Err(Failure::Homog(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_SOLVER })
        }
    }
}
