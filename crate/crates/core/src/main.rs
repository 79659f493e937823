//! `dp-bilevel`: release differentially private demand vectors that
//! stay feasible and near-optimal for a DC optimal power flow case.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dp_bilevel::cli_io::{
    cmd_benchmark, cmd_obfuscate, cmd_probe_monotonicity, cmd_solve, exit, FTildeMode, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "dp-bilevel",
    about = "Differentially private demand obfuscation with bilevel repair",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// MATPOWER-subset case file.
    #[arg(long)]
    case: PathBuf,

    /// Output directory for generated files.
    #[arg(long, default_value = ".")]
    out: PathBuf,

    /// Machine-readable output where supported.
    #[arg(long)]
    json: bool,

    /// Dump every generated subproblem into this directory.
    #[arg(long, value_name = "DIR")]
    dump_lp: Option<PathBuf>,
}

#[derive(Args)]
struct MechanismArgs {
    /// Indistinguishability level, per-unit.
    #[arg(long)]
    alpha: f64,

    /// Privacy level.
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,

    /// Fidelity half-width, absolute cost units.
    #[arg(long)]
    beta: Option<f64>,

    /// Fidelity half-width as a percentage of the cost target.
    #[arg(long)]
    beta_pct: Option<f64>,

    /// Bisection tolerance on the squared distance budget.
    #[arg(long, default_value_t = 1e-3)]
    eta: f64,

    /// Base seed; run k uses seed + k.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Cap on push-up solves per run.
    #[arg(long, default_value_t = 3000)]
    max_oracle_calls: usize,

    /// Cost target override (defaults to the follower value at the
    /// case's own demands).
    #[arg(long)]
    f_tilde: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the follower at the case's own demands.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Obfuscate the case demands and write released case files.
    Obfuscate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mechanism: MechanismArgs,
        /// Number of independent seeded runs.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Run the seeded benchmark protocol and write report.csv.
    Benchmark {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mechanism: MechanismArgs,
        /// Number of independent seeded runs.
        #[arg(long, default_value_t = 50)]
        runs: usize,
    },
    /// Emit the push-up cost curve over a budget grid.
    ProbeMonotonicity {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        mechanism: MechanismArgs,
        /// Ascending squared-distance budgets, comma separated.
        #[arg(long, value_name = "a,b,c")]
        delta_grid: String,
    },
}

fn config(
    common: CommonArgs,
    mechanism: Option<MechanismArgs>,
    runs: usize,
    delta_grid: Option<Vec<f64>>,
) -> RunConfig {
    let mech = mechanism.unwrap_or(MechanismArgs {
        alpha: 1.0,
        epsilon: 1.0,
        beta: Some(1.0),
        beta_pct: None,
        eta: 1e-3,
        seed: 0,
        max_oracle_calls: 3000,
        f_tilde: None,
    });
    RunConfig {
        case_path: common.case,
        epsilon: mech.epsilon,
        alpha: mech.alpha,
        beta_abs: mech.beta,
        beta_percent: mech.beta_pct,
        eta: mech.eta,
        max_oracle_calls: mech.max_oracle_calls,
        seed: mech.seed,
        runs,
        f_tilde_mode: match mech.f_tilde {
            Some(v) => FTildeMode::Provided(v),
            None => FTildeMode::FromOriginalSolve,
        },
        delta_grid,
        output_dir: common.out,
        dump_lp: common.dump_lp,
        json: common.json,
    }
}

fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad delta-grid entry '{t}'"))
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("DP_BILEVEL_LOG", "error"),
    )
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::USAGE,
            };
            let _ = err.print();
            return ExitCode::from(code as u8);
        }
    };

    let code = match cli.command {
        Command::Solve { common } => {
            let cfg = config(common, None, 1, None);
            cmd_solve(&cfg)
        }
        Command::Obfuscate {
            common,
            mechanism,
            runs,
        } => {
            let cfg = config(common, Some(mechanism), runs, None);
            cmd_obfuscate(&cfg)
        }
        Command::Benchmark {
            common,
            mechanism,
            runs,
        } => {
            let cfg = config(common, Some(mechanism), runs, None);
            cmd_benchmark(&cfg)
        }
        Command::ProbeMonotonicity {
            common,
            mechanism,
            delta_grid,
        } => match parse_grid(&delta_grid) {
            Ok(grid) => {
                let cfg = config(common, Some(mechanism), 1, Some(grid));
                cmd_probe_monotonicity(&cfg)
            }
            Err(msg) => {
                eprintln!("dp-bilevel: {msg}");
                exit::USAGE
            }
        },
    };
    ExitCode::from(code as u8)
}
