use clap::{Parser, Subcommand};
use lsm_sweep::cli::{cmd_chart, cmd_check, cmd_oracle, cmd_run, load_scenario, ChartRequest, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Quasi-static elasto-plastic lattice spring simulator.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print dimensions and structural checks of a scenario.
    Check { file: PathBuf },
    /// Run a scenario and write its CSV trajectory and SVG snapshots.
    Run {
        file: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Seed of a perturbed initial guess.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample the per-step map of a two-spring scenario and locate its fixed points.
    Chart {
        file: PathBuf,
        #[arg(long)]
        step: usize,
        /// x0,y0,x1,y1
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        region: Vec<f64>,
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// Print closed-form plastic rates of a toy system.
    Oracle {
        #[arg(value_parser = lsm_sweep::cli::ORACLE_CASES)]
        case: String,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    let io = |e| CliError::Io { path: PathBuf::from("<stdout>"), source: e };
    match args.command {
        Command::Check { file } => {
            let scenario = load_scenario(&file)?;
            if !cmd_check(&scenario, &mut stdout).map_err(io)? {
                return Err(CliError::Assumptions(Vec::new()));
            }
        }
        Command::Run { file, out, seed } => {
            let mut scenario = load_scenario(&file)?;
            if let Some(seed) = seed {
                scenario = scenario.with_seed(seed);
            }
            cmd_run(&scenario, &out, &mut stdout)?;
        }
        Command::Chart { file, step, region, grid } => {
            let region: [f64; 4] = region
                .try_into()
                .map_err(|_| CliError::Usage("--region takes four values x0,y0,x1,y1".into()))?;
            let scenario = load_scenario(&file)?;
            cmd_chart(&scenario, &ChartRequest { step, region, grid }, &mut stdout)?;
        }
        Command::Oracle { case } => cmd_oracle(&case, &mut stdout)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Assumptions(list)) if list.is_empty() => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
