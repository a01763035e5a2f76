use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use physid_cli::{cmd_generate, cmd_gradcheck, cmd_identify, cmd_sweep, CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "physid", version, about = "Physical parameter and initial-state identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and its truth sidecar.
    Generate(Common),
    /// Identify parameters and initial state.
    Identify(Common),
    /// Compare analytic, naive and finite-difference gradients.
    Gradcheck(Common),
    /// Identify over several horizons.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated horizons; overrides `horizons`.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
    },
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(common) => {
            let (cfg, out) = load(&common)?;
            let res = cmd_generate(&cfg, &out)?;
            println!("wrote {} rows to {}", res.rows, res.data_path.display());
            println!("wrote {}", res.truth_path.display());
        }
        Command::Identify(common) => {
            let (cfg, out) = load(&common)?;
            print_json(&cmd_identify(&cfg, &out)?);
        }
        Command::Gradcheck(common) => {
            let (cfg, out) = load(&common)?;
            print_json(&cmd_gradcheck(&cfg, &out)?);
        }
        Command::Sweep { common, horizons } => {
            let (cfg, out) = load(&common)?;
            let horizons = horizons.unwrap_or_else(|| cfg.horizons.clone());
            let rows = cmd_sweep(&cfg, &horizons, &out)?;
            println!("{}", physid_cli::commands::SWEEP_HEADER);
            for row in rows {
                println!("{}", row.to_csv());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("physid: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
