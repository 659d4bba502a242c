use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use expertnet::harness::{self, dumps, snapshot, ExperimentConfig, Session};
use expertnet::{Error, Result};

#[derive(Parser)]
#[command(name = "expertnet", version, about = "Run and inspect hierarchies of Experts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config; writes metrics, dumps and a snapshot.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Prime a snapshot on real input, then feed its predictions back.
    Replay {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 0)]
        prime: u64,
        /// Closed-loop ticks to generate.
        #[arg(long, default_value_t = 100)]
        steps: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Write center, graph and usage dumps of a snapshot.
    Inspect {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Validate a config without running it.
    CheckConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(config: &PathBuf, seed: Option<u64>, out: Option<PathBuf>, steps: Option<u64>) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(o) = out {
        c.out_dir = o;
    }
    if let Some(n) = steps {
        c.steps = n;
    }
    Ok(c)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out, steps } => {
            let c = load(&config, seed, out, steps)?;
            let s = harness::run(&c)?;
            println!(
                "ran {} steps, total reward {}, events per expert {:?}; artifacts in {}",
                s.steps,
                s.total_reward,
                s.events,
                c.out_dir.display()
            );
        }
        Command::Replay { snapshot: path, prime, steps, out } => {
            let mut session: Session = snapshot::load(&path)?;
            let r = harness::replay(&mut session, prime, steps)?;
            if let Some(w) = &r.warning {
                eprintln!("warning: {w}");
            }
            std::fs::create_dir_all(&out)?;
            let file = out.join("replay.csv");
            dumps::write_rows(&r.generated, &file)?;
            println!("wrote {} generated observations to {}", r.generated.len(), file.display());
        }
        Command::Inspect { snapshot: path, out } => {
            harness::inspect(&path, &out)?;
            println!("wrote dumps to {}", out.display());
        }
        Command::CheckConfig { config } => {
            let c = load(&config, None, None, None)?;
            Session::new(&c)?;
            println!("config ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
