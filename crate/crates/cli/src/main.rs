use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lrlindblad_cli::{run, ConfigErrors, ExperimentConfig, Mode, Overrides, RunError};

#[derive(Parser)]
#[command(name = "lrlindblad", about = "Full-rank, low-rank and control-variate Lindblad simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Check a configuration file and print it with defaults filled in.
    Validate { path: PathBuf },
    Version,
}

fn load(path: &PathBuf, overrides: &Overrides) -> Result<ExperimentConfig, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|e| RunError::Config(ConfigErrors(vec![format!("cannot read {}: {e}", path.display())])))?;
    ExperimentConfig::parse(&text, overrides).map_err(RunError::Config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Version => {
            println!("lrlindblad {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Command::Validate { path } => load(&path, &Overrides::default()).map(|cfg| print!("{}", cfg.normalized())),
        Command::Run { config, seed, out, mode } => load(&config, &Overrides { seed, out, mode }).and_then(|cfg| {
            let written = run(&cfg)?;
            println!("wrote {} ({} rows)", written.csv.display(), written.rows);
            if let Some(dump) = written.dump {
                println!("wrote {}", dump.display());
            }
            println!("wrote {}", written.manifest.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
