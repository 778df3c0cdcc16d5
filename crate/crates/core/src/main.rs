use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use case_diar::pipeline::{cmd_diarise, cmd_experiment, cmd_score, cmd_synth, cmd_train, Overrides, Regime, RunConfig};
use case_diar::Result;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Synth,
    Train,
    Diarise,
    Score,
    Experiment,
}

/// Speaker diarisation with content-aware speaker embeddings.
#[derive(Debug, Parser)]
#[command(name = "case-diar", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// reference, manual-hypothesis or automatic-hypothesis.
    #[arg(long)]
    regime: Option<String>,
    #[arg(long = "error-rate")]
    error_rate: Option<f64>,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        regime: cli.regime.as_deref().map(str::parse::<Regime>).transpose()?,
        error_rate: cli.error_rate,
        out: cli.out.clone(),
    })?;
    match cli.command {
        Command::Synth => {
            let (dir, warnings) = cmd_synth(&cfg)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            println!("corpus written to {}", dir.display());
        }
        Command::Train => {
            for p in cmd_train(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Diarise => {
            let written = cmd_diarise(&cfg)?;
            println!("{} RTTM files written under {}", written.len(), cfg.out.display());
        }
        Command::Score => {
            let (path, text) = cmd_score(&cfg)?;
            print!("{text}");
            println!("report written to {}", path.display());
        }
        Command::Experiment => {
            cmd_experiment(&cfg, |seed| eprintln!("seed {seed} done"))?;
            print!("{}", std::fs::read_to_string(cfg.out.join("experiment").join("report.txt")).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("case-diar: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
