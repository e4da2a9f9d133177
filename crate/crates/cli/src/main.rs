use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dia_rescore_cli::{stages, PipelineConfig};

#[derive(Parser)]
#[command(name = "dia-rescore", version, about = "Re-score DIA peak groups against a spectral library")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Spectrum run (.mzML or .jsonl); repeat for several runs.
    #[arg(long, global = true)]
    run: Vec<PathBuf>,
    #[arg(long, global = true)]
    library: Option<PathBuf>,
    #[arg(long, global = true)]
    entrapment_library: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// q-value threshold for identifications.
    #[arg(long, global = true)]
    fdr: Option<f64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a library, an entrapment library and planted runs with ground truth.
    Synth,
    /// Train the scoring model on a synthetic labelled set.
    Train,
    /// Extract, score and assign q-values for every run.
    Score,
    /// Quantity matrices, CV bins and species ratios.
    Quant,
    /// Entrapment proportions and score sweep.
    Entrap,
    /// Identification and protein-group reports.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Score => "score",
            Command::Quant => "quant",
            Command::Entrap => "entrap",
            Command::Report => "report",
        }
    }
}

fn effective_config(c: &Common) -> Result<PipelineConfig> {
    let mut config = match &c.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if !c.run.is_empty() {
        config.paths.run = c.run.clone();
    }
    for (slot, flag) in [
        (&mut config.paths.library, &c.library),
        (&mut config.paths.entrapment_library, &c.entrapment_library),
        (&mut config.paths.checkpoint, &c.checkpoint),
        (&mut config.paths.out, &c.out),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    if let Some(f) = c.fdr {
        config.fdr_threshold = f;
    }
    if let Some(w) = c.workers {
        config.workers = w;
    }
    if let Some(s) = c.seed {
        config.seed = s;
    }
    config.propagate_seed();
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let config = effective_config(&cli.common).context("configuration")?;
    let stage = cli.command.name();
    let result = match cli.command {
        Command::Synth => stages::synth(&config),
        Command::Train => stages::train_model(&config),
        Command::Score => stages::score(&config),
        Command::Quant => stages::quant(&config),
        Command::Entrap => stages::entrap(&config),
        Command::Report => stages::report(&config),
    };
    result.with_context(|| format!("{stage} stage failed"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(artifacts) => {
            for a in artifacts {
                println!("{}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
