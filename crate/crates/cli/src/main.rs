mod commands;
mod config;
mod failure;
mod prepare;
mod prepared;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::SweepAxis;
use config::RunConfig;
use failure::{read_text, write_text, CliResult};

#[derive(Parser)]
#[command(name = "deepshare", version, about = "Multi-task sequence-to-sequence training with shared layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides a configuration value, e.g. `--set training.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut config = RunConfig::load(&self.config, &self.overrides)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Configuration to use instead of the one stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prepared-data directory, when it moved since training.
    #[arg(long)]
    prepared: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl CheckpointArgs {
    fn load(&self) -> CliResult<(deepshare::mtl::Checkpoint, RunConfig)> {
        let checkpoint = commands::load_checkpoint(&self.checkpoint)?;
        let mut config = commands::checkpoint_config(&checkpoint, self.config.as_deref(), &self.overrides)?;
        if let Some(p) = &self.prepared {
            config.prepared = p.clone();
        }
        Ok((checkpoint, config))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Learns BPE and vocabularies and writes id corpora for every task.
    Prepare {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory; defaults to `prepared` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Trains all tasks jointly, writing logs and checkpoints to the run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory; defaults to `output` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Continues training a checkpoint on the main task only.
    Adapt {
        #[command(flatten)]
        checkpoint: CheckpointArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `adapt/` next to the checkpoint.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Greedy-decodes one sentence per input line.
    Translate {
        #[command(flatten)]
        checkpoint: CheckpointArgs,
        /// Task whose decoder to use; defaults to the main task.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// BLEU and perplexity on a prepared split.
    Evaluate {
        #[command(flatten)]
        checkpoint: CheckpointArgs,
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Score subword units instead of joined words.
        #[arg(long)]
        subword: bool,
        /// Score these outputs, one per line, instead of decoding.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Percentage gain of system A over system B in matched gold n-grams.
    Analyze {
        #[arg(long)]
        system_a: PathBuf,
        #[arg(long)]
        system_b: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Tags aligned with the gold tokens; only n-grams of nouns count.
        #[arg(long)]
        tags: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        max_n: usize,
        /// Defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Trains and evaluates once per number of shared layers.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated layer counts, e.g. `0,1,2,3`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        /// Defaults to `output` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn emit(text: &str, output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Prepare { config, output } => {
            let config = config.load()?;
            let out = output.unwrap_or_else(|| config.prepared.clone());
            prepare::prepare(&config, &out)?;
            print!("{}", read_text(&prepared::PreparedDir::new(&out).stats_path())?);
        }
        Command::Train { config, output } => {
            let mut config = config.load()?;
            if let Some(o) = output {
                config.output = o;
            }
            let summary = commands::train(&config)?;
            let best = &summary.outcome.best.meta;
            eprintln!(
                "best epoch {} dev ppl {}; checkpoints in {}",
                best.epoch,
                best.best_dev[0].map_or_else(|| "-".into(), |p| format!("{p:.4}")),
                summary.run_dir.display()
            );
        }
        Command::Adapt { checkpoint, epochs, seed, output } => {
            let (ckpt, mut config) = checkpoint.load()?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let epochs = epochs.unwrap_or(config.training.adapt_epochs);
            let dir = output.unwrap_or_else(|| checkpoint.checkpoint.parent().unwrap_or(Path::new(".")).join("adapt"));
            let outcome = commands::adapt_checkpoint(&ckpt, &config, epochs, &dir)?;
            eprintln!("adapted {} epochs; checkpoints in {}", outcome.history.len(), dir.display());
        }
        Command::Translate { checkpoint, task, input, output } => {
            let (ckpt, config) = checkpoint.load()?;
            let task = commands::task_index(&ckpt, task.as_deref())?;
            let translator = commands::Translator::new(&ckpt, &config, task)?;
            emit(&commands::translate_text(&translator, &read_text(&input)?)?, output.as_deref())?;
        }
        Command::Evaluate { checkpoint, task, split, subword, candidates, output } => {
            let (ckpt, config) = checkpoint.load()?;
            let index = commands::task_index(&ckpt, task.as_deref())?;
            let eval = commands::evaluate(&ckpt, &config, index, &split, subword, candidates.as_deref())?;
            let report = eval.report(&ckpt.meta.task_names[index], &split);
            print!("{report}");
            if let Some(path) = output {
                write_text(&path, &report)?;
            }
        }
        Command::Analyze { system_a, system_b, gold, tags, max_n, output } => {
            let csv = commands::analyze(&system_a, &system_b, &gold, tags.as_deref(), max_n)?;
            emit(&csv, output.as_deref())?;
        }
        Command::Sweep { config, axis, values, output } => {
            let config = config.load()?;
            let dir = output.unwrap_or_else(|| config.output.clone());
            print!("{}", commands::sweep(&config, axis, &values, &dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
