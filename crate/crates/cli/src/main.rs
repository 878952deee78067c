use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gamedet::config::RunConfig;
use gamedet_cli::{
    cmd_compare, cmd_curate, cmd_eval, cmd_explain, cmd_pipeline, cmd_synth, cmd_train, CliError, Context, EvalTarget,
};

#[derive(Parser)]
#[command(name = "gamedet", version, about = "Train, curate and explain behavior-pattern detectors")]
struct Cli {
    /// TOML run config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-pattern clip file.
    Synth,
    /// Split the clips and train all eras.
    Train,
    /// Harvest, binarize, deduplicate, prune and select a pattern bank.
    Curate {
        /// Directory of era snapshots (default: <out>/snapshots).
        #[arg(long)]
        snapshots: Option<PathBuf>,
    },
    /// Metrics for a bank (default) or a continuous model.
    Eval {
        #[arg(long, conflicts_with = "model")]
        bank: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Clip file; the train/val/test splits when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare a bank with expert patterns.
    Compare {
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        experts: PathBuf,
    },
    /// Explain the bank's decision on one clip.
    Explain {
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        clips: PathBuf,
        #[arg(long)]
        clip_id: String,
        /// Also write one SVG per matching pattern.
        #[arg(long)]
        svg: bool,
    },
    /// synth, train, curate and eval in one go.
    Pipeline,
    /// Print the default config as TOML.
    DefaultConfig,
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Command::DefaultConfig = cli.command {
        return Ok(RunConfig::default().to_toml());
    }
    let ctx = Context::from_file(cli.config.as_deref(), cli.seed, cli.out)?;
    match cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Curate { snapshots } => cmd_curate(&ctx, snapshots.as_deref()),
        Command::Eval { bank, model, dataset } => {
            let target = match model {
                Some(m) => EvalTarget::Model(m),
                None => EvalTarget::Bank(bank),
            };
            cmd_eval(&ctx, &target, dataset.as_deref())
        }
        Command::Compare { bank, experts } => cmd_compare(&ctx, bank.as_deref(), &experts),
        Command::Explain {
            bank,
            clips,
            clip_id,
            svg,
        } => cmd_explain(&ctx, bank.as_deref(), &clips, &clip_id, svg),
        Command::Pipeline => cmd_pipeline(&ctx),
        Command::DefaultConfig => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
