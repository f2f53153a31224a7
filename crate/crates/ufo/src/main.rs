use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ufo::{exit, CliError, Context, ExperimentConfig, Layout, Outcome};

#[derive(Parser)]
#[command(name = "ufo", version, about = "Unfair-to-fair self-play alignment at desk scale")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every artifact.
    #[arg(long, global = true, env = "UFO_WORKDIR", default_value = "ufo-work")]
    workdir: PathBuf,
    /// Worker threads; never changes any result.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the catalog and the train/valid/test/calib splits.
    GenData,
    /// Build the pretrained policy and fine-tune it on the train split.
    Sft,
    /// Estimate pretraining bias and the SFT bias shift.
    EstimateBias {
        #[arg(long)]
        pre: Option<PathBuf>,
        #[arg(long)]
        post: Option<PathBuf>,
    },
    /// Run the self-play correction starting from the SFT checkpoint.
    Ufo {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fairness and accuracy of a checkpoint on the test split, per K.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated cut-offs; defaults to the config's list.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Name of the output directory under eval/.
        #[arg(long)]
        label: Option<String>,
    },
    /// Relative improvements of one evaluation report over another.
    Compare {
        candidate: PathBuf,
        baseline: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let Shared { config, seed, workdir, threads } = cli.shared;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut config = match config {
        Some(path) => ExperimentConfig::load(&path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let ctx = Context { layout: Layout::new(workdir), config };
    match cli.command {
        Command::GenData => ctx.gen_data(),
        Command::Sft => ctx.sft(),
        Command::EstimateBias { pre, post } => ctx.estimate_bias(pre.as_deref(), post.as_deref()),
        Command::Ufo { checkpoint } => ctx.ufo(checkpoint.as_deref()),
        Command::Eval { checkpoint, k, label } => ctx.eval(&checkpoint, k.as_deref(), label.as_deref()),
        Command::Compare { candidate, baseline, out } => {
            let (outcome, table) = ctx.compare(&candidate, &baseline, out.as_deref())?;
            print!("{table}");
            Ok(outcome)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(outcome) if outcome.warnings.is_empty() => exit::SUCCESS,
        Ok(outcome) => {
            for w in &outcome.warnings {
                log::warn!("{w}");
            }
            exit::WARNING
        }
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
