use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pairedseg_cli::commands::{self, Axis, Condition, EvalArgs, GradExpArgs};
use pairedseg_cli::{Global, Result};

#[derive(Parser)]
#[command(name = "pairedseg", version, about = "Paired clear/adverse-weather segmentation at desk scale")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired synthetic dataset.
    GenData {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a model on the train split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// adverse_only, paired or paired_full.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Evaluate the clear images.
        #[arg(long, conflicts_with = "degraded")]
        clear: bool,
        /// Evaluate the adverse images (default).
        #[arg(long)]
        degraded: bool,
        /// Score ground truth as the prediction.
        #[arg(long)]
        oracle: bool,
    },
    /// Gradient-norm comparison of seen adverse and novel clear scenes.
    GradExp {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Split holding the novel scenes.
        #[arg(long, default_value = "test")]
        novel: String,
        /// Run the role-swapped control.
        #[arg(long)]
        swapped: bool,
    },
    /// Train and rank variants along one axis.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// scheduler_fcl, scheduler_ocl or clip_variant.
        #[arg(long)]
        axis: String,
    },
    /// Run canned experiments and write verdicts.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        /// Restrict to these experiments.
        #[arg(long)]
        only: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let g = Global {
        config: cli.global.config,
        seed: cli.global.seed,
        out: cli.global.out,
        force: cli.global.force,
    };
    let dir = match cli.command {
        Command::GenData { count } => commands::gen_data(&g, count)?,
        Command::Train { data, mode } => {
            let mode = mode.as_deref().map(commands::parse_mode).transpose()?;
            commands::train(&g, &data, mode)?
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            clear,
            degraded: _,
            oracle,
        } => commands::eval(
            &g,
            &EvalArgs {
                checkpoint: checkpoint.as_deref(),
                data: &data,
                split: commands::parse_split(&split)?,
                condition: if clear { Condition::Clear } else { Condition::Degraded },
                oracle,
            },
        )?,
        Command::GradExp {
            data,
            trials,
            novel,
            swapped,
        } => commands::grad_exp(
            &g,
            &GradExpArgs {
                data: &data,
                trials,
                novel: commands::parse_split(&novel)?,
                swapped,
            },
        )?,
        Command::Ablate { data, axis } => commands::ablate(&g, &data, Axis::parse(&axis)?)?,
        Command::Experiment { spec, only } => {
            let (dir, pass) = commands::experiment(&g, &spec, &only)?;
            for line in commands::verdict_lines(&dir)? {
                println!("{line}");
            }
            println!("{}", dir.display());
            return Ok(pass);
        }
    };
    println!("{}", dir.display());
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
