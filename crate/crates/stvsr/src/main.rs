use clap::{Parser, Subcommand};
use std::path::PathBuf;
use stvsr::run;

/// Space-time video super-resolution: 4x spatial and 2x temporal upscaling
/// of PNG frame sequences in one pass.
#[derive(Parser)]
#[command(name = "stvsr", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn config_key_help() -> String {
    let mut s = String::from("Config keys (file lines and --set overrides):\n");
    for (key, desc) in run::CONFIG_KEYS {
        s.push_str(&format!("  {key:<20} {desc}\n"));
    }
    s
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a clip dataset.
    #[command(after_help = config_key_help())]
    Train {
        /// key=value run-config file; see `--help` for the key list.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root (index.txt plus frame directories).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and the metrics log.
        #[arg(long)]
        out: PathBuf,
        /// Run seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Config override, repeatable (e.g. --set variant=a).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Resume from a checkpoint with optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Upscale a directory of n+1 PNG frames into 2n+1 HR frames.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of input PNG frames (sorted by name).
        #[arg(long)]
        input: PathBuf,
        /// Output directory; frames are written as out_###.png.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model (or the bicubic baseline) on a clip dataset.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Write the machine-readable report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Input degradation: clean | noise[:sigma=S,sp=P] | jpeg:QF
        /// (eval accepts QF presets 10, 20, 30, 40).
        #[arg(long, default_value = "clean")]
        degrade: String,
        /// Score the bicubic-upsample + nearest-frame-repeat baseline
        /// instead of a checkpoint.
        #[arg(long)]
        baseline: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write degraded copies of a frame directory.
    Degrade {
        /// Degradation spec: clean | noise[:sigma=S,sp=P] | jpeg:QF.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        input: PathBuf,
        output: PathBuf,
    },
    /// Print a checkpoint's configuration and parameter breakdown.
    Inspect { checkpoint: PathBuf },
    /// Generate synthetic moving-texture clips plus an index file.
    MakeSynthetic {
        #[arg(long, default_value_t = 2)]
        clips: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Square frame size in HR pixels (must be divisible by 4).
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value = "train")]
        split: String,
    },
}

fn dispatch(cli: Cli) -> stvsr::Result<()> {
    match cli.command {
        Command::Train {
            config,
            data,
            out,
            seed,
            set,
            resume,
        } => run::cmd_train(
            config.as_deref(),
            &data,
            &out,
            seed,
            &set,
            resume.as_deref(),
        ),
        Command::Infer {
            checkpoint,
            input,
            out,
        } => run::cmd_infer(&checkpoint, &input, &out),
        Command::Eval {
            checkpoint,
            data,
            report,
            degrade,
            baseline,
            seed,
        } => run::cmd_eval(
            checkpoint.as_deref(),
            &data,
            report.as_deref(),
            &degrade,
            baseline,
            seed,
        ),
        Command::Degrade {
            spec,
            seed,
            input,
            output,
        } => run::cmd_degrade(&spec, &input, &output, seed),
        Command::Inspect { checkpoint } => run::cmd_inspect(&checkpoint),
        Command::MakeSynthetic {
            clips,
            out,
            seed,
            size,
            split,
        } => run::cmd_make_synthetic(clips, &out, seed, size, &split),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(run::exit_code(&e));
    }
}
