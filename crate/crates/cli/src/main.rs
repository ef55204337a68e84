mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mgseg::Shape;

/// Motion-guided video object segmentation: training, evaluation, ablations,
/// gradient checks, FLOPs tables and latency benchmarks.
#[derive(Parser)]
#[command(name = "mgseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; omitted keys keep their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed; replaces `seeds` with this single value.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory, one subdirectory per clip.
        #[arg(short, long)]
        out: PathBuf,
        /// Number of clips; defaults to `train_clips`.
        #[arg(short = 'n', long)]
        count: Option<usize>,
    },
    /// Train a model and write a checkpoint plus a run record.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Training clips on disk; synthesized from the config if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out clips on disk for a final evaluation.
        #[arg(long, conflicts_with = "no_eval")]
        eval_data: Option<PathBuf>,
        /// Skip the held-out evaluation of synthesized data.
        #[arg(long)]
        no_eval: bool,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write metrics and predicted masks.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clips on disk; the held-out synthetic clips of the seed if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Average with the mirrored prediction of the mirrored input.
        #[arg(long)]
        flip: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train and evaluate a grid of variants over the configured seeds.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, default_value_t = Grid::Modules)]
        grid: Grid,
        /// Window sizes of the kernel grid, or the window of the module grid.
        #[arg(long, value_delimiter = ',', default_values_t = [3usize, 5, 7, 9])]
        windows: Vec<usize>,
        /// Cascade depths of the kernel grid, or the depth of the module grid.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4])]
        cascades: Vec<usize>,
        /// Output path without extension; `.json` and `.csv` are written.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks. Exits nonzero if any fails.
    Gradcheck {
        /// Components to check; all of them if omitted.
        #[arg(long, value_enum, value_delimiter = ',')]
        component: Vec<ComponentArg>,
        /// Number of seeds, starting at `--first-seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        /// JSON report path.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Latency of the attention operators or the whole network.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_enum, value_delimiter = ',')]
        target: Vec<TargetArg>,
        /// Feature shape `N,C,H,W` (for `network`, C is ignored).
        #[arg(long, value_parser = parse_nchw, default_value = "1,32,32,32")]
        shape: Shape,
        #[arg(long, default_value_t = 3)]
        window: usize,
        #[arg(long, default_value_t = 2)]
        compression: usize,
        #[arg(long, default_value_t = 1)]
        cascade: usize,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        trim: Option<usize>,
        /// Output path without extension; `.json` and `.csv` are written.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Analytical FLOPs of co-attention and motion guidance.
    Flops {
        /// Extra feature shape `H,W,C`. Repeatable.
        #[arg(long, value_parser = parse_hwc)]
        shape: Vec<(usize, usize, usize)>,
        #[arg(long, default_value_t = 2)]
        compression: usize,
        #[arg(long, default_value_t = 3)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        cascade: usize,
        /// Leave out the published comparison rows.
        #[arg(long)]
        no_reference: bool,
        /// Recount every row by instrumented execution; exits nonzero on mismatch.
        #[arg(long)]
        verify: bool,
        /// Output path without extension; `.json` and `.csv` are written.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Grid {
    /// Full model, without motion guidance, and without progressive fusion.
    Modules,
    /// Window size × cascade depth of the full model.
    Kernels,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ComponentArg {
    Conv2d,
    BiasAdd,
    Relu,
    Sigmoid,
    ElementwiseMul,
    Concat,
    Upsample,
    Unfold,
    WindowSoftmax,
    MotionGuidance,
    Cascade,
    Bce,
    Network,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    MgNaive,
    MgFast,
    MgCascade,
    CoAttention,
    Network,
}

fn parse_dims(s: &str) -> Result<Vec<usize>, String> {
    s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}"))).collect()
}

fn parse_hwc(s: &str) -> Result<(usize, usize, usize), String> {
    match parse_dims(s)?[..] {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(format!("expected H,W,C, got {s:?}")),
    }
}

fn parse_nchw(s: &str) -> Result<Shape, String> {
    match parse_dims(s)?[..] {
        [n, c, h, w] => Ok(Shape::new(n, c, h, w)),
        _ => Err(format!("expected N,C,H,W, got {s:?}")),
    }
}

fn main() -> ExitCode {
    match commands::run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
