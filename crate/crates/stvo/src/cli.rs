//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stvo_core::synthetic::MotionKind;

use crate::commands::{self, Context};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "stvo",
    version,
    about = "Monocular visual odometry with a divided space-time transformer"
)]
pub struct Cli {
    /// Run configuration (TOML). Protocol defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the training and generator seed.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// One worker thread and fixed reduction order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// No progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes best and last checkpoints and a loss table.
    Train,
    /// Reconstruct the trajectory of a sequence.
    Infer(InferCmd),
    /// Score predicted trajectories against ground truth.
    Eval(EvalCmd),
    /// Write ground-plane x/z series of trajectories.
    Plot(PlotCmd),
    /// Write attention rollout maps of one clip.
    Rollout(RolloutCmd),
    /// Time pre-processing, inference and post-processing per clip.
    Bench(BenchCmd),
    /// Generate a synthetic dataset in the KITTI layout.
    Synth(SynthCmd),
}

#[derive(Debug, Args)]
pub struct InferCmd {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "ID")]
    pub sequence: String,
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Take each motion from the latest clip instead of averaging.
    #[arg(long)]
    pub no_average: bool,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long = "pred", value_name = "PATH", required = true)]
    pub predictions: Vec<PathBuf>,
    #[arg(long = "gt", value_name = "PATH", required = true)]
    pub ground_truth: Vec<PathBuf>,
    /// Similarity-align predictions before scoring.
    #[arg(long)]
    pub align: bool,
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotCmd {
    #[arg(required = true, value_name = "TRAJECTORY")]
    pub inputs: Vec<PathBuf>,
    #[arg(long = "label", value_name = "NAME")]
    pub labels: Vec<String>,
    #[arg(long, short, value_name = "PATH")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RolloutCmd {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "ID")]
    pub sequence: String,
    /// First frame of the clip.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Also write overlay PNGs.
    #[arg(long)]
    pub png: bool,
}

#[derive(Debug, Args)]
pub struct BenchCmd {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "ID")]
    pub sequence: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub clips: usize,
    #[arg(long, short, value_name = "PATH")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Motion {
    Straight,
    Circle,
    SCurve,
}

#[derive(Debug, Args)]
pub struct SynthCmd {
    /// Dataset root.
    #[arg(long, value_name = "DIR")]
    pub root: PathBuf,
    #[arg(long, value_enum, default_value_t = Motion::Straight)]
    pub motion: Motion,
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 192)]
    pub height: usize,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    /// Metres per frame.
    #[arg(long, default_value_t = 1.0)]
    pub step: f64,
    #[arg(long, default_value_t = 20.0)]
    pub radius: f64,
    /// Peak heading of the S-curve, radians.
    #[arg(long, default_value_t = 0.4)]
    pub amplitude: f64,
    /// Frames per S-curve period.
    #[arg(long, default_value_t = 20.0)]
    pub period: f64,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long = "id", value_name = "ID", default_values_t = ["00".to_string()])]
    pub ids: Vec<String>,
    /// Write a run configuration for the generated data.
    #[arg(long, value_name = "PATH")]
    pub config_out: Option<PathBuf>,
}

impl SynthCmd {
    fn kind(&self) -> MotionKind {
        match self.motion {
            Motion::Straight => MotionKind::Straight { step: self.step },
            Motion::Circle => MotionKind::Circle {
                radius: self.radius,
                step: self.step,
            },
            Motion::SCurve => MotionKind::SCurve {
                step: self.step,
                amplitude: self.amplitude,
                period: self.period,
            },
        }
    }
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let (mut config, given) = match &cli.config {
        Some(p) => (RunConfig::load(p)?, true),
        None => (RunConfig::default(), false),
    };
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
    }
    Ok(Context {
        config,
        config_given: given,
        deterministic: cli.deterministic,
        quiet: cli.quiet,
    })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(&cli)?;
    match cli.command {
        Command::Train => {
            let s = commands::train::run(&ctx)?;
            println!(
                "best epoch {} of {}; checkpoints {} and {}",
                s.best_epoch,
                s.epochs.len(),
                s.best_checkpoint.display(),
                s.last_checkpoint.display()
            );
        }
        Command::Infer(c) => {
            let (path, _) = commands::infer::run(
                &ctx,
                &commands::infer::InferArgs {
                    checkpoint: c.checkpoint,
                    sequence: c.sequence,
                    output: c.output,
                    average: !c.no_average,
                },
            )?;
            println!("{}", path.display());
        }
        Command::Eval(c) => {
            let doc = commands::eval::run(
                &ctx,
                &commands::eval::EvalArgs {
                    predictions: c.predictions,
                    ground_truth: c.ground_truth,
                    align: c.align,
                    output_dir: c.output_dir,
                },
            )?;
            print!("{}", doc.to_table());
        }
        Command::Plot(c) => {
            commands::plot::run(
                &ctx,
                &commands::plot::PlotArgs {
                    inputs: c.inputs,
                    labels: c.labels,
                    output: c.output.clone(),
                },
            )?;
            println!("{}", c.output.display());
        }
        Command::Rollout(c) => {
            commands::rollout::run(
                &ctx,
                &commands::rollout::RolloutArgs {
                    checkpoint: c.checkpoint,
                    sequence: c.sequence,
                    start: c.start,
                    output_dir: c.output_dir,
                    png: c.png,
                },
            )?;
        }
        Command::Bench(c) => {
            let r = commands::bench::run(
                &ctx,
                &commands::bench::BenchArgs {
                    checkpoint: c.checkpoint,
                    sequence: c.sequence,
                    clips: c.clips,
                    output: c.output,
                },
            )?;
            println!("stage mean_ms std_ms ({} clips)", r.clips);
            for (name, t) in [
                ("preprocessing", r.preprocessing),
                ("inference", r.inference),
                ("postprocessing", r.postprocessing),
            ] {
                println!("{name} {:.4} {:.4}", t.mean_ms, t.std_ms);
            }
        }
        Command::Synth(c) => {
            let args = commands::synth::SynthArgs {
                root: c.root.clone(),
                kind: c.kind(),
                frames: c.frames,
                height: c.height,
                width: c.width,
                ids: c.ids.clone(),
                seed: cli.seed.unwrap_or(0),
                jitter: c.jitter,
                config_out: c.config_out.clone(),
            };
            commands::synth::run(&ctx, &args)?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
