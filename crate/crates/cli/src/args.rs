//! Command-line surface. Flags override the matching keys of the `--config` file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ctxprop_core::{Frame, SeedMode, StrategyKind};

use crate::commands::{cmd_eval, cmd_fit, cmd_sample, cmd_synth};
use crate::config::{RunConfig, SplitPart};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "ctxprop", version, about = "Context-based object proposals")]
pub struct Cli {
    /// TOML run configuration; flags take precedence over its keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Base RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0: automatic).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Object class of interest.
    #[arg(long, global = true)]
    pub class: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit relation models on the training split.
    Fit(FitArgs),
    /// Generate ranked proposals for each image.
    Sample(SampleArgs),
    /// Recall-vs-budget curves for proposal files.
    Eval(EvalArgs),
    /// Write synthetic lane scenes in the dataset layout.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Fraction of eligible images in the training split.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Minimum class instances for an image to be used.
    #[arg(long)]
    pub min_objects: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub topics: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub theta_bins: Option<usize>,
    /// Relation cell size in meters (default: half the mean object width).
    #[arg(long)]
    pub cell: Option<f64>,
    /// Strategies to fit, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategies: Option<Vec<StrategyKind>>,
    /// Frames to fit, comma separated (cc, oc).
    #[arg(long, value_delimiter = ',', value_parser = parse_frame)]
    pub frames: Option<Vec<Frame>>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub models: Option<PathBuf>,
    /// Proposals file to write.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// sliding-window, pairwise, hor or hor-elongation.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<StrategyKind>,
    #[arg(long, value_parser = parse_frame)]
    pub frame: Option<Frame>,
    #[arg(long)]
    pub budget: Option<usize>,
    /// Detection score threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    /// NMS overlap threshold for seeds.
    #[arg(long)]
    pub nms: Option<f64>,
    #[arg(long)]
    pub dedup_iou: Option<f64>,
    /// all or top-scoring.
    #[arg(long, value_parser = parse_seed_mode)]
    pub seed_mode: Option<SeedMode>,
    /// Do not fill exhausted budgets with grid proposals.
    #[arg(long)]
    pub no_top_up: bool,
    /// train, test or all.
    #[arg(long)]
    pub split: Option<SplitPart>,
    #[command(flatten)]
    pub split_args: SplitArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Proposal files, one curve set per file.
    #[arg(long, value_name = "FILE", num_args = 1..)]
    pub proposals: Option<Vec<PathBuf>>,
    /// CSV file to write.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub iou: Option<Vec<f64>>,
    #[arg(long)]
    pub split: Option<SplitPart>,
    #[command(flatten)]
    pub split_args: SplitArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub num_scenes: Option<usize>,
    #[arg(long)]
    pub lanes: Option<usize>,
    #[arg(long)]
    pub slots: Option<usize>,
    #[arg(long)]
    pub occupancy: Option<f64>,
    #[arg(long)]
    pub lane_width: Option<f64>,
    #[arg(long)]
    pub spacing_sd: Option<f64>,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse()
}

fn parse_frame(s: &str) -> Result<Frame, String> {
    Frame::parse(s).ok_or_else(|| format!("unknown frame `{s}` (cc, oc)"))
}

fn parse_seed_mode(s: &str) -> Result<SeedMode, String> {
    match s {
        "all" => Ok(SeedMode::All),
        "top-scoring" => Ok(SeedMode::TopScoring),
        _ => Err(format!("unknown seed mode `{s}` (all, top-scoring)")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_split(cfg: &mut RunConfig, a: SplitArgs) {
    set(&mut cfg.split.fraction, a.train_fraction);
    set(&mut cfg.split.min_objects_per_image, a.min_objects);
}

/// Which subcommand a resolved invocation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Fit,
    Sample,
    Eval,
    Synth,
}

impl Cli {
    /// Effective configuration: defaults, then the config file, then flags.
    pub fn resolve(self) -> Result<(CommandKind, RunConfig), CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        set(&mut cfg.rng_seed, self.seed);
        set(&mut cfg.threads, self.threads);
        set(&mut cfg.class, self.class);
        let kind = match self.command {
            Command::Fit(a) => {
                set(&mut cfg.paths.data, a.data);
                set(&mut cfg.paths.models, a.models);
                set(&mut cfg.lda.topics, a.topics);
                set(&mut cfg.lda.iterations, a.iterations);
                set(&mut cfg.vocabulary.theta_bins, a.theta_bins);
                if a.cell.is_some() {
                    cfg.vocabulary.cell = a.cell;
                }
                set(&mut cfg.fit.strategies, a.strategies);
                set(&mut cfg.fit.frames, a.frames);
                apply_split(&mut cfg, a.split);
                CommandKind::Fit
            }
            Command::Sample(a) => {
                set(&mut cfg.paths.data, a.data);
                set(&mut cfg.paths.models, a.models);
                set(&mut cfg.paths.output, a.out);
                set(&mut cfg.strategy.kind, a.strategy);
                set(&mut cfg.strategy.frame, a.frame);
                set(&mut cfg.sampling.budget, a.budget);
                set(&mut cfg.sampling.score_threshold, a.tau);
                set(&mut cfg.sampling.nms_threshold, a.nms);
                set(&mut cfg.sampling.dedup_iou, a.dedup_iou);
                set(&mut cfg.sampling.seed_mode, a.seed_mode);
                if a.no_top_up {
                    cfg.sampling.top_up = false;
                }
                set(&mut cfg.split.part, a.split);
                apply_split(&mut cfg, a.split_args);
                CommandKind::Sample
            }
            Command::Eval(a) => {
                set(&mut cfg.paths.data, a.data);
                set(&mut cfg.paths.proposals, a.proposals);
                set(&mut cfg.paths.output, a.out);
                set(&mut cfg.eval.budgets, a.budgets);
                set(&mut cfg.eval.iou_thresholds, a.iou);
                set(&mut cfg.split.part, a.split);
                apply_split(&mut cfg, a.split_args);
                CommandKind::Eval
            }
            Command::Synth(a) => {
                set(&mut cfg.paths.output, a.out);
                set(&mut cfg.synth.num_scenes, a.num_scenes);
                set(&mut cfg.synth.lanes, a.lanes);
                set(&mut cfg.synth.slots_per_lane, a.slots);
                set(&mut cfg.synth.occupancy, a.occupancy);
                set(&mut cfg.synth.lane_width, a.lane_width);
                set(&mut cfg.synth.spacing_sd, a.spacing_sd);
                set(&mut cfg.synth.rng_seed, self.seed);
                CommandKind::Synth
            }
        };
        cfg.validate()?;
        Ok((kind, cfg))
    }
}

/// Runs one resolved command inside a worker pool sized by `cfg.threads`.
pub fn execute(kind: CommandKind, cfg: &RunConfig) -> Result<String, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    pool.install(|| match kind {
        CommandKind::Fit => cmd_fit(cfg),
        CommandKind::Sample => cmd_sample(cfg),
        CommandKind::Eval => cmd_eval(cfg),
        CommandKind::Synth => cmd_synth(cfg),
    })
}

/// Parses `args` (including the program name) and runs the command. Help and version
/// requests come back as `Ok` with the rendered text.
pub fn run<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return Ok(e.to_string());
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(CliError::new("usage", first.trim_start_matches("error: ")));
        }
    };
    let (kind, cfg) = cli.resolve()?;
    execute(kind, &cfg)
}
