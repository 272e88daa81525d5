//! Command-line front end.
//!
//! Global flags override the config file: `--seed` and `--out` replace the
//! corresponding keys, `--jobs` sizes the worker pool. Results never depend
//! on `--jobs`.

pub mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{RunConfig, Split};
use crate::error::{Error, Result};

pub use commands::{
    cmd_adapt, cmd_augment, cmd_eval, cmd_filter, cmd_gen_scenes, cmd_mix, cmd_pretrain, cmd_report,
    format_iou_table, AdaptOptions, EvalOptions, GenSummary, ModelChoice, OutputLock, Run,
};

#[derive(Debug, Parser)]
#[command(name = "dpgla", version, about = "LiDAR self-training domain adaptation pipeline")]
pub struct Cli {
    /// Run config (TOML). Every key is optional.
    #[arg(long, global = true, env = "DPGLA_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic source, target and validation splits.
    GenScenes,
    /// Supervised training on the source split.
    Pretrain,
    /// Mean-teacher adaptation on source plus unlabelled target.
    Adapt(AdaptArgs),
    /// Pseudo-label the target split and report per-class retention.
    Filter(FilterArgs),
    /// Run the augmentation stages on source/target pairs.
    Augment,
    /// Mix source scans with pseudo-labelled target scans.
    Mix(MixArgs),
    /// Per-class IoU and mIoU on a labelled split.
    Eval(EvalArgs),
    /// Confidence histograms and threshold lines from adapt telemetry.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    /// Starting checkpoint [default: <out>/checkpoints/pretrain.ckpt].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also write the first iteration's mixed scans to this directory.
    #[arg(long)]
    pub dump_mixed: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    /// Teacher checkpoint [default: <out>/checkpoints/pretrain.ckpt].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Target label directory [default: <out>/filter/labels].
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Source,
    Target,
    Val,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Student,
    Teacher,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitArg,
    /// Checkpoint to evaluate [default: <out>/checkpoints/adapt.ckpt].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "student")]
    pub model: ModelArg,
    /// Score the label files in DIR/labels instead of running a model.
    #[arg(long, value_name = "DIR")]
    pub pred: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Telemetry directory [default: <out>/telemetry].
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
}

/// Loads the config named on the command line, if any, and applies the
/// flag overrides.
pub fn resolve(cli: &Cli) -> Result<Run> {
    let (mut config, config_text) = match &cli.config {
        Some(p) => {
            let (c, text) = RunConfig::load(p)?;
            (c, Some(text))
        }
        None => (RunConfig::default(), None),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    config.validate()?;
    Ok(Run { config, config_text })
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        // Fails only if a pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let run = resolve(&cli)?;
    match cli.command {
        Command::GenScenes => {
            let s = cmd_gen_scenes(&run)?;
            println!("wrote {} source, {} target, {} val scenes", s.source, s.target, s.val);
        }
        Command::Pretrain => {
            let (_, r) = cmd_pretrain(&run)?;
            if let (Some(first), Some(last)) = (r.losses.first(), r.losses.last()) {
                println!("pretrain loss {first:.4} -> {last:.4} over {} epochs", r.losses.len());
            }
        }
        Command::Adapt(a) => {
            let opts = AdaptOptions {
                checkpoint: a.checkpoint,
                dump_mixed: a.dump_mixed,
            };
            let (state, tel) = cmd_adapt(&run, &opts)?;
            match tel.iterations.last() {
                Some(r) => println!("adapted to iteration {}, last loss {:.4}", state.iteration, r.loss),
                None => println!("no iterations run; checkpoint at iteration {}", state.iteration),
            }
        }
        Command::Filter(f) => {
            let r = cmd_filter(&run, f.checkpoint.as_deref())?;
            println!("{:<12} {:>8} {:>8} {:>8}", "class", "total", "kept", "kept %");
            for c in 0..r.total.len() {
                let name = commands::class_name(c, r.total.len());
                println!("{name:<12} {:>8} {:>8} {:>8.1}", r.total[c], r.retained[c], 100.0 * r.fraction(c));
            }
        }
        Command::Augment => {
            let bins = cmd_augment(&run)?;
            println!("augmented pairs written; {} bin records", bins.len());
        }
        Command::Mix(m) => {
            let n = cmd_mix(&run, m.labels.as_deref())?;
            println!("mixed {n} target scans in both directions");
        }
        Command::Eval(e) => {
            let opts = EvalOptions {
                split: match e.split {
                    SplitArg::Source => Split::Source,
                    SplitArg::Target => Split::Target,
                    SplitArg::Val => Split::Val,
                },
                checkpoint: e.checkpoint,
                model: match e.model {
                    ModelArg::Student => ModelChoice::Student,
                    ModelArg::Teacher => ModelChoice::Teacher,
                },
                predictions: e.pred.clone(),
            };
            let report = cmd_eval(&run, &opts)?;
            let label = if e.pred.is_some() { "predictions" } else { "checkpoint" };
            print!("{}", format_iou_table(label, &report));
        }
        Command::Report(r) => {
            let rep = cmd_report(&run, r.telemetry.as_deref())?;
            println!("{:<12} {:>8} {:>10} {:>10} {:>10}", "class", "points", "fixed 0.85", "fixed 0.9", "dynamic");
            for c in 0..rep.totals.len() {
                let [a, b] = rep.fixed_retained[c];
                println!(
                    "{:<12} {:>8} {:>10.3} {:>10.3} {:>10.3}",
                    commands::class_name(c, rep.totals.len()),
                    rep.totals[c],
                    a,
                    b,
                    rep.dynamic_retained[c]
                );
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 2 for usage or config errors, 3 for data errors, 4 for
/// filesystem errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
