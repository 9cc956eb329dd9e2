//! Command-line surface. `main` only calls [`main_with_args`].

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::convnet::FeatureTap;
use crate::distill::Selection;
use crate::error::{Error, Result};
use crate::fewshot::ClassifierKind;
use crate::pipeline;
use crate::preprocess::{Modality, TaskId};
use crate::report::{parse_formats, BaselineKind};

pub const THREADS_ENV: &str = "DASECOUNT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dasecount", version, about = "Cross-domain WiFi CSI crowd counting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic CSI dataset.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Global seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment and preprocess a dataset into a sample store.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tw: Option<usize>,
        #[arg(long)]
        ts: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the source-domain feature extractor.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Distill a lineage of generations from a source checkpoint.
    Distill {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: DistillOpts,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Few-shot evaluation on target tasks.
    Metatest(EvalArgs),
    /// A comparison method on target tasks.
    Baseline {
        #[arg(long)]
        kind: BaselineKind,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Collect task reports into summary tables.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Every stage in sequence under one work directory.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Default, Args)]
pub struct TrainOpts {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrainOpts {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        set(&mut t.epochs, self.epochs);
        set(&mut t.batch_size, self.batch);
        set(&mut t.learning_rate, self.lr);
        set(&mut t.seed, self.seed);
    }
}

#[derive(Debug, Default, Args)]
pub struct DistillOpts {
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `source-val` or a generation index.
    #[arg(long)]
    pub select: Option<String>,
}

impl DistillOpts {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let d = &mut cfg.distill;
        set(&mut d.generations, self.generations);
        set(&mut d.alpha, self.alpha);
        set(&mut d.epochs, self.epochs);
        set(&mut d.batch_size, self.batch);
        set(&mut d.learning_rate, self.lr);
        set(&mut d.weight_decay, self.weight_decay);
        set(&mut d.temperature, self.temperature);
        set(&mut d.seed, self.seed);
        if let Some(s) = &self.select {
            cfg.metatest.selection = parse_selection(s)?;
        }
        Ok(())
    }
}

pub fn parse_selection(s: &str) -> Result<Selection> {
    match s {
        "source-val" | "source_val" => Ok(Selection::SourceVal),
        n => n
            .parse()
            .map(Selection::Explicit)
            .map_err(|_| Error::Config(format!("--select expects 'source-val' or a generation index, got '{n}'"))),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// `scenario:motion`, comma separated; defaults to every target task.
    #[arg(long, value_delimiter = ',')]
    pub task: Vec<TaskId>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub opts: EvalOpts,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct EvalOpts {
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub tap: Option<FeatureTap>,
    #[arg(long)]
    pub modality: Option<Modality>,
    #[arg(long)]
    pub classifier: Option<ClassifierKind>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl EvalOpts {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let m = &mut cfg.metatest;
        if let Some(k) = self.shots {
            m.shots = vec![k];
        }
        set(&mut m.repeats, self.repeats);
        set(&mut m.queries_per_class, self.queries);
        set(&mut m.tap, self.tap);
        set(&mut m.modality, self.modality);
        set(&mut m.classifier.kind, self.classifier);
        set(&mut m.seed, self.seed);
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn load(path: Option<&PathBuf>, apply: impl FnOnce(&mut RunConfig) -> Result<()>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load_or_default(path)?;
    apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn evaluate(eval: &EvalArgs, baseline: Option<BaselineKind>) -> Result<()> {
    let cfg = load(eval.config.as_ref(), |c| {
        eval.opts.apply(c);
        Ok(())
    })?;
    for &k in &cfg.metatest.shots {
        pipeline::metatest(&eval.model, &eval.target, &eval.task, &cfg, &cfg.protocol(k), baseline, &eval.out)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, seed } => {
            let cfg = load(Some(&config), |c| {
                set(&mut c.seed, seed);
                Ok(())
            })?;
            pipeline::synth(&cfg, &out).map(drop)
        }
        Command::Preprocess { input, out, tw, ts, config } => {
            let cfg = load(config.as_ref(), |c| {
                set(&mut c.preprocess.tw, tw);
                set(&mut c.preprocess.ts, ts);
                Ok(())
            })?;
            pipeline::preprocess(&cfg, &input, &out).map(drop)
        }
        Command::Train { input, out, opts, config } => {
            let cfg = load(config.as_ref(), |c| {
                opts.apply(c);
                Ok(())
            })?;
            pipeline::train(&cfg, &input, &out).map(drop)
        }
        Command::Distill { teacher, input, out, opts, config } => {
            let cfg = load(config.as_ref(), |c| opts.apply(c))?;
            pipeline::distill(&cfg, &teacher, &input, &out, cfg.metatest.selection).map(drop)
        }
        Command::Metatest(eval) => evaluate(&eval, None),
        Command::Baseline { kind, eval } => evaluate(&eval, Some(kind)),
        Command::Report { input, out, format, config } => {
            let cfg = load(config.as_ref(), |_| Ok(()))?;
            let formats = match format {
                Some(f) => parse_formats(&f)?,
                None => cfg.report.formats.iter().copied().collect(),
            };
            let written = pipeline::report(&input, &out, &formats)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Pipeline { config, out, seed } => {
            let cfg = load(Some(&config), |c| {
                set(&mut c.seed, seed);
                Ok(())
            })?;
            let o = pipeline::run_all(&cfg, &out)?;
            println!("{}", o.report_dir.display());
            Ok(())
        }
    }
}

/// Caps rayon's pool at `DASECOUNT_THREADS` when set to a positive value.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")))?;
    if n > 0 {
        // a second initialization (tests calling in-process) is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Process exit code for an error: 2 for bad input, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e.category() {
        "config" | "validation" | "range" | "shape" | "json" => 2,
        _ => 1,
    }
}

/// Parses `args`, runs the command, prints `ERROR: <category>: <detail>`
/// on failure and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ERROR: {}: {}", e.category(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}
