mod config;
mod stages;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use qrewrite::{MergeMode, RewriteMode};

use crate::config::{Precision, Preset, RunConfig};

/// An invocation problem: bad flags, bad config, or missing inputs.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug, Parser)]
#[command(name = "qrewrite", version, about = "Controllable question rewriting for reading-comprehension data augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for training and rewriting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    precision: Option<Precision>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    dev_dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    #[arg(long, global = true)]
    guide_checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    ae_checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    augmented: Option<PathBuf>,
    #[arg(long, global = true)]
    beta_t: Option<f64>,
    #[arg(long, global = true)]
    beta_a: Option<f64>,
    #[arg(long, global = true)]
    beta_b: Option<f64>,
    #[arg(long, global = true)]
    beta_s: Option<f64>,
    #[arg(long, global = true)]
    max_steps: Option<usize>,
    /// to-unanswerable, to-answerable or both.
    #[arg(long, global = true)]
    mode: Option<RewriteMode>,
    /// Answerable sources to rewrite; 0 means all.
    #[arg(long, global = true)]
    rewrite_limit: Option<usize>,
    /// ans, unans or both.
    #[arg(long, global = true)]
    merge_mode: Option<MergeMode>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its vocabulary.
    GenData,
    /// Train the guide reading-comprehension model.
    TrainMrc,
    /// Train the autoencoder on the guide's embedding tables.
    TrainAe,
    /// Rewrite answerable questions and compare against noise.
    Rewrite,
    /// Append accepted rewrites to the training set.
    Merge,
    /// Write the evaluation reports.
    Evaluate,
    /// Run every stage in order.
    Pipeline,
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag {
                    c.$($field).+ = v.clone().into();
                })*
            };
        }
        set! {
            seed => seed,
            threads => threads,
            preset => preset,
            precision => precision,
            out_dir => out_dir,
            dataset => dataset,
            dev_dataset => dev_dataset,
            vocab => vocab,
            guide_checkpoint => guide_checkpoint,
            ae_checkpoint => ae_checkpoint,
            augmented => augmented,
            beta_t => rewrite.beta_t,
            beta_a => rewrite.beta_a,
            beta_b => rewrite.beta_b,
            beta_s => rewrite.beta_s,
            max_steps => rewrite.max_steps,
            mode => rewrite.mode,
            merge_mode => merge_mode,
        }
        if let Some(n) = self.rewrite_limit {
            c.rewrite_limit = (n > 0).then_some(n);
        }
        if c.threads == 0 {
            return Err(Usage("--threads must be at least 1".into()).into());
        }
        c.rewrite.validate().map_err(|e| Usage(e.to_string()))?;
        Ok(c)
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.run_config()?;
    rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()?;
    macro_rules! typed {
        ($stage:ident) => {
            match cfg.precision {
                Precision::F32 => stages::$stage::<f32>(&cfg),
                Precision::F64 => stages::$stage::<f64>(&cfg),
            }
        };
    }
    match cli.command {
        Command::GenData => stages::gen_data(&cfg),
        Command::TrainMrc => typed!(train_mrc),
        Command::TrainAe => typed!(train_autoencoder),
        Command::Rewrite => typed!(rewrite),
        Command::Merge => stages::merge(&cfg),
        Command::Evaluate => typed!(evaluate),
        Command::Pipeline => typed!(pipeline),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
