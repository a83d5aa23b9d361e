//! `tmloc` command-line driver.

mod commands;
mod config;
mod curve;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tmloc::datamodel::TextMode;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "tmloc", version, about = "Weakly-supervised multimodal temporal localisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root; overrides `data_dir`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` (gen-data writes the dataset here).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint directory to load; eval and predict use a fresh initialisation without it.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Sample id for predict.
    #[arg(long, global = true)]
    sample: Option<String>,
    /// Selection divisor K; train accepts a comma list and runs one model per value.
    #[arg(long, global = true, value_delimiter = ',')]
    k_div: Vec<usize>,
    #[arg(long, global = true)]
    heads: Option<usize>,
    #[arg(long, global = true)]
    text_mode: Option<TextMode>,
    /// Split scored by eval.
    #[arg(long, global = true, default_value = "test")]
    split: String,
    #[arg(long, global = true)]
    no_encoder: bool,
    #[arg(long, global = true)]
    no_cma: bool,
    #[arg(long, global = true)]
    no_dms: bool,
    #[arg(long, global = true)]
    no_contrast: bool,
    #[arg(long, global = true)]
    no_mamil: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a synthetic dataset with train/, val/ and test/ splits.
    GenData,
    /// Train, writing checkpoints, train_log.csv and a held-out report.
    Train,
    /// Score a checkpoint on a labelled split (report.json, report.csv).
    Eval,
    /// Write curve.csv and curve.svg for one video.
    Predict,
    /// Train and score every row of the module ablation grid (ablation.csv).
    Ablate,
    /// List every configuration key with its current value, origin and meaning.
    Keys,
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(dir) = &self.data {
            cfg.data_dir = dir.clone();
        }
        if let Some(dir) = &self.out {
            cfg.out_dir = dir.clone();
        }
        if let Some(&k) = self.k_div.first() {
            cfg.train.loss.k_div = k;
        }
        if let Some(h) = self.heads {
            cfg.model.heads = h;
        }
        if let Some(mode) = self.text_mode {
            cfg.synth.text_mode = mode;
        }
        let m = &mut cfg.model;
        m.use_encoder &= !self.no_encoder;
        m.use_cma &= !self.no_cma;
        m.use_dms &= !self.no_dms;
        m.use_contrast &= !self.no_contrast;
        m.use_mamil &= !self.no_mamil;
        Ok(cfg)
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("MHL_THREADS") {
        let n: usize = raw
            .parse()
            .with_context(|| format!("MHL_THREADS must be a thread count, got {raw:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = cli.run_config()?;
    let checkpoint = cli.checkpoint.as_deref();
    match cli.command {
        Command::GenData => {
            let out = cli.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
            commands::gen_data(&cfg, &out)
        }
        Command::Train => {
            let ks = if cli.k_div.is_empty() {
                vec![cfg.train.loss.k_div]
            } else {
                cli.k_div.clone()
            };
            commands::train_cmd(&cfg, &ks, &cfg.out_dir)
        }
        Command::Eval => commands::eval_cmd(&cfg, checkpoint, &cli.split, &cfg.out_dir),
        Command::Predict => {
            let id = cli.sample.as_deref().context("predict needs --sample ID")?;
            commands::predict_cmd(&cfg, checkpoint, id, &cfg.out_dir)
        }
        Command::Ablate => commands::ablate_cmd(&cfg, &cfg.out_dir),
        Command::Keys => {
            print!("{}", config::describe_keys(&cfg));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
