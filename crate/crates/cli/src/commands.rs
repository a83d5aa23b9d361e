use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tmloc::datamodel::io::{read_dataset, write_dataset, MANIFEST};
use tmloc::datamodel::{generate_synthetic, split_dataset, VideoSample};
use tmloc::metrics::EvalReport;
use tmloc::model::{forward, load_checkpoint, ModelConfig, ModelParams};
use tmloc::trainer::{evaluate_model, train, TrainConfig, TrainState};

use crate::config::RunConfig;
use crate::curve::{curve_csv, curve_svg};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

pub struct Splits {
    pub train: Vec<VideoSample>,
    pub val: Vec<VideoSample>,
    pub test: Vec<VideoSample>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Result<&[VideoSample]> {
        Ok(match name {
            "train" => &self.train,
            "val" => &self.val,
            "test" => &self.test,
            other => bail!("unknown split {other:?} (expected train, val or test)"),
        })
    }

    fn all(&self) -> impl Iterator<Item = &VideoSample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Reads `dir/{train,val,test}`; a flat manifest directory is split by the
/// configured fractions instead.
pub fn load_splits(dir: &Path, cfg: &RunConfig) -> Result<Splits> {
    if dir.join(MANIFEST).is_file() {
        let all = read_dataset(dir)?;
        let (train, val, test) = split_dataset(all, cfg.train_fraction, cfg.val_fraction);
        return Ok(Splits { train, val, test });
    }
    if !dir.join("train").join(MANIFEST).is_file() {
        bail!("{} holds neither a manifest nor a train/ split", dir.display());
    }
    let read = |name: &str| -> Result<Vec<VideoSample>> {
        let sub = dir.join(name);
        if sub.join(MANIFEST).is_file() {
            Ok(read_dataset(&sub)?)
        } else {
            Ok(Vec::new())
        }
    };
    Ok(Splits {
        train: read("train")?,
        val: read("val")?,
        test: read("test")?,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_file(&dir.join("report.json"), &(report.to_json() + "\n"))?;
    write_file(
        &dir.join("report.csv"),
        &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    )
}

/// Model config with input widths taken from the data.
fn model_for(cfg: &RunConfig, splits: &Splits) -> Result<ModelConfig> {
    let first = splits.all().next().context("dataset is empty")?;
    Ok(ModelConfig {
        input_dims: first.features.dims(),
        ..cfg.model.clone()
    })
}

fn params_for(checkpoint: Option<&Path>, model: &ModelConfig) -> Result<(ModelParams, ModelConfig)> {
    match checkpoint {
        Some(dir) => {
            let (params, saved) = load_checkpoint(dir)?;
            Ok((params, saved))
        }
        None => Ok((ModelParams::init(model)?, model.clone())),
    }
}

fn describe(name: &str, samples: &[VideoSample]) -> String {
    let pos = samples.iter().filter(|s| s.label).count();
    format!("{name}: {} videos, {pos} positive", samples.len())
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let all = generate_synthetic(&cfg.synth)?;
    let (train, val, test) = split_dataset(all, cfg.train_fraction, cfg.val_fraction);
    for (name, samples) in SPLITS.iter().zip([&train, &val, &test]) {
        write_dataset(samples, &out.join(name))?;
        println!("{}", describe(name, samples));
    }
    Ok(())
}

/// Scores `params` on the test split, or on validation when there is no test split.
fn held_out<'a>(splits: &'a Splits) -> &'a [VideoSample] {
    if splits.test.is_empty() {
        &splits.val
    } else {
        &splits.test
    }
}

pub struct TrainRun {
    pub state: TrainState,
    pub report: Option<EvalReport>,
}

fn train_one(
    splits: &Splits,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    out: &Path,
) -> Result<TrainRun> {
    let cfg = TrainConfig {
        checkpoint_dir: Some(out.join("checkpoints")),
        ..train_cfg.clone()
    };
    let outcome = train(&splits.train, &splits.val, model, &cfg)?;
    outcome.state.write_log(&out.join("train_log.csv"))?;
    let eval_set = held_out(splits);
    let report = if eval_set.is_empty() {
        None
    } else {
        let r = evaluate_model(eval_set, &outcome.params, model, cfg.loss.k_div)?;
        write_report(out, &r)?;
        Some(r)
    };
    Ok(TrainRun {
        state: outcome.state,
        report,
    })
}

pub fn train_cmd(cfg: &RunConfig, k_divs: &[usize], out: &Path) -> Result<()> {
    cfg.validate()?;
    let splits = load_splits(&cfg.data_dir, cfg)?;
    let model = model_for(cfg, &splits)?;
    println!("{}", describe("train", &splits.train));
    write_file(&out.join("config.txt"), &cfg.render())?;
    for &k in k_divs {
        let dir = if k_divs.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("k{k}"))
        };
        let mut train_cfg = cfg.train.clone();
        train_cfg.loss.k_div = k;
        let run = train_one(&splits, &model, &train_cfg, &dir)?;
        let losses = run.state.epoch_losses();
        print!(
            "k_div {k}: loss {:.4} -> {:.4}",
            losses.first().copied().unwrap_or(f64::NAN),
            losses.last().copied().unwrap_or(f64::NAN)
        );
        match &run.report {
            Some(r) => println!(", held-out {}", r.to_json()),
            None => println!(),
        }
    }
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str, out: &Path) -> Result<()> {
    cfg.validate()?;
    let splits = load_splits(&cfg.data_dir, cfg)?;
    let model = model_for(cfg, &splits)?;
    let (params, model) = params_for(checkpoint, &model)?;
    let samples = splits.get(split)?;
    let report = evaluate_model(samples, &params, &model, cfg.train.loss.k_div)?;
    write_report(out, &report)?;
    println!("{}", report.to_json());
    Ok(())
}

pub fn predict_cmd(cfg: &RunConfig, checkpoint: Option<&Path>, sample_id: &str, out: &Path) -> Result<()> {
    cfg.validate()?;
    let splits = load_splits(&cfg.data_dir, cfg)?;
    let model = model_for(cfg, &splits)?;
    let (params, model) = params_for(checkpoint, &model)?;
    let sample = splits
        .all()
        .find(|s| s.id == sample_id)
        .ok_or_else(|| tmloc::Error::UnknownSample(sample_id.to_string()))?;
    let trace = forward(&sample.features, &params, &model, cfg.train.loss.k_div)?;
    write_file(&out.join("curve.csv"), &curve_csv(&trace))?;
    write_file(&out.join("curve.svg"), &curve_svg(&sample.id, &trace.fused))?;
    println!("{} frames written to {}", trace.frames(), out.display());
    Ok(())
}

pub const ABLATION_HEADER: &str = "variant,seed,mAP,roc_auc,pr_auc";

pub fn ablate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let splits = load_splits(&cfg.data_dir, cfg)?;
    let base = model_for(cfg, &splits)?;
    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for (name, row) in base.ablation_grid() {
        let mut maps = Vec::new();
        for &seed in &cfg.ablation_seeds {
            let model = ModelConfig { seed, ..row.clone() };
            let train_cfg = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let dir: PathBuf = out.join(name).join(format!("seed{seed}"));
            let run = train_one(&splits, &model, &train_cfg, &dir)?;
            let r = run.report.context("ablation needs a val or test split to score")?;
            let roc = r.roc_auc.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!("{name},{seed},{},{roc},{}\n", r.map, r.pr_auc));
            maps.push(r.map);
        }
        let mean = maps.iter().sum::<f64>() / maps.len() as f64;
        csv.push_str(&format!("{name},mean,{mean},,\n"));
        println!("{name}: mean mAP {mean:.4}");
    }
    write_file(&out.join("ablation.csv"), &csv)
}
