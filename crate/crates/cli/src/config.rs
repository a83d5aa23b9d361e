//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error; keys that are absent keep their defaults.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use tmloc::datamodel::{CarrierSet, SyntheticSpec, TextMode};
use tmloc::model::{FusionVariant, ModelConfig, PositionalEncoding};
use tmloc::trainer::TrainConfig;

/// Where a default comes from: the reference training setup, or a choice made
/// for this tool.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Reference,
    Tool,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Reference => "reference",
            Origin::Tool => "tool",
        }
    }
}

/// Every accepted key with its origin and a one-line description.
pub const KEYS: &[(&str, Origin, &str)] = &[
    ("data_dir", Origin::Tool, "dataset root (with train/ val/ test/ or a flat manifest)"),
    ("out_dir", Origin::Tool, "output directory for runs, reports and curves"),
    ("seed", Origin::Tool, "seed for data generation, initialisation and shuffling"),
    ("num_videos", Origin::Tool, "synthetic videos to generate"),
    ("positive_fraction", Origin::Tool, "fraction of positive videos"),
    ("frames_min", Origin::Tool, "shortest video in frames"),
    ("frames_max", Origin::Tool, "longest video in frames"),
    ("segments_min", Origin::Tool, "fewest planted segments per positive video"),
    ("segments_max", Origin::Tool, "most planted segments per positive video"),
    ("segment_len_min", Origin::Tool, "shortest planted segment in frames"),
    ("segment_len_max", Origin::Tool, "longest planted segment in frames"),
    ("carriers", Origin::Tool, "comma list of carrier sets drawn uniformly (letters v, a, t)"),
    ("signal", Origin::Tool, "Euclidean length of the planted per-frame shift"),
    ("noise", Origin::Tool, "per-entry standard deviation of background noise"),
    ("dims", Origin::Reference, "feature widths video,audio,text"),
    ("fps", Origin::Tool, "frame rate used to place sentences on the frame grid"),
    ("text_mode", Origin::Reference, "text stream construction: sentence, naive or none"),
    ("sentence_len_min", Origin::Tool, "shortest synthetic sentence in frames"),
    ("sentence_len_max", Origin::Tool, "longest synthetic sentence in frames"),
    ("gap_probability", Origin::Tool, "chance of a silent gap before a sentence"),
    ("train_fraction", Origin::Tool, "share of videos in the training split"),
    ("val_fraction", Origin::Tool, "share of videos in the validation split"),
    ("hidden", Origin::Reference, "hidden width D"),
    ("heads", Origin::Reference, "attention heads"),
    ("ffn_width", Origin::Tool, "encoder feed-forward width"),
    ("use_encoder", Origin::Reference, "per-modality temporal encoders"),
    ("use_cma", Origin::Reference, "cross-modal attention in the fused branch"),
    ("use_dms", Origin::Reference, "per-frame modality gates"),
    ("use_contrast", Origin::Reference, "cross-modal contrastive term"),
    ("use_mamil", Origin::Reference, "modality-aware frame selection"),
    ("fusion", Origin::Reference, "fusion variant: early, late or dcm"),
    ("positional", Origin::Tool, "positional encoding: sinusoidal or none"),
    ("lr", Origin::Reference, "Adam learning rate"),
    ("batch_size", Origin::Reference, "videos per optimisation step"),
    ("epochs", Origin::Reference, "passes over the training split"),
    ("beta1", Origin::Tool, "Adam first-moment decay"),
    ("beta2", Origin::Tool, "Adam second-moment decay"),
    ("eps", Origin::Tool, "Adam denominator offset"),
    ("eval_every", Origin::Tool, "validate every this many epochs"),
    ("lambda_smooth", Origin::Reference, "weight of the smoothness term"),
    ("lambda_con", Origin::Reference, "weight of the contrastive term"),
    ("tau", Origin::Reference, "contrastive temperature"),
    ("k_div", Origin::Reference, "selection divisor K; n = ceil(T / K)"),
    ("max_ctr_frames", Origin::Tool, "per-video cap on contrastive frames, 0 for all"),
    ("ablation_seeds", Origin::Tool, "comma list of seeds for the ablation grid"),
];

/// `# origin: meaning` comment followed by `key = value` for every key.
pub fn describe_keys(cfg: &RunConfig) -> String {
    KEYS.iter()
        .map(|(k, origin, doc)| {
            format!("# {}: {doc}\n{k} = {}\n", origin.as_str(), cfg.get(k).unwrap_or_default())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub synth: SyntheticSpec,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            model: ModelConfig::with_dims(synth.dims),
            synth,
            train_fraction: 0.7,
            val_fraction: 0.15,
            train: TrainConfig::default(),
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(|s| parse(key, s.trim()))
        .collect()
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.set_seed(parse(key, value)?),
            "num_videos" => s.num_videos = parse(key, value)?,
            "positive_fraction" => s.positive_fraction = parse(key, value)?,
            "frames_min" => s.frames_min = parse(key, value)?,
            "frames_max" => s.frames_max = parse(key, value)?,
            "segments_min" => s.segments_min = parse(key, value)?,
            "segments_max" => s.segments_max = parse(key, value)?,
            "segment_len_min" => s.segment_len_min = parse(key, value)?,
            "segment_len_max" => s.segment_len_max = parse(key, value)?,
            "carriers" => s.carriers = parse_list::<CarrierSet>(key, value)?,
            "signal" => s.signal = parse(key, value)?,
            "noise" => s.noise = parse(key, value)?,
            "dims" => {
                let dims: Vec<usize> = parse_list(key, value)?;
                let dims: [usize; 3] = dims
                    .try_into()
                    .map_err(|_| anyhow!("dims: expected three widths, got {value:?}"))?;
                s.dims = dims;
                m.input_dims = dims;
            }
            "fps" => s.fps = parse(key, value)?,
            "text_mode" => s.text_mode = parse::<TextMode>(key, value)?,
            "sentence_len_min" => s.sentence_len_min = parse(key, value)?,
            "sentence_len_max" => s.sentence_len_max = parse(key, value)?,
            "gap_probability" => s.gap_probability = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "hidden" => m.hidden = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "ffn_width" => m.ffn_width = parse(key, value)?,
            "use_encoder" => m.use_encoder = parse(key, value)?,
            "use_cma" => m.use_cma = parse(key, value)?,
            "use_dms" => m.use_dms = parse(key, value)?,
            "use_contrast" => m.use_contrast = parse(key, value)?,
            "use_mamil" => m.use_mamil = parse(key, value)?,
            "fusion" => m.fusion = parse::<FusionVariant>(key, value)?,
            "positional" => m.positional = parse::<PositionalEncoding>(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "eps" => t.eps = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "lambda_smooth" => t.loss.lambda_smooth = parse(key, value)?,
            "lambda_con" => t.loss.lambda_con = parse(key, value)?,
            "tau" => t.loss.tau = parse(key, value)?,
            "k_div" => t.loss.k_div = parse(key, value)?,
            "max_ctr_frames" => {
                let cap: usize = parse(key, value)?;
                t.loss.max_ctr_frames = (cap > 0).then_some(cap);
            }
            "ablation_seeds" => self.ablation_seeds = parse_list(key, value)?,
            other => bail!("unknown key {other:?}"),
        }
        Ok(())
    }

    /// Current value of `key` in config-file syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.synth;
        let m = &self.model;
        let t = &self.train;
        Some(match key {
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "num_videos" => s.num_videos.to_string(),
            "positive_fraction" => s.positive_fraction.to_string(),
            "frames_min" => s.frames_min.to_string(),
            "frames_max" => s.frames_max.to_string(),
            "segments_min" => s.segments_min.to_string(),
            "segments_max" => s.segments_max.to_string(),
            "segment_len_min" => s.segment_len_min.to_string(),
            "segment_len_max" => s.segment_len_max.to_string(),
            "carriers" => join(&s.carriers),
            "signal" => s.signal.to_string(),
            "noise" => s.noise.to_string(),
            "dims" => join(&s.dims),
            "fps" => s.fps.to_string(),
            "text_mode" => s.text_mode.to_string(),
            "sentence_len_min" => s.sentence_len_min.to_string(),
            "sentence_len_max" => s.sentence_len_max.to_string(),
            "gap_probability" => s.gap_probability.to_string(),
            "train_fraction" => self.train_fraction.to_string(),
            "val_fraction" => self.val_fraction.to_string(),
            "hidden" => m.hidden.to_string(),
            "heads" => m.heads.to_string(),
            "ffn_width" => m.ffn_width.to_string(),
            "use_encoder" => m.use_encoder.to_string(),
            "use_cma" => m.use_cma.to_string(),
            "use_dms" => m.use_dms.to_string(),
            "use_contrast" => m.use_contrast.to_string(),
            "use_mamil" => m.use_mamil.to_string(),
            "fusion" => m.fusion.to_string(),
            "positional" => m.positional.to_string(),
            "lr" => t.lr.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "beta1" => t.beta1.to_string(),
            "beta2" => t.beta2.to_string(),
            "eps" => t.eps.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "lambda_smooth" => t.loss.lambda_smooth.to_string(),
            "lambda_con" => t.loss.lambda_con.to_string(),
            "tau" => t.loss.tau.to_string(),
            "k_div" => t.loss.k_div.to_string(),
            "max_ctr_frames" => t.loss.max_ctr_frames.unwrap_or(0).to_string(),
            "ablation_seeds" => join(&self.ablation_seeds),
            _ => return None,
        })
    }

    /// One seed drives data generation, initialisation and shuffling.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    /// The whole configuration in file syntax, one key per line in table order.
    pub fn render(&self) -> String {
        KEYS.iter()
            .map(|(k, _, _)| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let fractions = [self.train_fraction, self.val_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || self.train_fraction + self.val_fraction > 1.0 {
            bail!(
                "train_fraction {} and val_fraction {} must be in [0, 1] and sum to at most 1",
                self.train_fraction,
                self.val_fraction
            );
        }
        if self.ablation_seeds.is_empty() {
            bail!("ablation_seeds must list at least one seed");
        }
        Ok(())
    }
}
