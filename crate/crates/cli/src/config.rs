//! Per-command settings resolved from flags, then the config file, then
//! built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use muscaps::model::{ExtractorKind, Fusion};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

pub const OUT_ENV: &str = "MUSCAPS_OUT";

/// Output root: `$MUSCAPS_OUT` if set, else the working directory.
pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// Loads the `[section]` table of a TOML config file, or defaults when no file was given.
pub fn section<T: DeserializeOwned + Default>(file: Option<&Path>, name: &str) -> anyhow::Result<T> {
    let Some(path) = file else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| muscaps::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut doc: toml::Table =
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    match doc.remove(name) {
        None => Ok(T::default()),
        Some(v) => v
            .try_into()
            .map_err(|e| UsageError(format!("{}: [{name}]: {e}", path.display())).into()),
    }
}

/// Writes the resolved settings next to a command's outputs.
pub fn echo<T: Serialize>(dir: &Path, command: &str, cfg: &T) -> anyhow::Result<()> {
    let path = dir.join(format!("run_config_{command}.toml"));
    let mut doc = toml::Table::new();
    doc.insert(command.into(), toml::Value::try_from(cfg)?);
    fs::write(&path, toml::to_string(&doc)?).map_err(|e| muscaps::Error::Io { path, source: e })?;
    Ok(())
}

macro_rules! overlay {
    ($cfg:expr, $flags:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $flags.$field.clone() { $cfg.$field = v.into(); } )*
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Dims {
    /// H = 64, d = 32: trains in seconds on the synthetic corpus.
    Small,
    /// H = 256, d = 300.
    Full,
}

impl Dims {
    pub fn hidden(self) -> usize {
        match self {
            Dims::Small => 64,
            Dims::Full => 256,
        }
    }

    pub fn embed(self) -> usize {
        match self {
            Dims::Small => 32,
            Dims::Full => 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Decode {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

fn parse_fusion(s: &str) -> Result<Fusion, String> {
    s.parse().map_err(|e: muscaps::Error| e.to_string())
}

fn parse_extractor(s: &str) -> Result<ExtractorKind, String> {
    s.parse().map_err(|e: muscaps::Error| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenData {
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub pairs: usize,
    pub classes: usize,
    pub instruments: usize,
    pub descriptors: usize,
    pub frame_dim: usize,
    pub frame_rate: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub chunk_seconds: f64,
    pub noise: f64,
    pub embed_dim: usize,
}

impl Default for GenData {
    fn default() -> Self {
        let s = muscaps::data::SynthConfig::default();
        Self {
            out: None,
            seed: s.seed,
            pairs: s.pairs,
            classes: s.classes,
            instruments: s.instruments,
            descriptors: s.descriptors,
            frame_dim: s.frame_dim,
            frame_rate: s.frame_rate,
            min_seconds: s.min_seconds,
            max_seconds: s.max_seconds,
            chunk_seconds: s.chunk_seconds,
            noise: s.noise,
            embed_dim: s.embed_dim,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataFlags {
    /// Corpus directory [default: $MUSCAPS_OUT/corpus]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub instruments: Option<usize>,
    #[arg(long)]
    pub descriptors: Option<usize>,
    #[arg(long)]
    pub frame_dim: Option<usize>,
    #[arg(long)]
    pub frame_rate: Option<f64>,
    #[arg(long)]
    pub min_seconds: Option<f64>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    #[arg(long)]
    pub chunk_seconds: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

impl GenData {
    pub fn resolve(file: Option<&Path>, flags: &GenDataFlags) -> anyhow::Result<Self> {
        let mut c: Self = section(file, "gen-data")?;
        overlay!(c, flags; seed, pairs, classes, instruments, descriptors, frame_dim, frame_rate,
            min_seconds, max_seconds, chunk_seconds, noise, embed_dim);
        if let Some(out) = &flags.out {
            c.out = Some(out.clone());
        }
        c.out = Some(c.out.take().unwrap_or_else(|| out_root().join("corpus")));
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Train {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub fusion: Fusion,
    pub pretrained: ExtractorKind,
    pub seed: u64,
    pub dims: Dims,
    /// Overrides the hidden size implied by `dims`.
    pub hidden: Option<usize>,
    /// Overrides the width implied by `dims` or the corpus embeddings file.
    pub embed_dim: Option<usize>,
    /// Chunk feature width `k` for the trainable frontend.
    pub feature_dim: usize,
    pub chunk_seconds: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub patience: usize,
    pub max_len: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for Train {
    fn default() -> Self {
        let t = muscaps::train::TrainConfig::default();
        let s = muscaps::data::SplitSpec::default();
        Self {
            data: None,
            out: None,
            fusion: Fusion::Attention,
            pretrained: ExtractorKind::FrozenFile,
            seed: 0,
            dims: Dims::Small,
            hidden: None,
            embed_dim: None,
            feature_dim: 16,
            chunk_seconds: 3.0,
            lr: t.initial_lr,
            epochs: t.max_epochs,
            batch_size: t.batch_size,
            dropout: t.dropout,
            patience: t.patience,
            max_len: t.max_len,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            train_ratio: s.train,
            val_ratio: s.val,
            test_ratio: s.test,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Corpus directory holding manifest.jsonl
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run directory [default: $MUSCAPS_OUT or .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// early | late | attention
    #[arg(long, value_parser = parse_fusion)]
    pub fusion: Option<Fusion>,
    /// frozen-file | trainable
    #[arg(long, value_parser = parse_extractor)]
    pub pretrained: Option<ExtractorKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub dims: Option<Dims>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub chunk_seconds: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    #[arg(long)]
    pub val_ratio: Option<f64>,
    #[arg(long)]
    pub test_ratio: Option<f64>,
}

impl Train {
    pub fn resolve(file: Option<&Path>, flags: &TrainFlags) -> anyhow::Result<Self> {
        let mut c: Self = section(file, "train")?;
        overlay!(c, flags; fusion, pretrained, seed, dims, feature_dim, chunk_seconds, lr, epochs,
            batch_size, dropout, patience, max_len, clip_norm, train_ratio, val_ratio, test_ratio);
        for (slot, flag) in [(&mut c.hidden, flags.hidden), (&mut c.embed_dim, flags.embed_dim)] {
            if flag.is_some() {
                *slot = flag;
            }
        }
        if flags.data.is_some() {
            c.data = flags.data.clone();
        }
        if c.data.is_none() {
            return Err(UsageError("train needs --data".into()).into());
        }
        c.out = Some(flags.out.clone().or(c.out.take()).unwrap_or_else(out_root));
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Caption {
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: SplitName,
    pub decode: Decode,
    /// Defaults to 5 for early fusion and 3 otherwise.
    pub beam_size: Option<usize>,
    /// Content-token cap; defaults to the checkpoint's `max_len`.
    pub max_len: Option<usize>,
}

impl Default for Caption {
    fn default() -> Self {
        Self {
            ckpt: None,
            data: None,
            out: None,
            split: SplitName::Test,
            decode: Decode::Beam,
            beam_size: None,
            max_len: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct CaptionFlags {
    /// Checkpoint directory, e.g. checkpoints/best
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Corpus directory the checkpoint was trained on
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for captions.tsv [default: $MUSCAPS_OUT or .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitName>,
    #[arg(long, value_enum)]
    pub decode: Option<Decode>,
    #[arg(long)]
    pub beam_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

impl Caption {
    pub fn resolve(file: Option<&Path>, flags: &CaptionFlags) -> anyhow::Result<Self> {
        let mut c: Self = section(file, "caption")?;
        overlay!(c, flags; split, decode);
        for (slot, flag) in [(&mut c.beam_size, flags.beam_size), (&mut c.max_len, flags.max_len)] {
            if flag.is_some() {
                *slot = flag;
            }
        }
        for (slot, flag) in [(&mut c.ckpt, &flags.ckpt), (&mut c.data, &flags.data)] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if c.ckpt.is_none() || c.data.is_none() {
            return Err(UsageError("caption needs --ckpt and --data".into()).into());
        }
        c.out = Some(flags.out.clone().or(c.out.take()).unwrap_or_else(out_root));
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Eval {
    pub candidates: Option<PathBuf>,
    /// A caption file, or a corpus directory whose manifest supplies the references.
    pub references: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalFlags {
    /// Generated captions, `id<TAB>caption` per line
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Reference caption file or corpus directory
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Output directory for report.tsv and report.json [default: $MUSCAPS_OUT or .]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Eval {
    pub fn resolve(file: Option<&Path>, flags: &EvalFlags) -> anyhow::Result<Self> {
        let mut c: Self = section(file, "eval")?;
        for (slot, flag) in [(&mut c.candidates, &flags.candidates), (&mut c.references, &flags.references)] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if c.candidates.is_none() || c.references.is_none() {
            return Err(UsageError("eval needs --candidates and --references".into()).into());
        }
        c.out = Some(flags.out.clone().or(c.out.take()).unwrap_or_else(out_root));
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Retrieve {
    pub ckpt: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub split: SplitName,
}

impl Default for Retrieve {
    fn default() -> Self {
        Self {
            ckpt: None,
            data: None,
            out: None,
            split: SplitName::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct RetrieveFlags {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for ranks.tsv and retrieval.json [default: $MUSCAPS_OUT or .]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitName>,
}

impl Retrieve {
    pub fn resolve(file: Option<&Path>, flags: &RetrieveFlags) -> anyhow::Result<Self> {
        let mut c: Self = section(file, "retrieve")?;
        overlay!(c, flags; split);
        for (slot, flag) in [(&mut c.ckpt, &flags.ckpt), (&mut c.data, &flags.data)] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if c.ckpt.is_none() || c.data.is_none() {
            return Err(UsageError("retrieve needs --ckpt and --data".into()).into());
        }
        c.out = Some(flags.out.clone().or(c.out.take()).unwrap_or_else(out_root));
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct GradCheck {
    pub dims: Dims,
    pub seed: u64,
    pub fusion: Option<Fusion>,
    pub pretrained: Option<ExtractorKind>,
    pub eps: f64,
    pub tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            dims: Dims::Small,
            seed: 0,
            fusion: None,
            pretrained: None,
            eps: 1e-5,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Args)]
pub struct GradCheckFlags {
    /// Only `small` is supported: the check is exhaustive over every parameter
    #[arg(long, value_enum)]
    pub dims: Option<Dims>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Restrict to one fusion mode [default: all]
    #[arg(long, value_parser = parse_fusion)]
    pub fusion: Option<Fusion>,
    /// Restrict to one extractor [default: both]
    #[arg(long, value_parser = parse_extractor)]
    pub pretrained: Option<ExtractorKind>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
}

impl GradCheck {
    pub fn resolve(file: Option<&Path>, flags: &GradCheckFlags) -> anyhow::Result<Self> {
        let mut c: Self = section(file, "grad-check")?;
        overlay!(c, flags; dims, seed, eps, tol);
        if flags.fusion.is_some() {
            c.fusion = flags.fusion;
        }
        if flags.pretrained.is_some() {
            c.pretrained = flags.pretrained;
        }
        if c.dims != Dims::Small {
            return Err(UsageError("grad-check supports only --dims small".into()).into());
        }
        Ok(c)
    }
}
