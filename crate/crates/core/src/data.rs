//! Dataset manifests, filtering and splitting, and a seeded synthetic
//! audio-caption corpus.
//!
//! The synthetic corpus stands in for private data. Each pair gets a distinct
//! latent code (mood class, instrument, descriptor). Its frames mix a class
//! base vector, small instrument and descriptor offsets, a class-specific
//! oscillation and Gaussian noise, and its caption spells the code out as
//! words, so the caption is recoverable from the audio.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audiofeat::{
    chunk, read_clip, read_matrix, write_matrix, AudioClip, FeatureSequence, FEATURE_MAGIC, FRAMES_MAGIC,
};
use crate::error::{Error, Result};
use crate::model::{AudioInput, Example, ExtractorKind};
use crate::numcore::Matrix;
use crate::text::{random_vectors, tokenize, write_embeddings, Vocabulary};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

/// One manifest record. File paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<PathBuf>,
    pub caption: String,
    pub duration_seconds: f64,
}

pub fn read_manifest(path: &Path) -> Result<Vec<Pair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: Pair = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(pair.id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate id `{}`", pair.id),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn write_manifest(path: &Path, pairs: &[Pair]) -> Result<()> {
    let mut out = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut out, p).expect("pair serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterRule {
    Duration,
    TokenCount,
    Duplicate,
}

impl fmt::Display for FilterRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterRule::Duration => "duration",
            FilterRule::TokenCount => "token-count",
            FilterRule::Duplicate => "duplicate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub id: String,
    pub rule: FilterRule,
}

pub const MIN_DURATION: f64 = 30.0;
pub const MAX_DURATION: f64 = 360.0;
pub const MIN_TOKENS: usize = 3;
pub const MAX_TOKENS: usize = 22;

/// Keeps pairs lasting 30–360 s whose captions have 3–22 tokens and repeat
/// no earlier kept caption. Captions are compared after tokenization.
pub fn filter_pairs(pairs: &[Pair]) -> (Vec<Pair>, Vec<Rejection>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    for p in pairs {
        let tokens = tokenize(&p.caption);
        let rule = if !(MIN_DURATION..=MAX_DURATION).contains(&p.duration_seconds) {
            Some(FilterRule::Duration)
        } else if !(MIN_TOKENS..=MAX_TOKENS).contains(&tokens.len()) {
            Some(FilterRule::TokenCount)
        } else if seen.contains(&tokens) {
            Some(FilterRule::Duplicate)
        } else {
            None
        };
        match rule {
            Some(rule) => rejected.push(Rejection { id: p.id.clone(), rule }),
            None => {
                seen.insert(tokens);
                kept.push(p.clone());
            }
        }
    }
    (kept, rejected)
}

pub fn write_rejections(path: &Path, rejected: &[Rejection]) -> Result<()> {
    let mut out = String::new();
    for r in rejected {
        out.push_str(&format!("{}\t{}\n", r.id, r.rule));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle, then contiguous train/val/test slices. Validation and
/// test sizes are floored; the remainder goes to training.
pub fn split(ids: &[String], spec: &SplitSpec) -> Result<Splits> {
    let ratios = [spec.train, spec.val, spec.test];
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split ratios {}/{}/{} must be in [0, 1] and sum to 1",
            spec.train, spec.val, spec.test
        )));
    }
    if ids.len() < 3 {
        return Err(Error::Data(format!("cannot split {} pairs three ways", ids.len())));
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n = order.len() as f64;
    let n_val = (n * spec.val).floor() as usize;
    let n_test = (n * spec.test).floor() as usize;
    let n_train = order.len() - n_val - n_test;
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Splits {
        train: order,
        val,
        test,
    })
}

/// Builds model inputs for `pairs` stored under `root`.
///
/// The file-backed extractor reads each pair's feature file; when frames are
/// also present their chunk count must match the feature rows. The trainable
/// extractor chunks the frames itself.
pub fn load_examples(
    root: &Path,
    pairs: &[&Pair],
    vocab: &Vocabulary,
    max_len: usize,
    extractor: ExtractorKind,
    chunk_seconds: f64,
) -> Result<Vec<Example>> {
    pairs
        .iter()
        .map(|p| {
            let clip = p
                .frames
                .as_ref()
                .map(|f| read_clip(&root.join(f), p.duration_seconds))
                .transpose()?;
            let audio = match extractor {
                ExtractorKind::FrozenFile => {
                    let rel = p.features.as_ref().ok_or_else(|| {
                        Error::Data(format!("pair `{}` has no feature file for the file-backed extractor", p.id))
                    })?;
                    let features = read_matrix(&root.join(rel), FEATURE_MAGIC)?;
                    if let Some(clip) = &clip {
                        let chunks = chunk(clip, chunk_seconds)?;
                        if chunks.len() != features.rows() {
                            return Err(Error::Data(format!(
                                "feature file for `{}` has {} rows but the clip has {} chunks",
                                p.id,
                                features.rows(),
                                chunks.len()
                            )));
                        }
                    }
                    AudioInput::Features(FeatureSequence::new(features))
                }
                ExtractorKind::Trainable => {
                    let clip = clip.ok_or_else(|| {
                        Error::Data(format!("pair `{}` has no frame file for the trainable extractor", p.id))
                    })?;
                    AudioInput::Chunks(chunk(&clip, chunk_seconds)?)
                }
            };
            Ok(Example {
                id: p.id.clone(),
                audio,
                caption: vocab.encode(&tokenize(&p.caption), max_len),
            })
        })
        .collect()
}

const MOODS: [[&str; 2]; 8] = [
    ["calm", "gentle"],
    ["dark", "brooding"],
    ["upbeat", "bright"],
    ["epic", "heroic"],
    ["playful", "quirky"],
    ["tense", "suspenseful"],
    ["dreamy", "hazy"],
    ["energetic", "driving"],
];
const INSTRUMENTS: [&str; 6] = ["piano", "guitar", "strings", "synth", "drums", "flute"];
const DESCRIPTORS: [&str; 6] = ["melody", "groove", "soundscape", "motif", "anthem", "ballad"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub pairs: usize,
    /// Number of mood classes `K` (2..=8).
    pub classes: usize,
    pub instruments: usize,
    pub descriptors: usize,
    /// Frame width `F`.
    pub frame_dim: usize,
    pub frame_rate: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub chunk_seconds: f64,
    /// Standard deviation of per-frame Gaussian noise.
    pub noise: f64,
    /// Scale of instrument and descriptor offsets relative to unit class bases.
    pub detail_scale: f64,
    /// Width of the stand-in word vectors written to `embeddings.txt`.
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pairs: 60,
            classes: 8,
            instruments: 6,
            descriptors: 6,
            frame_dim: 16,
            frame_rate: 4.0,
            min_seconds: 30.0,
            max_seconds: 60.0,
            chunk_seconds: 3.0,
            noise: 0.1,
            detail_scale: 0.5,
            embed_dim: 32,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MOODS.len()).contains(&self.classes) {
            return Err(Error::Config(format!("classes must be in 2..={}", MOODS.len())));
        }
        if !(1..=INSTRUMENTS.len()).contains(&self.instruments) || !(1..=DESCRIPTORS.len()).contains(&self.descriptors) {
            return Err(Error::Config(format!(
                "instruments must be in 1..={} and descriptors in 1..={}",
                INSTRUMENTS.len(),
                DESCRIPTORS.len()
            )));
        }
        let codes = self.classes * self.instruments * self.descriptors;
        if self.pairs == 0 || self.pairs > codes {
            return Err(Error::Config(format!(
                "{} pairs requested but only {codes} distinct captions exist",
                self.pairs
            )));
        }
        if self.frame_dim == 0 || self.embed_dim == 0 {
            return Err(Error::Config("frame_dim and embed_dim must be positive".into()));
        }
        if !(self.frame_rate > 0.0 && self.chunk_seconds > 0.0) {
            return Err(Error::Config("frame_rate and chunk_seconds must be positive".into()));
        }
        if !(self.min_seconds >= self.chunk_seconds && self.max_seconds >= self.min_seconds) {
            return Err(Error::Config("need chunk_seconds <= min_seconds <= max_seconds".into()));
        }
        if !(self.noise >= 0.0 && self.detail_scale >= 0.0) {
            return Err(Error::Config("noise and detail_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// One generated pair held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub id: String,
    pub class: usize,
    pub instrument: usize,
    pub descriptor: usize,
    pub caption: String,
    pub clip: AudioClip,
}

/// Generates the corpus in memory. Frames are rounded to `f32`, matching
/// what the frame files store.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SynthItem>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f = cfg.frame_dim;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let gaussian_vec = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        (0..f).map(|_| scale * unit.sample(rng)).collect()
    };
    let bases: Vec<Vec<f64>> = (0..cfg.classes).map(|_| gaussian_vec(&mut rng, 1.0)).collect();
    let directions: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| {
            let v = gaussian_vec(&mut rng, 1.0);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let freqs: Vec<f64> = (0..cfg.classes).map(|_| rng.random_range(0.05..0.5)).collect();
    let inst_offsets: Vec<Vec<f64>> = (0..cfg.instruments).map(|_| gaussian_vec(&mut rng, cfg.detail_scale)).collect();
    let desc_offsets: Vec<Vec<f64>> = (0..cfg.descriptors).map(|_| gaussian_vec(&mut rng, cfg.detail_scale)).collect();

    let per_class = cfg.instruments * cfg.descriptors;
    let codes = index::sample(&mut rng, cfg.classes * per_class, cfg.pairs).into_vec();
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let width = (cfg.pairs as f64).log10().floor() as usize + 1;

    codes
        .into_iter()
        .enumerate()
        .map(|(i, code)| {
            let (c, rest) = (code / per_class, code % per_class);
            let (inst, desc) = (rest / cfg.descriptors, rest % cfg.descriptors);
            let seconds = rng.random_range(cfg.min_seconds..=cfg.max_seconds);
            let n_frames = ((seconds * cfg.frame_rate).round() as usize).max(1);
            let mut data = Vec::with_capacity(n_frames * f);
            for t in 0..n_frames {
                let time = t as f64 / cfg.frame_rate;
                let wave = 0.5 * (std::f64::consts::TAU * freqs[c] * time).sin();
                for j in 0..f {
                    let v = bases[c][j] + inst_offsets[inst][j] + desc_offsets[desc][j] + wave * directions[c][j]
                        + noise.sample(&mut rng);
                    data.push(v as f32 as f64);
                }
            }
            let frames = Matrix::from_vec(n_frames, f, data)?;
            let [m1, m2] = MOODS[c];
            Ok(SynthItem {
                id: format!("clip{:0width$}", i),
                class: c,
                instrument: inst,
                descriptor: desc,
                caption: format!("{m1} {m2} {} {} theme", INSTRUMENTS[inst], DESCRIPTORS[desc]),
                clip: AudioClip::new(frames, cfg.frame_rate)?,
            })
        })
        .collect()
}

/// Per-chunk frame means: the frozen "pretrained" features (`k = F`).
pub fn chunk_mean_features(clip: &AudioClip, chunk_seconds: f64) -> Result<Matrix> {
    let chunks = chunk(clip, chunk_seconds)?;
    let rows: Vec<Vec<f64>> = chunks
        .chunks
        .iter()
        .map(|c| {
            let mut mean = vec![0.0; c.cols()];
            for row in c.iter_rows() {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean.into_iter().map(|m| m / c.rows() as f64).collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}

/// Writes a synthetic corpus under `out`: `manifest.jsonl`, `frames/*.mca`,
/// `features/*.mcf` and stand-in word vectors in `embeddings.txt`.
pub fn generate_synthetic(cfg: &SynthConfig, out: &Path) -> Result<Vec<Pair>> {
    let items = synthesize(cfg)?;
    for dir in [out.to_path_buf(), out.join("frames"), out.join("features")] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut pairs = Vec::with_capacity(items.len());
    for item in &items {
        let frames = PathBuf::from("frames").join(format!("{}.mca", item.id));
        let features = PathBuf::from("features").join(format!("{}.mcf", item.id));
        write_matrix(&out.join(&frames), FRAMES_MAGIC, &item.clip.frames)?;
        write_matrix(&out.join(&features), FEATURE_MAGIC, &chunk_mean_features(&item.clip, cfg.chunk_seconds)?)?;
        pairs.push(Pair {
            id: item.id.clone(),
            features: Some(features),
            frames: Some(frames),
            caption: item.caption.clone(),
            duration_seconds: item.clip.duration(),
        });
    }
    write_manifest(&out.join(MANIFEST_FILE), &pairs)?;

    let mut words: Vec<&str> = MOODS[..cfg.classes].iter().flatten().copied().collect();
    words.extend(&INSTRUMENTS[..cfg.instruments]);
    words.extend(&DESCRIPTORS[..cfg.descriptors]);
    words.push("theme");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e3b);
    let vectors = random_vectors(words.len(), cfg.embed_dim, 1.0, &mut rng);
    let path = out.join(EMBEDDINGS_FILE);
    write_embeddings(&path, words.iter().copied().zip(vectors.iter().map(Vec::as_slice)))?;
    Ok(pairs)
}
