//! Chunk-level audio features.
//!
//! A clip is a matrix of frame features (`N_frames × F`). It is cut into
//! non-overlapping `n`-second chunks, each chunk is mapped to a `k`-vector by
//! an extractor, and the resulting `L × k` sequence can be mean-pooled into a
//! single track embedding.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"MCF1";
pub const FRAMES_MAGIC: &[u8; 4] = b"MCA1";

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// `N_frames × F`
    pub frames: Matrix,
    pub frame_rate: f64,
}

impl AudioClip {
    pub fn new(frames: Matrix, frame_rate: f64) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::Argument(format!("frame rate {frame_rate} must be positive")));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn duration(&self) -> f64 {
        self.frames.rows() as f64 / self.frame_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSet {
    /// `L` blocks, each `n_frames × F`.
    pub chunks: Vec<Matrix>,
    pub chunk_seconds: f64,
}

impl ChunkSet {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn frame_dim(&self) -> usize {
        self.chunks.first().map_or(0, Matrix::cols)
    }

    pub fn frames_per_chunk(&self) -> usize {
        self.chunks.first().map_or(0, Matrix::rows)
    }
}

/// `L × k` chunk-level features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub features: Matrix,
}

impl FeatureSequence {
    pub fn new(features: Matrix) -> Self {
        Self { features }
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEmbedding(pub Vec<f64>);

/// Splits a clip into consecutive `n`-second chunks; a trailing remainder
/// shorter than `n` is dropped.
pub fn chunk(clip: &AudioClip, seconds: f64) -> Result<ChunkSet> {
    if !(seconds > 0.0) {
        return Err(Error::Argument(format!("chunk length {seconds} s must be positive")));
    }
    let per_chunk = (seconds * clip.frame_rate).round() as usize;
    if per_chunk == 0 {
        return Err(Error::Argument(format!(
            "{seconds} s at {} frames/s is shorter than one frame",
            clip.frame_rate
        )));
    }
    let count = clip.frames.rows() / per_chunk;
    if count == 0 {
        return Err(Error::Data(format!(
            "clip of {:.3} s is shorter than one {seconds} s chunk",
            clip.duration()
        )));
    }
    let width = clip.frames.cols();
    let chunks = (0..count)
        .map(|i| {
            let start = i * per_chunk * width;
            let data = clip.frames.as_slice()[start..start + per_chunk * width].to_vec();
            Matrix::from_vec(per_chunk, width, data)
        })
        .collect::<Result<_>>()?;
    Ok(ChunkSet {
        chunks,
        chunk_seconds: seconds,
    })
}

pub fn mean_pool(seq: &FeatureSequence) -> Result<TrackEmbedding> {
    let l = seq.len();
    if l == 0 {
        return Err(Error::Argument("mean_pool of an empty feature sequence".into()));
    }
    let mut acc = vec![0.0; seq.dim()];
    for row in seq.features.iter_rows() {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= l as f64);
    Ok(TrackEmbedding(acc))
}

/// Temporal 1-D convolution (width 3, `F → k` channels, valid padding),
/// `tanh`, then the mean over each chunk's output positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFrontend {
    /// `k × 3F`; columns are `[frame t | frame t+1 | frame t+2]`.
    pub weight: Matrix,
    /// `k × 1`
    pub bias: Matrix,
}

pub const CONV_WIDTH: usize = 3;

/// Per-chunk `tanh` outputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FrontendCache {
    activations: Vec<Matrix>,
}

impl ConvFrontend {
    pub fn zeros(frame_dim: usize, k: usize) -> Self {
        Self {
            weight: Matrix::zeros(k, CONV_WIDTH * frame_dim),
            bias: Matrix::zeros(k, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(frame_dim: usize, k: usize, rng: &mut R) -> Self {
        let fan_in = (CONV_WIDTH * frame_dim) as f64;
        Self {
            weight: Matrix::uniform(k, CONV_WIDTH * frame_dim, 1.0 / fan_in.sqrt(), rng),
            bias: Matrix::zeros(k, 1),
        }
    }

    pub fn frame_dim(&self) -> usize {
        self.weight.cols() / CONV_WIDTH
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn check(&self, chunks: &ChunkSet) -> Result<()> {
        if chunks.is_empty() {
            return Err(Error::Argument("extract from an empty chunk set".into()));
        }
        if chunks.frame_dim() != self.frame_dim() {
            return Err(Error::shape("extract", "chunk frames", self.frame_dim(), chunks.frame_dim()));
        }
        if chunks.frames_per_chunk() < CONV_WIDTH {
            return Err(Error::shape(
                "extract",
                "frames per chunk",
                format!(">= {CONV_WIDTH}"),
                chunks.frames_per_chunk(),
            ));
        }
        Ok(())
    }

    /// Convolution outputs before bias and `tanh`, one `(n_frames − 2) × k`
    /// matrix per chunk.
    pub fn linear_response(&self, chunks: &ChunkSet) -> Result<Vec<Matrix>> {
        self.check(chunks)?;
        chunks
            .chunks
            .iter()
            .map(|c| {
                let rows: Vec<Vec<f64>> = windows(c).map(|w| self.weight.matvec(&w)).collect();
                Matrix::from_rows(&rows)
            })
            .collect()
    }

    pub fn forward(&self, chunks: &ChunkSet) -> Result<(FeatureSequence, FrontendCache)> {
        let responses = self.linear_response(chunks)?;
        let k = self.out_dim();
        let mut features = Matrix::zeros(chunks.len(), k);
        let mut activations = Vec::with_capacity(chunks.len());
        for (i, mut resp) in responses.into_iter().enumerate() {
            let positions = resp.rows();
            for t in 0..positions {
                for (v, b) in resp.row_mut(t).iter_mut().zip(self.bias.as_slice()) {
                    *v = (*v + b).tanh();
                }
            }
            let out = features.row_mut(i);
            for row in resp.iter_rows() {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= positions as f64);
            activations.push(resp);
        }
        Ok((FeatureSequence::new(features), FrontendCache { activations }))
    }

    /// Accumulates weight gradients given `d_features` (`L × k`).
    pub fn backward(
        &self,
        chunks: &ChunkSet,
        cache: &FrontendCache,
        d_features: &Matrix,
        grads: &mut ConvFrontend,
    ) {
        for ((c, act), d_out) in chunks
            .chunks
            .iter()
            .zip(&cache.activations)
            .zip(d_features.iter_rows())
        {
            let scale = 1.0 / act.rows() as f64;
            for (window, a) in windows(c).zip(act.iter_rows()) {
                let d_pre: Vec<f64> = d_out
                    .iter()
                    .zip(a)
                    .map(|(d, y)| d * scale * (1.0 - y * y))
                    .collect();
                grads.weight.add_outer(&d_pre, &window);
                grads.bias.add_slice(&d_pre);
            }
        }
    }
}

fn windows(chunk: &Matrix) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..chunk.rows().saturating_sub(CONV_WIDTH - 1))
        .map(move |t| (t..t + CONV_WIDTH).flat_map(|r| chunk.row(r).iter().copied()).collect())
}

/// Reads precomputed `L × k` features from `<dir>/<clip id>.mcf`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileBackedExtractor {
    pub dir: PathBuf,
}

impl FileBackedExtractor {
    pub fn path_for(&self, clip_id: &str) -> PathBuf {
        self.dir.join(format!("{clip_id}.mcf"))
    }

    pub fn extract(&self, clip_id: &str, chunks: &ChunkSet) -> Result<FeatureSequence> {
        let features = read_matrix(&self.path_for(clip_id), FEATURE_MAGIC)?;
        if features.rows() != chunks.len() {
            return Err(Error::Data(format!(
                "feature file for `{clip_id}` has {} rows but the clip has {} chunks",
                features.rows(),
                chunks.len()
            )));
        }
        Ok(FeatureSequence::new(features))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extractor {
    /// Frozen precomputed features; contributes no gradients.
    FileBacked(FileBackedExtractor),
    Trainable(ConvFrontend),
}

pub fn extract(chunks: &ChunkSet, clip_id: &str, extractor: &Extractor) -> Result<FeatureSequence> {
    match extractor {
        Extractor::FileBacked(fb) => fb.extract(clip_id, chunks),
        Extractor::Trainable(conv) => Ok(conv.forward(chunks)?.0),
    }
}

/// Binary layout: 4-byte magic, `u32` LE rows, `u32` LE cols, then
/// `rows × cols` `f32` LE values in row-major order.
pub fn write_matrix(path: &Path, magic: &[u8; 4], m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 4 * m.len());
    buf.write_all(magic).expect("vec write");
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path, magic: &[u8; 4]) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    if bytes.len() < 12 || &bytes[..4] != magic {
        return Err(bad(format!(
            "missing `{}` header",
            String::from_utf8_lossy(magic)
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(bad(format!(
            "{rows}x{cols} payload needs {} bytes, found {}",
            rows * cols * 4,
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite value".into()));
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn read_clip(path: &Path, duration: f64) -> Result<AudioClip> {
    let frames = read_matrix(path, FRAMES_MAGIC)?;
    if !(duration > 0.0) {
        return Err(Error::Data(format!("{}: duration must be positive", path.display())));
    }
    let rate = frames.rows() as f64 / duration;
    AudioClip::new(frames, rate)
}
