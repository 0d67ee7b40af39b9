//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.json   config, parameter names and shapes in blob order
//! <dir>/params.bin      every parameter, f64 little-endian, row-major, concatenated
//! <dir>/embeddings.bin  the word embedding table, same encoding
//! ```
//!
//! LSTM weight blocks stack the gates in the order input, forget, cell, output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forward::Model;
use super::params::Weights;
use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::text::EmbeddingTable;

pub const FORMAT: &str = "muscaps-checkpoint/1";
pub const GATE_ORDER: &str = "i,f,g,o";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub gate_order: String,
    pub config: ModelConfig,
    pub params: Vec<TensorEntry>,
    pub embeddings: TensorEntry,
    /// Free-form run metadata (data location, split ids, epoch, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn encode(mats: &[&Matrix]) -> Vec<u8> {
    let mut out = Vec::with_capacity(mats.iter().map(|m| m.len() * 8).sum());
    for m in mats {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_into(bytes: &[u8], path: &Path, mats: &mut [&mut Matrix]) -> Result<()> {
    let need: usize = mats.iter().map(|m| m.len() * 8).sum();
    if bytes.len() != need {
        return Err(Error::Data(format!(
            "{}: expected {need} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for m in mats.iter_mut() {
        for slot in m.as_mut_slice() {
            *slot = values.next().expect("length checked");
        }
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(dir: &Path, model: &Model, meta: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tensors = model.weights().tensors();
    let manifest = Manifest {
        format: FORMAT.into(),
        gate_order: GATE_ORDER.into(),
        config: model.config.clone(),
        params: tensors
            .iter()
            .map(|(name, m)| TensorEntry {
                name: (*name).into(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
        embeddings: TensorEntry {
            name: "embeddings".into(),
            rows: model.embeddings.table.rows(),
            cols: model.embeddings.table.cols(),
        },
        meta,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&dir.join("manifest.json"), text.as_bytes())?;
    let mats: Vec<&Matrix> = tensors.iter().map(|(_, m)| *m).collect();
    write(&dir.join("params.bin"), &encode(&mats))?;
    write(&dir.join("embeddings.bin"), &encode(&[&model.embeddings.table]))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.format != FORMAT {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint format `{}`",
            path.display(),
            manifest.format
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, Manifest)> {
    let manifest = read_manifest(dir)?;
    manifest.config.validate()?;
    let mut weights = Weights::zeros(&manifest.config);
    {
        let mut tensors = weights.tensors_mut();
        if tensors.len() != manifest.params.len() {
            return Err(Error::Data(format!(
                "{}: manifest lists {} tensors, config needs {}",
                dir.display(),
                manifest.params.len(),
                tensors.len()
            )));
        }
        for ((name, m), entry) in tensors.iter().zip(&manifest.params) {
            if *name != entry.name || m.shape() != (entry.rows, entry.cols) {
                return Err(Error::Data(format!(
                    "{}: tensor `{}` {}x{} does not match expected `{name}` {:?}",
                    dir.display(),
                    entry.name,
                    entry.rows,
                    entry.cols,
                    m.shape()
                )));
            }
        }
        let path = dir.join("params.bin");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut mats: Vec<&mut Matrix> = tensors.iter_mut().map(|(_, m)| &mut **m).collect();
        decode_into(&bytes, &path, &mut mats)?;
    }
    let mut table = Matrix::zeros(manifest.embeddings.rows, manifest.embeddings.cols);
    let path = dir.join("embeddings.bin");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    decode_into(&bytes, &path, &mut [&mut table])?;
    let embeddings = EmbeddingTable { table, frozen: true };
    let model = Model::from_weights(manifest.config.clone(), weights, embeddings)?;
    Ok((model, manifest))
}
