//! The captioning network: multimodal encoder, optional soft attention over
//! chunk features, LSTM decoder, sequence scoring and decoding.

mod checkpoint;
mod config;
mod decode;
mod forward;
mod params;
mod reference;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Manifest, TensorEntry, GATE_ORDER};
pub use config::{ExtractorKind, Fusion, ModelConfig};
pub use decode::{beam_decode, greedy_decode, BeamResult, DecodeHypothesis};
pub use forward::{
    attend, attend_backward, AttendGrads, AudioInput, DecoderState, EncoderState, Example, LstmState, Model, RecurrentState, Session,
};
pub use params::{AttentionWeights, Linear, ModelParams, Weights};
pub use reference::ReferenceLoss;
