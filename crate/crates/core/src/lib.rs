//! Music captioning with multimodal LSTM encoders, soft attention over audio
//! chunks, and likelihood-ranked text-to-audio retrieval.

pub mod audiofeat;
pub mod data;
pub mod error;
pub mod evalmetrics;
pub mod model;
pub mod numcore;
pub mod text;
pub mod train;

pub use error::{Error, ErrorClass, Result};
