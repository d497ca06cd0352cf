//! Byte-level named entity recognition.
//!
//! The pipeline tags every byte of raw text with an IOBES tag:
//!
//! * [`corpus`] ingests byte-offset and token-IOB corpora into [`Dataset`]s.
//! * [`tagging`] converts entity spans to per-byte IOBES tags and back.
//! * [`windowing`] cuts documents into overlapping byte windows and stitches
//!   window predictions back together.
//! * [`bpe`] learns a byte-pair-encoding codebook and segments text into
//!   subwords whose ids are repeated across their bytes.
//! * [`embeddings`] loads word2vec text tables and trains skip-gram vectors.
//! * [`features`] builds the aligned per-byte id lanes fed to the network.
//! * [`network`] is the residual CNN + BLSTM + CRF tagger with hand-written
//!   backpropagation, Adam and Viterbi decoding.
//! * [`evaluation`] scores predicted spans by exact byte-offset match.

pub mod bpe;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod network;
pub mod tagging;
pub mod windowing;

pub use bpe::{Codebook, Segmentation, Symbol};
pub use corpus::{Dataset, Document, EntitySpan};
pub use embeddings::EmbeddingTable;
pub use error::{Error, Result};
pub use evaluation::{EvalReport, TypeScores};
pub use features::{FeatureConfig, FeatureIds};
pub use network::{ModelDims, ModelParams, Tagger, TrainConfig};
pub use tagging::{TagId, TagScheme};
pub use windowing::{Sample, WindowConfig};
