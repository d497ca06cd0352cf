//! Self-describing JSON checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::train::Tagger;
use crate::bpe::Codebook;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, Featurizer, TokenVocab};
use crate::tagging::TagScheme;
use crate::windowing::WindowConfig;

pub const CHECKPOINT_FORMAT: &str = "bytener-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scheme: TagScheme,
    pub features: FeatureConfig,
    pub window: WindowConfig,
    /// Codebook in its text file format.
    pub codebook: Option<String>,
    pub bpe_vocab: Option<Vec<String>>,
    pub word_vocab: Option<Vec<String>>,
    /// Resolved training configuration, kept for provenance only.
    #[serde(default)]
    pub train_config: Option<serde_json::Value>,
    pub params: ModelParams<f32>,
}

impl Checkpoint {
    pub fn from_tagger(tagger: &Tagger, train_config: Option<serde_json::Value>) -> Self {
        let f = &tagger.featurizer;
        let codebook = f.codebook.as_ref().map(|c| {
            let mut buf = Vec::new();
            c.write_to(&mut buf).expect("writing to memory");
            String::from_utf8(buf).expect("codebook text is ASCII")
        });
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            scheme: tagger.scheme.clone(),
            features: f.cfg,
            window: tagger.window,
            codebook,
            bpe_vocab: f.bpe_vocab.as_ref().map(|v| v.tokens().to_vec()),
            word_vocab: f.word_vocab.as_ref().map(|v| v.tokens().to_vec()),
            train_config,
            params: tagger.params.clone(),
        }
    }

    pub fn into_tagger(self) -> Result<Tagger> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let codebook = self
            .codebook
            .map(|text| Codebook::read_from(text.as_bytes()))
            .transpose()?;
        let featurizer = Featurizer::new(
            self.features,
            self.window.window_len,
            codebook,
            self.bpe_vocab.map(TokenVocab::new),
            self.word_vocab.map(TokenVocab::new),
        )?;
        let expected = ModelParams::<f32>::zeros(&self.params.dims);
        let shapes_match = expected
            .tensors()
            .iter()
            .zip(self.params.tensors())
            .all(|((a, x), (b, y))| a == &b && x.len() == y.len())
            && expected.tensors().len() == self.params.tensors().len();
        if !shapes_match {
            return Err(Error::Checkpoint("tensor shapes do not match the stored dimensions".into()));
        }
        Tagger::new(self.scheme, featurizer, self.window, self.params)
    }
}

pub fn save_checkpoint(tagger: &Tagger, train_config: Option<serde_json::Value>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &Checkpoint::from_tagger(tagger, train_config))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Tagger> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    ckpt.into_tagger()
}
