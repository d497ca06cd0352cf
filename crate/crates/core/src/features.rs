//! Per-byte input lanes.
//!
//! Every lane holds one id per byte position, right-padded to the window
//! length. Subword and word ids are repeated across all bytes of their token.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bpe::{is_whitespace, Codebook};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::windowing::Sample;

/// Byte-lane padding id.
pub const BYTE_PAD: u16 = 256;
/// Byte-lane id substituted by byte-dropout.
pub const BYTE_DROP: u16 = 257;
/// Rows of the byte embedding table: 256 byte values, PAD and DROP.
pub const BYTE_VOCAB: usize = 258;
/// Padding id in the subword and word lanes.
pub const LANE_PAD: u32 = u32::MAX;
/// Pretrained-lane id for tokens missing from the table.
pub const TOKEN_UNK: u32 = 0;
/// Pretrained-lane id for whitespace bytes.
pub const TOKEN_WS: u32 = 1;
/// Pretrained-lane id of table row `r` is `r + TOKEN_OFFSET`.
pub const TOKEN_OFFSET: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub use_byte_ids: bool,
    /// Trainable embeddings over codebook ids.
    pub use_bpe_ids: bool,
    pub use_pretrained_bpe: bool,
    pub use_pretrained_word: bool,
    pub byte_dropout_rate: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            use_byte_ids: true,
            use_bpe_ids: false,
            use_pretrained_bpe: true,
            use_pretrained_word: false,
            byte_dropout_rate: 0.3,
        }
    }
}

impl FeatureConfig {
    pub fn bytes_only() -> Self {
        FeatureConfig {
            use_pretrained_bpe: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_byte_ids || self.use_bpe_ids || self.use_pretrained_bpe || self.use_pretrained_word) {
            return Err(Error::InvalidArgument("at least one feature lane must be enabled".into()));
        }
        if !(0.0..=1.0).contains(&self.byte_dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "byte dropout rate must lie in [0, 1], got {}",
                self.byte_dropout_rate
            )));
        }
        Ok(())
    }

    pub fn needs_codebook(&self) -> bool {
        self.use_bpe_ids || self.use_pretrained_bpe
    }
}

/// Token-to-row lookup of a pretrained table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl TokenVocab {
    pub fn new(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + TOKEN_OFFSET))
            .collect();
        TokenVocab { tokens, index }
    }

    pub fn from_table(table: &EmbeddingTable) -> Self {
        TokenVocab::new(table.tokens().to_vec())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of lane ids, including UNK and whitespace.
    pub fn num_ids(&self) -> usize {
        self.tokens.len() + TOKEN_OFFSET as usize
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(TOKEN_UNK)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureIds {
    /// Raw byte values, [`BYTE_PAD`] beyond `length`, [`BYTE_DROP`] where dropped.
    pub byte_ids: Vec<u16>,
    /// Codebook ids (trainable BPE lane).
    pub bpe_ids: Option<Vec<u32>>,
    /// Pretrained BPE table ids.
    pub pretrained_bpe_ids: Option<Vec<u32>>,
    /// Pretrained word table ids.
    pub word_ids: Option<Vec<u32>>,
    /// Unpadded byte count.
    pub length: usize,
}

impl FeatureIds {
    pub fn padded_len(&self) -> usize {
        self.byte_ids.len()
    }
}

/// Builds feature lanes for byte windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Featurizer {
    pub cfg: FeatureConfig,
    pub window_len: usize,
    pub codebook: Option<Codebook>,
    pub bpe_vocab: Option<TokenVocab>,
    pub word_vocab: Option<TokenVocab>,
}

impl Featurizer {
    pub fn new(
        cfg: FeatureConfig,
        window_len: usize,
        codebook: Option<Codebook>,
        bpe_vocab: Option<TokenVocab>,
        word_vocab: Option<TokenVocab>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.needs_codebook() && codebook.is_none() {
            return Err(Error::InvalidArgument("BPE features need a codebook".into()));
        }
        if cfg.use_pretrained_bpe && bpe_vocab.is_none() {
            return Err(Error::InvalidArgument("pretrained BPE features need an embedding table".into()));
        }
        if cfg.use_pretrained_word && word_vocab.is_none() {
            return Err(Error::InvalidArgument("pretrained word features need an embedding table".into()));
        }
        Ok(Featurizer {
            cfg,
            window_len,
            codebook,
            bpe_vocab,
            word_vocab,
        })
    }

    /// Lanes for `bytes`, padded to the window length.
    ///
    /// # Panics
    ///
    /// If `bytes` is longer than the window.
    pub fn assemble(&self, bytes: &[u8]) -> FeatureIds {
        let n = bytes.len();
        let w = self.window_len;
        assert!(n <= w, "sample of {n} bytes exceeds the {w}-byte window");
        let mut byte_ids: Vec<u16> = bytes.iter().map(|&b| b as u16).collect();
        byte_ids.resize(w, BYTE_PAD);

        let pad = |mut lane: Vec<u32>| {
            lane.resize(w, LANE_PAD);
            lane
        };
        let segmentation = self
            .codebook
            .as_ref()
            .filter(|_| self.cfg.needs_codebook())
            .map(|book| book.segment_bytes(bytes));
        let bpe_ids = segmentation
            .as_ref()
            .filter(|_| self.cfg.use_bpe_ids)
            .map(|seg| pad(seg.token_ids.clone()));
        let pretrained_bpe_ids = match (&segmentation, &self.bpe_vocab) {
            (Some(seg), Some(vocab)) if self.cfg.use_pretrained_bpe => {
                let mut lane = vec![TOKEN_WS; n];
                for (&(start, end), token) in seg.token_spans.iter().zip(&seg.tokens) {
                    lane[start..end].fill(vocab.id(&token.render()));
                }
                Some(pad(lane))
            }
            _ => None,
        };
        let word_ids = match &self.word_vocab {
            Some(vocab) if self.cfg.use_pretrained_word => Some(pad(word_lane(bytes, vocab))),
            _ => None,
        };
        FeatureIds {
            byte_ids,
            bpe_ids,
            pretrained_bpe_ids,
            word_ids,
            length: n,
        }
    }
}

fn word_lane(bytes: &[u8], vocab: &TokenVocab) -> Vec<u32> {
    let mut lane = vec![TOKEN_WS; bytes.len()];
    let mut i = 0;
    while i < bytes.len() {
        if is_whitespace(bytes[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && !is_whitespace(bytes[i]) {
            i += 1;
        }
        let word = String::from_utf8_lossy(&bytes[start..i]);
        lane[start..i].fill(vocab.id(&word));
    }
    lane
}

/// Free-function form of [`Featurizer::assemble`] for a single sample.
pub fn assemble_feature_ids(
    sample: &Sample,
    cfg: &FeatureConfig,
    codebook: Option<&Codebook>,
    bpe_vocab: Option<&TokenVocab>,
    word_vocab: Option<&TokenVocab>,
    window_len: usize,
) -> Result<FeatureIds> {
    let f = Featurizer::new(
        *cfg,
        window_len,
        codebook.cloned(),
        bpe_vocab.cloned(),
        word_vocab.cloned(),
    )?;
    Ok(f.assemble(&sample.bytes))
}

/// Replaces each non-padding byte id by [`BYTE_DROP`] with probability `rate`.
/// Other lanes and the length are untouched.
pub fn apply_byte_dropout(ids: &FeatureIds, rate: f64, seed: u64) -> FeatureIds {
    let mut out = ids.clone();
    apply_byte_dropout_with(&mut out, rate, &mut ChaCha8Rng::seed_from_u64(seed));
    out
}

pub fn apply_byte_dropout_with<R: Rng + ?Sized>(ids: &mut FeatureIds, rate: f64, rng: &mut R) {
    if rate <= 0.0 {
        return;
    }
    for id in ids.byte_ids[..ids.length].iter_mut() {
        if rate >= 1.0 || rng.gen_bool(rate) {
            *id = BYTE_DROP;
        }
    }
}
