use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::crf::Crf;
use super::layers::{uniform_vec, Conv1d, Dense, Embedding, LstmCell};
use super::Real;
use crate::bpe::Codebook;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, BYTE_VOCAB, TOKEN_OFFSET, TOKEN_UNK};

/// Every convolution moves one byte at a time.
pub const CONV_STRIDE: usize = 1;

/// Layer sizes that are not implied by the data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub byte_dim: usize,
    /// Width of the trainable BPE embeddings.
    pub bpe_dim: usize,
    pub filters: usize,
    pub filter_width: usize,
    /// Total convolution layers: one projection plus `conv_layers - 1` residual.
    pub conv_layers: usize,
    pub lstm_units: usize,
    pub hidden_units: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            byte_dim: 64,
            bpe_dim: 100,
            filters: 250,
            filter_width: 7,
            conv_layers: 20,
            lstm_units: 250,
            hidden_units: 250,
        }
    }
}

/// Complete shape description of a model. A lane with dimension 0 is off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub byte_dim: usize,
    pub bpe_rows: usize,
    pub bpe_dim: usize,
    pub pretrained_bpe_rows: usize,
    pub pretrained_bpe_dim: usize,
    pub word_rows: usize,
    pub word_dim: usize,
    pub filters: usize,
    pub filter_width: usize,
    pub conv_layers: usize,
    pub lstm_units: usize,
    pub hidden_units: usize,
    pub num_tags: usize,
}

impl ModelDims {
    /// Dimensions for a feature configuration and its resources.
    pub fn for_features(
        arch: &ArchConfig,
        features: &FeatureConfig,
        codebook: Option<&Codebook>,
        pretrained_bpe: Option<&EmbeddingTable>,
        pretrained_word: Option<&EmbeddingTable>,
        num_tags: usize,
    ) -> Result<Self> {
        let rows = |t: &EmbeddingTable| t.len() + TOKEN_OFFSET as usize;
        let missing = |what: &str| Error::InvalidArgument(format!("feature configuration needs {what}"));
        let (bpe_rows, bpe_dim) = if features.use_bpe_ids {
            (codebook.ok_or_else(|| missing("a codebook"))?.vocab_size(), arch.bpe_dim)
        } else {
            (0, 0)
        };
        let (pretrained_bpe_rows, pretrained_bpe_dim) = if features.use_pretrained_bpe {
            let t = pretrained_bpe.ok_or_else(|| missing("pretrained BPE embeddings"))?;
            (rows(t), t.dim())
        } else {
            (0, 0)
        };
        let (word_rows, word_dim) = if features.use_pretrained_word {
            let t = pretrained_word.ok_or_else(|| missing("pretrained word embeddings"))?;
            (rows(t), t.dim())
        } else {
            (0, 0)
        };
        let dims = ModelDims {
            byte_dim: if features.use_byte_ids { arch.byte_dim } else { 0 },
            bpe_rows,
            bpe_dim,
            pretrained_bpe_rows,
            pretrained_bpe_dim,
            word_rows,
            word_dim,
            filters: arch.filters,
            filter_width: arch.filter_width,
            conv_layers: arch.conv_layers,
            lstm_units: arch.lstm_units,
            hidden_units: arch.hidden_units,
            num_tags,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn input_dim(&self) -> usize {
        self.byte_dim + self.bpe_dim + self.pretrained_bpe_dim + self.word_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if self.input_dim() == 0 {
            return bad("model has no input features");
        }
        if self.conv_layers == 0 || self.filters == 0 || self.filter_width == 0 {
            return bad("need at least one convolution layer with positive width and filters");
        }
        if self.lstm_units == 0 || self.hidden_units == 0 || self.num_tags == 0 {
            return bad("LSTM, hidden and tag dimensions must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<F> {
    pub dims: ModelDims,
    pub byte_embed: Option<Embedding<F>>,
    pub bpe_embed: Option<Embedding<F>>,
    pub pretrained_bpe_embed: Option<Embedding<F>>,
    pub word_embed: Option<Embedding<F>>,
    /// `convs[0]` projects the input to `filters`; the rest are residual.
    pub convs: Vec<Conv1d<F>>,
    pub lstm_fwd: LstmCell<F>,
    pub lstm_bwd: LstmCell<F>,
    pub hidden: Dense<F>,
    pub emit: Dense<F>,
    pub crf: Crf<F>,
}

/// Names of the tensors copied from pretrained tables.
pub const PRETRAINED_TENSORS: [&str; 2] = ["pretrained_bpe_embed", "word_embed"];

impl<F: Real> ModelParams<F> {
    /// All-zero parameters of the given shape.
    pub fn zeros(dims: &ModelDims) -> Self {
        let embed = |rows: usize, dim: usize| (dim > 0).then(|| Embedding::zeros(rows, dim));
        let mut convs = vec![Conv1d::zeros(dims.input_dim(), dims.filters, dims.filter_width)];
        for _ in 1..dims.conv_layers {
            convs.push(Conv1d::zeros(dims.filters, dims.filters, dims.filter_width));
        }
        ModelParams {
            dims: *dims,
            byte_embed: embed(BYTE_VOCAB, dims.byte_dim),
            bpe_embed: embed(dims.bpe_rows, dims.bpe_dim),
            pretrained_bpe_embed: embed(dims.pretrained_bpe_rows, dims.pretrained_bpe_dim),
            word_embed: embed(dims.word_rows, dims.word_dim),
            convs,
            lstm_fwd: LstmCell::zeros(dims.filters, dims.lstm_units),
            lstm_bwd: LstmCell::zeros(dims.filters, dims.lstm_units),
            hidden: Dense::zeros(2 * dims.lstm_units, dims.hidden_units),
            emit: Dense::zeros(dims.hidden_units, dims.num_tags),
            crf: Crf::zeros(dims.num_tags),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims)
    }

    /// Every trainable tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[F])> {
        let mut out: Vec<(String, &[F])> = Vec::new();
        let embeds = [
            ("byte_embed", &self.byte_embed),
            ("bpe_embed", &self.bpe_embed),
            ("pretrained_bpe_embed", &self.pretrained_bpe_embed),
            ("word_embed", &self.word_embed),
        ];
        for (name, e) in embeds {
            if let Some(e) = e {
                out.push((name.to_owned(), &e.data));
            }
        }
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv.{i}.weight"), &c.weight));
            out.push((format!("conv.{i}.bias"), &c.bias));
        }
        out.push(("lstm_fwd.weight".into(), &self.lstm_fwd.weight));
        out.push(("lstm_fwd.bias".into(), &self.lstm_fwd.bias));
        out.push(("lstm_bwd.weight".into(), &self.lstm_bwd.weight));
        out.push(("lstm_bwd.bias".into(), &self.lstm_bwd.bias));
        out.push(("hidden.weight".into(), &self.hidden.weight));
        out.push(("hidden.bias".into(), &self.hidden.bias));
        out.push(("emit.weight".into(), &self.emit.weight));
        out.push(("emit.bias".into(), &self.emit.bias));
        out.push(("crf.trans".into(), &self.crf.trans));
        out.push(("crf.start".into(), &self.crf.start));
        out.push(("crf.end".into(), &self.crf.end));
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [F])> {
        let ModelParams {
            byte_embed,
            bpe_embed,
            pretrained_bpe_embed,
            word_embed,
            convs,
            lstm_fwd,
            lstm_bwd,
            hidden,
            emit,
            crf,
            ..
        } = self;
        let mut out: Vec<(String, &mut [F])> = Vec::new();
        let embeds = [
            ("byte_embed", byte_embed),
            ("bpe_embed", bpe_embed),
            ("pretrained_bpe_embed", pretrained_bpe_embed),
            ("word_embed", word_embed),
        ];
        for (name, e) in embeds {
            if let Some(e) = e {
                out.push((name.to_owned(), &mut e.data));
            }
        }
        for (i, c) in convs.iter_mut().enumerate() {
            out.push((format!("conv.{i}.weight"), &mut c.weight));
            out.push((format!("conv.{i}.bias"), &mut c.bias));
        }
        out.push(("lstm_fwd.weight".into(), &mut lstm_fwd.weight));
        out.push(("lstm_fwd.bias".into(), &mut lstm_fwd.bias));
        out.push(("lstm_bwd.weight".into(), &mut lstm_bwd.weight));
        out.push(("lstm_bwd.bias".into(), &mut lstm_bwd.bias));
        out.push(("hidden.weight".into(), &mut hidden.weight));
        out.push(("hidden.bias".into(), &mut hidden.bias));
        out.push(("emit.weight".into(), &mut emit.weight));
        out.push(("emit.bias".into(), &mut emit.bias));
        out.push(("crf.trans".into(), &mut crf.trans));
        out.push(("crf.start".into(), &mut crf.start));
        out.push(("crf.end".into(), &mut crf.end));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams<F>) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn squared_norm(&self) -> F {
        self.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|&v| v * v).sum::<F>())
            .sum()
    }

    /// Converts to another float width.
    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let mut out = ModelParams::<G>::zeros(&self.dims);
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = G::of(s.as_f64());
            }
        }
        out
    }

    /// Zeroes every residual convolution, making the stack an identity map.
    pub fn zero_residual_branches(&mut self) {
        for conv in self.convs.iter_mut().skip(1) {
            conv.weight.iter_mut().for_each(|v| *v = F::zero());
            conv.bias.iter_mut().for_each(|v| *v = F::zero());
        }
    }
}

fn copy_pretrained<F: Real>(target: &mut Embedding<F>, table: &EmbeddingTable, name: &str) -> Result<()> {
    if table.dim() != target.dim || table.len() + TOKEN_OFFSET as usize != target.rows {
        return Err(Error::DimensionMismatch(format!(
            "{name}: table has {} rows of dimension {}, model expects {} rows of dimension {}",
            table.len(),
            table.dim(),
            target.rows - TOKEN_OFFSET as usize,
            target.dim
        )));
    }
    for (dst, &src) in target.row_mut(TOKEN_UNK as usize).iter_mut().zip(table.default_vector()) {
        *dst = F::of(src as f64);
    }
    for r in 0..table.len() {
        let row = target.row_mut(r + TOKEN_OFFSET as usize);
        for (dst, &src) in row.iter_mut().zip(table.row(r)) {
            *dst = F::of(src as f64);
        }
    }
    Ok(())
}

/// Random parameters: every tensor uniform in `[-init_range, init_range]`,
/// except pretrained rows, which are copied from their tables (the UNK row
/// takes the table's zero default). Deterministic per seed.
pub fn init_params<F: Real>(
    dims: &ModelDims,
    pretrained_bpe: Option<&EmbeddingTable>,
    pretrained_word: Option<&EmbeddingTable>,
    init_range: f64,
    seed: u64,
) -> Result<ModelParams<F>> {
    dims.validate()?;
    let mut params = ModelParams::zeros(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, tensor) in params.tensors_mut() {
        let values: Vec<F> = uniform_vec(tensor.len(), init_range, &mut rng);
        tensor.copy_from_slice(&values);
    }
    match (&mut params.pretrained_bpe_embed, pretrained_bpe) {
        (Some(e), Some(t)) => copy_pretrained(e, t, "pretrained BPE embeddings")?,
        (Some(_), None) => return Err(Error::InvalidArgument("missing pretrained BPE table".into())),
        _ => {}
    }
    match (&mut params.word_embed, pretrained_word) {
        (Some(e), Some(t)) => copy_pretrained(e, t, "pretrained word embeddings")?,
        (Some(_), None) => return Err(Error::InvalidArgument("missing pretrained word table".into())),
        _ => {}
    }
    Ok(params)
}
