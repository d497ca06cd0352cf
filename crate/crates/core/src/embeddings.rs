//! Embedding tables in the word2vec text format, and a skip-gram trainer with
//! negative sampling for subword embeddings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token vectors of a common dimension. Absent tokens map to the all-zero
/// default vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    default: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            default: vec![0.0; dim],
        })
    }

    /// Inserts or replaces a token's vector.
    pub fn insert(&mut self, token: impl Into<String>, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} for a {}-dimensional table",
                vector.len(),
                self.dim
            )));
        }
        let token = token.into();
        match self.index.get(&token) {
            Some(&row) => self.vectors[row * self.dim..(row + 1) * self.dim].copy_from_slice(vector),
            None => {
                self.index.insert(token.clone(), self.tokens.len());
                self.tokens.push(token);
                self.vectors.extend_from_slice(vector);
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn row_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// The token's vector, or the zero default when absent.
    pub fn get(&self, token: &str) -> &[f32] {
        match self.row_of(token) {
            Some(row) => self.row(row),
            None => &self.default,
        }
    }

    pub fn default_vector(&self) -> &[f32] {
        &self.default
    }

    pub fn cosine(&self, a: &str, b: &str) -> f32 {
        let (x, y) = (self.get(a), self.get(b));
        let dot: f32 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f32>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f32>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx * ny)
        }
    }

    pub fn load_word2vec_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_word2vec_text(BufReader::new(file))
    }

    /// Parses `count dim` followed by `count` lines of `token v1 ... v_dim`.
    /// A repeated token replaces the earlier vector.
    pub fn read_word2vec_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty embedding file"))?
            .map_err(|e| Error::parse(1, e.to_string()))?;
        let mut fields = header.split_whitespace();
        let (count, dim) = match (fields.next(), fields.next(), fields.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>().map_err(|e| Error::parse(1, format!("bad count: {e}")))?,
                d.parse::<usize>().map_err(|e| Error::parse(1, format!("bad dimension: {e}")))?,
            ),
            _ => return Err(Error::parse(1, format!("expected `count dim`, got {header:?}"))),
        };
        let mut table = EmbeddingTable::new(dim).map_err(|e| Error::parse(1, e.to_string()))?;
        let mut rows = 0;
        let mut vector = Vec::with_capacity(dim);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line");
            vector.clear();
            for f in fields {
                vector.push(
                    f.parse::<f32>()
                        .map_err(|e| Error::parse(lineno, format!("bad value {f:?}: {e}")))?,
                );
            }
            if vector.len() != dim {
                return Err(Error::parse(
                    lineno,
                    format!("token {token:?} has {} values, expected {dim}", vector.len()),
                ));
            }
            if table.row_of(token).is_some() {
                warn!("line {lineno}: duplicate token {token:?}, keeping the later vector");
            }
            table.insert(token, &vector)?;
            rows += 1;
        }
        if rows != count {
            return Err(Error::parse(1, format!("header declares {count} rows, found {rows}")));
        }
        Ok(table)
    }

    pub fn write_word2vec_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_word2vec_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Values are written with six decimals.
    pub fn write_word2vec_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (row, token) in self.tokens.iter().enumerate() {
            write!(out, "{token}")?;
            for v in self.row(row) {
                write!(out, " {v:.6}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramConfig {
    pub dim: usize,
    /// Context tokens on each side of the center.
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    /// Initial step size; decays linearly to `1e-4` of itself.
    pub learning_rate: f32,
    pub seed: u64,
}

/// Default width of pretrained subword vectors.
pub const BPE_EMBEDDING_DIM: usize = 100;
/// Default width of pretrained word vectors.
pub const WORD_EMBEDDING_DIM: usize = 200;

impl SkipGramConfig {
    /// Defaults for word-level tables.
    pub fn for_words() -> Self {
        SkipGramConfig {
            dim: WORD_EMBEDDING_DIM,
            ..Default::default()
        }
    }
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: BPE_EMBEDDING_DIM,
            window: 5,
            epochs: 10,
            negatives: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramOutcome {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per (center, context) pair, evaluated with
    /// a fixed set of negatives before training and after every epoch.
    pub epoch_losses: Vec<f64>,
}

struct SkipGram {
    dim: usize,
    input: Vec<f32>,
    output: Vec<f32>,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sigmoid(x: f64) -> f64 {
    // stable for large |x|
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl SkipGram {
    fn dot(&self, center: usize, target: usize) -> f32 {
        let d = self.dim;
        self.input[center * d..(center + 1) * d]
            .iter()
            .zip(&self.output[target * d..(target + 1) * d])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// One positive and its negatives; returns nothing, updates in place.
    fn update(&mut self, center: usize, context: usize, negatives: &[usize], lr: f32, grad: &mut [f32]) {
        let d = self.dim;
        grad.fill(0.0);
        let targets = std::iter::once((context, 1.0f32)).chain(
            negatives
                .iter()
                .filter(|&&n| n != context)
                .map(|&n| (n, 0.0f32)),
        );
        for (target, label) in targets {
            let g = (label - sigmoid(self.dot(center, target))) * lr;
            let (inp, out) = (
                &self.input[center * d..(center + 1) * d],
                &mut self.output[target * d..(target + 1) * d],
            );
            for k in 0..d {
                grad[k] += g * out[k];
                out[k] += g * inp[k];
            }
        }
        for (v, g) in self.input[center * d..(center + 1) * d].iter_mut().zip(grad.iter()) {
            *v += g;
        }
    }

    fn pair_loss(&self, center: usize, context: usize, negatives: &[usize]) -> f64 {
        let mut loss = -log_sigmoid(self.dot(center, context) as f64);
        for &n in negatives.iter().filter(|&&n| n != context) {
            loss -= log_sigmoid(-(self.dot(center, n) as f64));
        }
        loss
    }
}

fn for_each_pair(sequences: &[Vec<usize>], window: usize, mut f: impl FnMut(usize, usize)) {
    for seq in sequences {
        for (i, &center) in seq.iter().enumerate() {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(seq.len());
            for (j, &context) in seq.iter().enumerate().take(hi).skip(lo) {
                if j != i {
                    f(center, context);
                }
            }
        }
    }
}

/// Trains skip-gram vectors with negative sampling over token sequences;
/// contexts never cross sequence boundaries. Negatives follow the unigram
/// distribution raised to 0.75. Sequential and deterministic for a seed.
pub fn train_skipgram(sequences: &[Vec<String>], cfg: &SkipGramConfig) -> Result<SkipGramOutcome> {
    if cfg.dim == 0 || cfg.window == 0 {
        return Err(Error::InvalidArgument("skip-gram dim and window must be positive".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in sequences.iter().flatten() {
        *counts.entry(tok.as_str()).or_insert(0) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "skip-gram needs at least 2 distinct tokens, got {}",
            counts.len()
        )));
    }
    let mut vocab: Vec<(&str, u64)> = counts.into_iter().collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, (t, _))| (*t, i)).collect();
    let encoded: Vec<Vec<usize>> = sequences
        .iter()
        .map(|s| s.iter().map(|t| index[t.as_str()]).collect())
        .collect();

    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Uniform::new_inclusive(-0.5 / dim as f32, 0.5 / dim as f32);
    let mut model = SkipGram {
        dim,
        input: (0..vocab.len() * dim).map(|_| init.sample(&mut rng)).collect(),
        output: vec![0.0; vocab.len() * dim],
    };
    let noise = WeightedIndex::new(vocab.iter().map(|(_, c)| (*c as f64).powf(0.75)))
        .expect("positive counts");

    let evaluate = |model: &SkipGram| {
        let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e7a1);
        let (mut total, mut pairs) = (0.0, 0usize);
        let mut negs = vec![0; cfg.negatives];
        for_each_pair(&encoded, cfg.window, |c, o| {
            negs.iter_mut().for_each(|n| *n = noise.sample(&mut eval_rng));
            total += model.pair_loss(c, o, &negs);
            pairs += 1;
        });
        total / pairs.max(1) as f64
    };

    let mut epoch_losses = vec![evaluate(&model)];
    let total_tokens: usize = encoded.iter().map(Vec::len).sum();
    let total_steps = (total_tokens * cfg.epochs).max(1) as f32;
    let mut step = 0usize;
    let mut grad = vec![0.0; dim];
    let mut negs = vec![0; cfg.negatives];
    for _ in 0..cfg.epochs {
        for seq in &encoded {
            for (i, &center) in seq.iter().enumerate() {
                let lr = cfg.learning_rate * (1.0 - step as f32 / total_steps).max(1e-4);
                step += 1;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(seq.len());
                for (j, &context) in seq.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    negs.iter_mut().for_each(|n| *n = noise.sample(&mut rng));
                    model.update(center, context, &negs, lr, &mut grad);
                }
            }
        }
        epoch_losses.push(evaluate(&model));
    }

    let mut table = EmbeddingTable::new(dim)?;
    for (row, (token, _)) in vocab.iter().enumerate() {
        table.insert(*token, &model.input[row * dim..(row + 1) * dim])?;
    }
    Ok(SkipGramOutcome {
        table,
        epoch_losses,
    })
}
