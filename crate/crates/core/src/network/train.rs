use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{backward, emissions_forward, forward, Gradients};
use super::params::{init_params, ArchConfig, ModelDims, ModelParams, PRETRAINED_TENSORS};
use super::Real;
use crate::corpus::{Dataset, Document, EntitySpan};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::score;
use crate::features::{apply_byte_dropout_with, FeatureIds, Featurizer};
use crate::tagging::{decode_iobes, TagId, TagScheme};
use crate::windowing::{inference_window_bounds, recombine_window_tags, Sample, WindowConfig};

/// Gradient groups per batch. Fixed so that the summation order, and hence
/// the result, does not depend on the thread count.
const GRADIENT_GROUPS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub init_range: f64,
    pub seed: u64,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    /// Keep pretrained embedding tables fixed.
    pub freeze_pretrained: bool,
    /// Return the parameters with the best dev F1 instead of the last ones.
    pub keep_best: bool,
    /// Stop as soon as dev micro-F1 reaches this value.
    pub target_dev_f1: Option<f64>,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 256,
            epochs: 300,
            dropout: 0.5,
            init_range: 0.05,
            seed: 0,
            grad_clip: None,
            freeze_pretrained: false,
            keep_best: false,
            target_dev_f1: None,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.init_range >= 0.0) {
            return bad(format!("init range must be non-negative, got {}", self.init_range));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("gradient clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..Default::default()
        }
    }
}

/// A featurized training window.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub ids: FeatureIds,
    pub tags: Vec<TagId>,
}

pub fn build_examples(samples: &[Sample], featurizer: &Featurizer) -> Result<Vec<TrainExample>> {
    samples
        .par_iter()
        .map(|s| {
            let tags = s.tags.clone().ok_or_else(|| {
                Error::InvalidArgument(format!("sample of {} at {} has no tags", s.doc_id, s.doc_offset))
            })?;
            Ok(TrainExample {
                ids: featurizer.assemble(&s.bytes),
                tags,
            })
        })
        .collect()
}

/// CRF negative log-likelihood of one sequence; gradients are added to
/// `grads`. Dropout is active when `rng` is given.
pub fn sequence_loss_and_grad<F: Real, R: Rng + ?Sized>(
    params: &ModelParams<F>,
    ids: &FeatureIds,
    tags: &[TagId],
    dropout: f64,
    rng: Option<&mut R>,
    grads: &mut Gradients<F>,
) -> F {
    let len = ids.length;
    if len == 0 {
        return F::zero();
    }
    let cache = forward(params, ids, dropout, rng);
    let mut d_em = vec![F::zero(); cache.emissions.len()];
    let loss = params
        .crf
        .nll_backward(&cache.emissions, &tags[..len], len, &mut d_em, &mut grads.crf);
    backward(params, ids, &cache, &d_em, grads);
    loss
}

fn sequence_loss<F: Real>(params: &ModelParams<F>, ex: &TrainExample) -> F {
    let len = ex.ids.length;
    if len == 0 {
        return F::zero();
    }
    let cache = forward::<F, ChaCha8Rng>(params, &ex.ids, 0.0, None);
    params.crf.neg_log_likelihood(&cache.emissions, &ex.tags[..len], len)
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    mix(mix(mix(seed) ^ epoch as u64) ^ index as u64)
}

/// A trained model together with everything needed to tag raw documents.
#[derive(Clone, Debug)]
pub struct Tagger {
    pub scheme: TagScheme,
    pub featurizer: Featurizer,
    pub window: WindowConfig,
    pub params: ModelParams<f32>,
}

impl Tagger {
    pub fn new(scheme: TagScheme, featurizer: Featurizer, window: WindowConfig, params: ModelParams<f32>) -> Result<Self> {
        window.validate()?;
        if params.dims.num_tags != scheme.num_tags() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} tags, scheme has {}",
                params.dims.num_tags,
                scheme.num_tags()
            )));
        }
        if featurizer.window_len != window.window_len {
            return Err(Error::DimensionMismatch(format!(
                "featurizer window {} differs from window length {}",
                featurizer.window_len, window.window_len
            )));
        }
        Ok(Tagger {
            scheme,
            featurizer,
            window,
            params,
        })
    }

    /// Fresh randomly initialized tagger.
    pub fn init(
        scheme: TagScheme,
        featurizer: Featurizer,
        window: WindowConfig,
        cfg: &TrainConfig,
        pretrained_bpe: Option<&EmbeddingTable>,
        pretrained_word: Option<&EmbeddingTable>,
    ) -> Result<Self> {
        let dims = ModelDims::for_features(
            &cfg.arch,
            &featurizer.cfg,
            featurizer.codebook.as_ref(),
            pretrained_bpe,
            pretrained_word,
            scheme.num_tags(),
        )?;
        let params = init_params(&dims, pretrained_bpe, pretrained_word, cfg.init_range, cfg.seed)?;
        Tagger::new(scheme, featurizer, window, params)
    }

    /// Viterbi tags for one window of at most `window_len` bytes.
    pub fn tag_window(&self, bytes: &[u8]) -> Vec<TagId> {
        if bytes.is_empty() {
            return Vec::new();
        }
        let ids = self.featurizer.assemble(bytes);
        let em = emissions_forward(&self.params, &ids, None);
        self.params.crf.viterbi(&em, ids.length).0
    }

    /// Tags for a whole document: sliding windows, recombined.
    pub fn tag_bytes(&self, bytes: &[u8]) -> Result<Vec<TagId>> {
        let windows: Vec<(usize, Vec<TagId>)> = inference_window_bounds(bytes.len(), &self.window)
            .into_iter()
            .map(|(start, end)| (start, self.tag_window(&bytes[start..end])))
            .collect();
        recombine_window_tags(bytes.len(), &windows)
    }

    pub fn predict_document(&self, doc: &Document) -> Result<Vec<EntitySpan>> {
        Ok(decode_iobes(&self.tag_bytes(&doc.bytes)?, &self.scheme))
    }
}

/// Predicted spans for every document, keyed by document id.
pub fn predict(tagger: &Tagger, dataset: &Dataset) -> Result<HashMap<String, Vec<EntitySpan>>> {
    dataset
        .documents
        .par_iter()
        .map(|doc| Ok((doc.doc_id.clone(), tagger.predict_document(doc)?)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sequence loss; epoch 0 is measured before any update,
    /// without dropout.
    pub train_loss: f64,
    pub dev_f1: Option<f64>,
    pub skipped_batches: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub tagger: Tagger,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were returned.
    pub selected_epoch: usize,
}

fn dev_f1(tagger: &Tagger, dev: &Dataset) -> Result<f64> {
    let pred = predict(tagger, dev)?;
    Ok(score(&dev.spans_by_doc(), &pred)?.micro.f1)
}

fn zero(g: &mut Gradients<f32>) {
    for (_, t) in g.tensors_mut() {
        t.fill(0.0);
    }
}

fn clip(grads: &mut Gradients<f32>, max_norm: f64) {
    let norm = (grads.squared_norm() as f64).sqrt();
    if norm > max_norm {
        grads.scale((max_norm / norm) as f32);
    }
}

/// Mini-batch Adam training from the tagger's current parameters.
///
/// Each batch is split into a fixed number of contiguous groups whose
/// gradients are computed in parallel and summed in group order, and every
/// sample draws its dropout masks from a seed derived from
/// `(seed, epoch, sample index)`. Results are therefore identical for any
/// thread count.
pub fn train(
    tagger: Tagger,
    examples: &[TrainExample],
    dev: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.tags.len() < ex.ids.length {
            return Err(Error::InvalidArgument(format!("training sample {i} has fewer tags than bytes")));
        }
    }
    let byte_dropout = tagger.featurizer.cfg.byte_dropout_rate;
    let adam = cfg.adam();
    let frozen: Vec<&str> = if cfg.freeze_pretrained {
        PRETRAINED_TENSORS.to_vec()
    } else {
        Vec::new()
    };

    let mut tagger = tagger;
    let mut state = AdamState::new(&tagger.params);
    let mut pool: Vec<Gradients<f32>> = (0..GRADIENT_GROUPS).map(|_| tagger.params.zeros_like()).collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffler = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0x5eed));

    let start = Instant::now();
    let initial_loss: f64 = examples
        .par_iter()
        .map(|ex| sequence_loss(&tagger.params, ex) as f64)
        .collect::<Vec<_>>()
        .iter()
        .sum::<f64>()
        / examples.len() as f64;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: initial_loss,
        dev_f1: dev.map(|d| dev_f1(&tagger, d)).transpose()?,
        skipped_batches: 0,
        seconds: start.elapsed().as_secs_f64(),
    }];
    on_epoch(&log[0]);
    let mut best = (log[0].dev_f1.unwrap_or(f64::NEG_INFINITY), 0usize, tagger.params.clone());

    for epoch in 1..=cfg.epochs {
        if cfg
            .target_dev_f1
            .zip(log.last().unwrap().dev_f1)
            .is_some_and(|(target, f1)| f1 >= target)
        {
            break;
        }
        let start = Instant::now();
        order.shuffle(&mut shuffler);
        let mut loss_sum = 0.0f64;
        let mut skipped = 0;
        for batch in order.chunks(cfg.batch_size) {
            let groups = GRADIENT_GROUPS.min(batch.len());
            let per_group = batch.len().div_ceil(groups);
            let params = &tagger.params;
            let losses: Vec<f64> = pool[..groups]
                .par_iter_mut()
                .zip(batch.par_chunks(per_group))
                .map(|(g, members)| {
                    zero(g);
                    let mut sum = 0.0f64;
                    for &i in members {
                        let ex = &examples[i];
                        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, i));
                        let mut ids = ex.ids.clone();
                        apply_byte_dropout_with(&mut ids, byte_dropout, &mut rng);
                        sum += sequence_loss_and_grad(params, &ids, &ex.tags, cfg.dropout, Some(&mut rng), g) as f64;
                    }
                    sum
                })
                .collect();
            let used = batch.len().div_ceil(per_group);
            let batch_loss: f64 = losses.iter().sum();
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss in epoch {epoch}")));
            }
            loss_sum += batch_loss;
            let (head, rest) = pool.split_at_mut(1);
            let total = &mut head[0];
            for g in &rest[..used - 1] {
                total.add_assign(g);
            }
            total.scale(1.0 / batch.len() as f32);
            if let Some(c) = cfg.grad_clip {
                clip(total, c);
            }
            if let Err(e) = adam_step(&mut tagger.params, total, &mut state, &adam, &frozen) {
                log::warn!("epoch {epoch}: skipping batch: {e}");
                skipped += 1;
            }
        }
        if !tagger.params.all_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / examples.len() as f64,
            dev_f1: dev.map(|d| dev_f1(&tagger, d)).transpose()?,
            skipped_batches: skipped,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        if let Some(f1) = entry.dev_f1 {
            if f1 > best.0 {
                best = (f1, epoch, tagger.params.clone());
            }
        }
        log.push(entry);
    }

    let last_epoch = log.last().unwrap().epoch;
    let selected_epoch = if cfg.keep_best && dev.is_some() {
        tagger.params = best.2;
        best.1
    } else {
        last_epoch
    };
    Ok(TrainOutcome {
        tagger,
        log,
        selected_epoch,
    })
}
