//! Forward and backward passes over one window.
//!
//! Only the first `ids.length` positions are computed; padding never
//! reaches any layer, so it is masked by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Embedding, LstmTrace};
use super::params::ModelParams;
use super::Real;
use crate::features::FeatureIds;

/// Gradients share the parameter layout.
pub type Gradients<F> = ModelParams<F>;

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    pub len: usize,
    /// Concatenated embeddings after input dropout, `len x input_dim`.
    pub input: Vec<F>,
    input_mask: Option<Vec<F>>,
    /// `layers[0]` is the projection output, `layers[l]` the output of
    /// residual block `l`; each is `len x filters`.
    pub layers: Vec<Vec<F>>,
    /// Pre-activations of every convolution.
    pre: Vec<Vec<F>>,
    residual_masks: Vec<Option<Vec<F>>>,
    lstm_fwd: LstmTrace<F>,
    lstm_bwd: LstmTrace<F>,
    /// BLSTM output after dropout, `len x 2 units`.
    blstm: Vec<F>,
    blstm_mask: Option<Vec<F>>,
    hidden: Vec<F>,
    /// `len x num_tags`.
    pub emissions: Vec<F>,
}

fn dropout_mask<F: Real, R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<F> {
    let keep = F::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
        .collect()
}

fn maybe_dropout<F: Real, R: Rng + ?Sized>(x: &mut [F], rate: f64, rng: Option<&mut R>) -> Option<Vec<F>> {
    let rng = rng.filter(|_| rate > 0.0)?;
    let mask = dropout_mask(x.len(), rate, rng);
    x.iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
    Some(mask)
}

fn lanes<'a, F: Real>(params: &'a ModelParams<F>, ids: &'a FeatureIds) -> Vec<(&'a Embedding<F>, Vec<usize>)> {
    let len = ids.length;
    let mut out = Vec::new();
    let rows = |lane: &[u32], e: &Embedding<F>| -> Vec<usize> {
        lane[..len]
            .iter()
            .map(|&i| if (i as usize) < e.rows { i as usize } else { 0 })
            .collect()
    };
    if let Some(e) = &params.byte_embed {
        out.push((e, ids.byte_ids[..len].iter().map(|&b| b as usize).collect()));
    }
    if let (Some(e), Some(lane)) = (&params.bpe_embed, &ids.bpe_ids) {
        out.push((e, rows(lane, e)));
    }
    if let (Some(e), Some(lane)) = (&params.pretrained_bpe_embed, &ids.pretrained_bpe_ids) {
        out.push((e, rows(lane, e)));
    }
    if let (Some(e), Some(lane)) = (&params.word_embed, &ids.word_ids) {
        out.push((e, rows(lane, e)));
    }
    out
}

fn embed<F: Real>(params: &ModelParams<F>, ids: &FeatureIds) -> Vec<F> {
    let len = ids.length;
    let d = params.dims.input_dim();
    let lanes = lanes(params, ids);
    assert_eq!(
        lanes.iter().map(|(e, _)| e.dim).sum::<usize>(),
        d,
        "feature lanes do not match the model"
    );
    let mut x = Vec::with_capacity(len * d);
    for t in 0..len {
        for (e, rows) in &lanes {
            x.extend_from_slice(e.row(rows[t]));
        }
    }
    x
}

fn relu_inplace<F: Real>(x: &mut [F]) {
    x.iter_mut().for_each(|v| {
        if *v < F::zero() {
            *v = F::zero()
        }
    });
}

/// Full forward pass. Dropout is applied when `rng` is given and `dropout > 0`.
pub fn forward<F: Real, R: Rng + ?Sized>(
    params: &ModelParams<F>,
    ids: &FeatureIds,
    dropout: f64,
    mut rng: Option<&mut R>,
) -> ForwardCache<F> {
    let len = ids.length;
    let mut input = embed(params, ids);
    let input_mask = maybe_dropout(&mut input, dropout, rng.as_deref_mut());

    let mut layers = Vec::with_capacity(params.convs.len());
    let mut pre = Vec::with_capacity(params.convs.len());
    let mut residual_masks = Vec::with_capacity(params.convs.len());
    let z = params.convs[0].forward(&input, len);
    let mut x = z.clone();
    relu_inplace(&mut x);
    pre.push(z);
    residual_masks.push(None);
    layers.push(x);
    for conv in &params.convs[1..] {
        let prev = layers.last().unwrap();
        let z = conv.forward(prev, len);
        let mut branch = z.clone();
        relu_inplace(&mut branch);
        let mask = maybe_dropout(&mut branch, dropout, rng.as_deref_mut());
        let next: Vec<F> = prev.iter().zip(&branch).map(|(&a, &b)| a + b).collect();
        pre.push(z);
        residual_masks.push(mask);
        layers.push(next);
    }

    let top = layers.last().unwrap();
    let h = params.dims.lstm_units;
    let lstm_fwd = params.lstm_fwd.forward(top, len, false);
    let lstm_bwd = params.lstm_bwd.forward(top, len, true);
    let mut blstm = Vec::with_capacity(len * 2 * h);
    for t in 0..len {
        blstm.extend_from_slice(&lstm_fwd.outputs[t * h..(t + 1) * h]);
        blstm.extend_from_slice(&lstm_bwd.outputs[t * h..(t + 1) * h]);
    }
    let blstm_mask = maybe_dropout(&mut blstm, dropout, rng.as_deref_mut());
    let mut hidden = params.hidden.forward(&blstm, len);
    hidden.iter_mut().for_each(|v| *v = v.tanh());
    let emissions = params.emit.forward(&hidden, len);

    ForwardCache {
        len,
        input,
        input_mask,
        layers,
        pre,
        residual_masks,
        lstm_fwd,
        lstm_bwd,
        blstm,
        blstm_mask,
        hidden,
        emissions,
    }
}

/// Backpropagates `d_emissions` (`len x num_tags`), adding into `grads`.
pub fn backward<F: Real>(
    params: &ModelParams<F>,
    ids: &FeatureIds,
    cache: &ForwardCache<F>,
    d_emissions: &[F],
    grads: &mut Gradients<F>,
) {
    let len = cache.len;
    if len == 0 {
        return;
    }
    let dims = &params.dims;
    let h = dims.lstm_units;

    let mut d_hidden = vec![F::zero(); len * dims.hidden_units];
    params.emit.backward(&cache.hidden, d_emissions, len, &mut grads.emit, &mut d_hidden);
    for (d, &y) in d_hidden.iter_mut().zip(&cache.hidden) {
        *d *= F::one() - y * y;
    }
    let mut d_blstm = vec![F::zero(); len * 2 * h];
    params.hidden.backward(&cache.blstm, &d_hidden, len, &mut grads.hidden, &mut d_blstm);
    if let Some(mask) = &cache.blstm_mask {
        d_blstm.iter_mut().zip(mask).for_each(|(d, &m)| *d *= m);
    }
    let mut d_fwd = vec![F::zero(); len * h];
    let mut d_bwd = vec![F::zero(); len * h];
    for t in 0..len {
        d_fwd[t * h..(t + 1) * h].copy_from_slice(&d_blstm[t * 2 * h..t * 2 * h + h]);
        d_bwd[t * h..(t + 1) * h].copy_from_slice(&d_blstm[t * 2 * h + h..(t + 1) * 2 * h]);
    }
    let mut d_x = vec![F::zero(); len * dims.filters];
    params.lstm_fwd.backward(&cache.lstm_fwd, &d_fwd, len, false, &mut grads.lstm_fwd, &mut d_x);
    params.lstm_bwd.backward(&cache.lstm_bwd, &d_bwd, len, true, &mut grads.lstm_bwd, &mut d_x);

    for l in (1..params.convs.len()).rev() {
        let mut d_branch = d_x.clone();
        if let Some(mask) = &cache.residual_masks[l] {
            d_branch.iter_mut().zip(mask).for_each(|(d, &m)| *d *= m);
        }
        d_branch
            .iter_mut()
            .zip(&cache.pre[l])
            .for_each(|(d, &z)| if z <= F::zero() { *d = F::zero() });
        params.convs[l].backward(&cache.layers[l - 1], &d_branch, len, &mut grads.convs[l], &mut d_x);
    }
    d_x.iter_mut()
        .zip(&cache.pre[0])
        .for_each(|(d, &z)| if z <= F::zero() { *d = F::zero() });
    let mut d_input = vec![F::zero(); len * dims.input_dim()];
    params.convs[0].backward(&cache.input, &d_x, len, &mut grads.convs[0], &mut d_input);
    if let Some(mask) = &cache.input_mask {
        d_input.iter_mut().zip(mask).for_each(|(d, &m)| *d *= m);
    }

    let lane_rows: Vec<Vec<usize>> = lanes(params, ids).into_iter().map(|(_, r)| r).collect();
    let mut grad_lanes: Vec<&mut Embedding<F>> = [
        grads.byte_embed.as_mut(),
        grads.bpe_embed.as_mut(),
        grads.pretrained_bpe_embed.as_mut(),
        grads.word_embed.as_mut(),
    ]
    .into_iter()
    .zip([true, ids.bpe_ids.is_some(), ids.pretrained_bpe_ids.is_some(), ids.word_ids.is_some()])
    .filter_map(|(g, present)| g.filter(|_| present))
    .collect();
    let d = dims.input_dim();
    for t in 0..len {
        let mut offset = t * d;
        for (g, rows) in grad_lanes.iter_mut().zip(&lane_rows) {
            let dim = g.dim;
            let src = &d_input[offset..offset + dim];
            g.row_mut(rows[t]).iter_mut().zip(src).for_each(|(a, &b)| *a += b);
            offset += dim;
        }
    }
}

/// Emission scores as a `padded_len x num_tags` matrix, zero past `length`.
/// With `train = Some((dropout, seed))` dropout is active.
pub fn emissions_forward<F: Real>(params: &ModelParams<F>, ids: &FeatureIds, train: Option<(f64, u64)>) -> Vec<F> {
    let cache = match train {
        Some((rate, seed)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            forward(params, ids, rate, Some(&mut rng))
        }
        None => forward::<F, ChaCha8Rng>(params, ids, 0.0, None),
    };
    let mut out = cache.emissions;
    out.resize(ids.padded_len() * params.dims.num_tags, F::zero());
    out
}

/// Evaluation-mode output of every convolution layer (projection first).
pub fn conv_representations<F: Real>(params: &ModelParams<F>, ids: &FeatureIds) -> Vec<Vec<F>> {
    forward::<F, ChaCha8Rng>(params, ids, 0.0, None).layers
}
