//! Brute-force and finite-difference oracles shared by the integration tests.
#![allow(dead_code)]

use bytener_core::corpus::{Dataset, Document, EntitySpan};
use bytener_core::features::{FeatureIds, BYTE_PAD, BYTE_VOCAB, LANE_PAD};
use bytener_core::network::{sequence_loss_and_grad, Crf, ModelDims, ModelParams};
use bytener_core::tagging::TagId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every tag path of length `len` over `tags` tags, in lexicographic order.
pub fn all_paths(tags: usize, len: usize) -> Vec<Vec<TagId>> {
    let mut paths = vec![Vec::new()];
    for _ in 0..len {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..tags).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    paths
}

/// Score of one path, written out independently of the CRF implementation.
pub fn naive_path_score(crf: &Crf<f64>, em: &[f64], path: &[TagId]) -> f64 {
    let t = crf.num_tags;
    let mut s = crf.start[path[0]] + crf.end[path[path.len() - 1]];
    for (i, &y) in path.iter().enumerate() {
        s += em[i * t + y];
        if i + 1 < path.len() {
            s += crf.trans[y * t + path[i + 1]];
        }
    }
    s
}

/// `(log Z, max path score)` by exhaustive enumeration.
pub fn brute_force_crf(crf: &Crf<f64>, em: &[f64], len: usize) -> (f64, f64) {
    let scores: Vec<f64> = all_paths(crf.num_tags, len)
        .iter()
        .map(|p| naive_path_score(crf, em, p))
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    (log_z, max)
}

pub fn random_crf(rng: &mut ChaCha8Rng, tags: usize, len: usize, scale: f64) -> (Crf<f64>, Vec<f64>) {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
    let crf = Crf {
        num_tags: tags,
        trans: draw(tags * tags),
        start: draw(tags),
        end: draw(tags),
    };
    let em = draw(len * tags);
    (crf, em)
}

/// Dimensions with every feature lane switched on.
pub fn tiny_dims(filters: usize, lstm_units: usize, num_tags: usize) -> ModelDims {
    ModelDims {
        byte_dim: 3,
        bpe_rows: 6,
        bpe_dim: 2,
        pretrained_bpe_rows: 5,
        pretrained_bpe_dim: 2,
        word_rows: 4,
        word_dim: 2,
        filters,
        filter_width: 7,
        conv_layers: 2,
        lstm_units,
        hidden_units: 5,
        num_tags,
    }
}

pub fn random_params(dims: &ModelDims, range: f64, seed: u64) -> ModelParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(dims);
    for (_, t) in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-range..range));
    }
    p
}

/// Random lanes of true length `len`, padded to `padded`.
pub fn random_ids(dims: &ModelDims, len: usize, padded: usize, seed: u64) -> FeatureIds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lane = |rows: usize| -> Vec<u32> {
        let mut v: Vec<u32> = (0..len).map(|_| rng.gen_range(0..rows as u32)).collect();
        v.resize(padded, LANE_PAD);
        v
    };
    let bpe_ids = (dims.bpe_dim > 0).then(|| lane(dims.bpe_rows));
    let pretrained_bpe_ids = (dims.pretrained_bpe_dim > 0).then(|| lane(dims.pretrained_bpe_rows));
    let word_ids = (dims.word_dim > 0).then(|| lane(dims.word_rows));
    let mut byte_ids: Vec<u16> = (0..len).map(|_| rng.gen_range(0..BYTE_VOCAB as u16)).collect();
    byte_ids.resize(padded, BYTE_PAD);
    FeatureIds {
        byte_ids,
        bpe_ids,
        pretrained_bpe_ids,
        word_ids,
        length: len,
    }
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Relative error with a floor on the denominator, so that entries whose
/// true gradient is zero are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Compares the analytic gradient of the CRF loss with central differences
/// for every parameter of every tensor.
pub fn gradient_check(params: &ModelParams<f64>, ids: &FeatureIds, tags: &[TagId], h: f64) -> GradCheck {
    let mut grads = params.zeros_like();
    sequence_loss_and_grad::<f64, ChaCha8Rng>(params, ids, tags, 0.0, None, &mut grads);
    let loss = |p: &ModelParams<f64>| {
        let mut scratch = p.zeros_like();
        sequence_loss_and_grad::<f64, ChaCha8Rng>(p, ids, tags, 0.0, None, &mut scratch)
    };
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
    let mut probe = params.clone();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for (ti, (name, a)) in analytic.iter().enumerate() {
        for i in 0..a.len() {
            let orig = probe.tensors()[ti].1[i];
            probe.tensors_mut()[ti].1[i] = orig + h;
            let up = loss(&probe);
            probe.tensors_mut()[ti].1[i] = orig - h;
            let down = loss(&probe);
            probe.tensors_mut()[ti].1[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = rel_err(a[i], numeric);
            out.max_abs_err = out.max_abs_err.max((a[i] - numeric).abs());
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = format!("{name}[{i}]: analytic {:.6e} numeric {numeric:.6e}", a[i]);
            }
            out.checked += 1;
        }
    }
    out
}

/// Maximal runs of ASCII digits.
pub fn digit_runs(bytes: &[u8]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            spans.push(EntitySpan::new(start, i, "NUM"));
        } else {
            i += 1;
        }
    }
    spans
}

/// `n` documents of `len` bytes: lowercase words separated by spaces, with
/// digit runs of 1 to 6 bytes mixed in, sometimes glued to letters.
pub fn digit_task(n: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..n)
        .map(|i| {
            let mut bytes = Vec::with_capacity(len + 8);
            while bytes.len() < len {
                let run = rng.gen_range(1..=6);
                if rng.gen_bool(0.3) {
                    bytes.extend((0..run).map(|_| rng.gen_range(b'0'..=b'9')));
                } else {
                    bytes.extend((0..run + 1).map(|_| rng.gen_range(b'a'..=b'z')));
                }
                if rng.gen_bool(0.7) {
                    bytes.push(b' ');
                }
            }
            bytes.truncate(len);
            let spans = digit_runs(&bytes);
            Document::new(format!("syn-{i}"), bytes, spans).unwrap()
        })
        .collect();
    Dataset::new(docs, ["NUM".to_owned()])
}
