//! Linear-chain CRF over per-position tag scores.
//!
//! A path `y` over `len` positions scores
//! `start[y0] + sum_t emit[t][y_t] + sum_t trans[y_t][y_t+1] + end[y_last]`.
//! Emission matrices are row-major `len x num_tags` (rows past `len` are
//! ignored).

use serde::{Deserialize, Serialize};

use super::Real;
use crate::tagging::TagId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crf<F> {
    pub num_tags: usize,
    /// `trans[from * num_tags + to]`
    pub trans: Vec<F>,
    pub start: Vec<F>,
    pub end: Vec<F>,
}

fn log_sum_exp<F: Real>(xs: impl Iterator<Item = F> + Clone) -> F {
    let max = xs.clone().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<F>().ln()
}

impl<F: Real> Crf<F> {
    pub fn zeros(num_tags: usize) -> Self {
        Crf {
            num_tags,
            trans: vec![F::zero(); num_tags * num_tags],
            start: vec![F::zero(); num_tags],
            end: vec![F::zero(); num_tags],
        }
    }

    #[inline]
    pub fn transition(&self, from: usize, to: usize) -> F {
        self.trans[from * self.num_tags + to]
    }

    pub fn path_score(&self, emissions: &[F], tags: &[TagId]) -> F {
        let t = self.num_tags;
        let Some((&first, _)) = tags.split_first() else {
            return F::zero();
        };
        let mut score = self.start[first] + self.end[*tags.last().unwrap()];
        for (pos, &tag) in tags.iter().enumerate() {
            score += emissions[pos * t + tag];
        }
        for w in tags.windows(2) {
            score += self.transition(w[0], w[1]);
        }
        score
    }

    /// Forward log-scores: `alpha[t][j]` is the log-sum over prefixes ending
    /// in `j` at `t`, including `emit[t][j]`.
    fn alphas(&self, emissions: &[F], len: usize) -> Vec<F> {
        let t = self.num_tags;
        let mut alpha = vec![F::zero(); len * t];
        for j in 0..t {
            alpha[j] = self.start[j] + emissions[j];
        }
        for pos in 1..len {
            for j in 0..t {
                let prev = &alpha[(pos - 1) * t..pos * t];
                let lse = log_sum_exp((0..t).map(|i| prev[i] + self.transition(i, j)));
                alpha[pos * t + j] = lse + emissions[pos * t + j];
            }
        }
        alpha
    }

    /// Backward log-scores: `beta[t][i]` is the log-sum over suffixes after
    /// `i` at `t`, including `end`, excluding `emit[t][i]`.
    fn betas(&self, emissions: &[F], len: usize) -> Vec<F> {
        let t = self.num_tags;
        let mut beta = vec![F::zero(); len * t];
        beta[(len - 1) * t..len * t].copy_from_slice(&self.end);
        for pos in (0..len - 1).rev() {
            for i in 0..t {
                let next = &beta[(pos + 1) * t..(pos + 2) * t];
                let em = &emissions[(pos + 1) * t..(pos + 2) * t];
                beta[pos * t + i] = log_sum_exp((0..t).map(|j| self.transition(i, j) + em[j] + next[j]));
            }
        }
        beta
    }

    /// Log of the summed exponentiated scores of all paths.
    pub fn log_partition(&self, emissions: &[F], len: usize) -> F {
        assert!(len >= 1, "CRF needs at least one position");
        let t = self.num_tags;
        let alpha = self.alphas(emissions, len);
        let last = &alpha[(len - 1) * t..len * t];
        log_sum_exp((0..t).map(|j| last[j] + self.end[j]))
    }

    /// Negative log-likelihood of the gold path.
    pub fn neg_log_likelihood(&self, emissions: &[F], gold: &[TagId], len: usize) -> F {
        assert_eq!(gold.len(), len, "gold tags must cover the sequence");
        self.log_partition(emissions, len) - self.path_score(emissions, gold)
    }

    /// Negative log-likelihood with gradients (marginals minus gold
    /// indicators). Emission gradients are added to `d_emissions`, parameter
    /// gradients to `grad`.
    pub fn nll_backward(&self, emissions: &[F], gold: &[TagId], len: usize, d_emissions: &mut [F], grad: &mut Crf<F>) -> F {
        assert!(len >= 1 && gold.len() == len);
        let t = self.num_tags;
        let alpha = self.alphas(emissions, len);
        let beta = self.betas(emissions, len);
        let last = &alpha[(len - 1) * t..len * t];
        let log_z = log_sum_exp((0..t).map(|j| last[j] + self.end[j]));

        for pos in 0..len {
            for j in 0..t {
                let p = (alpha[pos * t + j] + beta[pos * t + j] - log_z).exp();
                d_emissions[pos * t + j] += p;
            }
        }
        for j in 0..t {
            grad.start[j] += (alpha[j] + beta[j] - log_z).exp();
            grad.end[j] += (last[j] + self.end[j] - log_z).exp();
        }
        for pos in 0..len - 1 {
            for i in 0..t {
                let a = alpha[pos * t + i];
                for j in 0..t {
                    let p = (a + self.transition(i, j) + emissions[(pos + 1) * t + j] + beta[(pos + 1) * t + j] - log_z).exp();
                    grad.trans[i * t + j] += p;
                }
            }
        }

        for (pos, &tag) in gold.iter().enumerate() {
            d_emissions[pos * t + tag] -= F::one();
        }
        grad.start[gold[0]] -= F::one();
        grad.end[gold[len - 1]] -= F::one();
        for w in gold.windows(2) {
            grad.trans[w[0] * t + w[1]] -= F::one();
        }
        log_z - self.path_score(emissions, gold)
    }

    /// Highest-scoring path and its score. Ties go to the lowest tag id,
    /// both at each backpointer and at the final position.
    pub fn viterbi(&self, emissions: &[F], len: usize) -> (Vec<TagId>, F) {
        assert!(len >= 1, "CRF needs at least one position");
        let t = self.num_tags;
        let mut score: Vec<F> = (0..t).map(|j| self.start[j] + emissions[j]).collect();
        let mut back = vec![0usize; len * t];
        let mut next = vec![F::zero(); t];
        for pos in 1..len {
            for j in 0..t {
                let (mut best_i, mut best) = (0, score[0] + self.transition(0, j));
                for (i, &s) in score.iter().enumerate().skip(1) {
                    let cand = s + self.transition(i, j);
                    if cand > best {
                        best = cand;
                        best_i = i;
                    }
                }
                back[pos * t + j] = best_i;
                next[j] = best + emissions[pos * t + j];
            }
            std::mem::swap(&mut score, &mut next);
        }
        let (mut best_j, mut best) = (0, score[0] + self.end[0]);
        for j in 1..t {
            let cand = score[j] + self.end[j];
            if cand > best {
                best = cand;
                best_j = j;
            }
        }
        let mut path = vec![0; len];
        path[len - 1] = best_j;
        for pos in (1..len).rev() {
            path[pos - 1] = back[pos * t + path[pos]];
        }
        (path, best)
    }
}
