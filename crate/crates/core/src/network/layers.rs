use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Real;

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        sum += *x * *y;
    }
    sum
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y += W x` for row-major `W` of shape `(y.len(), x.len())`.
#[inline]
pub(crate) fn matvec_add<F: Real>(w: &[F], x: &[F], y: &mut [F]) {
    let cols = x.len();
    for (row, yi) in w.chunks_exact(cols).zip(y.iter_mut()) {
        *yi += dot(row, x);
    }
}

/// `dx += W^T dy` and `dW += dy x^T`.
#[inline]
pub(crate) fn matvec_backward<F: Real>(w: &[F], x: &[F], dy: &[F], dw: &mut [F], dx: &mut [F]) {
    let cols = x.len();
    for ((row, drow), &g) in w.chunks_exact(cols).zip(dw.chunks_exact_mut(cols)).zip(dy) {
        if g == F::zero() {
            continue;
        }
        axpy(g, row, dx);
        axpy(g, x, drow);
    }
}

pub(crate) fn uniform_vec<F: Real, R: Rng + ?Sized>(n: usize, range: f64, rng: &mut R) -> Vec<F> {
    let dist = Uniform::new_inclusive(-range, range);
    (0..n).map(|_| F::of(dist.sample(rng))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding<F> {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<F>,
}

impl<F: Real> Embedding<F> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Embedding {
            rows,
            dim,
            data: vec![F::zero(); rows * dim],
        }
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }
}

/// Same-padded 1-D convolution with stride 1. Weights are laid out as
/// `[tap][out][in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv1d<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub width: usize,
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> Conv1d<F> {
    pub fn zeros(in_dim: usize, out_dim: usize, width: usize) -> Self {
        Conv1d {
            in_dim,
            out_dim,
            width,
            weight: vec![F::zero(); width * out_dim * in_dim],
            bias: vec![F::zero(); out_dim],
        }
    }

    fn tap(&self, k: usize) -> &[F] {
        let n = self.out_dim * self.in_dim;
        &self.weight[k * n..(k + 1) * n]
    }

    /// Source position feeding output `t` through tap `k`, if inside `[0, len)`.
    #[inline]
    fn source(&self, t: usize, k: usize, len: usize) -> Option<usize> {
        let s = (t + k).checked_sub(self.width / 2)?;
        (s < len).then_some(s)
    }

    /// `x` is `len x in_dim`, the result `len x out_dim`.
    pub fn forward(&self, x: &[F], len: usize) -> Vec<F> {
        let (ni, no) = (self.in_dim, self.out_dim);
        let mut y = Vec::with_capacity(len * no);
        for _ in 0..len {
            y.extend_from_slice(&self.bias);
        }
        for t in 0..len {
            let yt = &mut y[t * no..(t + 1) * no];
            for k in 0..self.width {
                if let Some(s) = self.source(t, k, len) {
                    matvec_add(self.tap(k), &x[s * ni..(s + 1) * ni], yt);
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and input gradients into `dx`.
    pub fn backward(&self, x: &[F], dy: &[F], len: usize, grad: &mut Conv1d<F>, dx: &mut [F]) {
        let (ni, no) = (self.in_dim, self.out_dim);
        let n = no * ni;
        for t in 0..len {
            let dyt = &dy[t * no..(t + 1) * no];
            for (b, &g) in grad.bias.iter_mut().zip(dyt) {
                *b += g;
            }
            for k in 0..self.width {
                if let Some(s) = self.source(t, k, len) {
                    matvec_backward(
                        self.tap(k),
                        &x[s * ni..(s + 1) * ni],
                        dyt,
                        &mut grad.weight[k * n..(k + 1) * n],
                        &mut dx[s * ni..(s + 1) * ni],
                    );
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![F::zero(); in_dim * out_dim],
            bias: vec![F::zero(); out_dim],
        }
    }

    /// Row-wise affine map of a `len x in_dim` matrix.
    pub fn forward(&self, x: &[F], len: usize) -> Vec<F> {
        let (ni, no) = (self.in_dim, self.out_dim);
        let mut y = Vec::with_capacity(len * no);
        for t in 0..len {
            let start = y.len();
            y.extend_from_slice(&self.bias);
            matvec_add(&self.weight, &x[t * ni..(t + 1) * ni], &mut y[start..]);
        }
        y
    }

    pub fn backward(&self, x: &[F], dy: &[F], len: usize, grad: &mut Dense<F>, dx: &mut [F]) {
        let (ni, no) = (self.in_dim, self.out_dim);
        for t in 0..len {
            let dyt = &dy[t * no..(t + 1) * no];
            for (b, &g) in grad.bias.iter_mut().zip(dyt) {
                *b += g;
            }
            matvec_backward(
                &self.weight,
                &x[t * ni..(t + 1) * ni],
                dyt,
                &mut grad.weight,
                &mut dx[t * ni..(t + 1) * ni],
            );
        }
    }
}

/// LSTM cell with sigmoid gates and tanh cell activation. Gate rows are
/// ordered input, forget, candidate, output; each row reads `[x; h_prev]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell<F> {
    pub input_dim: usize,
    pub units: usize,
    /// Row-major `4 * units x (input_dim + units)`.
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmTrace<F> {
    /// `[x_t; h_{t-1}]` per processed step, `len x (input_dim + units)`.
    pub inputs: Vec<F>,
    /// Gate activations `i, f, g, o` per step, `len x 4 units`.
    pub gates: Vec<F>,
    /// Cell states per step.
    pub cells: Vec<F>,
    /// `tanh(c_t)` per step.
    pub cell_tanh: Vec<F>,
    /// Hidden outputs in sequence order, `len x units`.
    pub outputs: Vec<F>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Real> LstmCell<F> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        LstmCell {
            input_dim,
            units,
            weight: vec![F::zero(); 4 * units * (input_dim + units)],
            bias: vec![F::zero(); 4 * units],
        }
    }

    /// Runs over `x` (`len x input_dim`) left to right, or right to left when
    /// `reverse`. Outputs are stored by sequence position either way.
    pub fn forward(&self, x: &[F], len: usize, reverse: bool) -> LstmTrace<F> {
        let (n, h) = (self.input_dim, self.units);
        let cols = n + h;
        let mut trace = LstmTrace {
            inputs: vec![F::zero(); len * cols],
            gates: vec![F::zero(); len * 4 * h],
            cells: vec![F::zero(); len * h],
            cell_tanh: vec![F::zero(); len * h],
            outputs: vec![F::zero(); len * h],
        };
        let mut h_prev = vec![F::zero(); h];
        let mut c_prev = vec![F::zero(); h];
        for step in 0..len {
            let t = if reverse { len - 1 - step } else { step };
            let inp = &mut trace.inputs[step * cols..(step + 1) * cols];
            inp[..n].copy_from_slice(&x[t * n..(t + 1) * n]);
            inp[n..].copy_from_slice(&h_prev);
            let gates = &mut trace.gates[step * 4 * h..(step + 1) * 4 * h];
            gates.copy_from_slice(&self.bias);
            matvec_add(&self.weight, inp, gates);
            for j in 0..h {
                gates[j] = sigmoid(gates[j]);
                gates[h + j] = sigmoid(gates[h + j]);
                gates[2 * h + j] = gates[2 * h + j].tanh();
                gates[3 * h + j] = sigmoid(gates[3 * h + j]);
            }
            for j in 0..h {
                let c = gates[h + j] * c_prev[j] + gates[j] * gates[2 * h + j];
                let tc = c.tanh();
                trace.cells[step * h + j] = c;
                trace.cell_tanh[step * h + j] = tc;
                let out = gates[3 * h + j] * tc;
                trace.outputs[t * h + j] = out;
                c_prev[j] = c;
                h_prev[j] = out;
            }
        }
        trace
    }

    /// Backpropagation through time. `d_out` holds gradients of the outputs
    /// by sequence position; input gradients are added to `dx`.
    pub fn backward(
        &self,
        trace: &LstmTrace<F>,
        d_out: &[F],
        len: usize,
        reverse: bool,
        grad: &mut LstmCell<F>,
        dx: &mut [F],
    ) {
        let (n, h) = (self.input_dim, self.units);
        let cols = n + h;
        let mut dh_next = vec![F::zero(); h];
        let mut dc_next = vec![F::zero(); h];
        let mut d_pre = vec![F::zero(); 4 * h];
        let mut d_inp = vec![F::zero(); cols];
        for step in (0..len).rev() {
            let t = if reverse { len - 1 - step } else { step };
            let gates = &trace.gates[step * 4 * h..(step + 1) * 4 * h];
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = trace.cell_tanh[step * h + j];
                let c_prev = if step > 0 {
                    trace.cells[(step - 1) * h + j]
                } else {
                    F::zero()
                };
                let dh = d_out[t * h + j] + dh_next[j];
                let dc = dh * o * (F::one() - tc * tc) + dc_next[j];
                let d_o = dh * tc;
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * c_prev;
                dc_next[j] = dc * f;
                d_pre[j] = d_i * i * (F::one() - i);
                d_pre[h + j] = d_f * f * (F::one() - f);
                d_pre[2 * h + j] = d_g * (F::one() - g * g);
                d_pre[3 * h + j] = d_o * o * (F::one() - o);
            }
            for (b, &g) in grad.bias.iter_mut().zip(&d_pre) {
                *b += g;
            }
            d_inp.iter_mut().for_each(|v| *v = F::zero());
            matvec_backward(
                &self.weight,
                &trace.inputs[step * cols..(step + 1) * cols],
                &d_pre,
                &mut grad.weight,
                &mut d_inp,
            );
            for (d, &g) in dx[t * n..(t + 1) * n].iter_mut().zip(&d_inp[..n]) {
                *d += g;
            }
            dh_next.copy_from_slice(&d_inp[n..]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..19).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..19).map(|i| (i * i) as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn conv_same_padding_keeps_length() {
        let mut conv = Conv1d::<f64>::zeros(1, 1, 3);
        // taps [-1, 0, +1] = [1, 2, 3]
        conv.weight = vec![1.0, 2.0, 3.0];
        let y = conv.forward(&[1.0, 10.0, 100.0], 3);
        assert_eq!(y, vec![2.0 + 30.0, 1.0 + 20.0 + 300.0, 10.0 + 200.0]);
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let cell = LstmCell::<f64>::zeros(3, 2);
        let trace = cell.forward(&[1.0; 12], 4, false);
        assert!(trace.outputs.iter().all(|&v| v == 0.0));
    }
}
