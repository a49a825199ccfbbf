//! Minimal double-precision layers with hand-written backward passes.
//!
//! Activations are `(T, C)` matrices: one row per time step (or per sample),
//! one column per channel. Layers accumulate gradients into their [`Param`]s;
//! callers zero them between steps.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    /// Multiplier on the optimizer's learning rate for this tensor.
    pub lr_scale: f64,
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad, lr_scale: 1.0 }
    }

    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng64) -> Self {
        Param::new(Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound)))
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns trainable tensors, visited in a fixed order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn export_weights(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| p.value.iter().copied().collect()).collect()
    }

    fn import_weights(&mut self, weights: &[Vec<f64>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != weights.len() {
            return Err(Error::ShapeError(format!(
                "checkpoint has {} tensors, model has {}",
                weights.len(),
                params.len()
            )));
        }
        for (p, w) in params.iter_mut().zip(weights) {
            if p.value.len() != w.len() {
                return Err(Error::ShapeError(format!("tensor size {} vs {}", w.len(), p.value.len())));
            }
            p.value.iter_mut().zip(w).for_each(|(a, b)| *a = *b);
        }
        Ok(())
    }

    fn grad_norm(&self) -> f64 {
        self.params().iter().map(|p| p.grad.iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt()
    }
}

/// Temporal convolution with "same" padding (zeros outside the sequence).
///
/// The weight is stored as a `(kernel·c_in, c_out)` matrix: rows
/// `j·c_in..(j+1)·c_in` hold tap `j`, which reads input offset
/// `(j − (kernel−1)/2)·dilation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub kernel: usize,
    pub dilation: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, dilation: usize, rng: &mut Rng64) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Conv1d {
            weight: Param::uniform(kernel * c_in, c_out, bound, rng),
            bias: Param::uniform(1, c_out, bound, rng),
            kernel,
            dilation,
            c_in,
            c_out,
        }
    }

    /// Fully connected layer (a kernel-1 convolution applied row-wise).
    pub fn linear(c_in: usize, c_out: usize, rng: &mut Rng64) -> Self {
        Self::new(c_in, c_out, 1, 1, rng)
    }

    fn tap_offset(&self, j: usize) -> isize {
        (j as isize - (self.kernel as isize - 1) / 2) * self.dilation as isize
    }

    /// Output rows `[o0, o1)` that read input rows `[o0+off, o1+off)`.
    fn tap_range(t: usize, off: isize) -> Option<(usize, usize)> {
        let o0 = (-off).max(0) as usize;
        let o1 = (t as isize - off).min(t as isize);
        (o1 > o0 as isize).then_some((o0, o1 as usize))
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.c_in {
            return Err(Error::ShapeError(format!("conv expects {} channels, got {}", self.c_in, x.ncols())));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        let t = x.nrows();
        let mut out = Array2::zeros((t, self.c_out));
        out += &self.bias.value.row(0);
        for j in 0..self.kernel {
            let off = self.tap_offset(j);
            let Some((o0, o1)) = Self::tap_range(t, off) else { continue };
            let i0 = (o0 as isize + off) as usize;
            let w = self.weight.value.slice(s![j * self.c_in..(j + 1) * self.c_in, ..]);
            let xin = x.slice(s![i0..i0 + (o1 - o0), ..]);
            let mut dst = out.slice_mut(s![o0..o1, ..]);
            general_mat_mul(1.0, &xin, &w, 1.0, &mut dst);
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        let t = x.nrows();
        let mut dx = Array2::zeros((t, self.c_in));
        {
            let mut db = self.bias.grad.row_mut(0);
            db += &dy.sum_axis(Axis(0));
        }
        for j in 0..self.kernel {
            let off = self.tap_offset(j);
            let Some((o0, o1)) = Self::tap_range(t, off) else { continue };
            let i0 = (o0 as isize + off) as usize;
            let rows = j * self.c_in..(j + 1) * self.c_in;
            let xin = x.slice(s![i0..i0 + (o1 - o0), ..]);
            let dyo = dy.slice(s![o0..o1, ..]);
            {
                let mut dw = self.weight.grad.slice_mut(s![rows.clone(), ..]);
                general_mat_mul(1.0, &xin.t(), &dyo, 1.0, &mut dw);
            }
            let w = self.weight.value.slice(s![rows, ..]);
            let mut dxi = dx.slice_mut(s![i0..i0 + (o1 - o0), ..]);
            general_mat_mul(1.0, &dyo, &w.t(), 1.0, &mut dxi);
        }
        dx
    }

    /// Frames on each side that influence one output frame.
    pub fn reach(&self) -> usize {
        (self.kernel - 1) / 2 * self.dilation
    }
}

impl Parameterized for Conv1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given its output.
pub fn relu_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &o| {
        if o <= 0.0 {
            *d = 0.0
        }
    });
    dx
}

pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    log_softmax_rows(x).mapv(f64::exp)
}

/// Given `logp = log_softmax(z)` and `dL/dlogp`, return `dL/dz`.
pub fn log_softmax_backward(logp: &Array2<f64>, dlogp: &Array2<f64>) -> Array2<f64> {
    let sums = dlogp.sum_axis(Axis(1));
    let mut dz = dlogp.clone();
    for ((mut row, lp), s) in dz.rows_mut().into_iter().zip(logp.rows()).zip(sums.iter()) {
        row.zip_mut_with(&lp, |d, &l| *d -= l.exp() * s);
    }
    dz
}

/// Given `p = softmax(z)` and `dL/dp`, return `dL/dz`.
pub fn softmax_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(p.raw_dim());
    for ((mut out, pr), dr) in dz.rows_mut().into_iter().zip(p.rows()).zip(dp.rows()) {
        let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
        out.iter_mut().zip(pr.iter().zip(dr.iter())).for_each(|(o, (p, d))| *o = p * (d - dot));
    }
    dz
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn concat_cols(parts: &[ArrayView2<f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), parts).expect("row counts agree")
}

/// Split `x` column-wise into blocks of the given widths.
pub fn split_cols(x: &Array2<f64>, widths: &[usize]) -> Vec<Array2<f64>> {
    let mut start = 0;
    widths
        .iter()
        .map(|&w| {
            let part = x.slice(s![.., start..start + w]).to_owned();
            start += w;
            part
        })
        .collect()
}

pub fn mean_rows(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}

/// Inverted dropout mask; `None` when inactive.
pub fn dropout_mask(shape: (usize, usize), p: f64, rng: Option<&mut Rng64>) -> Option<Array2<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < p { 0.0 } else { keep }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, m: Vec::new(), v: Vec::new(), step: 0 }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            let lr = c.lr * p.lr_scale;
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        }
    }
}

/// Stochastic gradient descent with classical momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Array2<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        }
        for (p, vel) in params.into_iter().zip(&mut self.velocity) {
            let lr = self.lr * p.lr_scale;
            let mu = self.momentum;
            ndarray::Zip::from(&mut p.value).and(&p.grad).and(vel).for_each(|w, &g, v| {
                *v = mu * *v + g;
                *w -= lr * *v;
            });
        }
    }
}

pub mod gradcheck {
    //! Central finite differences over every parameter of a model.

    use super::Parameterized;

    /// Worst relative error between analytic and numeric gradients. Entries
    /// where both are below `floor` in magnitude are compared absolutely.
    pub fn max_rel_error<M, F>(model: &mut M, mut loss: F, eps: f64, floor: f64) -> f64
    where
        M: Parameterized,
        F: FnMut(&mut M) -> f64,
    {
        let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.iter().copied().collect()).collect();
        let mut worst: f64 = 0.0;
        for (pi, grads) in analytic.iter().enumerate() {
            for (k, &a) in grads.iter().enumerate() {
                let orig = nth(model, pi, k);
                set_nth(model, pi, k, orig + eps);
                let plus = loss(model);
                set_nth(model, pi, k, orig - eps);
                let minus = loss(model);
                set_nth(model, pi, k, orig);
                let numeric = (plus - minus) / (2.0 * eps);
                let scale = a.abs().max(numeric.abs()).max(floor);
                worst = worst.max((a - numeric).abs() / scale);
            }
        }
        worst
    }

    fn nth<M: Parameterized>(m: &M, p: usize, k: usize) -> f64 {
        *m.params()[p].value.iter().nth(k).unwrap()
    }

    fn set_nth<M: Parameterized>(m: &mut M, p: usize, k: usize, v: f64) {
        *m.params_mut()[p].value.iter_mut().nth(k).unwrap() = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive_conv(c: &Conv1d, x: &Array2<f64>) -> Array2<f64> {
        let t = x.nrows();
        let mut out = Array2::zeros((t, c.c_out));
        for o in 0..t {
            for co in 0..c.c_out {
                let mut acc = c.bias.value[[0, co]];
                for j in 0..c.kernel {
                    let src = o as isize + (j as isize - (c.kernel as isize - 1) / 2) * c.dilation as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    for ci in 0..c.c_in {
                        acc += x[[src as usize, ci]] * c.weight.value[[j * c.c_in + ci, co]];
                    }
                }
                out[[o, co]] = acc;
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = seeded_rng(3);
        for (k, d) in [(1, 1), (3, 1), (3, 4), (5, 2), (3, 16)] {
            let conv = Conv1d::new(4, 3, k, d, &mut rng);
            let x = Array2::from_shape_simple_fn((11, 4), || rng.gen_range(-1.0..1.0));
            let got = conv.forward(x.view()).unwrap();
            let want = naive_conv(&conv, &x);
            assert!((&got - &want).iter().all(|e| e.abs() < 1e-12), "k={k} d={d}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = seeded_rng(5);
        let mut conv = Conv1d::new(3, 2, 3, 2, &mut rng);
        let x = Array2::from_shape_simple_fn((9, 3), || rng.gen_range(-1.0..1.0));
        let target = Array2::from_shape_simple_fn((9, 2), || rng.gen_range(-1.0..1.0));
        let loss = |c: &Conv1d| {
            let y = c.forward(x.view()).unwrap();
            (&y * &target).sum() + 0.5 * y.mapv(|v| v * v).sum()
        };
        conv.zero_grad();
        let y = conv.forward(x.view()).unwrap();
        let dy = &target + &y;
        conv.backward(x.view(), dy.view());
        let err = gradcheck::max_rel_error(&mut conv, |c| loss(c), 1e-6, 1e-6);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let x = array![[1.0, 2.0, 3.0], [1000.0, 0.0, -1000.0]];
        let p = softmax_rows(&x);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let z = array![[0.3, -1.2, 0.8, 0.1]];
        let w = array![[0.5, 2.0, -1.0, 0.25]];
        let f = |z: &Array2<f64>| (&softmax_rows(z) * &w).sum();
        let p = softmax_rows(&z);
        let g = softmax_backward(&p, &w);
        let g2 = log_softmax_backward(&log_softmax_rows(&z), &w);
        let f2 = |z: &Array2<f64>| (&log_softmax_rows(z) * &w).sum();
        for k in 0..4 {
            let mut zp = z.clone();
            zp[[0, k]] += 1e-6;
            let mut zm = z.clone();
            zm[[0, k]] -= 1e-6;
            assert!(((f(&zp) - f(&zm)) / 2e-6 - g[[0, k]]).abs() < 1e-8);
            assert!(((f2(&zp) - f2(&zm)) / 2e-6 - g2[[0, k]]).abs() < 1e-8);
        }
    }
}
