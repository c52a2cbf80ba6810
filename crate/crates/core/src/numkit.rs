//! Dense row-major matrix kernel.
//!
//! Everything trainable in the pipeline (GNN weights, MLP weights, the
//! integration logits, the coefficient factors) is a [`ParamTensor`] wrapping a
//! [`Matrix`]. Forward operations come with hand-written backward rules; the
//! composite losses return their gradient alongside the value. [`grad_check`]
//! verifies any of them against central finite differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating that a row lies on the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("empty mask in {0}")]
    EmptyMask(&'static str),
    #[error("index {index} out of range for {rows} rows")]
    Index { index: usize, rows: usize },
    #[error("invalid value: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, NumError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumError::Invalid(format!(
                "buffer of length {} cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals and tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Matrix> {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (k, &i) in idx.iter().enumerate() {
            if i >= self.rows {
                return Err(NumError::Index {
                    index: i,
                    rows: self.rows,
                });
            }
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    fn check_same(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(NumError::Shape {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Matrix) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// Adds a 1×cols row vector to every row.
    pub fn add_row_broadcast(&mut self, bias: &Matrix) -> Result<()> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(NumError::Shape {
                op: "add_row_broadcast",
                lhs: self.shape(),
                rhs: bias.shape(),
            });
        }
        for i in 0..self.rows {
            for (a, &b) in self.row_mut(i).iter_mut().zip(&bias.data) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Column sums as a 1×cols matrix (the gradient of a broadcast bias).
    pub fn sum_rows(&self) -> Matrix {
        let mut out = Matrix::zeros(1, self.cols);
        for i in 0..self.rows {
            for (a, &b) in out.data.iter_mut().zip(self.row(i)) {
                *a += b;
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_dot(&self, other: &Matrix) -> Result<f64> {
        self.check_same(other, "frobenius_dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the largest entry of each row (first one wins on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// `a · b`. Loop order i-k-j keeps the inner loop contiguous.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(NumError::Shape {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let orow = &mut out.data[i * m..(i + 1) * m];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * m..(k + 1) * m];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(NumError::Shape {
            op: "matmul_tn",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let (n, m) = (a.cols, b.cols);
    let mut out = Matrix::zeros(n, m);
    for k in 0..a.rows {
        let brow = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * m..(i + 1) * m];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(NumError::Shape {
            op: "matmul_nt",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Ok(out)
}

/// Gradients of `C = A·B` given `dC`: returns `(dA, dB)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, dc: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok((matmul_nt(dc, b)?, matmul_tn(a, dc)?))
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Numerically stable `ln Σ exp(row)`.
fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub fn row_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    out
}

/// Pulls `dP` back through `P = row_softmax(U)`.
pub fn row_softmax_backward(probs: &Matrix, dprobs: &Matrix) -> Result<Matrix> {
    probs.check_same(dprobs, "row_softmax_backward")?;
    let mut out = Matrix::zeros(probs.rows, probs.cols);
    for i in 0..probs.rows {
        let p = probs.row(i);
        let dp = dprobs.row(i);
        let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (o, (&pj, &dpj)) in out.row_mut(i).iter_mut().zip(p.iter().zip(dp)) {
            *o = pj * (dpj - inner);
        }
    }
    Ok(out)
}

pub fn tanh_map(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

/// `dX = dY ⊙ (1 − Y²)` where `Y = tanh(X)`.
pub fn tanh_backward(y: &Matrix, dy: &Matrix) -> Result<Matrix> {
    y.check_same(dy, "tanh_backward")?;
    Ok(y.zip_map(dy, |t, g| g * (1.0 - t * t)))
}

pub fn relu_map(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Subgradient at 0 is 0. `x` may be the pre- or post-activation value.
pub fn relu_backward(x: &Matrix, dy: &Matrix) -> Result<Matrix> {
    x.check_same(dy, "relu_backward")?;
    Ok(x.zip_map(dy, |v, g| if v > 0.0 { g } else { 0.0 }))
}

pub fn one_hot(labels: &[usize], k: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), k);
    for (i, &c) in labels.iter().enumerate() {
        m.set(i, c, 1.0);
    }
    m
}

/// Mean cross entropy over the masked rows, with gradient w.r.t. the logits.
/// Rows outside the mask receive an exactly-zero gradient.
pub fn cross_entropy_masked(
    logits: &Matrix,
    labels: &Matrix,
    mask: &[usize],
) -> Result<(f64, Matrix)> {
    logits.check_same(labels, "cross_entropy_masked")?;
    if mask.is_empty() {
        return Err(NumError::EmptyMask("cross_entropy_masked"));
    }
    let inv = 1.0 / mask.len() as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for &v in mask {
        if v >= logits.rows {
            return Err(NumError::Index {
                index: v,
                rows: logits.rows,
            });
        }
        let z = logits.row(v);
        let y = labels.row(v);
        let lse = log_sum_exp(z);
        let ysum: f64 = y.iter().sum();
        loss += y.iter().zip(z).map(|(&yc, &zc)| yc * (lse - zc)).sum::<f64>();
        let g = grad.row_mut(v);
        for c in 0..z.len() {
            g[c] += inv * (ysum * (z[c] - lse).exp() - y[c]);
        }
    }
    Ok((loss * inv, grad))
}

/// Per-row `KL(target_v ‖ softmax(logits_v))` with `0·ln 0 = 0`.
pub fn kl_rows(target: &Matrix, logits: &Matrix) -> Result<Vec<f64>> {
    target.check_same(logits, "kl_rows")?;
    Ok((0..target.rows)
        .map(|v| {
            let t = target.row(v);
            let z = logits.row(v);
            let lse = log_sum_exp(z);
            t.iter()
                .zip(z)
                .filter(|(&tc, _)| tc > 0.0)
                .map(|(&tc, &zc)| tc * (tc.ln() - (zc - lse)))
                .sum()
        })
        .collect())
}

/// Weighted row-sum of `KL(target ‖ softmax(logits))` with gradient w.r.t.
/// the logits. The caller normalizes.
pub fn kl_divergence_rows(
    target: &Matrix,
    logits: &Matrix,
    row_weights: &[f64],
) -> Result<(f64, Matrix)> {
    target.check_same(logits, "kl_divergence_rows")?;
    if row_weights.len() != target.rows {
        return Err(NumError::Shape {
            op: "kl_divergence_rows",
            lhs: target.shape(),
            rhs: (row_weights.len(), 1),
        });
    }
    if let Some(w) = row_weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(NumError::Invalid(format!("negative row weight {w}")));
    }
    let per_row = kl_rows(target, logits)?;
    let probs = row_softmax(logits);
    let mut grad = Matrix::zeros(target.rows, target.cols);
    for v in 0..target.rows {
        let w = row_weights[v];
        if w == 0.0 {
            continue;
        }
        let t = target.row(v);
        let tsum: f64 = t.iter().sum();
        let p = probs.row(v);
        for (g, (&pc, &tc)) in grad.row_mut(v).iter_mut().zip(p.iter().zip(t)) {
            *g = w * (tsum * pc - tc);
        }
    }
    let loss = per_row.iter().zip(row_weights).map(|(k, w)| k * w).sum();
    Ok((loss, grad))
}

pub fn check_simplex_rows(c: &Matrix, tol: f64) -> Result<()> {
    for v in 0..c.rows {
        let row = c.row(v);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > tol || row.iter().any(|&x| x < -tol || !x.is_finite()) {
            return Err(NumError::Invalid(format!(
                "row {v} is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Entropy of the per-column mean of a row-stochastic matrix, with gradient
/// w.r.t. every entry. The column mean uses `1/n`, so it sums to one.
pub fn entropy_of_mean(c: &Matrix) -> Result<(f64, Matrix)> {
    if c.rows == 0 {
        return Err(NumError::EmptyMask("entropy_of_mean"));
    }
    check_simplex_rows(c, SIMPLEX_TOL)?;
    let n = c.rows as f64;
    let mean = c.sum_rows().scale(1.0 / n);
    let mut h = 0.0;
    let mut dmean = vec![0.0; c.cols];
    for (i, &m) in mean.data.iter().enumerate() {
        if m > 0.0 {
            h -= m * m.ln();
            dmean[i] = -(m.ln() + 1.0) / n;
        }
    }
    let grad = Matrix::from_fn(c.rows, c.cols, |_, i| dmean[i]);
    Ok((h, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(NumError::Invalid(format!("bad Adam config {self:?}")))
        }
    }
}

/// A trainable matrix with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub value: Matrix,
    pub grad: Matrix,
    m: Matrix,
    v: Matrix,
    step: u64,
}

impl ParamTensor {
    pub fn new(value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            value,
            grad: Matrix::zeros(r, c),
            m: Matrix::zeros(r, c),
            v: Matrix::zeros(r, c),
            step: 0,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn accumulate(&mut self, g: &Matrix) -> Result<()> {
        self.grad.axpy(1.0, g)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One AdamW update: decoupled decay, then the bias-corrected Adam step.
    pub fn adam_update(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for i in 0..self.value.data.len() {
            let g = self.grad.data[i];
            let m = cfg.beta1 * self.m.data[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * self.v.data[i] + (1.0 - cfg.beta2) * g * g;
            self.m.data[i] = m;
            self.v.data[i] = v;
            let mhat = m / bc1;
            let vhat = v / bc2;
            let w = self.value.data[i] * decay;
            self.value.data[i] = w - cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
        }
    }
}

pub fn adam_step(params: &mut [&mut ParamTensor], cfg: &AdamConfig) {
    for p in params.iter_mut() {
        p.adam_update(cfg);
    }
}

pub fn zero_grads(params: &mut [&mut ParamTensor]) {
    for p in params.iter_mut() {
        p.zero_grad();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries with a true gradient
/// near zero are compared on an absolute scale instead.
pub const REL_ERR_FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient of a scalar function against central
/// differences at `input`. `f` returns the value and the analytic gradient.
pub fn grad_check<F>(f: F, input: &Matrix, tolerance: f64) -> GradCheckReport
where
    F: Fn(&Matrix) -> (f64, Matrix),
{
    let (_, analytic) = f(input);
    grad_check_flat(
        |x| {
            let m = Matrix::from_vec(input.rows, input.cols, x.to_vec()).expect("same shape");
            f(&m).0
        },
        input.data(),
        analytic.data(),
        tolerance,
    )
}

/// Same as [`grad_check`] over a flat parameter vector with a value-only
/// function and a precomputed analytic gradient.
pub fn grad_check_flat<F>(f: F, x: &[f64], analytic: &[f64], tolerance: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut worst = (0.0, 0);
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let plus = f(&probe);
        probe[i] = orig - FD_STEP;
        let minus = f(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let e = rel_err(analytic[i], numeric);
        if e > worst.0 || e.is_nan() {
            worst = (e, i);
        }
    }
    GradCheckReport {
        max_rel_err: worst.0,
        worst_index: worst.1,
        passed: worst.0 < tolerance,
    }
}
