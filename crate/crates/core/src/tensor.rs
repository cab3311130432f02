//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation as it executes. [`Tape::backward`] walks
//! the record in reverse and accumulates gradients into each node; gradients of
//! leaves are then read back with [`Tape::grad`] and fed to [`Adam`].
//!
//! Conventions:
//! - shape mismatches panic when the op is recorded, not during backward;
//! - `backward` requires a 1x1 root and refuses to run twice on the same tape
//!   unless [`Tape::zero_grad`] is called in between;
//! - softmax and log-softmax subtract the row max before exponentiating;
//! - `min` ties propagate the gradient to the first argument, `leaky_relu`
//!   uses the negative slope at exactly zero, and `clip` passes gradient only
//!   strictly inside the interval.

use crate::mat::Mat;
use thiserror::Error;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TapeError {
    #[error("backward requires a 1x1 tensor, got {0}x{1}")]
    NonScalarRoot(usize, usize),
    #[error("backward already ran on this tape; call zero_grad before running it again")]
    BackwardAlreadyRan,
}

enum Op {
    Leaf,
    Constant,
    Matmul(TensorId, TensorId),
    /// Elementwise sum, or row-broadcast sum when the second operand is 1 x c.
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    MulScalar(TensorId, f64),
    Tanh(TensorId),
    LeakyRelu(TensorId, f64),
    SoftmaxRows(TensorId),
    LogSoftmaxRows(TensorId),
    Log(TensorId),
    Exp(TensorId),
    ConcatCols(TensorId, TensorId),
    MeanRows(TensorId),
    Sum(TensorId),
    MinElem(TensorId, TensorId),
    Clip(TensorId, f64, f64),
    Transpose(TensorId),
    Reshape(TensorId),
}

struct Node {
    value: Mat,
    grad: Mat,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    backward_ran: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_ran: false }
    }

    /// Number of recorded tensors.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node so the allocation can be reused for a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_ran = false;
    }

    /// Registers a differentiable input (network weights).
    pub fn leaf(&mut self, value: Mat) -> TensorId {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a non-differentiable input (features, targets, masks).
    pub fn constant(&mut self, value: Mat) -> TensorId {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, id: TensorId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> &Mat {
        &self.nodes[id.0].grad
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self, id: TensorId) -> f64 {
        let v = self.value(id);
        assert_eq!((v.rows(), v.cols()), (1, 1), "scalar() on a {}x{} tensor", v.rows(), v.cols());
        v.get(0, 0)
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> TensorId {
        let grad = Mat::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op, needs_grad });
        TensorId(self.nodes.len() - 1)
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn derive(&mut self, value: Mat, op: Op, parents: &[TensorId]) -> TensorId {
        let needs = parents.iter().any(|&p| self.needs(p));
        self.push(value, op, needs)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a).matmul(self.value(b));
        self.derive(v, Op::Matmul(a, b), &[a, b])
    }

    /// `a + b` elementwise, or `a + b` with `b` a 1 x c row added to every row of `a`.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        let v = if vb.rows() == 1 && va.rows() > 1 {
            assert_eq!(
                va.cols(),
                vb.cols(),
                "row-broadcast add shape mismatch: {}x{} + 1x{}",
                va.rows(),
                va.cols(),
                vb.cols()
            );
            let mut out = va.clone();
            for r in 0..out.rows() {
                for c in 0..out.cols() {
                    out.set(r, c, out.get(r, c) + vb.get(0, c));
                }
            }
            out
        } else {
            va.add(vb)
        };
        self.derive(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.value(a).sub(self.value(b));
        self.derive(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            (va.rows(), va.cols()),
            (vb.rows(), vb.cols()),
            "elementwise mul shape mismatch: {}x{} vs {}x{}",
            va.rows(),
            va.cols(),
            vb.rows(),
            vb.cols()
        );
        let mut v = va.clone();
        for (x, y) in v.data_mut().iter_mut().zip(vb.data()) {
            *x *= y;
        }
        self.derive(v, Op::Mul(a, b), &[a, b])
    }

    pub fn mul_scalar(&mut self, a: TensorId, s: f64) -> TensorId {
        let v = self.value(a).scale(s);
        self.derive(v, Op::MulScalar(a, s), &[a])
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).map(f64::tanh);
        self.derive(v, Op::Tanh(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: TensorId, slope: f64) -> TensorId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.derive(v, Op::LeakyRelu(a, slope), &[a])
    }

    /// Row-wise softmax with the row max subtracted before exponentiation.
    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        let mut v = va.clone();
        for r in 0..v.rows() {
            softmax_in_place(v.row_mut(r));
        }
        self.derive(v, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise log-softmax, fused for numerical stability.
    pub fn log_softmax_rows(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        let mut v = va.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for x in row.iter_mut() {
                *x -= log_sum;
            }
        }
        self.derive(v, Op::LogSoftmaxRows(a), &[a])
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).map(f64::ln);
        self.derive(v, Op::Log(a), &[a])
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).map(f64::exp);
        self.derive(v, Op::Exp(a), &[a])
    }

    /// Horizontal concatenation: [a | b]. Row counts must match.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.rows(),
            vb.rows(),
            "concat_cols row mismatch: {}x{} vs {}x{}",
            va.rows(),
            va.cols(),
            vb.rows(),
            vb.cols()
        );
        let mut v = Mat::zeros(va.rows(), va.cols() + vb.cols());
        for r in 0..va.rows() {
            let row = v.row_mut(r);
            row[..va.cols()].copy_from_slice(va.row(r));
            row[va.cols()..].copy_from_slice(vb.row(r));
        }
        self.derive(v, Op::ConcatCols(a, b), &[a, b])
    }

    /// Column means over rows: n x c -> 1 x c.
    pub fn mean_rows(&mut self, a: TensorId) -> TensorId {
        let va = self.value(a);
        let n = va.rows() as f64;
        let mut v = Mat::zeros(1, va.cols());
        for r in 0..va.rows() {
            for c in 0..va.cols() {
                v.set(0, c, v.get(0, c) + va.get(r, c));
            }
        }
        for c in 0..va.cols() {
            v.set(0, c, v.get(0, c) / n);
        }
        self.derive(v, Op::MeanRows(a), &[a])
    }

    /// Sum of all entries -> 1 x 1.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().sum();
        self.derive(Mat::from_vec(1, 1, vec![total]), Op::Sum(a), &[a])
    }

    /// Elementwise minimum. On ties the gradient goes to the first argument.
    pub fn min_elem(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            (va.rows(), va.cols()),
            (vb.rows(), vb.cols()),
            "min_elem shape mismatch: {}x{} vs {}x{}",
            va.rows(),
            va.cols(),
            vb.rows(),
            vb.cols()
        );
        let mut v = va.clone();
        for (x, y) in v.data_mut().iter_mut().zip(vb.data()) {
            if *y < *x {
                *x = *y;
            }
        }
        self.derive(v, Op::MinElem(a, b), &[a, b])
    }

    /// Clamps entries to [lo, hi]. Gradient passes only strictly inside.
    pub fn clip(&mut self, a: TensorId, lo: f64, hi: f64) -> TensorId {
        assert!(lo <= hi, "clip bounds inverted: [{lo}, {hi}]");
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.derive(v, Op::Clip(a, lo, hi), &[a])
    }

    /// Matrix transpose.
    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let v = self.value(a).transpose();
        self.derive(v, Op::Transpose(a), &[a])
    }

    /// Reinterprets the row-major data as `rows` x `cols`.
    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> TensorId {
        let va = self.value(a);
        assert_eq!(
            va.rows() * va.cols(),
            rows * cols,
            "reshape element count mismatch: {}x{} -> {rows}x{cols}",
            va.rows(),
            va.cols()
        );
        let v = Mat::from_vec(rows, cols, va.data().to_vec());
        self.derive(v, Op::Reshape(a), &[a])
    }

    /// Resets all gradients to zero and re-arms `backward`.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            for g in node.grad.data_mut() {
                *g = 0.0;
            }
        }
        self.backward_ran = false;
    }

    /// Accumulates d(root)/d(node) into every node reachable from `root`.
    pub fn backward(&mut self, root: TensorId) -> Result<(), TapeError> {
        {
            let v = self.value(root);
            if (v.rows(), v.cols()) != (1, 1) {
                return Err(TapeError::NonScalarRoot(v.rows(), v.cols()));
            }
        }
        if self.backward_ran {
            return Err(TapeError::BackwardAlreadyRan);
        }
        self.backward_ran = true;
        self.nodes[root.0].grad.set(0, 0, 1.0);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize) {
        // Split borrows: take the node's grad out, write into parents, put it back.
        let grad = std::mem::replace(&mut self.nodes[i].grad, Mat::zeros(0, 0));
        match self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Matmul(a, b) => {
                if self.needs(a) {
                    let gb_t = self.nodes[b.0].value.transpose();
                    let ga = grad.matmul(&gb_t);
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
                if self.needs(b) {
                    let a_t = self.nodes[a.0].value.transpose();
                    let gb = a_t.matmul(&grad);
                    accumulate(&mut self.nodes[b.0].grad, &gb);
                }
            }
            Op::Add(a, b) => {
                if self.needs(a) {
                    accumulate(&mut self.nodes[a.0].grad, &grad);
                }
                if self.needs(b) {
                    let vb_rows = self.nodes[b.0].value.rows();
                    if vb_rows == 1 && grad.rows() > 1 {
                        let gb = &mut self.nodes[b.0].grad;
                        for r in 0..grad.rows() {
                            for c in 0..grad.cols() {
                                gb.set(0, c, gb.get(0, c) + grad.get(r, c));
                            }
                        }
                    } else {
                        accumulate(&mut self.nodes[b.0].grad, &grad);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    accumulate(&mut self.nodes[a.0].grad, &grad);
                }
                if self.needs(b) {
                    let neg = grad.scale(-1.0);
                    accumulate(&mut self.nodes[b.0].grad, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let mut ga = grad.clone();
                    for (g, y) in ga.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
                        *g *= y;
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
                if self.needs(b) {
                    let mut gb = grad.clone();
                    for (g, x) in gb.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                        *g *= x;
                    }
                    accumulate(&mut self.nodes[b.0].grad, &gb);
                }
            }
            Op::MulScalar(a, s) => {
                if self.needs(a) {
                    let ga = grad.scale(s);
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::Tanh(a) => {
                if self.needs(a) {
                    let mut ga = grad.clone();
                    for (g, y) in ga.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                        *g *= 1.0 - y * y;
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::LeakyRelu(a, slope) => {
                if self.needs(a) {
                    let mut ga = grad.clone();
                    for (g, x) in ga.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                        if *x <= 0.0 {
                            *g *= slope;
                        }
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs(a) {
                    let y = &self.nodes[i].value;
                    let mut ga = Mat::zeros(grad.rows(), grad.cols());
                    for r in 0..grad.rows() {
                        let dot: f64 =
                            grad.row(r).iter().zip(y.row(r)).map(|(&g, &p)| g * p).sum();
                        for c in 0..grad.cols() {
                            ga.set(r, c, y.get(r, c) * (grad.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::LogSoftmaxRows(a) => {
                if self.needs(a) {
                    let y = &self.nodes[i].value;
                    let mut ga = Mat::zeros(grad.rows(), grad.cols());
                    for r in 0..grad.rows() {
                        let gsum: f64 = grad.row(r).iter().sum();
                        for c in 0..grad.cols() {
                            let p = y.get(r, c).exp();
                            ga.set(r, c, grad.get(r, c) - p * gsum);
                        }
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::Log(a) => {
                if self.needs(a) {
                    let mut ga = grad.clone();
                    for (g, x) in ga.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                        *g /= x;
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::Exp(a) => {
                if self.needs(a) {
                    let mut ga = grad.clone();
                    for (g, y) in ga.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                        *g *= y;
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a.0].value.cols();
                if self.needs(a) {
                    let mut ga = Mat::zeros(grad.rows(), ca);
                    for r in 0..grad.rows() {
                        ga.row_mut(r).copy_from_slice(&grad.row(r)[..ca]);
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
                if self.needs(b) {
                    let cb = self.nodes[b.0].value.cols();
                    let mut gb = Mat::zeros(grad.rows(), cb);
                    for r in 0..grad.rows() {
                        gb.row_mut(r).copy_from_slice(&grad.row(r)[ca..]);
                    }
                    accumulate(&mut self.nodes[b.0].grad, &gb);
                }
            }
            Op::MeanRows(a) => {
                if self.needs(a) {
                    let n = self.nodes[a.0].value.rows();
                    let scale = 1.0 / n as f64;
                    let ga = &mut self.nodes[a.0].grad;
                    for r in 0..n {
                        for c in 0..grad.cols() {
                            ga.set(r, c, ga.get(r, c) + grad.get(0, c) * scale);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.needs(a) {
                    let g = grad.get(0, 0);
                    for x in self.nodes[a.0].grad.data_mut() {
                        *x += g;
                    }
                }
            }
            Op::MinElem(a, b) => {
                let pick_b: Vec<bool> = self.nodes[a.0]
                    .value
                    .data()
                    .iter()
                    .zip(self.nodes[b.0].value.data())
                    .map(|(&x, &y)| y < x)
                    .collect();
                if self.needs(a) {
                    let ga = &mut self.nodes[a.0].grad;
                    for (k, g) in grad.data().iter().enumerate() {
                        if !pick_b[k] {
                            ga.data_mut()[k] += g;
                        }
                    }
                }
                if self.needs(b) {
                    let gb = &mut self.nodes[b.0].grad;
                    for (k, g) in grad.data().iter().enumerate() {
                        if pick_b[k] {
                            gb.data_mut()[k] += g;
                        }
                    }
                }
            }
            Op::Clip(a, lo, hi) => {
                if self.needs(a) {
                    let mut ga = grad.clone();
                    for (g, x) in ga.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                        if !(*x > lo && *x < hi) {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::Transpose(a) => {
                if self.needs(a) {
                    let ga = grad.transpose();
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
            Op::Reshape(a) => {
                if self.needs(a) {
                    let pa = &self.nodes[a.0].value;
                    let ga = Mat::from_vec(pa.rows(), pa.cols(), grad.data().to_vec());
                    accumulate(&mut self.nodes[a.0].grad, &ga);
                }
            }
        }
        self.nodes[i].grad = grad;
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn accumulate(dst: &mut Mat, src: &Mat) {
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

/// Adam optimizer over an ordered list of parameter matrices.
///
/// Bias-corrected first and second moments; one `step` call advances the shared
/// timestep once for the whole parameter list.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [Mat], grads: &[Mat]) {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        assert_eq!(params.len(), self.m.len(), "optimizer state does not match parameter list");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in
            params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(
                (p.rows(), p.cols()),
                (g.rows(), g.cols()),
                "gradient shape does not match parameter"
            );
            for k in 0..p.data().len() {
                let gk = g.data()[k];
                m.data_mut()[k] = self.beta1 * m.data()[k] + (1.0 - self.beta1) * gk;
                v.data_mut()[k] = self.beta2 * v.data()[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m.data()[k] / bc1;
                let v_hat = v.data()[k] / bc2;
                p.data_mut()[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Central finite-difference gradient of `f` with respect to every entry of
/// `params`. Used by tests to validate the tape.
pub fn finite_difference_gradient(
    f: &mut dyn FnMut(&[Mat]) -> f64,
    params: &[Mat],
    h: f64,
) -> Vec<Mat> {
    let mut work: Vec<Mat> = params.to_vec();
    let mut grads: Vec<Mat> = params.iter().map(|p| Mat::zeros(p.rows(), p.cols())).collect();
    for pi in 0..work.len() {
        for k in 0..work[pi].data().len() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let up = f(&work);
            work[pi].data_mut()[k] = orig - h;
            let down = f(&work);
            work[pi].data_mut()[k] = orig;
            grads[pi].data_mut()[k] = (up - down) / (2.0 * h);
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_mat(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Mat {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Mat::from_vec(rows, cols, data)
    }

    mod values {
        use super::*;

        #[test]
        fn softmax_rows_are_distributions() {
            let mut tape = Tape::new();
            let x = tape.constant(Mat::from_rows(&[
                vec![1.0, 2.0, 3.0],
                vec![-5.0, 0.0, 5.0],
                vec![1000.0, 1000.0, 1000.0],
            ]));
            let y = tape.softmax_rows(x);
            let v = tape.value(y);
            for r in 0..3 {
                let sum: f64 = v.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "row {r} sums to {sum}");
                assert!(v.row(r).iter().all(|&p| p > 0.0 && p <= 1.0));
            }
            // Large equal logits stay finite and uniform.
            assert!((v.get(2, 0) - 1.0 / 3.0).abs() < 1e-12);
        }

        #[test]
        fn log_softmax_matches_log_of_softmax() {
            let mut tape = Tape::new();
            let x = tape.constant(Mat::from_rows(&[vec![0.3, -1.2, 2.5, 0.0]]));
            let s = tape.softmax_rows(x);
            let ls = tape.log_softmax_rows(x);
            for c in 0..4 {
                let direct = tape.value(ls).get(0, c);
                let via_log = tape.value(s).get(0, c).ln();
                assert!((direct - via_log).abs() < 1e-12);
            }
        }

        #[test]
        fn add_broadcasts_single_row() {
            let mut tape = Tape::new();
            let a = tape.constant(Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
            let b = tape.constant(Mat::row_vector(&[10.0, 20.0]));
            let c = tape.add(a, b);
            assert_eq!(tape.value(c).data(), &[11.0, 22.0, 13.0, 24.0]);
        }

        #[test]
        fn concat_mean_sum_min_clip_values() {
            let mut tape = Tape::new();
            let a = tape.constant(Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
            let b = tape.constant(Mat::from_rows(&[vec![5.0], vec![6.0]]));
            let cat = tape.concat_cols(a, b);
            assert_eq!(tape.value(cat).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);

            let mean = tape.mean_rows(a);
            assert_eq!(tape.value(mean).data(), &[2.0, 3.0]);

            let total = tape.sum(a);
            assert_eq!(tape.scalar(total), 10.0);

            let neg = tape.mul_scalar(a, -1.0);
            let mn = tape.min_elem(a, neg);
            assert_eq!(tape.value(mn).data(), &[-1.0, -2.0, -3.0, -4.0]);

            let clipped = tape.clip(a, 1.5, 3.5);
            assert_eq!(tape.value(clipped).data(), &[1.5, 2.0, 3.0, 3.5]);
        }

        #[test]
        fn transpose_and_reshape_rearrange_data() {
            let mut tape = Tape::new();
            let a = tape.constant(Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]));
            let t = tape.transpose(a);
            assert_eq!((tape.value(t).rows(), tape.value(t).cols()), (3, 2));
            assert_eq!(tape.value(t).data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
            // Row-major reinterpretation keeps the data order untouched.
            let r = tape.reshape(a, 3, 2);
            assert_eq!(tape.value(r).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        }

        #[test]
        #[should_panic(expected = "reshape element count mismatch")]
        fn reshape_rejects_wrong_element_count() {
            let mut tape = Tape::new();
            let a = tape.constant(Mat::zeros(2, 3));
            tape.reshape(a, 4, 2);
        }
    }

    mod gradients {
        use super::*;

        /// Runs `build` twice: once on a tape for analytic gradients, once
        /// inside a finite-difference loop. Compares every entry.
        fn check_gradients(
            params: &[Mat],
            build: impl Fn(&mut Tape, &[TensorId]) -> TensorId,
            tol: f64,
        ) {
            let mut tape = Tape::new();
            let ids: Vec<TensorId> = params.iter().map(|p| tape.leaf(p.clone())).collect();
            let root = build(&mut tape, &ids);
            tape.backward(root).unwrap();
            let analytic: Vec<Mat> = ids.iter().map(|&id| tape.grad(id).clone()).collect();

            let numeric = finite_difference_gradient(
                &mut |ps: &[Mat]| {
                    let mut t = Tape::new();
                    let ids: Vec<TensorId> = ps.iter().map(|p| t.leaf(p.clone())).collect();
                    let root = build(&mut t, &ids);
                    t.scalar(root)
                },
                params,
                1e-6,
            );

            for (pi, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                for k in 0..a.data().len() {
                    let (av, nv) = (a.data()[k], n.data()[k]);
                    let denom = av.abs().max(nv.abs()).max(1.0);
                    assert!(
                        (av - nv).abs() / denom < tol,
                        "param {pi} entry {k}: analytic {av} vs numeric {nv}"
                    );
                }
            }
        }

        #[test]
        fn tanh_gradient_is_one_minus_square() {
            // f = sum(tanh(x)) so df/dx = 1 - tanh(x)^2.
            let x = Mat::from_rows(&[vec![0.0, 0.5, -1.2]]);
            let mut tape = Tape::new();
            let xi = tape.leaf(x.clone());
            let y = tape.tanh(xi);
            let s = tape.sum(y);
            tape.backward(s).unwrap();
            for c in 0..3 {
                let expect = 1.0 - x.get(0, c).tanh().powi(2);
                assert!((tape.grad(xi).get(0, c) - expect).abs() < 1e-12);
            }
        }

        #[test]
        fn matmul_chain_matches_finite_differences() {
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            let a = random_mat(&mut rng, 3, 4);
            let b = random_mat(&mut rng, 4, 2);
            check_gradients(
                &[a, b],
                |t, ids| {
                    let prod = t.matmul(ids[0], ids[1]);
                    let act = t.tanh(prod);
                    t.sum(act)
                },
                1e-7,
            );
        }

        #[test]
        fn broadcast_add_and_mean_rows_match_finite_differences() {
            let mut rng = ChaCha12Rng::seed_from_u64(8);
            let x = random_mat(&mut rng, 4, 3);
            let bias = random_mat(&mut rng, 1, 3);
            check_gradients(
                &[x, bias],
                |t, ids| {
                    let z = t.add(ids[0], ids[1]);
                    let a = t.tanh(z);
                    let m = t.mean_rows(a);
                    t.sum(m)
                },
                1e-7,
            );
        }

        #[test]
        fn softmax_log_exp_match_finite_differences() {
            let mut rng = ChaCha12Rng::seed_from_u64(9);
            let x = random_mat(&mut rng, 3, 5);
            check_gradients(
                &[x.clone()],
                |t, ids| {
                    let p = t.softmax_rows(ids[0]);
                    let lp = t.log(p);
                    let prod = t.mul(p, lp);
                    t.sum(prod)
                },
                1e-6,
            );
            check_gradients(
                &[x],
                |t, ids| {
                    let lp = t.log_softmax_rows(ids[0]);
                    let e = t.exp(lp);
                    let s = t.mul(lp, e);
                    t.sum(s)
                },
                1e-6,
            );
        }

        #[test]
        fn leaky_relu_concat_min_clip_match_finite_differences() {
            // Hand-picked values keep every entry away from the kinks at zero,
            // the clip bounds, and min ties, while exercising both branches of
            // each: negative/positive leaky inputs, both min winners, and
            // clipped-low/interior/clipped-high entries.
            let a = Mat::from_rows(&[vec![0.5, -0.4, 1.2], vec![-0.9, 0.3, 2.0]]);
            let b = Mat::from_rows(&[vec![2.0, 1.6, 1.8], vec![2.2, 1.9, 1.7]]);
            check_gradients(
                &[a, b],
                |t, ids| {
                    let lr = t.leaky_relu(ids[0], 0.2);
                    let mn = t.min_elem(lr, ids[1]);
                    let cat = t.concat_cols(mn, ids[1]);
                    let clipped = t.clip(cat, -0.1, 1.95);
                    t.sum(clipped)
                },
                1e-6,
            );
        }

        #[test]
        fn transpose_and_reshape_match_finite_differences() {
            let mut rng = ChaCha12Rng::seed_from_u64(12);
            let a = random_mat(&mut rng, 2, 3);
            let b = random_mat(&mut rng, 2, 2);
            check_gradients(
                &[a.clone(), b],
                |t, ids| {
                    let at = t.transpose(ids[0]);
                    let prod = t.matmul(at, ids[1]);
                    let act = t.tanh(prod);
                    t.sum(act)
                },
                1e-7,
            );
            let w = random_mat(&mut rng, 6, 1);
            check_gradients(
                &[a, w],
                |t, ids| {
                    let flat = t.reshape(ids[0], 1, 6);
                    let prod = t.matmul(flat, ids[1]);
                    t.tanh(prod)
                },
                1e-7,
            );
        }

        #[test]
        fn gradient_accumulates_when_node_is_reused() {
            // f = sum(x * x) so df/dx = 2x; the same id feeds mul twice.
            let mut tape = Tape::new();
            let x = tape.leaf(Mat::row_vector(&[1.5, -2.0]));
            let sq = tape.mul(x, x);
            let s = tape.sum(sq);
            tape.backward(s).unwrap();
            assert_eq!(tape.grad(x).data(), &[3.0, -4.0]);
        }
    }

    mod guards {
        use super::*;

        #[test]
        fn backward_rejects_non_scalar_root() {
            let mut tape = Tape::new();
            let x = tape.leaf(Mat::zeros(2, 2));
            assert_eq!(tape.backward(x), Err(TapeError::NonScalarRoot(2, 2)));
        }

        #[test]
        fn second_backward_requires_zero_grad() {
            let mut tape = Tape::new();
            let x = tape.leaf(Mat::row_vector(&[1.0]));
            let s = tape.sum(x);
            tape.backward(s).unwrap();
            assert_eq!(tape.backward(s), Err(TapeError::BackwardAlreadyRan));
            tape.zero_grad();
            tape.backward(s).unwrap();
            assert_eq!(tape.grad(x).data(), &[1.0]);
        }

        #[test]
        fn constants_collect_no_gradient() {
            let mut tape = Tape::new();
            let x = tape.leaf(Mat::row_vector(&[2.0]));
            let c = tape.constant(Mat::row_vector(&[3.0]));
            let prod = tape.mul(x, c);
            let s = tape.sum(prod);
            tape.backward(s).unwrap();
            assert_eq!(tape.grad(x).data(), &[3.0]);
            assert_eq!(tape.grad(c).data(), &[0.0]);
        }
    }

    mod adam {
        use super::*;

        #[test]
        fn first_step_moves_by_lr_times_unit_gradient() {
            // With bias correction the first update is lr * g / (|g| + eps).
            let mut opt = Adam::new(0.1);
            let mut params = vec![Mat::row_vector(&[1.0, -1.0])];
            let grads = vec![Mat::row_vector(&[2.0, -0.5])];
            opt.step(&mut params, &grads);
            let expect0 = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
            let expect1 = -1.0 + 0.1 * 0.5 / (0.5 + 1e-8);
            assert!((params[0].get(0, 0) - expect0).abs() < 1e-12);
            assert!((params[0].get(0, 1) - expect1).abs() < 1e-12);
            assert_eq!(opt.timestep(), 1);
        }

        #[test]
        fn repeated_steps_descend_a_quadratic() {
            // Minimize (x - 3)^2 from x = 0.
            let mut opt = Adam::new(0.05);
            let mut params = vec![Mat::row_vector(&[0.0])];
            for _ in 0..2000 {
                let x = params[0].get(0, 0);
                let grads = vec![Mat::row_vector(&[2.0 * (x - 3.0)])];
                opt.step(&mut params, &grads);
            }
            assert!((params[0].get(0, 0) - 3.0).abs() < 1e-3);
        }

        #[test]
        #[should_panic(expected = "params/grads length mismatch")]
        fn step_rejects_mismatched_lists() {
            let mut opt = Adam::new(0.1);
            let mut params = vec![Mat::zeros(1, 1)];
            opt.step(&mut params, &[]);
        }
    }
}
