//! Reverse-mode differentiation over a linear record of executed ops.
//!
//! Every op appends a node holding its output value and whatever it needs
//! for the backward rule. `backward` walks the nodes in reverse creation
//! order (which is a topological order) and accumulates gradients
//! additively wherever a value fans out.

use std::sync::Arc;

use rand::Rng;

use super::dense::gemm_into;
use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BatchNormState<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            momentum: T::from_f64_lossy(0.9),
            eps: T::from_f64_lossy(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>),
    Columns {
        x: Var,
        start: usize,
    },
    Relu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Softmax(Var),
    SegmentSum {
        x: Var,
        ids: Arc<[usize]>,
        weights: Vec<T>,
    },
    SpMM {
        op: Arc<CsrMatrix<T>>,
        x: Var,
    },
    ChebBasis {
        op: Arc<CsrMatrix<T>>,
        x: Var,
        k: usize,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
        floor: T,
    },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Single-threaded computation record. Independent tapes may live on
/// different threads.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records a constant (no gradient is reported for it).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    /// Records a learnable tensor; its gradient lands in `Gradients[id]`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 x c` row to every row of an `n x c` tensor.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(format!(
                "bias {}x{} for a {}-column input",
                bv.rows(),
                bv.cols(),
                xv.cols()
            )));
        }
        let mut out = xv.clone();
        let b = bv.data().to_vec();
        for r in 0..out.rows() {
            for (o, bb) in out.row_mut(r).iter_mut().zip(&b) {
                *o += *bb;
            }
        }
        Ok(self.push(out, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, a: T) -> Var {
        let out = self.value(x).scale(a);
        self.push(out, Op::Scale(x, a))
    }

    /// Column-wise concatenation of tensors sharing a row count.
    pub fn concat_columns(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for p in parts {
            let v = self.value(*p);
            if v.rows() != rows {
                return Err(Error::shape(format!(
                    "concat rows {} vs {}",
                    v.rows(),
                    rows
                )));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Contiguous column slice.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).columns(start, len)?;
        Ok(self.push(out, Op::Columns { x, start }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through
        let out = self
            .value(x)
            .map(|v| if v <= T::zero() { T::zero() } else { v });
        self.push(out, Op::Relu(x))
    }

    /// Per-column normalization over the rows (all nodes of the batch).
    ///
    /// Train mode standardizes with batch statistics and folds them into
    /// `state` as `running = momentum * running + (1 - momentum) * batch`
    /// (biased variance). Eval mode uses the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        if n == 0 {
            return Err(Error::shape("batch norm over zero rows"));
        }
        if state.channels() != c {
            return Err(Error::shape(format!(
                "batch norm state has {} channels, input {}",
                state.channels(),
                c
            )));
        }
        for g in [gamma, beta] {
            let gv = self.value(g);
            if gv.rows() != 1 || gv.cols() != c {
                return Err(Error::shape("batch norm scale/shift must be 1 x channels"));
            }
        }
        let train = mode == Mode::Train;
        let (mean, inv_std) = if train {
            let nf = T::from_usize(n).unwrap();
            let mut mean = vec![T::zero(); c];
            for r in 0..n {
                for (m, v) in mean.iter_mut().zip(xv.row(r)) {
                    *m += *v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nf);
            let mut var = vec![T::zero(); c];
            for r in 0..n {
                for ((s, v), m) in var.iter_mut().zip(xv.row(r)).zip(&mean) {
                    let d = *v - *m;
                    *s += d * d;
                }
            }
            var.iter_mut().for_each(|s| *s /= nf);
            let mom = state.momentum;
            for j in 0..c {
                state.mean[j] = mom * state.mean[j] + (T::one() - mom) * mean[j];
                state.var[j] = mom * state.var[j] + (T::one() - mom) * var[j];
            }
            let inv: Vec<T> = var
                .iter()
                .map(|v| T::one() / (*v + state.eps).sqrt())
                .collect();
            (mean, inv)
        } else {
            let inv: Vec<T> = state
                .var
                .iter()
                .map(|v| T::one() / (*v + state.eps).sqrt())
                .collect();
            (state.mean.clone(), inv)
        };
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let xv = self.value(x);
        let mut xhat = Vec::with_capacity(n * c);
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            for (j, v) in xv.row(r).iter().enumerate() {
                let h = (*v - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(gv[j] * h + bv[j]);
            }
        }
        let out = Tensor::new(n, c, out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        ))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Eval mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
        }
        let len = self.value(x).len();
        let mask: Vec<T> = if mode == Mode::Eval || rate == 0.0 {
            vec![T::one(); len]
        } else {
            let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
            (0..len)
                .map(|_| {
                    if rng.gen::<f64>() < rate {
                        T::zero()
                    } else {
                        keep
                    }
                })
                .collect()
        };
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let out = Tensor::new(xv.rows(), xv.cols(), data)?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(out, Op::Softmax(x))
    }

    /// Mean of the rows sharing a segment id. Every segment in
    /// `0..num_segments` must be nonempty.
    pub fn segment_mean(&mut self, x: Var, ids: &Arc<[usize]>, num_segments: usize) -> Result<Var> {
        let counts = segment_counts(ids, num_segments, self.value(x).rows())?;
        if let Some(s) = counts.iter().position(|&c| c == 0) {
            return Err(Error::shape(format!("segment {s} is empty")));
        }
        let weights = ids
            .iter()
            .map(|&s| T::one() / T::from_usize(counts[s]).unwrap())
            .collect();
        Ok(self.segment_weighted(x, ids, num_segments, weights))
    }

    /// Sum of the rows sharing a segment id.
    pub fn segment_sum(&mut self, x: Var, ids: &Arc<[usize]>, num_segments: usize) -> Result<Var> {
        segment_counts(ids, num_segments, self.value(x).rows())?;
        Ok(self.segment_weighted(x, ids, num_segments, vec![T::one(); ids.len()]))
    }

    fn segment_weighted(
        &mut self,
        x: Var,
        ids: &Arc<[usize]>,
        num_segments: usize,
        weights: Vec<T>,
    ) -> Var {
        let xv = self.value(x);
        let mut out = Tensor::zeros(num_segments, xv.cols());
        for (r, (&s, &w)) in ids.iter().zip(&weights).enumerate() {
            let src = xv.row(r);
            for (o, v) in out.row_mut(s).iter_mut().zip(src) {
                *o += w * *v;
            }
        }
        self.push(
            out,
            Op::SegmentSum {
                x,
                ids: ids.clone(),
                weights,
            },
        )
    }

    /// Sparse-times-dense product with a constant operator.
    pub fn spmm(&mut self, op: &Arc<CsrMatrix<T>>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if op.cols() != xv.rows() {
            return Err(Error::shape(format!(
                "operator {}x{} applied to {} rows",
                op.rows(),
                op.cols(),
                xv.rows()
            )));
        }
        let mut out = vec![T::zero(); op.rows() * xv.cols()];
        op.mul_dense_acc(T::one(), xv.data(), xv.cols(), &mut out);
        let out = Tensor::new(op.rows(), xv.cols(), out)?;
        Ok(self.push(out, Op::SpMM { op: op.clone(), x }))
    }

    /// Stacked Chebyshev basis `[X̄_0 | X̄_1 | ... | X̄_k]` (`n x (k+1)d`)
    /// with `X̄_0 = X`, `X̄_1 = L X`, `X̄_j = 2 L X̄_{j-1} - X̄_{j-2}`.
    pub fn cheb_basis(&mut self, op: &Arc<CsrMatrix<T>>, x: Var, k: usize) -> Result<Var> {
        let xv = self.value(x);
        if op.rows() != op.cols() || op.cols() != xv.rows() {
            return Err(Error::shape(format!(
                "operator {}x{} applied to {} rows",
                op.rows(),
                op.cols(),
                xv.rows()
            )));
        }
        let blocks = chebyshev_blocks(op, xv.data(), xv.cols(), k);
        let out = stack_blocks(&blocks, xv.rows(), xv.cols());
        Ok(self.push(
            out,
            Op::ChebBasis {
                op: op.clone(),
                x,
                k,
            },
        ))
    }

    /// Mean negative log-likelihood of the true class, probabilities
    /// floored at `1e-12`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let pv = self.value(probs);
        if pv.rows() != labels.len() || pv.rows() == 0 {
            return Err(Error::shape(format!(
                "{} probability rows for {} labels",
                pv.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= pv.cols()) {
            return Err(Error::param(format!(
                "label {bad} outside {} classes",
                pv.cols()
            )));
        }
        let floor = T::from_f64_lossy(1e-12);
        let b = T::from_usize(labels.len()).unwrap();
        let total = labels.iter().enumerate().fold(T::zero(), |acc, (i, &l)| {
            // NaN stays NaN here, unlike with `max`
            let p = pv.get(i, l);
            let p = if p < floor { floor } else { p };
            acc - p.ln()
        });
        let out = Tensor::scalar(total / b);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
                floor,
            },
        ))
    }

    /// Sum of all elements as a `1x1` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Gradient of the scalar `loss` with respect to every parameter in
    /// `store` that was placed on this tape.
    pub fn backward(&self, loss: Var, store: &ParamStore<T>) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape(format!(
                "loss must be scalar, got {}x{}",
                lv.rows(),
                lv.cols()
            )));
        }
        let mut out = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.rows(), lv.cols(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    if id.0 >= out.len() {
                        return Err(Error::shape("parameter id outside the store"));
                    }
                    out.accumulate(*id, &g);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    // dA = G Bᵀ
                    let mut da = vec![T::zero(); m * k];
                    gemm_into(
                        m,
                        n,
                        k,
                        T::one(),
                        (g.data(), n as isize, 1),
                        (bv.data(), 1, n as isize),
                        T::zero(),
                        &mut da,
                    );
                    // dB = Aᵀ G
                    let mut db = vec![T::zero(); k * n];
                    gemm_into(
                        k,
                        m,
                        n,
                        T::one(),
                        (av.data(), 1, k as isize),
                        (g.data(), n as isize, 1),
                        T::zero(),
                        &mut db,
                    );
                    accumulate(&mut grads, *a, Tensor::new(m, k, da)?);
                    accumulate(&mut grads, *b, Tensor::new(k, n, db)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRowBias(x, bias) => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *d += *v;
                        }
                    }
                    accumulate(&mut grads, *bias, db);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, a) => {
                    accumulate(&mut grads, *x, g.scale(*a));
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        accumulate(&mut grads, *p, g.columns(start, w)?);
                        start += w;
                    }
                }
                Op::Columns { x, start } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let w = g.cols();
                    for r in 0..g.rows() {
                        dx.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(gg, v)| if *v > T::zero() { *gg } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let (n, c) = (g.rows(), g.cols());
                    let gam = self.value(*gamma).data();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for r in 0..n {
                        for j in 0..c {
                            let gg = g.data()[r * c + j];
                            dgamma[j] += gg * xhat[r * c + j];
                            dbeta[j] += gg;
                        }
                    }
                    let mut dx = vec![T::zero(); n * c];
                    if *train {
                        let nf = T::from_usize(n).unwrap();
                        // dx = inv_std / n * (n dxhat - Σ dxhat - xhat Σ dxhat·xhat)
                        for j in 0..c {
                            let sum_dxhat = dbeta[j] * gam[j];
                            let sum_dxhat_xhat = dgamma[j] * gam[j];
                            for r in 0..n {
                                let dxhat = g.data()[r * c + j] * gam[j];
                                dx[r * c + j] = inv_std[j] / nf
                                    * (nf * dxhat - sum_dxhat - xhat[r * c + j] * sum_dxhat_xhat);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for j in 0..c {
                                dx[r * c + j] = g.data()[r * c + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                    accumulate(&mut grads, *gamma, Tensor::new(1, c, dgamma)?);
                    accumulate(&mut grads, *beta, Tensor::new(1, c, dbeta)?);
                    accumulate(&mut grads, *x, Tensor::new(n, c, dx)?);
                }
                Op::Dropout { x, mask } => {
                    let data = g.data().iter().zip(mask).map(|(a, m)| *a * *m).collect();
                    accumulate(&mut grads, *x, Tensor::new(g.rows(), g.cols(), data)?);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot = yr.iter().zip(gr).fold(T::zero(), |a, (p, q)| a + *p * *q);
                        for ((d, p), q) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *d = *p * (*q - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SegmentSum { x, ids, weights } => {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    for (r, (&s, &w)) in ids.iter().zip(weights).enumerate() {
                        for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(s)) {
                            *d = w * *v;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SpMM { op, x } => {
                    let mut dx = vec![T::zero(); op.cols() * g.cols()];
                    op.mul_transpose_dense_acc(T::one(), g.data(), g.cols(), &mut dx);
                    accumulate(&mut grads, *x, Tensor::new(op.cols(), g.cols(), dx)?);
                }
                Op::ChebBasis { op, x, k } => {
                    let xv = self.value(*x);
                    let (n, d) = (xv.rows(), xv.cols());
                    let mut blocks = unstack_blocks(&g, n, d, *k);
                    for j in (2..=*k).rev() {
                        let (lo, hi) = blocks.split_at_mut(j);
                        let dj = &hi[0];
                        op.mul_transpose_dense_acc(T::from_f64_lossy(2.0), dj, d, &mut lo[j - 1]);
                        for (a, b) in lo[j - 2].iter_mut().zip(dj) {
                            *a -= *b;
                        }
                    }
                    if *k >= 1 {
                        let (lo, hi) = blocks.split_at_mut(1);
                        op.mul_transpose_dense_acc(T::one(), &hi[0], d, &mut lo[0]);
                    }
                    let d0 = blocks.swap_remove(0);
                    accumulate(&mut grads, *x, Tensor::new(n, d, d0)?);
                }
                Op::CrossEntropy {
                    probs,
                    labels,
                    floor,
                } => {
                    let pv = self.value(*probs);
                    let b = T::from_usize(labels.len()).unwrap();
                    let up = g.data()[0];
                    let mut dp = Tensor::zeros(pv.rows(), pv.cols());
                    for (i, &l) in labels.iter().enumerate() {
                        let p = pv.get(i, l);
                        if p > *floor {
                            dp.set(i, l, -up / (b * p));
                        }
                    }
                    accumulate(&mut grads, *probs, dp);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::filled(xv.rows(), xv.cols(), g.data()[0]),
                    );
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn segment_counts(ids: &[usize], num_segments: usize, rows: usize) -> Result<Vec<usize>> {
    if ids.len() != rows {
        return Err(Error::shape(format!(
            "{} segment ids for {} rows",
            ids.len(),
            rows
        )));
    }
    let mut counts = vec![0usize; num_segments];
    for &s in ids {
        if s >= num_segments {
            return Err(Error::shape(format!(
                "segment id {s} outside {num_segments} segments"
            )));
        }
        counts[s] += 1;
    }
    Ok(counts)
}

/// Chebyshev feature blocks `X̄_0..X̄_k`, each row-major `n x width`.
pub(crate) fn chebyshev_blocks<T: Real>(
    op: &CsrMatrix<T>,
    x: &[T],
    width: usize,
    k: usize,
) -> Vec<Vec<T>> {
    let mut blocks: Vec<Vec<T>> = Vec::with_capacity(k + 1);
    blocks.push(x.to_vec());
    if k >= 1 {
        let mut b1 = vec![T::zero(); x.len()];
        op.mul_dense_acc(T::one(), x, width, &mut b1);
        blocks.push(b1);
    }
    for j in 2..=k {
        let mut next: Vec<T> = blocks[j - 2].iter().map(|v| -*v).collect();
        op.mul_dense_acc(T::from_f64_lossy(2.0), &blocks[j - 1], width, &mut next);
        blocks.push(next);
    }
    blocks
}

fn stack_blocks<T: Real>(blocks: &[Vec<T>], n: usize, d: usize) -> Tensor<T> {
    let total = blocks.len() * d;
    let mut data = Vec::with_capacity(n * total);
    for r in 0..n {
        for b in blocks {
            data.extend_from_slice(&b[r * d..(r + 1) * d]);
        }
    }
    Tensor::new(n, total, data).expect("stacked basis shape")
}

fn unstack_blocks<T: Real>(g: &Tensor<T>, n: usize, d: usize, k: usize) -> Vec<Vec<T>> {
    let mut blocks = vec![Vec::with_capacity(n * d); k + 1];
    for r in 0..n {
        let row = g.row(r);
        for (j, b) in blocks.iter_mut().enumerate() {
            b.extend_from_slice(&row[j * d..(j + 1) * d]);
        }
    }
    blocks
}
