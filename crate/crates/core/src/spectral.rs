//! K-localized Chebyshev spectral graph convolution.
//!
//! A filter of order `K` is a degree-`K` polynomial of the scaled Laplacian
//! `L̃`, evaluated in the Chebyshev basis so that no eigendecomposition is
//! needed:
//!
//! ```text
//! out = Σ_{k=0..K} T_k(L̃) X Θ_k  (+ bias)
//! ```
//!
//! Each `Θ_k` is a `d_in x d_out` channel-mixing matrix. The features
//! `X̄_k = T_k(L̃) X` follow `X̄_0 = X`, `X̄_1 = L̃ X`,
//! `X̄_k = 2 L̃ X̄_{k-1} - X̄_{k-2}`.
//!
//! [`spectral_filter_exact`] evaluates the same polynomial through the
//! eigenbasis of the Laplacian and serves as a correctness oracle.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Laplacian, ScaledLaplacian};
use crate::scalar::Real;
use crate::sparse::CsrMatrix;
use crate::tensor::{chebyshev_blocks, ParamId, ParamStore, Tape, Tensor, Var};

/// Chebyshev features `X̄_0..X̄_K` of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebBasis {
    pub blocks: Vec<Tensor<f64>>,
}

impl ChebBasis {
    pub fn order(&self) -> usize {
        self.blocks.len() - 1
    }
}

pub fn chebyshev_basis(lt: &ScaledLaplacian, x: &Tensor<f64>, k: usize) -> Result<ChebBasis> {
    if lt.size() != x.rows() {
        return Err(Error::shape(format!(
            "{}-vertex operator applied to {} feature rows",
            lt.size(),
            x.rows()
        )));
    }
    let blocks = chebyshev_blocks(lt.matrix(), x.data(), x.cols(), k)
        .into_iter()
        .map(|b| Tensor::new(x.rows(), x.cols(), b))
        .collect::<Result<_>>()?;
    Ok(ChebBasis { blocks })
}

/// Learnable coefficients of one Chebyshev convolution.
///
/// The `K+1` matrices `Θ_k` are stored stacked vertically as one
/// `(K+1)·d_in x d_out` parameter so that the whole filter is a single
/// product with the stacked basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChebConvParams {
    pub theta: ParamId,
    pub bias: Option<ParamId>,
    pub k: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl ChebConvParams {
    /// Registers fresh parameters: every `Θ_k` uniform in
    /// `±sqrt(6 / ((K+1)·d_in + d_out))`, bias zero.
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        k: usize,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::config(format!(
                "convolution {name} needs positive widths, got {d_in} -> {d_out}"
            )));
        }
        let limit = (6.0 / ((k + 1) * d_in + d_out) as f64).sqrt();
        let theta = uniform_tensor((k + 1) * d_in, d_out, limit, rng);
        let theta = store.add(format!("{name}.theta"), theta);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(1, d_out)));
        Ok(Self {
            theta,
            bias,
            k,
            d_in,
            d_out,
        })
    }

    /// `Θ_k` as a `d_in x d_out` copy.
    pub fn theta_k<T: Real>(&self, store: &ParamStore<T>, k: usize) -> Tensor<T> {
        let t = store.get(self.theta);
        t.select_rows(&(k * self.d_in..(k + 1) * self.d_in).collect::<Vec<_>>())
    }

    /// Number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        (self.k + 1) * self.d_in * self.d_out + if self.bias.is_some() { self.d_out } else { 0 }
    }

    fn check_input(&self, rows: usize, cols: usize, n: usize) -> Result<()> {
        if cols != self.d_in {
            return Err(Error::shape(format!(
                "convolution expects {} input channels, got {cols}",
                self.d_in
            )));
        }
        if rows != n {
            return Err(Error::shape(format!(
                "{n}-vertex operator applied to {rows} feature rows"
            )));
        }
        Ok(())
    }
}

pub(crate) fn uniform_tensor<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    limit: f64,
    rng: &mut R,
) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64_lossy(rng.gen_range(-limit..=limit)))
        .collect();
    Tensor::new(rows, cols, data).expect("sized")
}

/// Output of a tracked convolution, with the basis kept for reuse.
#[derive(Debug, Clone, Copy)]
pub struct ConvOutput {
    pub out: Var,
    /// Stacked `[X̄_0 | ... | X̄_K]`.
    pub basis: Var,
}

/// Records `Σ_k X̄_k Θ_k + bias` on the tape.
pub fn cheb_conv<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    op: &Arc<CsrMatrix<T>>,
    x: Var,
    params: &ChebConvParams,
) -> Result<ConvOutput> {
    let xv = tape.value(x);
    params.check_input(xv.rows(), xv.cols(), op.rows())?;
    let basis = tape.cheb_basis(op, x, params.k)?;
    let theta = tape.param(store, params.theta);
    let mut out = tape.matmul(basis, theta)?;
    if let Some(b) = params.bias {
        let b = tape.param(store, b);
        out = tape.add_row_bias(out, b)?;
    }
    Ok(ConvOutput { out, basis })
}

/// Untracked convolution in `f64`.
pub fn cheb_conv_eval(
    lt: &ScaledLaplacian,
    x: &Tensor<f64>,
    params: &ChebConvParams,
    store: &ParamStore<f64>,
) -> Result<Tensor<f64>> {
    params.check_input(x.rows(), x.cols(), lt.size())?;
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let op = Arc::new(lt.matrix().clone());
    let out = cheb_conv(&mut tape, store, &op, xv, params)?.out;
    Ok(tape.value(out).clone())
}

/// Evaluates the same polynomial filter spectrally:
/// `Σ_k U T_k(Λ̃) Uᵀ X Θ_k (+ bias)` with `Λ̃ = 2Λ/λmax - 1`, where
/// `L = U Λ Uᵀ` is the normalized Laplacian.
pub fn spectral_filter_exact(
    l_norm: &Laplacian,
    x: &Tensor<f64>,
    params: &ChebConvParams,
    store: &ParamStore<f64>,
    lambda_max: f64,
) -> Result<Tensor<f64>> {
    if lambda_max.is_nan() || lambda_max <= 0.0 {
        return Err(Error::param("lambda_max must be positive"));
    }
    params.check_input(x.rows(), x.cols(), l_norm.size())?;
    let eig = l_norm.eigen()?;
    let mut out = Tensor::zeros(x.rows(), params.d_out);
    for k in 0..=params.k {
        let poly = eig.apply_spectral(|lam| chebyshev_t(k, 2.0 * lam / lambda_max - 1.0));
        let term = poly.matmul(x)?.matmul(&params.theta_k(store, k))?;
        out.add_assign(&term)?;
    }
    if let Some(b) = params.bias {
        let bias = store.get(b);
        for r in 0..out.rows() {
            for (o, v) in out.row_mut(r).iter_mut().zip(bias.data()) {
                *o += *v;
            }
        }
    }
    Ok(out)
}

/// Chebyshev polynomial of the first kind, `T_k(a)`, by the three-term
/// recurrence `T_k = 2a T_{k-1} - T_{k-2}`.
pub fn chebyshev_t(k: usize, a: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, a);
    match k {
        0 => 1.0,
        _ => {
            for _ in 1..k {
                let next = 2.0 * a * cur - prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::Graph;

    fn k2() -> Graph {
        Graph::new(2, &[(0, 1)], Tensor::ones(2, 1), 0).unwrap()
    }

    #[test]
    fn chebyshev_scalar_values() {
        assert_eq!(chebyshev_t(0, 0.3), 1.0);
        assert_eq!(chebyshev_t(1, 0.3), 0.3);
        // T_k(cos t) = cos(k t)
        let t: f64 = 0.7;
        for k in 0..10 {
            assert!((chebyshev_t(k, t.cos()) - (k as f64 * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_order_zero_is_input() {
        let lt = k2().normalized_laplacian().scale(2.0).unwrap();
        let x = Tensor::from_f64_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = chebyshev_basis(&lt, &x, 0).unwrap();
        assert_eq!(b.blocks, vec![x]);
    }

    #[test]
    fn basis_on_edgeless_graph() {
        let g = Graph::new(3, &[], Tensor::ones(3, 1), 0).unwrap();
        let lt = g.normalized_laplacian().scale(2.0).unwrap();
        let x = Tensor::from_f64_rows(&[&[1.0], &[-2.0], &[5.0]]).unwrap();
        let b = chebyshev_basis(&lt, &x, 2).unwrap();
        assert_eq!(b.blocks[1], x.scale(-1.0));
        assert_eq!(b.blocks[2], x);
    }

    #[test]
    fn basis_dimension_mismatch() {
        let lt = k2().normalized_laplacian().scale(2.0).unwrap();
        assert!(matches!(
            chebyshev_basis(&lt, &Tensor::ones(3, 1), 2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn identity_filter() {
        let lt = k2().normalized_laplacian().scale(2.0).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ChebConvParams::init(&mut store, "c", 0, 2, 2, false, &mut rng).unwrap();
        store.set(p.theta, Tensor::identity(2)).unwrap();
        let x = Tensor::from_f64_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(cheb_conv_eval(&lt, &x, &p, &store).unwrap(), x);
    }

    #[test]
    fn first_order_on_k2_by_hand() {
        let lt = k2().normalized_laplacian().scale(2.0).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ChebConvParams::init(&mut store, "c", 1, 1, 1, false, &mut rng).unwrap();
        store
            .set(p.theta, Tensor::from_f64_rows(&[&[0.0], &[1.0]]).unwrap())
            .unwrap();
        let x = Tensor::from_f64_rows(&[&[1.0], &[0.0]]).unwrap();
        let out = cheb_conv_eval(&lt, &x, &p, &store).unwrap();
        assert_eq!(out.data(), &[0.0, -1.0]);
    }

    #[test]
    fn init_range_and_shapes() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ChebConvParams::init(&mut store, "c", 6, 7, 32, true, &mut rng).unwrap();
        let t = store.get(p.theta);
        assert_eq!(t.shape(), [49, 32]);
        let limit = (6.0f64 / (49 + 32) as f64).sqrt();
        assert!(t.max_abs() <= limit);
        assert!(t.max_abs() > 0.5 * limit);
        assert_eq!(store.get(p.bias.unwrap()), &Tensor::zeros(1, 32));
        assert_eq!(p.num_scalars(), 49 * 32 + 32);
    }

    #[test]
    fn zero_theta_gives_zero_exact_output() {
        let g = Graph::new(3, &[(0, 1), (1, 2)], Tensor::ones(3, 2), 0).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ChebConvParams::init(&mut store, "c", 3, 2, 4, false, &mut rng).unwrap();
        store.set(p.theta, Tensor::zeros(8, 4)).unwrap();
        let out = spectral_filter_exact(&g.normalized_laplacian(), g.features(), &p, &store, 2.0)
            .unwrap();
        assert_eq!(out, Tensor::zeros(3, 4));
    }

    #[test]
    fn exact_order_zero_is_plain_mixing() {
        let g = Graph::new(3, &[(0, 1), (1, 2)], Tensor::ones(3, 2), 0).unwrap();
        let x = Tensor::from_f64_rows(&[&[1.0, 0.5], &[-1.0, 2.0], &[0.0, 3.0]]).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ChebConvParams::init(&mut store, "c", 0, 2, 3, false, &mut rng).unwrap();
        let out = spectral_filter_exact(&g.normalized_laplacian(), &x, &p, &store, 2.0).unwrap();
        let expect = x.matmul(store.get(p.theta)).unwrap();
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);
    }
}
