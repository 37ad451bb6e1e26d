//! Undirected graphs and their Laplacian operators.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

/// Largest graph for which dense eigendecompositions are materialized.
pub const DENSE_LIMIT: usize = 512;

/// Undirected, unweighted graph with node features and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    /// Unique pairs with `i < j`, sorted.
    edges: Vec<(usize, usize)>,
    features: Tensor<f64>,
    label: usize,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list: pairs are symmetrized and
    /// deduplicated, self-loops dropped.
    pub fn new(
        num_nodes: usize,
        edge_list: &[(usize, usize)],
        features: Tensor<f64>,
        label: usize,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(a, b) in edge_list {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Structure(format!(
                    "edge ({a}, {b}) references a vertex outside 0..{num_nodes}"
                )));
            }
            if a != b {
                set.insert((a.min(b), a.max(b)));
            }
        }
        Self::check_features(num_nodes, &features)?;
        Ok(Self {
            num_nodes,
            edges: set.into_iter().collect(),
            features,
            label,
        })
    }

    fn check_features(num_nodes: usize, features: &Tensor<f64>) -> Result<()> {
        if features.rows() != num_nodes {
            return Err(Error::shape(format!(
                "{} feature rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if features.cols() == 0 {
            return Err(Error::shape("node features need at least one column"));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Unique undirected edges as `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn with_features(&self, features: Tensor<f64>) -> Result<Self> {
        Self::check_features(self.num_nodes, &features)?;
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    pub fn with_label(&self, label: usize) -> Self {
        Self {
            label,
            ..self.clone()
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    /// Number of neighbours of each vertex.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Binary symmetric adjacency `W`.
    pub fn adjacency(&self) -> CsrMatrix<f64> {
        let mut t = Vec::with_capacity(2 * self.edges.len());
        for &(a, b) in &self.edges {
            t.push((a, b, 1.0));
            t.push((b, a, 1.0));
        }
        CsrMatrix::from_triplets(self.num_nodes, self.num_nodes, &t).expect("edges in range")
    }

    /// `L = D - W`.
    pub fn combinatorial_laplacian(&self) -> Laplacian {
        let deg = self.degrees();
        let mut t = Vec::with_capacity(2 * self.edges.len() + self.num_nodes);
        for (i, &d) in deg.iter().enumerate() {
            t.push((i, i, d as f64));
        }
        for &(a, b) in &self.edges {
            t.push((a, b, -1.0));
            t.push((b, a, -1.0));
        }
        Laplacian {
            matrix: CsrMatrix::from_triplets(self.num_nodes, self.num_nodes, &t)
                .expect("edges in range"),
            kind: LaplacianKind::Combinatorial,
        }
    }

    /// `L = I - D^{-1/2} W D^{-1/2}`. Isolated vertices get an all-zero
    /// row and column (their `D^{-1/2}` entry is taken as 0).
    pub fn normalized_laplacian(&self) -> Laplacian {
        let deg = self.degrees();
        let inv_sqrt: Vec<f64> = deg
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() })
            .collect();
        let mut t = Vec::with_capacity(2 * self.edges.len() + self.num_nodes);
        for (i, &d) in deg.iter().enumerate() {
            if d > 0 {
                t.push((i, i, 1.0));
            }
        }
        for &(a, b) in &self.edges {
            let w = -(inv_sqrt[a] * inv_sqrt[b]);
            t.push((a, b, w));
            t.push((b, a, w));
        }
        Laplacian {
            matrix: CsrMatrix::from_triplets(self.num_nodes, self.num_nodes, &t)
                .expect("edges in range"),
            kind: LaplacianKind::Normalized,
        }
    }

    /// Relabels vertex `i` as `perm[i]`; feature rows move along.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.num_nodes)?;
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        Self::new(
            self.num_nodes,
            &edges,
            self.features.permute_rows(perm)?,
            self.label,
        )
    }

    /// Hop distance from `source` to every vertex (`None` if unreachable).
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut dist = vec![None; self.num_nodes];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap();
            for &w in &adj[v] {
                if dist[w].is_none() {
                    dist[w] = Some(dv + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.num_nodes == 0 || self.hop_distances(0).iter().all(Option::is_some)
    }
}

/// Checks that `perm` is a bijection on `0..n`.
pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::param(format!(
            "permutation of length {} for {n} vertices",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::param("permutation is not a bijection"));
        }
        seen[p] = true;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianKind {
    Combinatorial,
    Normalized,
}

/// Symmetric positive semidefinite graph Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    matrix: CsrMatrix<f64>,
    kind: LaplacianKind,
}

impl Laplacian {
    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn kind(&self) -> LaplacianKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn to_dense(&self) -> Tensor<f64> {
        Tensor::new(self.size(), self.size(), self.matrix.to_dense()).expect("square")
    }

    /// Dense symmetric eigendecomposition, eigenvalues ascending.
    pub fn eigen(&self) -> Result<EigenDecomposition> {
        EigenDecomposition::of_symmetric(&self.to_dense())
    }

    /// `2 L / lambda_max - I`.
    pub fn scale(&self, lambda_max: f64) -> Result<ScaledLaplacian> {
        scale_laplacian(self, lambda_max)
    }

    /// Scales with this graph's exact largest eigenvalue instead of the
    /// fixed bound 2. Falls back to 2 when the spectrum is all zero.
    pub fn scale_exact(&self) -> Result<ScaledLaplacian> {
        let lmax = self.eigen()?.eigenvalues.last().copied().unwrap_or(0.0);
        scale_laplacian(self, if lmax > 1e-12 { lmax } else { 2.0 })
    }
}

/// `L̃ = (2 / lambda_max) L - I` for a normalized Laplacian.
pub fn scale_laplacian(l: &Laplacian, lambda_max: f64) -> Result<ScaledLaplacian> {
    if l.kind != LaplacianKind::Normalized {
        return Err(Error::param("only normalized Laplacians are scaled"));
    }
    if !(lambda_max > 0.0 && lambda_max.is_finite()) {
        return Err(Error::param(format!(
            "lambda_max must be positive, got {lambda_max}"
        )));
    }
    Ok(ScaledLaplacian {
        matrix: l.matrix.affine_identity(2.0 / lambda_max, -1.0)?,
        lambda_max,
    })
}

/// The operator every Chebyshev convolution consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledLaplacian {
    matrix: CsrMatrix<f64>,
    lambda_max: f64,
}

impl ScaledLaplacian {
    /// Wraps an already-scaled operator (e.g. a block-diagonal assembly).
    pub fn from_parts(matrix: CsrMatrix<f64>, lambda_max: f64) -> Self {
        Self { matrix, lambda_max }
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn to_dense(&self) -> Tensor<f64> {
        Tensor::new(self.size(), self.size(), self.matrix.to_dense()).expect("square")
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.size())?;
        Ok(Self {
            matrix: self.matrix.permute_symmetric(perm)?,
            lambda_max: self.lambda_max,
        })
    }
}

/// `A = U diag(λ) Uᵀ` for a dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector of `eigenvalues[i]`.
    pub eigenvectors: Tensor<f64>,
}

impl EigenDecomposition {
    pub fn of_symmetric(a: &Tensor<f64>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::shape("eigendecomposition needs a square matrix"));
        }
        if n > DENSE_LIMIT {
            return Err(Error::Numerical(format!(
                "{n} vertices exceed the dense limit {DENSE_LIMIT}"
            )));
        }
        if n == 0 {
            return Ok(Self {
                eigenvalues: Vec::new(),
                eigenvectors: Tensor::zeros(0, 0),
            });
        }
        let m = DMatrix::from_row_slice(n, n, a.data());
        let eig = SymmetricEigen::try_new(m, 1e-15, 10_000)
            .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vecs = Tensor::zeros(n, n);
        for (col, &i) in order.iter().enumerate() {
            for r in 0..n {
                vecs.set(r, col, eig.eigenvectors[(r, i)]);
            }
        }
        Ok(Self {
            eigenvalues,
            eigenvectors: vecs,
        })
    }

    /// `U diag(f(λ)) Uᵀ`.
    pub fn apply_spectral(&self, f: impl Fn(f64) -> f64) -> Tensor<f64> {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for r in 0..n {
            for (c, lam) in self.eigenvalues.iter().enumerate() {
                let v = scaled.get(r, c) * f(*lam);
                scaled.set(r, c, v);
            }
        }
        scaled
            .matmul(&self.eigenvectors.transpose())
            .expect("square factors")
    }

    pub fn reconstruct(&self) -> Tensor<f64> {
        self.apply_spectral(|l| l)
    }
}
