//! Bottom eigenpairs of graph Laplacians and weighted-Jacobi eigenvector filtering.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::linalg::{
    self, deflate, inv_sqrt_degree, normalize, orthonormalize, regularization_shift, SpdFactor,
};

/// Which Laplacian an embedding belongs to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplacianKind {
    /// `L = D - A`
    Unnormalized,
    /// `I - D^{-1/2} A D^{-1/2}`
    #[default]
    SymmetricNormalized,
}

impl LaplacianKind {
    pub fn is_normalized(self) -> bool {
        matches!(self, Self::SymmetricNormalized)
    }

    pub fn from_normalized(normalized: bool) -> Self {
        if normalized {
            Self::SymmetricNormalized
        } else {
            Self::Unnormalized
        }
    }
}

/// The `k` smallest nontrivial eigenpairs of a Laplacian.
#[derive(Clone, Debug)]
pub struct SpectralEmbedding {
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors, one `Vec` per column.
    pub vectors: Vec<Vec<f64>>,
    pub kind: LaplacianKind,
    /// Free-form tag naming the graph the pairs were computed on.
    pub source: String,
    /// `||(L - zeta I) w||_2` per pair.
    pub residuals: Vec<f64>,
    /// Sweeps used by the eigensolver.
    pub iterations: usize,
    /// Set when filtering had to nudge an eigenvalue off a diagonal entry.
    pub filter_shifted: bool,
}

impl SpectralEmbedding {
    pub fn n(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    /// Row-major `n x k` copy of the eigenvectors.
    pub fn rows(&self) -> Vec<f64> {
        let (n, k) = (self.n(), self.k());
        let mut out = vec![0.0; n * k];
        for (j, col) in self.vectors.iter().enumerate() {
            for (i, &x) in col.iter().enumerate() {
                out[i * k + j] = x;
            }
        }
        out
    }
}

/// Eigensolver controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigParams {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            seed: 0,
        }
    }
}

/// Matrix-free view of `L` or of the normalized Laplacian.
pub(crate) struct LaplacianOp<'a> {
    graph: &'a WeightedGraph,
    // d^{-1/2} for the normalized operator
    scale: Option<Vec<f64>>,
}

impl<'a> LaplacianOp<'a> {
    pub(crate) fn new(graph: &'a WeightedGraph, kind: LaplacianKind) -> Result<Self> {
        let scale = match kind {
            LaplacianKind::Unnormalized => None,
            LaplacianKind::SymmetricNormalized => Some(inv_sqrt_degree(graph)?),
        };
        Ok(Self { graph, scale })
    }

    pub(crate) fn apply(&self, x: &[f64], y: &mut [f64]) {
        match &self.scale {
            None => self.graph.apply_into(x, y),
            Some(s) => {
                let sx: Vec<f64> = x.iter().zip(s).map(|(a, b)| a * b).collect();
                self.graph.adjacency_apply_into(&sx, y);
                for i in 0..x.len() {
                    y[i] = x[i] - s[i] * y[i];
                }
            }
        }
    }

    /// Unit vector spanning the null space.
    pub(crate) fn trivial_vector(&self) -> Vec<f64> {
        let n = self.graph.n();
        let mut t = match &self.scale {
            None => vec![1.0; n],
            Some(s) => s.iter().map(|x| 1.0 / x).collect(),
        };
        normalize(&mut t);
        t
    }

    fn trace(&self) -> f64 {
        match &self.scale {
            None => self.graph.laplacian_trace(),
            Some(_) => self.graph.n() as f64,
        }
    }

    pub(crate) fn inf_norm(&self) -> f64 {
        match &self.scale {
            None => self.graph.laplacian_inf_norm(),
            Some(s) => {
                let mut row = vec![1.0; self.graph.n()];
                for e in self.graph.edges() {
                    let a = e.w * s[e.u] * s[e.v];
                    row[e.u] += a;
                    row[e.v] += a;
                }
                row.into_iter().fold(0.0, f64::max)
            }
        }
    }

    fn factor(&self, shift: f64) -> Result<SpdFactor> {
        match &self.scale {
            None => SpdFactor::laplacian_plus(self.graph, shift),
            Some(_) => SpdFactor::normalized_laplacian_plus(self.graph, shift),
        }
    }

    fn residual(&self, x: &[f64], zeta: f64) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        linalg::axpy(-zeta, x, &mut y);
        linalg::norm(&y)
    }
}

const GROW_EVERY: usize = 50;

/// Computes the `k` smallest nontrivial eigenpairs by block inverse subspace
/// iteration on `(L + zI)^{-1}` with Rayleigh-Ritz extraction.
pub fn bottom_eigenpairs(
    graph: &WeightedGraph,
    k: usize,
    kind: LaplacianKind,
    params: &EigParams,
) -> Result<SpectralEmbedding> {
    bottom_eigenpairs_warm(graph, k, kind, params, &[])
}

/// Like [`bottom_eigenpairs`] but seeds the block with `start` columns.
pub fn bottom_eigenpairs_warm(
    graph: &WeightedGraph,
    k: usize,
    kind: LaplacianKind,
    params: &EigParams,
    start: &[Vec<f64>],
) -> Result<SpectralEmbedding> {
    let n = graph.n();
    if k == 0 || k >= n {
        return Err(Error::param(format!(
            "need 0 < k < n, got k = {k}, n = {n}"
        )));
    }
    if !(params.tol > 0.0) || params.max_iter == 0 {
        return Err(Error::param("eigensolver needs tol > 0 and max_iter > 0"));
    }
    let comps = graph.num_components();
    if comps != 1 {
        return Err(Error::Disconnected { components: comps });
    }
    let op = LaplacianOp::new(graph, kind)?;
    let t = op.trivial_vector();
    let shift = regularization_shift(op.trace(), n);
    let factor = op.factor(shift)?;
    let target = params.tol * op.inf_norm();
    let p = (n - 1).min(k + k.max(8));

    let mut rng = linalg::seeded_rng(params.seed);
    let mut block: Vec<Vec<f64>> = Vec::with_capacity(p);
    for col in start.iter().take(p) {
        if col.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: col.len(),
            });
        }
        block.push(col.clone());
    }
    while block.len() < p {
        block.push(linalg::standard_normal_vec(n, &mut rng));
    }
    orthonormalize(&mut block, &[&t], |_| {
        linalg::standard_normal_vec(n, &mut rng)
    });

    let mut residuals = vec![f64::INFINITY; k];
    let mut values = vec![0.0; p];
    let mut checkpoint = f64::INFINITY;
    for iter in 1..=params.max_iter {
        // a clustered spectrum wider than the block stalls the iteration
        if iter % GROW_EVERY == 0 {
            let worst = residuals.iter().cloned().fold(0.0, f64::max);
            if worst > 0.5 * checkpoint && block.len() < n - 1 {
                let wider = (2 * block.len()).min(n - 1);
                while block.len() < wider {
                    block.push(linalg::standard_normal_vec(n, &mut rng));
                }
                orthonormalize(&mut block, &[&t], |_| {
                    linalg::standard_normal_vec(n, &mut rng)
                });
            }
            checkpoint = worst;
        }
        factor.solve_columns(&mut block);
        orthonormalize(&mut block, &[&t], |_| {
            linalg::standard_normal_vec(n, &mut rng)
        });
        let (vals, vecs) = rayleigh_ritz(&op, &block);
        block = vecs;
        values = vals;
        for j in 0..k {
            residuals[j] = op.residual(&block[j], values[j]);
        }
        if residuals.iter().all(|&r| r <= target) {
            block.truncate(k);
            values.truncate(k);
            return Ok(SpectralEmbedding {
                eigenvalues: values,
                vectors: block,
                kind,
                source: String::new(),
                residuals,
                iterations: iter,
                filter_shifted: false,
            });
        }
    }
    let _ = values;
    Err(Error::Convergence {
        iterations: params.max_iter,
        worst: residuals.iter().cloned().fold(0.0, f64::max),
        residuals,
    })
}

/// Projects the operator onto an orthonormal block and returns the Ritz
/// values (ascending) and Ritz vectors.
fn rayleigh_ritz(op: &LaplacianOp<'_>, block: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = block.len();
    let n = block[0].len();
    let images: Vec<Vec<f64>> = block
        .par_iter()
        .map(|q| {
            let mut y = vec![0.0; n];
            op.apply(q, &mut y);
            y
        })
        .collect();
    let mut h = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..=i {
            let v = 0.5 * (linalg::dot(&block[i], &images[j]) + linalg::dot(&block[j], &images[i]));
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&c| {
            let mut v = vec![0.0; n];
            for (r, q) in block.iter().enumerate() {
                linalg::axpy(eig.eigenvectors[(r, c)], q, &mut v);
            }
            normalize(&mut v);
            v
        })
        .collect();
    (values, vectors)
}

/// Weighted-Jacobi smoothing of sparsifier eigenvectors against the original
/// graph: `w <- (1 - gamma) w + gamma (D - zeta I)^{-1} A w`.
///
/// Normalized embeddings are smoothed with the equivalent update on the
/// normalized operator, `w <- (1 - gamma) w + gamma D^{-1/2} A D^{-1/2} w / (1 - zeta)`.
/// Eigenvalues are kept fixed; residuals are recomputed against `graph`.
pub fn filter_eigenvectors(
    graph: &WeightedGraph,
    embedding: &SpectralEmbedding,
    gamma: f64,
    sweeps: usize,
) -> Result<SpectralEmbedding> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param(format!(
            "filter needs 0 < gamma <= 1, got {gamma}"
        )));
    }
    let n = graph.n();
    if embedding.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: embedding.n(),
        });
    }
    let op = LaplacianOp::new(graph, embedding.kind)?;
    let t = op.trivial_vector();
    let degree = graph.degree();
    let d_inf = degree.iter().cloned().fold(0.0, f64::max);

    let results: Vec<(Vec<f64>, f64, bool)> = embedding
        .vectors
        .par_iter()
        .zip(embedding.eigenvalues.par_iter())
        .map(|(col, &zeta)| -> Result<(Vec<f64>, f64, bool)> {
            let mut shifted = false;
            let mut w = col.clone();
            let mut aw = vec![0.0; n];
            match &op.scale {
                None => {
                    let mut z = zeta;
                    if degree.iter().any(|&d| d - z == 0.0) {
                        z += 1e-12 * d_inf;
                        shifted = true;
                    }
                    let inv: Vec<f64> = degree.iter().map(|&d| 1.0 / (d - z)).collect();
                    for _ in 0..sweeps {
                        graph.adjacency_apply_into(&w, &mut aw);
                        for i in 0..n {
                            w[i] = (1.0 - gamma) * w[i] + gamma * inv[i] * aw[i];
                        }
                        deflate(&mut w, &t);
                        normalize(&mut w);
                    }
                }
                Some(s) => {
                    let mut denom = 1.0 - zeta;
                    if denom == 0.0 {
                        denom = -1e-12;
                        shifted = true;
                    }
                    let mut sw = vec![0.0; n];
                    for _ in 0..sweeps {
                        for i in 0..n {
                            sw[i] = s[i] * w[i];
                        }
                        graph.adjacency_apply_into(&sw, &mut aw);
                        for i in 0..n {
                            w[i] = (1.0 - gamma) * w[i] + gamma * s[i] * aw[i] / denom;
                        }
                        deflate(&mut w, &t);
                        normalize(&mut w);
                    }
                }
            }
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical("non-finite value while filtering".into()));
            }
            let r = op.residual(&w, zeta);
            Ok((w, r, shifted))
        })
        .collect::<Result<_>>()?;

    let mut out = embedding.clone();
    out.filter_shifted = embedding.filter_shifted;
    for (j, (w, r, shifted)) in results.into_iter().enumerate() {
        out.vectors[j] = w;
        out.residuals[j] = r;
        out.filter_shifted |= shifted;
    }
    Ok(out)
}

/// `||v_prev - v_curr|| / ||v_prev||`
pub fn eigenvalue_variation_ratio(v_prev: &[f64], v_curr: &[f64]) -> Result<f64> {
    if v_prev.len() != v_curr.len() {
        return Err(Error::Dimension {
            expected: v_prev.len(),
            got: v_curr.len(),
        });
    }
    let denom = linalg::norm(v_prev);
    if denom == 0.0 {
        return Err(Error::param("previous eigenvalue vector is zero"));
    }
    let diff: f64 = v_prev
        .iter()
        .zip(v_curr)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / denom)
}
