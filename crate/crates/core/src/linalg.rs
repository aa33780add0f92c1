//! Sparse factorizations, Krylov solves and small dense helpers.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

/// Relative size of the diagonal shift `z` that makes a Laplacian invertible.
pub const SHIFT_FACTOR: f64 = 1e-8;

/// `z = 1e-8 * trace(L) / n`
pub fn regularization_shift(trace: f64, n: usize) -> f64 {
    SHIFT_FACTOR * trace / n as f64
}

static SEQUENTIAL: Once = Once::new();

/// Sparse Cholesky factor of a symmetric positive definite matrix.
pub struct SpdFactor {
    n: usize,
    llt: Llt<usize, f64>,
}

impl SpdFactor {
    /// Factors the matrix given by its lower-triangle triplets `(row >= col)`.
    pub fn from_lower_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        // keep factorizations reproducible bit for bit
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        let t: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &t)
            .map_err(|e| Error::Numerical(format!("sparse assembly failed: {e:?}")))?;
        let symbolic = SymbolicLlt::try_new(mat.symbolic(), Side::Lower)
            .map_err(|e| Error::Numerical(format!("symbolic factorization failed: {e:?}")))?;
        let llt = Llt::try_new_with_symbolic(symbolic, mat.as_ref(), Side::Lower)
            .map_err(|e| Error::Numerical(format!("Cholesky breakdown: {e}")))?;
        Ok(Self { n, llt })
    }

    /// `L_G + z I` with `z = 1e-8 * trace(L_G) / n`.
    pub fn shifted_laplacian(graph: &WeightedGraph) -> Result<Self> {
        let z = regularization_shift(graph.laplacian_trace(), graph.n());
        Self::laplacian_plus(graph, z)
    }

    pub fn laplacian_plus(graph: &WeightedGraph, shift: f64) -> Result<Self> {
        let mut t = Vec::with_capacity(graph.n() + graph.num_edges());
        for (p, &d) in graph.degree().iter().enumerate() {
            t.push((p, p, d + shift));
        }
        for e in graph.edges() {
            t.push((e.v, e.u, -e.w));
        }
        Self::from_lower_triplets(graph.n(), &t)
    }

    /// `I - D^{-1/2} A D^{-1/2} + z I`.
    pub fn normalized_laplacian_plus(graph: &WeightedGraph, shift: f64) -> Result<Self> {
        let s = inv_sqrt_degree(graph)?;
        let mut t = Vec::with_capacity(graph.n() + graph.num_edges());
        for p in 0..graph.n() {
            t.push((p, p, 1.0 + shift));
        }
        for e in graph.edges() {
            t.push((e.v, e.u, -e.w * s[e.u] * s[e.v]));
        }
        Self::from_lower_triplets(graph.n(), &t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.llt.solve_in_place(rhs.as_mut());
        for (i, x) in b.iter_mut().enumerate() {
            *x = rhs[(i, 0)];
        }
    }

    /// Solves for several right-hand sides at once.
    pub fn solve_columns(&self, cols: &mut [Vec<f64>]) {
        if cols.is_empty() {
            return;
        }
        let mut rhs = Mat::<f64>::from_fn(self.n, cols.len(), |i, j| cols[j][i]);
        self.llt.solve_in_place(rhs.as_mut());
        for (j, col) in cols.iter_mut().enumerate() {
            for (i, x) in col.iter_mut().enumerate() {
                *x = rhs[(i, j)];
            }
        }
    }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `d(p)^{-1/2}`, failing on isolated vertices.
pub fn inv_sqrt_degree(graph: &WeightedGraph) -> Result<Vec<f64>> {
    graph
        .degree()
        .iter()
        .enumerate()
        .map(|(p, &d)| {
            if d > 0.0 {
                Ok(1.0 / d.sqrt())
            } else {
                Err(Error::Graph(format!("vertex {p} is isolated")))
            }
        })
        .collect()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

/// Removes the mean, i.e. projects onto the complement of the all-ones vector.
pub fn remove_mean(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    for xi in x.iter_mut() {
        *xi -= mean;
    }
}

/// Projects out a unit vector `t`.
pub fn deflate(x: &mut [f64], t: &[f64]) {
    let c = dot(x, t);
    axpy(-c, t, x);
}

/// Normalizes to unit length; returns the previous norm.
pub fn normalize(x: &mut [f64]) -> f64 {
    let nrm = norm(x);
    if nrm > 0.0 {
        scale(1.0 / nrm, x);
    }
    nrm
}

/// Outcome of a preconditioned conjugate-gradient solve.
#[derive(Clone, Debug)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned CG for a symmetric positive semidefinite system restricted to
/// the complement of `null` (a unit vector, typically the constant vector).
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    null: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> PcgResult {
    let n = b.len();
    let project = |v: &mut [f64]| {
        if let Some(t) = null {
            deflate(v, t);
        }
    };
    let mut r = b.to_vec();
    project(&mut r);
    let bnorm = norm(&r);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return PcgResult {
            x,
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let mut z = precondition(&r);
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = 1.0;
    let mut it = 0;
    while it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        it += 1;
        rel = norm(&r) / bnorm;
        if rel <= tol {
            break;
        }
        z = precondition(&r);
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    project(&mut x);
    PcgResult {
        x,
        iterations: it,
        relative_residual: rel,
    }
}

/// Orthonormalizes `cols` in place (two passes of modified Gram-Schmidt),
/// keeping every column orthogonal to the unit vectors in `against`.
/// Columns that collapse are replaced by `refill(j)` and retried.
pub fn orthonormalize(
    cols: &mut [Vec<f64>],
    against: &[&[f64]],
    mut refill: impl FnMut(usize) -> Vec<f64>,
) {
    for j in 0..cols.len() {
        for attempt in 0..4 {
            let before = norm(&cols[j]);
            for _ in 0..2 {
                for t in against {
                    deflate(&mut cols[j], t);
                }
                let (done, rest) = cols.split_at_mut(j);
                let cj = &mut rest[0];
                for q in done.iter() {
                    let c = dot(cj, q);
                    axpy(-c, q, cj);
                }
            }
            let after = normalize(&mut cols[j]);
            if after > 1e-10 * before.max(f64::MIN_POSITIVE) && after > 0.0 {
                break;
            }
            assert!(attempt < 3, "unable to complete an orthonormal basis");
            cols[j] = refill(j);
        }
    }
}

/// Dense generalized eigendecomposition of the pencil `(L_G, L_S)` restricted to
/// the complement of the all-ones vector.
pub struct DensePencil {
    /// Ascending nonzero generalized eigenvalues.
    pub values: Vec<f64>,
    /// Matching eigenvectors, normalized so that `u^T L_S u = 1`.
    pub vectors: Vec<Vec<f64>>,
}

impl DensePencil {
    pub fn new(g: &WeightedGraph, s: &WeightedGraph) -> Result<Self> {
        if g.n() != s.n() {
            return Err(Error::Dimension {
                expected: g.n(),
                got: s.n(),
            });
        }
        s.ensure_connected()?;
        let n = g.n();
        let ls = s.dense_laplacian();
        let lg = g.dense_laplacian();
        let eig = SymmetricEigen::new(ls);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        // drop the null vector of L_S
        let keep = &order[1..];
        let mut p = DMatrix::zeros(n, n - 1);
        for (c, &idx) in keep.iter().enumerate() {
            let lam = eig.eigenvalues[idx];
            if lam <= 0.0 {
                return Err(Error::Numerical("subgraph Laplacian is singular".into()));
            }
            let col = eig.eigenvectors.column(idx) / lam.sqrt();
            p.set_column(c, &col);
        }
        let m = p.transpose() * lg * &p;
        let m = (&m + m.transpose()) * 0.5;
        let inner = SymmetricEigen::new(m);
        let mut idx: Vec<usize> = (0..n - 1).collect();
        idx.sort_by(|&a, &b| inner.eigenvalues[a].total_cmp(&inner.eigenvalues[b]));
        let values = idx.iter().map(|&i| inner.eigenvalues[i]).collect();
        let vectors = idx
            .iter()
            .map(|&i| {
                let y: DVector<f64> = inner.eigenvectors.column(i).into();
                (&p * y).iter().cloned().collect()
            })
            .collect();
        Ok(Self { values, vectors })
    }

    pub fn lambda_max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn lambda_min(&self) -> f64 {
        self.values[0]
    }

    pub fn dominant_vector(&self) -> &[f64] {
        self.vectors.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;

    #[test]
    fn shifted_solve_matches_dense() {
        let g = cycle(6);
        let f = SpdFactor::laplacian_plus(&g, 0.5).unwrap();
        let b = vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let x = f.solve(&b);
        let mut y = g.laplacian_apply(&x).unwrap();
        axpy(0.5, &x, &mut y);
        for (yi, bi) in y.iter().zip(&b) {
            assert!((yi - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn pcg_solves_singular_laplacian_on_range() {
        let g = complete(7);
        let f = SpdFactor::shifted_laplacian(&path(7)).unwrap();
        let mut b = vec![1.0, 2.0, -1.0, 0.0, 4.0, -3.0, 0.5];
        remove_mean(&mut b);
        let ones = vec![1.0 / 7f64.sqrt(); 7];
        let res = pcg(
            |x, y| g.apply_into(x, y),
            |r| f.solve(r),
            &b,
            Some(&ones),
            1e-12,
            100,
        );
        let lx = g.laplacian_apply(&res.x).unwrap();
        for (a, c) in lx.iter().zip(&b) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn dense_pencil_identity() {
        let g = cycle(5);
        let p = DensePencil::new(&g, &g).unwrap();
        for v in &p.values {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn orthonormalize_keeps_columns_orthogonal() {
        let ones = vec![0.5; 4];
        let mut cols = vec![vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 1.0, 0.0, 0.0]];
        orthonormalize(&mut cols, &[&ones], |_| vec![0.0, 0.0, 1.0, -1.0]);
        assert!(dot(&cols[0], &cols[1]).abs() < 1e-14);
        assert!(dot(&cols[0], &ones).abs() < 1e-14);
        assert!((norm(&cols[1]) - 1.0).abs() < 1e-14);
    }
}
