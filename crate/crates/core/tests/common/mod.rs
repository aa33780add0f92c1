#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgdspar::WeightedGraph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn path(n: usize) -> WeightedGraph {
    WeightedGraph::new(n, (0..n - 1).map(|i| (i, i + 1, 1.0))).unwrap()
}

pub fn cycle(n: usize) -> WeightedGraph {
    WeightedGraph::new(n, (0..n).map(|i| (i, (i + 1) % n, 1.0))).unwrap()
}

/// `rows x cols` lattice with unit weights.
pub fn grid(rows: usize, cols: usize) -> WeightedGraph {
    let id = |r: usize, c: usize| r * cols + c;
    let mut e = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                e.push((id(r, c), id(r, c + 1), 1.0));
            }
            if r + 1 < rows {
                e.push((id(r, c), id(r + 1, c), 1.0));
            }
        }
    }
    WeightedGraph::new(rows * cols, e).unwrap()
}

/// Random spanning tree plus `extra` random chords, weights uniform in (0, 2].
pub fn random_connected(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> WeightedGraph {
    let mut pairs = std::collections::BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        pairs.insert((u, v));
    }
    let cap = n * (n - 1) / 2;
    while pairs.len() < (n - 1 + extra).min(cap) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let weight = |rng: &mut ChaCha8Rng| 2.0 - rng.random::<f64>() * (2.0 - 1e-3);
    let edges: Vec<_> = pairs
        .into_iter()
        .map(|(u, v)| (u, v, weight(rng)))
        .collect();
    WeightedGraph::new(n, edges).unwrap()
}

/// Cycle on `n` vertices plus four random chords, weights uniform in [0.5, 2):
/// the maximum-weight spanning tree leaves exactly five off-tree edges.
pub fn c4_plus_chords(n: usize, rng: &mut ChaCha8Rng) -> WeightedGraph {
    let mut pairs: std::collections::BTreeSet<(usize, usize)> = (0..n)
        .map(|i| (i.min((i + 1) % n), i.max((i + 1) % n)))
        .collect();
    while pairs.len() < n + 4 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.insert((a.min(b), a.max(b)));
        }
    }
    let edges: Vec<_> = pairs
        .into_iter()
        .map(|(u, v)| (u, v, 0.5 + 1.5 * rng.random::<f64>()))
        .collect();
    WeightedGraph::new(n, edges).unwrap()
}

/// `count` cliques of `size` unit-weight vertices joined in a ring by single
/// unit-weight bridges.
pub fn ring_of_cliques(count: usize, size: usize) -> (WeightedGraph, Vec<usize>) {
    let mut e = Vec::new();
    for c in 0..count {
        let base = c * size;
        for a in 0..size {
            for b in a + 1..size {
                e.push((base + a, base + b, 1.0));
            }
        }
        let next = ((c + 1) % count) * size;
        e.push((base + size - 1, next, 1.0));
    }
    let labels = (0..count * size).map(|i| i / size).collect();
    (WeightedGraph::new(count * size, e).unwrap(), labels)
}

pub fn two_cliques(size: usize) -> (WeightedGraph, Vec<usize>) {
    let mut e = Vec::new();
    for base in [0, size] {
        for a in 0..size {
            for b in a + 1..size {
                e.push((base + a, base + b, 1.0));
            }
        }
    }
    e.push((size - 1, size, 0.01));
    let labels = (0..2 * size).map(|i| i / size).collect();
    (WeightedGraph::new(2 * size, e).unwrap(), labels)
}

pub fn laplacian(g: &WeightedGraph) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(g.n(), g.n());
    for e in g.edges() {
        l[(e.u, e.u)] += e.w;
        l[(e.v, e.v)] += e.w;
        l[(e.u, e.v)] -= e.w;
        l[(e.v, e.u)] -= e.w;
    }
    l
}

/// `I - D^{-1/2} A D^{-1/2}`
pub fn normalized_laplacian(g: &WeightedGraph) -> DMatrix<f64> {
    let l = laplacian(g);
    let s: Vec<f64> = (0..g.n()).map(|i| 1.0 / l[(i, i)].sqrt()).collect();
    DMatrix::from_fn(g.n(), g.n(), |i, j| s[i] * l[(i, j)] * s[j])
}

/// Ascending eigen-decomposition of a symmetric matrix.
pub fn sym_eig(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Moore-Penrose pseudo-inverse of a connected graph Laplacian.
pub fn laplacian_pinv(l: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eig(l);
    let n = l.nrows();
    let mut p = DMatrix::zeros(n, n);
    for (k, &v) in vals.iter().enumerate().skip(1) {
        let u = vecs.column(k);
        p += (u * u.transpose()) / v;
    }
    p
}

/// Generalized eigenpairs of `L_G u = lambda L_S u` on the complement of the
/// constant vector, ascending, with `u^T L_S u = 1`.
pub struct Pencil {
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
}

pub fn pencil(g: &WeightedGraph, s: &WeightedGraph) -> Pencil {
    let (lg, ls) = (laplacian(g), laplacian(s));
    let (sv, su) = sym_eig(&ls);
    let n = g.n();
    // W = V_+ diag(sigma^{-1/2}) maps R^{n-1} onto the L_S-orthonormal range
    let w = DMatrix::from_fn(n, n - 1, |i, j| su[(i, j + 1)] / sv[j + 1].sqrt());
    let m = w.transpose() * &lg * &w;
    let m = (&m + m.transpose()) * 0.5;
    let (vals, y) = sym_eig(&m);
    let vectors = (0..n - 1).map(|k| &w * y.column(k)).collect();
    Pencil {
        values: vals,
        vectors,
    }
}

/// Directory holding benchmark datasets.
pub fn data_dir() -> PathBuf {
    std::env::var_os("SGDSPAR_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}
