//! k-means and spectral clustering.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eig::{self, EigParams, LaplacianKind, SpectralEmbedding};
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    pub dim: usize,
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after every Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
    /// Empty clusters re-seeded in the winning restart.
    pub repairs: usize,
    pub restart: usize,
    pub seed: u64,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best-of-`restarts` Lloyd k-means with k-means++ seeding over row-major points.
pub fn kmeans(points: &[f64], dim: usize, k: usize, params: &KMeansParams) -> Result<KMeansResult> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::param("point buffer is not a whole number of rows"));
    }
    let n = points.len() / dim;
    if k == 0 || k > n {
        return Err(Error::param(format!(
            "k-means needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    if params.restarts == 0 || params.max_iter == 0 {
        return Err(Error::param("restarts and max_iter must be positive"));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite k-means input".into()));
    }
    let runs: Vec<KMeansResult> = (0..params.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(r as u64);
            let mut res = lloyd(points, dim, n, k, params.max_iter, &mut rng);
            res.restart = r;
            res.seed = params.seed;
            res
        })
        .collect();
    // first restart wins ties
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(best)
}

fn plus_plus(points: &[f64], dim: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            // rounding can leave the walk on a zero-weight tail
            while d2[chosen] == 0.0 && chosen > 0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn lloyd(
    points: &[f64],
    dim: usize,
    n: usize,
    k: usize,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> KMeansResult {
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = plus_plus(points, dim, n, k, rng);
    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];
    let mut history = Vec::new();
    let mut repairs = 0;
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let x = row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(x, &centroids[c * dim..(c + 1) * dim]);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assign[i] != best.0 {
                changed = true;
                assign[i] = best.0;
            }
            dist[i] = best.1;
        }
        let mut counts = vec![0usize; k];
        for &a in &assign {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // re-seed at the point farthest from its centroid
            let mut far: Option<usize> = None;
            for i in 0..n {
                if counts[assign[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                    far = Some(i);
                }
            }
            let i = far.expect("k <= n leaves a cluster with two points");
            counts[assign[i]] -= 1;
            assign[i] = c;
            counts[c] = 1;
            dist[i] = 0.0;
            centroids[c * dim..(c + 1) * dim].copy_from_slice(row(i));
            repairs += 1;
            changed = true;
        }
        let mut sums = vec![0.0; k * dim];
        for i in 0..n {
            let a = assign[i];
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            for j in 0..dim {
                centroids[c * dim + j] = sums[c * dim + j] * inv;
            }
        }
        let inertia: f64 = (0..n)
            .map(|i| sq_dist(row(i), &centroids[assign[i] * dim..(assign[i] + 1) * dim]))
            .sum();
        history.push(inertia);
        if !changed {
            break;
        }
    }
    KMeansResult {
        inertia: *history.last().unwrap(),
        assignments: assign,
        centroids,
        dim,
        iterations_run: iterations,
        inertia_history: history,
        repairs,
        restart: 0,
        seed: 0,
    }
}

/// Scales every row of a row-major matrix to unit length; zero rows stay zero.
pub fn normalize_rows(points: &mut [f64], dim: usize) {
    for row in points.chunks_mut(dim) {
        let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 0.0 {
            row.iter_mut().for_each(|x| *x /= nrm);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub gamma: f64,
    pub sweeps: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            sweeps: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    pub kind: LaplacianKind,
    pub row_normalize: bool,
    /// Filter the eigenvectors against the original graph when set.
    pub filter: Option<FilterParams>,
    pub eig: EigParams,
    pub kmeans: KMeansParams,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            kind: LaplacianKind::SymmetricNormalized,
            row_normalize: true,
            filter: Some(FilterParams::default()),
            eig: EigParams::default(),
            kmeans: KMeansParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterTimings {
    pub eigensolve_seconds: f64,
    pub filter_seconds: f64,
    pub kmeans_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SpectralClustering {
    pub labels: Vec<usize>,
    pub embedding: SpectralEmbedding,
    pub kmeans: KMeansResult,
    pub timings: ClusterTimings,
}

/// Bottom-`k` nontrivial eigenvectors of `graph`, optionally filtered against
/// `original`, optionally row-normalized, then k-means.
pub fn spectral_cluster(
    graph: &WeightedGraph,
    k: usize,
    original: Option<&WeightedGraph>,
    opts: &SpectralOptions,
) -> Result<SpectralClustering> {
    if k < 2 {
        return Err(Error::param("spectral clustering needs k >= 2"));
    }
    let start = Instant::now();
    let mut embedding = eig::bottom_eigenpairs(graph, k, opts.kind, &opts.eig)?;
    let eigensolve_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    if let (Some(g), Some(f)) = (original, opts.filter) {
        embedding = eig::filter_eigenvectors(g, &embedding, f.gamma, f.sweeps)?;
    }
    let filter_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut rows = embedding.rows();
    if opts.row_normalize {
        normalize_rows(&mut rows, k);
    }
    let km = kmeans(&rows, k, k, &opts.kmeans)?;
    let kmeans_seconds = start.elapsed().as_secs_f64();
    Ok(SpectralClustering {
        labels: km.assignments.clone(),
        embedding,
        kmeans: km,
        timings: ClusterTimings {
            eigensolve_seconds,
            filter_seconds,
            kmeans_seconds,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_pairs() {
        let pts = [0.0, 0.1, 10.0, 10.1];
        let r = kmeans(&pts, 1, 2, &KMeansParams::default()).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[2], r.assignments[3]);
        assert_ne!(r.assignments[0], r.assignments[2]);
        assert!((r.inertia - 0.01).abs() < 1e-12);
    }

    #[test]
    fn identical_points_trigger_repair() {
        let pts = [3.0; 10];
        let r = kmeans(&pts, 2, 2, &KMeansParams::default()).unwrap();
        assert_eq!(r.inertia, 0.0);
        assert!(r.repairs >= 1);
        assert!(r.assignments.iter().all(|&a| a < 2));
    }

    #[test]
    fn inertia_never_increases() {
        let pts: Vec<f64> = (0..200)
            .map(|i| ((i * 37 % 101) as f64).sin() * 5.0)
            .collect();
        let r = kmeans(&pts, 2, 5, &KMeansParams::default()).unwrap();
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn rejects_k_above_n() {
        assert!(kmeans(&[1.0, 2.0], 1, 3, &KMeansParams::default()).is_err());
    }

    #[test]
    fn zero_rows_stay_zero() {
        let mut m = vec![0.0, 0.0, 3.0, 4.0];
        normalize_rows(&mut m, 2);
        assert_eq!(m, vec![0.0, 0.0, 0.6, 0.8]);
    }

    #[test]
    fn weakly_joined_cliques_split() {
        let mut edges = Vec::new();
        for base in [0, 5] {
            for a in 0..5 {
                for b in a + 1..5 {
                    edges.push((base + a, base + b, 1.0));
                }
            }
        }
        edges.push((4, 5, 1e-6));
        let g = WeightedGraph::new(10, edges).unwrap();
        let r = spectral_cluster(&g, 2, None, &SpectralOptions::default()).unwrap();
        assert!(r.labels[..5].iter().all(|&l| l == r.labels[0]));
        assert!(r.labels[5..].iter().all(|&l| l == r.labels[5]));
        assert_ne!(r.labels[0], r.labels[5]);
    }
}
