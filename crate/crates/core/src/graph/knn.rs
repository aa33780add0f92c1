//! Exact k-nearest-neighbor similarity graphs.

use std::cmp::Ordering;

use rayon::prelude::*;

use super::{Edge, WeightedGraph};
use crate::dataio::Dataset;
use crate::error::{Error, Result};

/// Smallest weight ever stored; kernel values that underflow are raised to it.
pub const MIN_WEIGHT: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kernel {
    /// `exp(-d_ij^2 / (sigma_i sigma_j))`, `sigma_i` the distance from `i` to
    /// its `rank`-th nearest neighbor.
    SelfTuning { rank: usize },
    /// `exp(-d_ij^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// `1 / d_ij`
    DistanceReciprocal,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::SelfTuning { rank: 7 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Symmetrization {
    /// Keep `(i,j)` if either endpoint lists the other.
    #[default]
    Union,
    /// Keep `(i,j)` only if both endpoints list each other.
    Mutual,
}

impl std::str::FromStr for Symmetrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(Self::Union),
            "mutual" => Ok(Self::Mutual),
            _ => Err(Error::param(format!("unknown symmetrization '{s}'"))),
        }
    }
}

impl std::fmt::Display for Symmetrization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Union => "union",
            Self::Mutual => "mutual",
        })
    }
}

#[derive(Clone, Debug)]
pub struct KnnOptions {
    pub k: usize,
    pub kernel: Kernel,
    pub symmetrization: Symmetrization,
    /// Bridge disconnected components with their closest point pairs.
    pub repair: bool,
}

impl Default for KnnOptions {
    fn default() -> Self {
        Self {
            k: 10,
            kernel: Kernel::default(),
            symmetrization: Symmetrization::Union,
            repair: true,
        }
    }
}

struct RowNeighbors {
    // ascending by (distance, index)
    nearest: Vec<(f64, usize)>,
    // distance to the rank-th neighbor (self-tuning scale)
    scale: f64,
    min_positive: Option<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_dist(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// kNN graph with union symmetrization and connectivity repair.
pub fn build_knn_graph(data: &Dataset, k: usize, kernel: Kernel) -> Result<WeightedGraph> {
    build_knn_graph_with(
        data,
        &KnnOptions {
            k,
            kernel,
            ..KnnOptions::default()
        },
    )
}

pub fn build_knn_graph_with(data: &Dataset, opts: &KnnOptions) -> Result<WeightedGraph> {
    let n = data.n();
    let k = opts.k;
    if k == 0 || k >= n {
        return Err(Error::param(format!(
            "kNN needs 0 < k < n (k = {k}, n = {n})"
        )));
    }
    let rank = match opts.kernel {
        Kernel::SelfTuning { rank: 0 } => {
            return Err(Error::param("self-tuning rank must be positive"))
        }
        Kernel::SelfTuning { rank } => rank.min(n - 1),
        Kernel::Gaussian { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
            return Err(Error::param(format!(
                "gaussian sigma must be positive, got {sigma}"
            )))
        }
        _ => 1,
    };
    let keep = k.max(rank);

    let rows: Vec<RowNeighbors> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = data.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(xi, data.row(j)).sqrt(), j))
                .collect();
            let min_positive = cand
                .iter()
                .map(|c| c.0)
                .filter(|&d| d > 0.0)
                .min_by(f64::total_cmp);
            if keep < cand.len() {
                cand.select_nth_unstable_by(keep - 1, by_dist);
                cand.truncate(keep);
            }
            cand.sort_by(by_dist);
            let scale = cand[rank - 1].0;
            cand.truncate(k);
            RowNeighbors {
                nearest: cand,
                scale,
                min_positive,
            }
        })
        .collect();

    let global_min_positive = rows
        .iter()
        .filter_map(|r| r.min_positive)
        .min_by(f64::total_cmp);
    let sigma: Vec<f64> = rows
        .iter()
        .map(|r| {
            if r.scale > 0.0 {
                r.scale
            } else {
                r.min_positive.or(global_min_positive).unwrap_or(1.0)
            }
        })
        .collect();
    let weight = |i: usize, j: usize, dist: f64| -> f64 {
        let w = match opts.kernel {
            Kernel::SelfTuning { .. } => (-dist * dist / (sigma[i] * sigma[j])).exp(),
            Kernel::Gaussian { sigma } => (-dist * dist / (2.0 * sigma * sigma)).exp(),
            Kernel::DistanceReciprocal => {
                let d = if dist > 0.0 {
                    dist
                } else {
                    global_min_positive.unwrap_or(1.0)
                };
                1.0 / d
            }
        };
        w.max(MIN_WEIGHT)
    };

    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(n * k);
    for (i, r) in rows.iter().enumerate() {
        for &(dist, j) in &r.nearest {
            pairs.push((i.min(j), i.max(j), dist));
        }
    }
    pairs.sort_by_key(|a| (a.0, a.1));
    let mut edges = Vec::with_capacity(pairs.len());
    let mut idx = 0;
    while idx < pairs.len() {
        let (u, v, dist) = pairs[idx];
        let mut count = 1;
        while idx + count < pairs.len() && (pairs[idx + count].0, pairs[idx + count].1) == (u, v) {
            count += 1;
        }
        idx += count;
        if opts.symmetrization == Symmetrization::Mutual && count < 2 {
            continue;
        }
        edges.push(Edge {
            u,
            v,
            w: weight(u, v, dist),
        });
    }
    let mut graph = WeightedGraph::from_sorted(n, edges);

    if opts.repair && !graph.is_connected() {
        let bridges = component_bridges(data, &graph);
        let mut all: Vec<Edge> = graph.edges().to_vec();
        for (u, v, dist) in bridges {
            all.push(Edge {
                u,
                v,
                w: weight(u, v, dist),
            });
        }
        all.sort_by_key(|a| (a.u, a.v));
        graph = WeightedGraph::from_sorted(n, all);
    }
    Ok(graph)
}

/// Closest point pair across each edge of a minimum spanning tree over
/// component centroids.
fn component_bridges(data: &Dataset, graph: &WeightedGraph) -> Vec<(usize, usize, f64)> {
    let comp = graph.connected_components();
    let c = comp.iter().max().map_or(0, |&m| m + 1);
    let d = data.dim();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &ci) in comp.iter().enumerate() {
        members[ci].push(i);
    }
    let centroids: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            let mut acc = vec![0.0; d];
            for &i in m {
                for (a, x) in acc.iter_mut().zip(data.row(i)) {
                    *a += x;
                }
            }
            acc.iter().map(|a| a / m.len() as f64).collect()
        })
        .collect();

    // Prim over the complete centroid graph.
    let mut in_tree = vec![false; c];
    let mut best = vec![(f64::INFINITY, usize::MAX); c];
    in_tree[0] = true;
    for j in 1..c {
        best[j] = (sq_dist(&centroids[0], &centroids[j]), 0);
    }
    let mut links = Vec::with_capacity(c.saturating_sub(1));
    for _ in 1..c {
        let (next, &(_, from)) = best
            .iter()
            .enumerate()
            .filter(|(j, _)| !in_tree[*j])
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
            .expect("unvisited component");
        in_tree[next] = true;
        links.push((from, next));
        for j in 0..c {
            if !in_tree[j] {
                let dj = sq_dist(&centroids[next], &centroids[j]);
                if dj < best[j].0 {
                    best[j] = (dj, next);
                }
            }
        }
    }

    links
        .into_par_iter()
        .map(|(a, b)| {
            let mut bestpair = (f64::INFINITY, 0, 0);
            for &i in &members[a] {
                for &j in &members[b] {
                    let dist = sq_dist(data.row(i), data.row(j));
                    let (u, v) = (i.min(j), i.max(j));
                    if dist < bestpair.0
                        || (dist == bestpair.0 && (u, v) < (bestpair.1, bestpair.2))
                    {
                        bestpair = (dist, u, v);
                    }
                }
            }
            (bestpair.1, bestpair.2, bestpair.0.sqrt())
        })
        .collect()
}
