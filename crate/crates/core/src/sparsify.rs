//! Phase 1: spanning-tree sparsification with spectral-criticality edge recovery.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eig::{self, EigParams, LaplacianKind};
use crate::error::{Error, Result};
use crate::graph::{off_tree_budget, EdgeVector, WeightedGraph};
use crate::linalg::{self, pcg, remove_mean, DensePencil, SpdFactor};
use crate::tree::SpanningTree;

/// Iterations of the reversed pencil used to estimate `lambda_n`.
pub const LAMBDA_N_ITERS: usize = 20;
/// Default largest `n` for which condition metrics use the dense path.
pub const DEFAULT_ORACLE_CAP: usize = 1500;

const PCG_TOL: f64 = 1e-6;
const PCG_MAX_ITER: usize = 2000;
// decorrelates the lambda_n start vector from h_0
const REVERSE_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Approximate dominant generalized eigenvector of `(L_G, L_S)` and the
/// extreme eigenvalue estimates that go with it.
#[derive(Clone, Debug)]
pub struct GeneralizedEigenEstimate {
    /// `h_t`, orthogonal to the all-ones vector, scaled so `h^T L_S h = 1`.
    pub h: Vec<f64>,
    pub t: usize,
    pub lambda_1: f64,
    pub lambda_n: f64,
    /// Unit iterate of the reversed pencil behind `lambda_n`.
    pub u_n: Vec<f64>,
}

/// The pencil `L_G u = lambda L_S u` with a cached factorization of `L_S + zI`.
pub struct Pencil<'a> {
    g: &'a WeightedGraph,
    s: &'a WeightedGraph,
    factor: SpdFactor,
    ones: Vec<f64>,
}

impl<'a> Pencil<'a> {
    pub fn new(g: &'a WeightedGraph, s: &'a WeightedGraph) -> Result<Self> {
        if g.n() != s.n() {
            return Err(Error::Dimension {
                expected: g.n(),
                got: s.n(),
            });
        }
        s.ensure_connected()?;
        let factor = SpdFactor::shifted_laplacian(s)?;
        let n = g.n();
        let ones = vec![1.0 / (n as f64).sqrt(); n];
        Ok(Self { g, s, factor, ones })
    }

    /// `t` rounds of `x <- L_S^+ L_G x` from a seeded Gaussian start.
    /// Returns `h_t` scaled to unit `L_S`-norm and its Rayleigh quotient.
    pub fn power(&self, t: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
        let n = self.g.n();
        let mut rng = linalg::seeded_rng(seed);
        let mut x = linalg::standard_normal_vec(n, &mut rng);
        remove_mean(&mut x);
        linalg::normalize(&mut x);
        let mut y = vec![0.0; n];
        for _ in 0..t {
            self.g.apply_into(&x, &mut y);
            self.factor.solve_in_place(&mut y);
            remove_mean(&mut y);
            std::mem::swap(&mut x, &mut y);
            if linalg::normalize(&mut x) == 0.0 {
                return Err(Error::Numerical("power iterate vanished".into()));
            }
        }
        let qs = self.s.quadratic_unchecked(&x);
        let qg = self.g.quadratic_unchecked(&x);
        if !(qs > 0.0 && qs.is_finite() && qg.is_finite()) {
            return Err(Error::Numerical("degenerate power iterate".into()));
        }
        linalg::scale(1.0 / qs.sqrt(), &mut x);
        Ok((x, qg / qs))
    }

    /// Smallest generalized eigenvalue estimated by power iteration on
    /// `L_G^+ L_S`; each `L_G` solve is PCG preconditioned by `L_S`.
    pub fn lambda_min(&self, iters: usize, seed: u64) -> Result<f64> {
        self.lambda_min_from(iters, seed, None).map(|(lam, _)| lam)
    }

    /// [`Self::lambda_min`] starting from `start` when given, else from a
    /// seeded Gaussian vector. Also returns the final unit iterate.
    pub fn lambda_min_from(
        &self,
        iters: usize,
        seed: u64,
        start: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>)> {
        let n = self.g.n();
        let mut x = match start {
            Some(v) if v.len() == n => v.to_vec(),
            Some(v) => {
                return Err(Error::Dimension {
                    expected: n,
                    got: v.len(),
                })
            }
            None => linalg::standard_normal_vec(n, &mut linalg::seeded_rng(seed)),
        };
        remove_mean(&mut x);
        if linalg::normalize(&mut x) == 0.0 {
            return Err(Error::Numerical("zero lambda_n start vector".into()));
        }
        let mut sx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        for _ in 0..iters {
            self.s.apply_into(&x, &mut sx);
            // warm start from x / lambda, the exact answer once x is an eigenvector
            let lam = self.g.quadratic_unchecked(&x) / self.s.quadratic_unchecked(&x);
            let mut y = x.clone();
            if lam.is_finite() && lam > 0.0 {
                linalg::scale(1.0 / lam, &mut y);
            }
            self.g.apply_into(&y, &mut gy);
            let r: Vec<f64> = sx.iter().zip(&gy).map(|(a, b)| a - b).collect();
            let (bn, rn) = (linalg::norm(&sx), linalg::norm(&r));
            if rn > PCG_TOL * bn {
                let res = pcg(
                    |a, b| self.g.apply_into(a, b),
                    |r| self.factor.solve(r),
                    &r,
                    Some(&self.ones),
                    PCG_TOL * bn / rn,
                    PCG_MAX_ITER,
                );
                linalg::axpy(1.0, &res.x, &mut y);
            }
            remove_mean(&mut y);
            x = y;
            if linalg::normalize(&mut x) == 0.0 {
                return Err(Error::Numerical("inverse iterate vanished".into()));
            }
        }
        let qs = self.s.quadratic_unchecked(&x);
        let qg = self.g.quadratic_unchecked(&x);
        let lam = qg / qs;
        if !(lam.is_finite() && lam > 0.0) {
            return Err(Error::Numerical(format!("lambda_n estimate {lam}")));
        }
        Ok((lam, x))
    }

    pub fn estimate(&self, t: usize, seed: u64) -> Result<GeneralizedEigenEstimate> {
        self.estimate_from(t, seed, None)
    }

    /// [`Self::estimate`] with the `lambda_n` iteration started from `u_n`.
    pub fn estimate_from(
        &self,
        t: usize,
        seed: u64,
        u_n: Option<&[f64]>,
    ) -> Result<GeneralizedEigenEstimate> {
        if t == 0 {
            return Err(Error::param("generalized power iteration needs t >= 1"));
        }
        let (h, lambda_1) = self.power(t, seed)?;
        let (lambda_n, u_n) =
            self.lambda_min_from(LAMBDA_N_ITERS, seed ^ REVERSE_SEED_OFFSET, u_n)?;
        if !lambda_1.is_finite() {
            return Err(Error::Numerical(format!("lambda_1 estimate {lambda_1}")));
        }
        Ok(GeneralizedEigenEstimate {
            h,
            t,
            lambda_1,
            lambda_n,
            u_n,
        })
    }
}

/// `h_t = (L_S^+ L_G)^t h_0` plus the extreme eigenvalue estimates.
pub fn generalized_power_iterate(
    g: &WeightedGraph,
    s: &WeightedGraph,
    t: usize,
    seed: u64,
) -> Result<GeneralizedEigenEstimate> {
    if t == 0 {
        return Err(Error::param("generalized power iteration needs t >= 1"));
    }
    Pencil::new(g, s)?.estimate(t, seed)
}

/// `c_pq = w (h_p - h_q)^2`
#[inline]
pub fn edge_criticality(estimate: &GeneralizedEigenEstimate, edge: EdgeVector, w: f64) -> f64 {
    let d = edge.dot(&estimate.h);
    w * d * d
}

/// Whether to re-embed before every recovery batch or rank once on the tree.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingMode {
    #[default]
    EveryRound,
    Once,
}

impl std::str::FromStr for RankingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "every-round" => Ok(Self::EveryRound),
            "once" => Ok(Self::Once),
            _ => Err(Error::param(format!("unknown ranking mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for RankingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EveryRound => "every-round",
            Self::Once => "once",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryParams {
    /// Target off-tree budget `b = (|E_S| - n + 1) / n`.
    pub budget: f64,
    /// Edges per round as a fraction of `n`.
    pub batch_fraction: f64,
    pub k_eigs: usize,
    pub stability_tol: f64,
    /// Generalized power iterations per embedding.
    pub t: usize,
    pub seed: u64,
    pub ranking: RankingMode,
    pub eig: EigParams,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        Self {
            budget: 0.15,
            batch_fraction: 0.01,
            k_eigs: 10,
            stability_tol: 0.01,
            t: 2,
            seed: 0,
            ranking: RankingMode::EveryRound,
            eig: EigParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveredEdge {
    /// Index into the original graph's edge list.
    pub index: usize,
    pub u: usize,
    pub v: usize,
    pub w: f64,
    pub criticality: f64,
    pub round: usize,
}

/// One entry of the eigen-stability history. Round 0 is the bare tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRound {
    pub round: usize,
    pub budget: f64,
    /// Off-tree edges in the subgraph after this round.
    pub off_tree_edges: usize,
    pub eigenvalues: Vec<f64>,
    pub ratio_var: Option<f64>,
    /// Set when the requested budget exceeds the available off-tree edges.
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Stable,
    Budget,
    Exhausted,
}

/// Tree plus recovered off-tree edges, with the stability history.
#[derive(Clone, Debug)]
pub struct Sparsifier {
    pub subgraph: WeightedGraph,
    pub tree_edges: Vec<usize>,
    pub recovered: Vec<RecoveredEdge>,
    pub budget: f64,
    pub history: Vec<StabilityRound>,
    pub stop: StopReason,
    pub params: RecoveryParams,
}

impl Sparsifier {
    /// The subgraph after the first `off_tree` recovered edges, original weights.
    pub fn snapshot(&self, g: &WeightedGraph, off_tree: usize) -> WeightedGraph {
        let mut idx = self.tree_edges.clone();
        idx.extend(self.recovered.iter().take(off_tree).map(|e| e.index));
        g.edge_subgraph(&idx)
    }
}

/// Recovers spectrally critical off-tree edges in batches until the bottom
/// normalized eigenvalues of the subgraph stop moving or the budget is spent.
pub fn recover_off_tree_edges(
    g: &WeightedGraph,
    tree: &SpanningTree,
    params: &RecoveryParams,
) -> Result<Sparsifier> {
    let n = g.n();
    if tree.n() != n {
        return Err(Error::Dimension {
            expected: n,
            got: tree.n(),
        });
    }
    if !(params.budget >= 0.0 && params.budget.is_finite()) {
        return Err(Error::param(format!(
            "budget must be >= 0, got {}",
            params.budget
        )));
    }
    if !(params.batch_fraction > 0.0) {
        return Err(Error::param("batch_fraction must be positive"));
    }
    if params.k_eigs < 1 || params.k_eigs >= n {
        return Err(Error::param(format!(
            "k_eigs must be in [1, n), got {}",
            params.k_eigs
        )));
    }
    if params.t == 0 {
        return Err(Error::param("generalized power iteration needs t >= 1"));
    }

    let tree_edges = tree.edge_indices().to_vec();
    let mut remaining = tree.off_tree_indices();
    let wanted = (params.budget * n as f64 + 1e-9).floor() as usize;
    let clamped = wanted > remaining.len();
    if clamped {
        log::warn!(
            "budget {} asks for {wanted} off-tree edges but only {} exist",
            params.budget,
            remaining.len()
        );
    }
    let target = wanted.min(remaining.len());
    let batch = ((params.batch_fraction * n as f64).ceil() as usize).max(1);

    let mut current: Vec<usize> = tree_edges.clone();
    let mut s = g.edge_subgraph(&current);
    let eig_of = |s: &WeightedGraph, warm: &[Vec<f64>]| {
        eig::bottom_eigenpairs_warm(
            s,
            params.k_eigs,
            LaplacianKind::SymmetricNormalized,
            &params.eig,
            warm,
        )
    };
    let mut emb = eig_of(&s, &[])?;
    let mut history = vec![StabilityRound {
        round: 0,
        budget: 0.0,
        off_tree_edges: 0,
        eigenvalues: emb.eigenvalues.clone(),
        ratio_var: None,
        clamped,
    }];
    let mut recovered: Vec<RecoveredEdge> = Vec::new();
    let mut stop = StopReason::Budget;

    // rank-once mode scores every off-tree edge on the bare tree
    let mut once: Vec<f64> = Vec::new();
    if params.ranking == RankingMode::Once && target > 0 {
        once = Pencil::new(g, &s)?.power(params.t, params.seed)?.0;
        remaining = rank(g, &once, &remaining)
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        remaining.reverse();
    }

    let mut round = 0;
    while recovered.len() < target {
        round += 1;
        let take = batch.min(target - recovered.len());
        let chosen: Vec<(usize, f64)> = match params.ranking {
            RankingMode::EveryRound => {
                let (h, _) =
                    Pencil::new(g, &s)?.power(params.t, params.seed.wrapping_add(round as u64))?;
                let mut ranked = rank(g, &h, &remaining);
                ranked.truncate(take);
                let picked: std::collections::HashSet<usize> = ranked.iter().map(|r| r.0).collect();
                remaining.retain(|i| !picked.contains(i));
                ranked
            }
            RankingMode::Once => (0..take)
                .map(|_| {
                    let i = remaining.pop().expect("target bounded by remaining edges");
                    let e = g.edge(i);
                    let d = once[e.u] - once[e.v];
                    (i, e.w * d * d)
                })
                .collect(),
        };
        for &(index, criticality) in &chosen {
            let e = g.edge(index);
            recovered.push(RecoveredEdge {
                index,
                u: e.u,
                v: e.v,
                w: e.w,
                criticality,
                round,
            });
            current.push(index);
        }
        s = g.edge_subgraph(&current);
        let next = eig_of(&s, &emb.vectors)?;
        let ratio = eig::eigenvalue_variation_ratio(&emb.eigenvalues, &next.eigenvalues)?;
        emb = next;
        history.push(StabilityRound {
            round,
            budget: off_tree_budget(n, s.num_edges()),
            off_tree_edges: recovered.len(),
            eigenvalues: emb.eigenvalues.clone(),
            ratio_var: Some(ratio),
            clamped,
        });
        log::debug!(
            "recovery round {round}: {} edges, ratio_var {ratio:.3e}",
            recovered.len()
        );
        if ratio < params.stability_tol {
            stop = StopReason::Stable;
            break;
        }
    }
    if stop != StopReason::Stable && clamped {
        stop = StopReason::Exhausted;
    }
    Ok(Sparsifier {
        budget: off_tree_budget(n, s.num_edges()),
        subgraph: s,
        tree_edges,
        recovered,
        history,
        stop,
        params: params.clone(),
    })
}

/// Scores the candidate edges and sorts them by descending criticality,
/// ties by ascending edge index.
fn rank(g: &WeightedGraph, h: &[f64], candidates: &[usize]) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = candidates
        .par_iter()
        .map(|&i| {
            let e = g.edge(i);
            let d = h[e.u] - h[e.v];
            (i, e.w * d * d)
        })
        .collect();
    scored.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    scored
}

/// How [`condition_metrics`] chooses between the dense and iterative paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricsMode {
    /// Dense only; larger graphs are a size error.
    Exact { cap: usize },
    /// Iterative estimates regardless of size.
    Approximate,
    /// Dense up to `cap`, iterative above.
    Auto { cap: usize },
}

impl Default for MetricsMode {
    fn default() -> Self {
        Self::Auto {
            cap: DEFAULT_ORACLE_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub lambda_1: f64,
    pub lambda_n: f64,
    pub kappa: f64,
    pub approximate: bool,
}

/// Extreme generalized eigenvalues of `(L_G, L_S)` and `kappa = lambda_1 / lambda_n`.
pub fn condition_metrics(
    g: &WeightedGraph,
    s: &WeightedGraph,
    mode: MetricsMode,
    seed: u64,
) -> Result<ConditionMetrics> {
    let n = g.n();
    let exact = match mode {
        MetricsMode::Exact { cap } => {
            if n > cap {
                return Err(Error::Size { n, cap });
            }
            true
        }
        MetricsMode::Approximate => false,
        MetricsMode::Auto { cap } => n <= cap,
    };
    g.ensure_connected()?;
    let (lambda_1, lambda_n) = if exact {
        let p = DensePencil::new(g, s)?;
        (p.lambda_max(), p.lambda_min())
    } else {
        let p = Pencil::new(g, s)?;
        let (_, l1) = p.power(50, seed)?;
        (
            l1,
            p.lambda_min(LAMBDA_N_ITERS, seed ^ REVERSE_SEED_OFFSET)?,
        )
    };
    Ok(ConditionMetrics {
        lambda_1,
        lambda_n,
        kappa: lambda_1 / lambda_n,
        approximate: !exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::tree::{build_spanning_tree, TreeMethod};

    fn c4_path_tree() -> (WeightedGraph, WeightedGraph) {
        let g = cycle(4);
        let s = WeightedGraph::new(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        (g, s)
    }

    #[test]
    fn identical_pencil_has_unit_lambda() {
        let g = complete(6);
        let est = generalized_power_iterate(&g, &g, 2, 3).unwrap();
        assert!((est.lambda_1 - 1.0).abs() < 1e-10);
        assert!((est.lambda_n - 1.0).abs() < 1e-8);
        assert!(est.h.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn zero_power_iterations_rejected() {
        let g = cycle(4);
        assert!(matches!(
            generalized_power_iterate(&g, &g, 0, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn criticality_examples() {
        let mut h = vec![0.0; 4];
        h[0] = 1.0;
        let est = GeneralizedEigenEstimate {
            h,
            t: 2,
            lambda_1: 1.0,
            lambda_n: 1.0,
            u_n: Vec::new(),
        };
        assert_eq!(
            edge_criticality(&est, EdgeVector::new(0, 1, 4).unwrap(), 2.0),
            2.0
        );
        assert_eq!(
            edge_criticality(&est, EdgeVector::new(2, 3, 4).unwrap(), 5.0),
            0.0
        );
    }

    #[test]
    fn metrics_on_cycle() {
        let (g, s) = c4_path_tree();
        let m = condition_metrics(&g, &s, MetricsMode::default(), 0).unwrap();
        // L_S^+ L_G on C4 vs P4: eigenvalues 1, 1, 4
        assert!((m.lambda_1 - 4.0).abs() < 1e-10);
        assert!((m.lambda_n - 1.0).abs() < 1e-10);
        assert!(!m.approximate);
        let same = condition_metrics(&g, &g, MetricsMode::Exact { cap: 10 }, 0).unwrap();
        assert!((same.kappa - 1.0).abs() < 1e-10);
        assert!(matches!(
            condition_metrics(&g, &g, MetricsMode::Exact { cap: 3 }, 0),
            Err(Error::Size { n: 4, cap: 3 })
        ));
    }

    #[test]
    fn approximate_metrics_close_to_dense() {
        let (g, s) = c4_path_tree();
        let m = condition_metrics(&g, &s, MetricsMode::Approximate, 1).unwrap();
        assert!(m.approximate);
        assert!((m.lambda_1 - 4.0).abs() < 1e-6);
        assert!((m.lambda_n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_budget_keeps_tree() {
        let g = complete(8);
        let t = build_spanning_tree(&g, TreeMethod::MaxWeight).unwrap();
        let p = RecoveryParams {
            budget: 0.0,
            k_eigs: 2,
            ..Default::default()
        };
        let sp = recover_off_tree_edges(&g, &t, &p).unwrap();
        assert_eq!(sp.subgraph, t.to_graph());
        assert!(sp.recovered.is_empty());
        assert_eq!(sp.history.len(), 1);
    }

    #[test]
    fn recovery_only_adds_off_tree_edges() {
        let g = complete(10);
        let t = build_spanning_tree(&g, TreeMethod::MaxWeight).unwrap();
        for ranking in [RankingMode::EveryRound, RankingMode::Once] {
            let p = RecoveryParams {
                budget: 0.5,
                batch_fraction: 0.1,
                k_eigs: 2,
                stability_tol: 0.0,
                ranking,
                ..Default::default()
            };
            let sp = recover_off_tree_edges(&g, &t, &p).unwrap();
            assert_eq!(sp.recovered.len(), 5);
            for e in &sp.recovered {
                assert!(!t.contains_edge(e.index));
            }
            assert!((sp.budget - 0.5).abs() < 1e-12);
            assert_eq!(sp.history.len(), 6);
            assert_eq!(sp.snapshot(&g, 5), sp.subgraph);
        }
    }

    #[test]
    fn over_budget_clamps() {
        let g = cycle(6);
        let t = build_spanning_tree(&g, TreeMethod::MaxWeight).unwrap();
        let p = RecoveryParams {
            budget: 1.0,
            k_eigs: 2,
            stability_tol: 0.0,
            ..Default::default()
        };
        let sp = recover_off_tree_edges(&g, &t, &p).unwrap();
        assert_eq!(sp.subgraph, g);
        assert!(sp.history.iter().all(|h| h.clamped));
        assert_eq!(sp.stop, StopReason::Exhausted);
    }
}
