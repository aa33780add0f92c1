//! Undirected weighted graphs and their Laplacian quadratic forms.

pub mod knn;

use std::collections::VecDeque;

use crate::error::{Error, Result};

pub use knn::{build_knn_graph, build_knn_graph_with, Kernel, KnnOptions, Symmetrization};

/// An undirected edge with `u < v` and a positive finite weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

/// `e_pq = e_p - e_q`, the incidence vector of a vertex pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeVector {
    pub p: usize,
    pub q: usize,
}

impl EdgeVector {
    pub fn new(p: usize, q: usize, n: usize) -> Result<Self> {
        if p == q {
            return Err(Error::param(format!("edge vector needs p != q (got {p})")));
        }
        if p >= n || q >= n {
            return Err(Error::param(format!(
                "edge vector ({p},{q}) out of range for n = {n}"
            )));
        }
        Ok(Self { p, q })
    }

    /// `e_pq^T x`
    #[inline]
    pub fn dot(&self, x: &[f64]) -> f64 {
        x[self.p] - x[self.q]
    }
}

/// Sparse undirected graph with positive edge weights.
///
/// Edges are stored sorted by `(u, v)` with `u < v`; a CSR-style adjacency
/// index gives O(degree) neighbor iteration. The weighted degree vector is
/// kept in sync with the edge list.
#[derive(Clone, Debug)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    // (neighbor, edge index)
    adjacency: Vec<(usize, usize)>,
    // edge weight per adjacency entry
    adj_weight: Vec<f64>,
    degree: Vec<f64>,
}

impl PartialEq for WeightedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.edges == other.edges
    }
}

impl WeightedGraph {
    /// Builds a graph from `(u, v, w)` triples in any order and orientation.
    ///
    /// Rejects self-loops, out-of-range ids, duplicate pairs and weights that
    /// are not strictly positive and finite.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut list = Vec::new();
        for (a, b, w) in edges {
            if a == b {
                return Err(Error::Graph(format!("self-loop at vertex {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Graph(format!(
                    "edge ({a},{b}) out of range for n = {n}"
                )));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Graph(format!("edge ({a},{b}) has weight {w}")));
            }
            let (u, v) = if a < b { (a, b) } else { (b, a) };
            list.push(Edge { u, v, w });
        }
        list.sort_by_key(|x| (x.u, x.v));
        if let Some(pair) = list
            .windows(2)
            .find(|p| (p[0].u, p[0].v) == (p[1].u, p[1].v))
        {
            return Err(Error::Graph(format!(
                "duplicate edge ({},{})",
                pair[0].u, pair[0].v
            )));
        }
        Ok(Self::from_sorted(n, list))
    }

    /// Graph with `n` vertices and no edges.
    pub fn empty(n: usize) -> Self {
        Self::from_sorted(n, Vec::new())
    }

    pub(crate) fn from_sorted(n: usize, edges: Vec<Edge>) -> Self {
        let mut counts = vec![0usize; n + 1];
        for e in &edges {
            counts[e.u + 1] += 1;
            counts[e.v + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut adjacency = vec![(0usize, 0usize); 2 * edges.len()];
        let mut adj_weight = vec![0.0; 2 * edges.len()];
        let mut degree = vec![0.0; n];
        for (idx, e) in edges.iter().enumerate() {
            adjacency[fill[e.u]] = (e.v, idx);
            adj_weight[fill[e.u]] = e.w;
            fill[e.u] += 1;
            adjacency[fill[e.v]] = (e.u, idx);
            adj_weight[fill[e.v]] = e.w;
            fill[e.v] += 1;
            degree[e.u] += e.w;
            degree[e.v] += e.w;
        }
        Self {
            n,
            edges,
            offsets,
            adjacency,
            adj_weight,
            degree,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn edge(&self, idx: usize) -> Edge {
        self.edges[idx]
    }

    /// Weighted degree `d(p) = sum of incident weights`.
    #[inline]
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.w).collect()
    }

    /// `(neighbor, edge index)` pairs incident to `p`.
    #[inline]
    pub fn neighbors(&self, p: usize) -> &[(usize, usize)] {
        &self.adjacency[self.offsets[p]..self.offsets[p + 1]]
    }

    /// Index of edge `(p, q)` in [`Self::edges`], if present.
    pub fn find_edge(&self, p: usize, q: usize) -> Option<usize> {
        let (u, v) = if p < q { (p, q) } else { (q, p) };
        self.edges
            .binary_search_by(|e| (e.u, e.v).cmp(&(u, v)))
            .ok()
    }

    /// Same topology, new weights (one per edge, in edge order).
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.edges.len() {
            return Err(Error::Dimension {
                expected: self.edges.len(),
                got: weights.len(),
            });
        }
        let edges = self
            .edges
            .iter()
            .zip(weights)
            .map(|(e, &w)| {
                if w.is_finite() && w > 0.0 {
                    Ok(Edge { w, ..*e })
                } else {
                    Err(Error::Graph(format!(
                        "edge ({},{}) has weight {w}",
                        e.u, e.v
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_sorted(self.n, edges))
    }

    /// Subgraph on the same vertex set keeping the listed edges.
    pub fn edge_subgraph(&self, indices: &[usize]) -> Self {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        Self::from_sorted(self.n, idx.into_iter().map(|i| self.edges[i]).collect())
    }

    /// Sum of all diagonal Laplacian entries, `2 * sum(w)`.
    pub fn laplacian_trace(&self) -> f64 {
        self.degree.iter().sum()
    }

    /// `max_p 2 d(p)`, the infinity norm of the Laplacian.
    pub fn laplacian_inf_norm(&self) -> f64 {
        2.0 * self.degree.iter().cloned().fold(0.0, f64::max)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `x^T L x = sum_{(p,q)} w_pq (x_p - x_q)^2`.
    pub fn laplacian_quadratic(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(self.quadratic_unchecked(x))
    }

    #[inline]
    pub(crate) fn quadratic_unchecked(&self, x: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let d = x[e.u] - x[e.v];
                e.w * d * d
            })
            .sum()
    }

    /// `y = L x` with `y_p = d(p) x_p - sum_q w_pq x_q`.
    pub fn laplacian_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x)?;
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for p in 0..self.n {
            let range = self.offsets[p]..self.offsets[p + 1];
            let mut acc = self.degree[p] * x[p];
            for (&(q, _), &w) in self.adjacency[range.clone()]
                .iter()
                .zip(&self.adj_weight[range])
            {
                acc -= w * x[q];
            }
            y[p] = acc;
        }
    }

    /// `y = A x` for the weighted adjacency matrix.
    pub(crate) fn adjacency_apply_into(&self, x: &[f64], y: &mut [f64]) {
        for p in 0..self.n {
            let range = self.offsets[p]..self.offsets[p + 1];
            let mut acc = 0.0;
            for (&(q, _), &w) in self.adjacency[range.clone()]
                .iter()
                .zip(&self.adj_weight[range])
            {
                acc += w * x[q];
            }
            y[p] = acc;
        }
    }

    /// Component id per vertex, numbered by first appearance in vertex order.
    pub fn connected_components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            queue.push_back(s);
            while let Some(p) = queue.pop_front() {
                for &(q, _) in self.neighbors(p) {
                    if comp[q] == usize::MAX {
                        comp[q] = next;
                        queue.push_back(q);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn num_components(&self) -> usize {
        self.connected_components()
            .iter()
            .max()
            .map_or(0, |&c| c + 1)
    }

    pub fn is_connected(&self) -> bool {
        self.n > 0 && self.num_components() == 1
    }

    pub fn ensure_connected(&self) -> Result<()> {
        match self.num_components() {
            1 => Ok(()),
            components => Err(Error::Disconnected { components }),
        }
    }

    /// Dense Laplacian, for small-graph oracles and exact metrics.
    pub fn dense_laplacian(&self) -> nalgebra::DMatrix<f64> {
        let mut l = nalgebra::DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            l[(e.u, e.v)] -= e.w;
            l[(e.v, e.u)] -= e.w;
            l[(e.u, e.u)] += e.w;
            l[(e.v, e.v)] += e.w;
        }
        l
    }
}

/// Off-tree edge budget `(|E_S| - |V| + 1) / |V|`.
pub fn off_tree_budget(n: usize, num_edges: usize) -> f64 {
    (num_edges as f64 - n as f64 + 1.0) / n as f64
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn quadratic_form_examples() {
        assert_eq!(path(3).laplacian_quadratic(&[0.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(
            cycle(4).laplacian_quadratic(&[1.0, 0.0, 0.0, 0.0]).unwrap(),
            2.0
        );
        assert_eq!(complete(5).laplacian_quadratic(&[1.0; 5]).unwrap(), 0.0);
        assert!(matches!(
            path(3).laplacian_quadratic(&[1.0]),
            Err(Error::Dimension {
                expected: 3,
                got: 1
            })
        ));
    }

    #[test]
    fn apply_examples() {
        assert_eq!(
            path(3).laplacian_apply(&[1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, -1.0, 0.0]
        );
        assert_eq!(cycle(5).laplacian_apply(&[1.0; 5]).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(WeightedGraph::new(3, [(0, 0, 1.0)]).is_err());
        assert!(WeightedGraph::new(3, [(0, 1, -1.0)]).is_err());
        assert!(WeightedGraph::new(3, [(0, 1, 0.0)]).is_err());
        assert!(WeightedGraph::new(3, [(0, 1, f64::NAN)]).is_err());
        assert!(WeightedGraph::new(3, [(0, 5, 1.0)]).is_err());
        assert!(WeightedGraph::new(3, [(0, 1, 1.0), (1, 0, 2.0)]).is_err());
    }

    #[test]
    fn edges_sorted_and_oriented() {
        let g = WeightedGraph::new(4, [(3, 1, 1.0), (2, 0, 2.0), (1, 0, 3.0)]).unwrap();
        let pairs: Vec<_> = g.edges().iter().map(|e| (e.u, e.v)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 3)]);
        assert_eq!(g.degree(), &[5.0, 4.0, 2.0, 1.0]);
        assert_eq!(g.find_edge(3, 1), Some(2));
        assert_eq!(g.find_edge(2, 3), None);
    }

    #[test]
    fn components() {
        let g = WeightedGraph::new(4, [(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert_eq!(g.num_components(), 2);
        assert_eq!(g.connected_components(), vec![0, 0, 1, 1]);
        assert_eq!(cycle(4).num_components(), 1);
        assert_eq!(WeightedGraph::empty(3).num_components(), 3);
        assert!(matches!(
            g.ensure_connected(),
            Err(Error::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn edge_vector() {
        assert!(EdgeVector::new(1, 1, 3).is_err());
        assert!(EdgeVector::new(0, 3, 3).is_err());
        let e = EdgeVector::new(0, 2, 3).unwrap();
        assert_eq!(e.dot(&[3.0, 1.0, 1.0]), 2.0);
    }

    #[test]
    fn budget_formula() {
        assert_eq!(off_tree_budget(10, 9), 0.0);
        assert!((off_tree_budget(10, 10) - 0.1).abs() < 1e-15);
    }
}
