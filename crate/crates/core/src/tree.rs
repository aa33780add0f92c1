//! Spanning trees, tree path resistances and total stretch.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Edge, WeightedGraph};

/// How the spanning tree is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeMethod {
    /// Maximum-weight spanning tree (Kruskal, ties by ascending `(u, v)`).
    #[default]
    MaxWeight,
    /// AKPW-style low-stretch tree built from repeated low-diameter
    /// decompositions over geometric edge-length classes.
    Akpw,
}

impl std::str::FromStr for TreeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-weight" => Ok(Self::MaxWeight),
            "akpw" | "akpw-lsst" => Ok(Self::Akpw),
            _ => Err(Error::param(format!("unknown tree method '{s}'"))),
        }
    }
}

impl std::fmt::Display for TreeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MaxWeight => "max-weight",
            Self::Akpw => "akpw",
        })
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// A spanning tree rooted at vertex 0 with binary-lifting LCA tables.
#[derive(Clone, Debug)]
pub struct SpanningTree {
    n: usize,
    parent: Vec<usize>,
    parent_weight: Vec<f64>,
    depth: Vec<usize>,
    // up[j][v] is the 2^j-th ancestor of v
    up: Vec<Vec<usize>>,
    // sum of 1/w along the path to the root
    resistance_to_root: Vec<f64>,
    tree_edges: Vec<usize>,
    in_tree: Vec<bool>,
    edges: Vec<Edge>,
}

pub fn build_spanning_tree(graph: &WeightedGraph, method: TreeMethod) -> Result<SpanningTree> {
    let comps = graph.num_components();
    if comps != 1 {
        return Err(Error::Disconnected { components: comps });
    }
    let indices = match method {
        TreeMethod::MaxWeight => max_weight_edges(graph),
        TreeMethod::Akpw => akpw_edges(graph),
    };
    SpanningTree::from_edge_indices(graph, &indices)
}

fn max_weight_edges(graph: &WeightedGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..graph.num_edges()).collect();
    // stable: equal weights keep ascending (u, v)
    order.sort_by(|&a, &b| graph.edge(b).w.total_cmp(&graph.edge(a).w));
    let mut uf = UnionFind::new(graph.n());
    let mut chosen = Vec::with_capacity(graph.n().saturating_sub(1));
    for idx in order {
        let e = graph.edge(idx);
        if uf.union(e.u, e.v) {
            chosen.push(idx);
            if chosen.len() + 1 == graph.n() {
                break;
            }
        }
    }
    chosen
}

fn akpw_edges(graph: &WeightedGraph) -> Vec<usize> {
    let n = graph.n();
    let m = graph.num_edges();
    if n <= 1 {
        return Vec::new();
    }
    let lengths: Vec<f64> = graph.edges().iter().map(|e| 1.0 / e.w).collect();
    let min_len = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
    let ln_n = (n as f64).ln().max(1.0);
    let y = (ln_n * ln_n).max(2.0);
    let class: Vec<u32> = lengths
        .iter()
        .map(|&l| ((l / min_len).ln() / y.ln()).floor().max(0.0) as u32)
        .collect();
    // fraction of internal edges a ball's boundary may not exceed
    let beta = 1.0 / (m as f64 + 1.0).ln().max(2.0);

    let mut uf = UnionFind::new(n);
    let mut chosen = Vec::with_capacity(n - 1);
    let mut round = 0u32;
    while chosen.len() + 1 < n {
        let mut cluster_of = vec![0usize; n];
        let mut ids = vec![usize::MAX; n];
        let mut count = 0;
        for (v, slot) in cluster_of.iter_mut().enumerate() {
            let r = uf.find(v);
            if ids[r] == usize::MAX {
                ids[r] = count;
                count += 1;
            }
            *slot = ids[r];
        }
        // contracted multigraph on clusters using the active length classes
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); count];
        for (idx, e) in graph.edges().iter().enumerate() {
            if class[idx] > round {
                continue;
            }
            let (a, b) = (cluster_of[e.u], cluster_of[e.v]);
            if a != b {
                adj[a].push((b, idx));
                adj[b].push((a, idx));
            }
        }
        for list in adj.iter_mut() {
            list.sort_by(|x, y| {
                graph
                    .edge(y.1)
                    .w
                    .total_cmp(&graph.edge(x.1).w)
                    .then(x.1.cmp(&y.1))
            });
        }
        let mut assigned = vec![false; count];
        let mut owner = vec![usize::MAX; count];
        for start in 0..count {
            if assigned[start] || adj[start].is_empty() {
                continue;
            }
            // grow a BFS ball until its boundary is small relative to its interior
            assigned[start] = true;
            owner[start] = start;
            let mut ball = vec![start];
            let mut frontier = vec![start];
            let mut internal = 0usize;
            loop {
                let mut boundary = 0usize;
                for &c in &ball {
                    for &(d, _) in &adj[c] {
                        if !assigned[d] {
                            boundary += 1;
                        }
                    }
                }
                if boundary == 0 || (boundary as f64) <= beta * internal as f64 {
                    break;
                }
                let mut next = Vec::new();
                for &c in &frontier {
                    for &(d, idx) in &adj[c] {
                        if !assigned[d] {
                            assigned[d] = true;
                            owner[d] = start;
                            let e = graph.edge(idx);
                            uf.union(e.u, e.v);
                            chosen.push(idx);
                            next.push(d);
                        }
                    }
                }
                for &c in &next {
                    for &(d, _) in &adj[c] {
                        if owner[d] == start {
                            internal += 1;
                        }
                    }
                }
                ball.extend_from_slice(&next);
                frontier = next;
            }
        }
        round += 1;
    }
    chosen.sort_unstable();
    chosen
}

impl SpanningTree {
    /// Builds the rooted tree from indices into `graph.edges()`.
    pub fn from_edge_indices(graph: &WeightedGraph, indices: &[usize]) -> Result<Self> {
        let n = graph.n();
        if n == 0 {
            return Err(Error::param("spanning tree of an empty graph"));
        }
        if indices.len() + 1 != n {
            return Err(Error::Graph(format!(
                "a spanning tree on {n} vertices needs {} edges, got {}",
                n - 1,
                indices.len()
            )));
        }
        let mut in_tree = vec![false; graph.num_edges()];
        let mut uf = UnionFind::new(n);
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &idx in indices {
            if idx >= graph.num_edges() || in_tree[idx] {
                return Err(Error::Graph(format!("invalid tree edge index {idx}")));
            }
            let e = graph.edge(idx);
            if !uf.union(e.u, e.v) {
                return Err(Error::Graph(format!(
                    "tree edge ({},{}) closes a cycle",
                    e.u, e.v
                )));
            }
            in_tree[idx] = true;
            adj[e.u].push((e.v, e.w));
            adj[e.v].push((e.u, e.w));
        }
        let mut parent = vec![0; n];
        let mut parent_weight = vec![0.0; n];
        let mut depth = vec![0; n];
        let mut resistance_to_root = vec![0.0; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &(c, w) in &adj[v] {
                if !seen[c] {
                    seen[c] = true;
                    parent[c] = v;
                    parent_weight[c] = w;
                    depth[c] = depth[v] + 1;
                    resistance_to_root[c] = resistance_to_root[v] + 1.0 / w;
                    queue.push_back(c);
                }
            }
        }
        let levels = (usize::BITS - n.leading_zeros()).max(1) as usize;
        let mut up = vec![parent.clone()];
        for j in 1..levels {
            let prev = &up[j - 1];
            let row = (0..n).map(|v| prev[prev[v]]).collect();
            up.push(row);
        }
        let mut tree_edges = indices.to_vec();
        tree_edges.sort_unstable();
        let edges = tree_edges.iter().map(|&i| graph.edge(i)).collect();
        Ok(Self {
            n,
            parent,
            parent_weight,
            depth,
            up,
            resistance_to_root,
            tree_edges,
            in_tree,
            edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn parent(&self, v: usize) -> usize {
        self.parent[v]
    }

    pub fn parent_weight(&self, v: usize) -> f64 {
        self.parent_weight[v]
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    /// Indices of the tree edges in the source graph, ascending.
    pub fn edge_indices(&self) -> &[usize] {
        &self.tree_edges
    }

    /// Whether edge `idx` of the source graph belongs to the tree.
    pub fn contains_edge(&self, idx: usize) -> bool {
        self.in_tree.get(idx).copied().unwrap_or(false)
    }

    /// Indices of source-graph edges that are not in the tree, ascending.
    pub fn off_tree_indices(&self) -> Vec<usize> {
        (0..self.in_tree.len())
            .filter(|&i| !self.in_tree[i])
            .collect()
    }

    pub fn lca(&self, mut a: usize, mut b: usize) -> usize {
        if self.depth[a] < self.depth[b] {
            std::mem::swap(&mut a, &mut b);
        }
        let mut diff = self.depth[a] - self.depth[b];
        let mut j = 0;
        while diff > 0 {
            if diff & 1 == 1 {
                a = self.up[j][a];
            }
            diff >>= 1;
            j += 1;
        }
        if a == b {
            return a;
        }
        for j in (0..self.up.len()).rev() {
            if self.up[j][a] != self.up[j][b] {
                a = self.up[j][a];
                b = self.up[j][b];
            }
        }
        self.parent[a]
    }

    /// Sum of `1/w` along the tree path between `p` and `q`.
    pub fn path_resistance(&self, p: usize, q: usize) -> Result<f64> {
        if p == q {
            return Err(Error::param(format!(
                "path resistance needs p != q (got {p})"
            )));
        }
        if p >= self.n || q >= self.n {
            return Err(Error::param(format!(
                "vertex out of range for n = {}",
                self.n
            )));
        }
        Ok(self.resistance_unchecked(p, q))
    }

    #[inline]
    fn resistance_unchecked(&self, p: usize, q: usize) -> f64 {
        let l = self.lca(p, q);
        self.resistance_to_root[p] + self.resistance_to_root[q] - 2.0 * self.resistance_to_root[l]
    }

    /// Path resistance by walking parent pointers; O(depth).
    pub fn naive_path_resistance(&self, mut p: usize, mut q: usize) -> f64 {
        let mut r = 0.0;
        while self.depth[p] > self.depth[q] {
            r += 1.0 / self.parent_weight[p];
            p = self.parent[p];
        }
        while self.depth[q] > self.depth[p] {
            r += 1.0 / self.parent_weight[q];
            q = self.parent[q];
        }
        while p != q {
            r += 1.0 / self.parent_weight[p] + 1.0 / self.parent_weight[q];
            p = self.parent[p];
            q = self.parent[q];
        }
        r
    }

    /// The tree as a standalone graph with the source weights.
    pub fn to_graph(&self) -> WeightedGraph {
        WeightedGraph::from_sorted(self.n, self.edges.clone())
    }
}

/// `sum over edges of G of w_pq * R_T(p, q)`, which equals `tr(L_S^+ L_G)`.
pub fn total_stretch(graph: &WeightedGraph, tree: &SpanningTree) -> Result<f64> {
    if graph.n() != tree.n() {
        return Err(Error::Dimension {
            expected: tree.n(),
            got: graph.n(),
        });
    }
    Ok(graph
        .edges()
        .iter()
        .map(|e| e.w * tree.resistance_unchecked(e.u, e.v))
        .sum())
}
