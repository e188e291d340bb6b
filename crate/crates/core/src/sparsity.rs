//! Aggregate sparsity graph, forest analysis and the connecting-edge
//! perturbation.
//!
//! Vertices are 0-based internally. Reports convert to 1-based.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HomogeneousQcqp, QcqpInstance};
use crate::symlin::SymMatrix;

/// Threshold used for matrices produced by floating-point transforms.
pub const NUMERIC_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZeroRule {
    Exact,
    Numeric(f64),
}

impl ZeroRule {
    pub fn is_nonzero(self, v: f64) -> bool {
        match self {
            ZeroRule::Exact => v != 0.0,
            ZeroRule::Numeric(tol) => v.abs() > tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityGraph {
    pub n: usize,
    /// Pairs `(i, j)` with `i < j`.
    pub edges: BTreeSet<(usize, usize)>,
    pub loops: BTreeSet<usize>,
}

impl SparsityGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("bad edge ({i}, {j}) for n = {n}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(SparsityGraph { n, edges: set, loops: BTreeSet::new() })
    }

    pub fn from_matrices<'a>(n: usize, mats: impl IntoIterator<Item = &'a SymMatrix>, rule: ZeroRule) -> Self {
        let mut edges = BTreeSet::new();
        let mut loops = BTreeSet::new();
        for m in mats {
            for j in 0..n {
                if rule.is_nonzero(m.get(j, j)) {
                    loops.insert(j);
                }
                for i in 0..j {
                    if rule.is_nonzero(m.get(i, j)) {
                        edges.insert((i, j));
                    }
                }
            }
        }
        SparsityGraph { n, edges, loops }
    }

    /// Whether the off-diagonal pattern of `m` lies inside this graph.
    pub fn contains_pattern(&self, m: &SymMatrix, rule: ZeroRule) -> bool {
        (0..self.n).all(|j| (0..j).all(|i| !rule.is_nonzero(m.get(i, j)) || self.edges.contains(&(i, j))))
    }

    pub fn with_edges(&self, extra: &[(usize, usize)]) -> Result<Self> {
        let mut g = SparsityGraph::new(self.n, self.edges.iter().copied().chain(extra.iter().copied()))?;
        g.loops = self.loops.clone();
        Ok(g)
    }
}

/// Graph of the quadratic parts only; linear terms add no edges.
pub fn build_graph(inst: &QcqpInstance) -> SparsityGraph {
    SparsityGraph::from_matrices(inst.n(), inst.quad_matrices(), ZeroRule::Exact)
}

pub fn build_graph_homogeneous(h: &HomogeneousQcqp, rule: ZeroRule) -> SparsityGraph {
    SparsityGraph::from_matrices(h.dim(), h.matrices(), rule)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Tridiagonal,
    Arrow,
    GeneralForest,
    NotForest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestAnalysis {
    pub n: usize,
    pub is_forest: bool,
    /// Sorted members; components ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    pub offdiag_index_set: Vec<(usize, usize)>,
    /// Parent of each vertex under the max-index rooting; `None` for roots
    /// and for every vertex when the graph has a cycle.
    pub parent_map: Vec<Option<usize>>,
    pub roots: Vec<usize>,
    pub classification: Classification,
    /// True when the classification needed a relabeling of the vertices.
    pub relabeled: bool,
}

impl ForestAnalysis {
    pub fn is_connected(&self) -> bool {
        self.components.len() <= 1
    }
}

struct Dsu {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False when `a` and `b` were already joined.
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

pub fn analyze_forest(g: &SparsityGraph) -> ForestAnalysis {
    let n = g.n;
    let mut dsu = Dsu::new(n);
    let mut acyclic = true;
    for &(i, j) in &g.edges {
        if !dsu.union(i, j) {
            acyclic = false;
        }
    }
    let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); n];
    for v in 0..n {
        let r = dsu.find(v);
        by_root[r].push(v);
    }
    let mut components: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
    components.sort_by_key(|c| c[0]);
    debug_assert_eq!(acyclic, g.edges.len() + components.len() == n);

    let offdiag_index_set: Vec<(usize, usize)> = g.edges.iter().copied().collect();
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in &g.edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let roots: Vec<usize> = components.iter().map(|c| *c.last().expect("nonempty")).collect();
    let mut parent_map = vec![None; n];
    if acyclic {
        for &r in &roots {
            let mut queue = VecDeque::from([r]);
            let mut seen = BTreeSet::from([r]);
            while let Some(v) = queue.pop_front() {
                for &w in &adj[v] {
                    if seen.insert(w) {
                        parent_map[w] = Some(v);
                        queue.push_back(w);
                    }
                }
            }
        }
    }
    let (classification, relabeled) = if acyclic { classify(n, &g.edges, &adj) } else { (Classification::NotForest, false) };
    ForestAnalysis {
        n,
        is_forest: acyclic,
        components,
        offdiag_index_set,
        parent_map,
        roots,
        classification,
        relabeled,
    }
}

fn classify(n: usize, edges: &BTreeSet<(usize, usize)>, adj: &[Vec<usize>]) -> (Classification, bool) {
    if edges.iter().all(|&(i, j)| j == i + 1) {
        return (Classification::Tridiagonal, false);
    }
    if n > 0 && edges.iter().all(|&(_, j)| j == n - 1) {
        return (Classification::Arrow, false);
    }
    // A forest whose vertices all have degree ≤ 2 is a union of paths.
    if adj.iter().all(|a| a.len() <= 2) {
        return (Classification::Tridiagonal, true);
    }
    let mut common: Option<BTreeSet<usize>> = None;
    for &(i, j) in edges {
        let s = BTreeSet::from([i, j]);
        common = Some(match common {
            None => s,
            Some(c) => c.intersection(&s).copied().collect(),
        });
    }
    if common.is_some_and(|c| !c.is_empty()) {
        return (Classification::Arrow, true);
    }
    (Classification::GeneralForest, false)
}

/// Chains the roots of consecutive components (ordered by smallest member).
pub fn connecting_edges(fa: &ForestAnalysis) -> Result<Vec<(usize, usize)>> {
    if !fa.is_forest {
        return Err(Error::NotAForest);
    }
    Ok(fa
        .roots
        .windows(2)
        .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
        .collect())
}

/// `Σ_{(i,j) ∈ D} (E_ij + E_ji)`.
pub fn perturbation_matrix(d: &[(usize, usize)], n: usize) -> Result<SymMatrix> {
    let mut p = SymMatrix::zeros(n);
    for &(i, j) in d {
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidArgument(format!("bad edge ({i}, {j}) for n = {n}")));
        }
        p.set(i, j, 1.0);
    }
    Ok(p)
}
