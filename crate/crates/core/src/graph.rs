//! Measured communication graphs and their linear algebra.
//!
//! Edges are stored once, as `(i, j)` with `i < j`, in lexicographic order.
//! Each stored edge is oriented from the lower to the higher index, so column
//! `e` of the incidence matrix carries `+1` at `i` and `-1` at `j`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Eigenvalues below `PINV_RELATIVE_TOL * lambda_max` are treated as zero.
pub const PINV_RELATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("a graph needs at least two agents, got {0}")]
    TooFewNodes(usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) has invalid standard deviation {2}")]
    InvalidSigma(usize, usize, f64),
    #[error("graph is not connected")]
    NotConnected,
    #[error("edge probability {0} outside (0, 1]")]
    InvalidEdgeProbability(f64),
    #[error("no connected graph after {0} attempts")]
    ConnectivityRetriesExhausted(usize),
    #[error("second-smallest eigenvalue {lambda:e} below tolerance {tol:e}: graph disconnected or ill-conditioned")]
    NearSingularBeyondNullspace { lambda: f64, tol: f64 },
    #[error("malformed graph file: {0}")]
    Parse(String),
}

/// One undirected edge with its measurement standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub sigma: f64,
}

impl Edge {
    pub fn new(i: usize, j: usize, sigma: f64) -> Self {
        Edge { i, j, sigma }
    }

    /// Inverse variance `1 / sigma^2`.
    pub fn weight(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

/// An unvalidated topology. May be disconnected; used for diagnostics and as
/// the input to [`MeasuredGraph::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawGraph {
    pub n: usize,
    pub edges: Vec<Edge>,
}

impl RawGraph {
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut uf = UnionFind::new(self.n);
        for e in &self.edges {
            if e.i < self.n && e.j < self.n {
                uf.union(e.i, e.j);
            }
        }
        uf.components() == 1
    }

    /// Weighted Laplacian accumulated edge by edge.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            let w = e.weight();
            l[(e.i, e.i)] += w;
            l[(e.j, e.j)] += w;
            l[(e.i, e.j)] -= w;
            l[(e.j, e.i)] -= w;
        }
        l
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    sets: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
            sets: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        self.sets -= 1;
    }

    fn components(&self) -> usize {
        self.sets
    }
}

/// A connected, validated communication graph with per-edge noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredGraph {
    n: usize,
    edges: Vec<Edge>,
    /// `adjacency[i]` lists `(neighbor, edge index)` in ascending neighbor order.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MeasuredGraph {
    /// Validates and canonicalizes `edges` (each pair is reordered to `i < j`
    /// and the list is sorted lexicographically).
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        let mut canon = Vec::new();
        let mut seen = BTreeSet::new();
        for e in edges {
            let (i, j) = if e.i <= e.j { (e.i, e.j) } else { (e.j, e.i) };
            if j >= n {
                return Err(GraphError::NodeOutOfRange(e.i, e.j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if !(e.sigma.is_finite() && e.sigma > 0.0) {
                return Err(GraphError::InvalidSigma(i, j, e.sigma));
            }
            if !seen.insert((i, j)) {
                return Err(GraphError::DuplicateEdge(i, j));
            }
            canon.push(Edge::new(i, j, e.sigma));
        }
        canon.sort_by_key(|e| (e.i, e.j));
        let raw = RawGraph { n, edges: canon };
        if !raw.is_connected() {
            return Err(GraphError::NotConnected);
        }
        let mut adjacency = vec![Vec::new(); n];
        for (k, e) in raw.edges.iter().enumerate() {
            adjacency[e.i].push((e.j, k));
            adjacency[e.j].push((e.i, k));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(MeasuredGraph {
            n,
            edges: raw.edges,
            adjacency,
        })
    }

    /// Convenience constructor from `(i, j, sigma)` triples.
    pub fn from_triples(n: usize, triples: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        Self::new(n, triples.iter().map(|&(i, j, s)| Edge::new(i, j, s)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.sigma).collect()
    }

    /// Neighbors of `i` with the index of the connecting edge.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency
            .get(i)?
            .iter()
            .find(|(nb, _)| *nb == j)
            .map(|&(_, k)| k)
    }

    /// Sign with which edge `e` enters the measurement seen from `from`:
    /// `+1` if `from` is the tail of the stored orientation, `-1` otherwise.
    pub fn orientation_sign(&self, e: usize, from: usize) -> i8 {
        if self.edges[e].i == from {
            1
        } else {
            -1
        }
    }

    pub fn raw(&self) -> RawGraph {
        RawGraph {
            n: self.n,
            edges: self.edges.clone(),
        }
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        incidence_matrix(self)
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        self.raw().laplacian()
    }

    /// Serializes as JSON with 1-based node labels.
    pub fn to_json(&self, seed: Option<u64>) -> String {
        let file = GraphFile {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| (e.i + 1, e.j + 1, e.sigma))
                .collect(),
            seed,
        };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }

    /// Parses the JSON format written by [`MeasuredGraph::to_json`].
    pub fn from_json(text: &str) -> Result<(Self, Option<u64>), GraphError> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
        let mut edges = Vec::with_capacity(file.edges.len());
        for (i, j, sigma) in file.edges {
            if i == 0 || j == 0 {
                return Err(GraphError::Parse("node labels are 1-based".into()));
            }
            edges.push(Edge::new(i - 1, j - 1, sigma));
        }
        Ok((Self::new(file.n, edges)?, file.seed))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Oriented incidence matrix, `n x m` over `{-1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    n: usize,
    m: usize,
    /// Row-major.
    entries: Vec<i8>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.m + col]
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.entries[row * self.m..(row + 1) * self.m]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m, |r, c| f64::from(self.get(r, c)))
    }

    /// Exact integer product `B * v`.
    pub fn mul_int(&self, v: &[i64]) -> Vec<i64> {
        (0..self.n)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(v)
                    .map(|(&b, &x)| i64::from(b) * x)
                    .sum()
            })
            .collect()
    }

    /// `B^T x`.
    pub fn transpose_mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|c| (0..self.n).map(|r| f64::from(self.get(r, c)) * x[r]).sum())
            .collect()
    }
}

pub fn incidence_matrix(g: &MeasuredGraph) -> IncidenceMatrix {
    let (n, m) = (g.n(), g.m());
    let mut entries = vec![0i8; n * m];
    for (k, e) in g.edges().iter().enumerate() {
        entries[e.i * m + k] = 1;
        entries[e.j * m + k] = -1;
    }
    IncidenceMatrix { n, m, entries }
}

/// `L = B diag(1/sigma^2) B^T`, accumulated column by column.
pub fn laplacian(b: &IncidenceMatrix, sigma: &[f64]) -> DMatrix<f64> {
    assert_eq!(b.cols(), sigma.len(), "one sigma per incidence column");
    let n = b.rows();
    let mut l = DMatrix::zeros(n, n);
    for (c, s) in sigma.iter().enumerate() {
        let w = 1.0 / (s * s);
        let ends: Vec<(usize, f64)> = (0..n)
            .filter(|&r| b.get(r, c) != 0)
            .map(|r| (r, f64::from(b.get(r, c))))
            .collect();
        for &(r1, v1) in &ends {
            for &(r2, v2) in &ends {
                l[(r1, r2)] += v1 * w * v2;
            }
        }
    }
    l
}

/// Moore-Penrose pseudoinverse of a connected-graph Laplacian, together with
/// the spectral quantities the step size needs.
#[derive(Debug, Clone)]
pub struct Pseudoinverse {
    pub pinv: DMatrix<f64>,
    /// Largest eigenvalue `lambda_1(L)`.
    pub lambda_max: f64,
    /// Smallest nonzero eigenvalue `lambda_{n-1}(L)`.
    pub lambda_min_nonzero: f64,
    /// All eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

pub fn pseudoinverse(l: &DMatrix<f64>) -> Result<Pseudoinverse, GraphError> {
    let n = l.nrows();
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    let eig = SymmetricEigen::new(l.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let lambda_max = eigenvalues[n - 1];
    let tol = PINV_RELATIVE_TOL * lambda_max.abs();
    // exactly one eigenvalue (the constant vector) may vanish
    let second = eigenvalues[1];
    if lambda_max.is_nan() || lambda_max <= 0.0 || second <= tol {
        return Err(GraphError::NearSingularBeyondNullspace {
            lambda: second,
            tol,
        });
    }
    let mut pinv = DMatrix::zeros(n, n);
    for &k in &order[1..] {
        let v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
        pinv += (&v * v.transpose()) / eig.eigenvalues[k];
    }
    let pinv = (&pinv + pinv.transpose()) * 0.5;
    Ok(Pseudoinverse {
        pinv,
        lambda_max,
        lambda_min_nonzero: second,
        eigenvalues,
    })
}

/// Leader-rooted spanning tree used for reset aggregation and distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResetTree {
    parent: Vec<Option<usize>>,
    /// Edge to the parent and the sign with which it is traversed top-down.
    parent_edge: Vec<Option<(usize, i8)>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    subtree_size: Vec<usize>,
    /// Breadth-first order starting at the leader.
    order: Vec<usize>,
    /// `paths[i]` is the path vector `p_i` of length `m`; `paths[0]` is zero.
    paths: Vec<Vec<i8>>,
    height: usize,
}

impl ResetTree {
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn parent_edge(&self, i: usize) -> Option<(usize, i8)> {
        self.parent_edge[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn subtree_size(&self, i: usize) -> usize {
        self.subtree_size[i]
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn bfs_order(&self) -> &[usize] {
        &self.order
    }

    pub fn path(&self, i: usize) -> &[i8] {
        &self.paths[i]
    }

    /// `P^T`, one row per node (rows are `p_i^T`).
    pub fn path_rows(&self) -> &[Vec<i8>] {
        &self.paths
    }

    /// `P` as an `m x n` real matrix with columns `p_i`.
    pub fn path_matrix(&self) -> DMatrix<f64> {
        let m = self.paths.first().map_or(0, Vec::len);
        DMatrix::from_fn(m, self.n(), |r, c| f64::from(self.paths[c][r]))
    }

    /// Checks `B p_i = e_0 - e_i` for every follower by exact integer products.
    pub fn verify(&self, b: &IncidenceMatrix) -> bool {
        if self.paths[0].iter().any(|&x| x != 0) {
            return false;
        }
        (1..self.n()).all(|i| {
            let p: Vec<i64> = self.paths[i].iter().map(|&x| i64::from(x)).collect();
            let bp = b.mul_int(&p);
            bp.iter().enumerate().all(|(r, &v)| {
                let expect = i64::from(r == 0) - i64::from(r == i);
                v == expect
            })
        })
    }
}

/// Breadth-first spanning tree rooted at agent `0`, visiting neighbors in
/// ascending index order.
pub fn build_reset_tree(g: &MeasuredGraph) -> ResetTree {
    let (n, m) = (g.n(), g.m());
    let mut parent = vec![None; n];
    let mut parent_edge = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut depth = vec![0usize; n];
    let mut paths = vec![vec![0i8; m]; n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([0usize]);
    visited[0] = true;
    while let Some(a) = queue.pop_front() {
        order.push(a);
        for &(b, e) in g.neighbors(a) {
            if visited[b] {
                continue;
            }
            visited[b] = true;
            let sign = g.orientation_sign(e, a);
            parent[b] = Some(a);
            parent_edge[b] = Some((e, sign));
            children[a].push(b);
            depth[b] = depth[a] + 1;
            let mut p = paths[a].clone();
            p[e] += sign;
            paths[b] = p;
            queue.push_back(b);
        }
    }
    let mut subtree_size = vec![1usize; n];
    for &v in order.iter().rev() {
        if let Some(p) = parent[v] {
            subtree_size[p] += subtree_size[v];
        }
    }
    let height = depth.iter().copied().max().unwrap_or(0);
    ResetTree {
        parent,
        parent_edge,
        children,
        depth,
        subtree_size,
        order,
        paths,
        height,
    }
}

/// Parameters for [`random_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomGraphConfig {
    /// Standard deviations drawn uniformly per edge.
    pub sigma_set: Vec<f64>,
    pub max_attempts: usize,
}

impl Default for RandomGraphConfig {
    fn default() -> Self {
        RandomGraphConfig {
            sigma_set: vec![0.1, 0.5, 0.9],
            max_attempts: 1000,
        }
    }
}

/// Erdos-Renyi graph: every pair `i < j` is an edge with probability
/// `p_edge`. Disconnected draws are discarded and redrawn from scratch.
pub fn random_graph(
    n: usize,
    p_edge: f64,
    config: &RandomGraphConfig,
    seed: u64,
) -> Result<MeasuredGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    if !(p_edge > 0.0 && p_edge <= 1.0) {
        return Err(GraphError::InvalidEdgeProbability(p_edge));
    }
    assert!(!config.sigma_set.is_empty(), "sigma set must not be empty");
    let mut rng = rng::seeded(seed);
    for _ in 0..config.max_attempts {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random_bool(p_edge) {
                    let s = config.sigma_set[rng.random_range(0..config.sigma_set.len())];
                    edges.push(Edge::new(i, j, s));
                }
            }
        }
        let raw = RawGraph { n, edges };
        if raw.is_connected() {
            return MeasuredGraph::new(n, raw.edges);
        }
    }
    Err(GraphError::ConnectivityRetriesExhausted(
        config.max_attempts,
    ))
}

/// The five-agent, six-edge example graph (0-based labels).
pub fn example5_graph(sigma: f64) -> MeasuredGraph {
    MeasuredGraph::from_triples(
        5,
        &[
            (0, 1, sigma),
            (0, 2, sigma),
            (0, 3, sigma),
            (1, 2, sigma),
            (2, 4, sigma),
            (3, 4, sigma),
        ],
    )
    .expect("example graph is valid")
}

/// Dense row-major decimal dump, one row per line.
pub fn format_matrix(mat: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..mat.nrows() {
        let row: Vec<String> = (0..mat.ncols())
            .map(|c| format!("{}", mat[(r, c)]))
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn format_int_rows<T: std::fmt::Display>(rows: &[Vec<T>]) -> String {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_laplacian_oracle(b: &IncidenceMatrix, sigma: &[f64]) -> DMatrix<f64> {
        let bm = b.to_matrix();
        let sinv = DMatrix::from_diagonal(&DVector::from_iterator(
            sigma.len(),
            sigma.iter().map(|s| 1.0 / (s * s)),
        ));
        &bm * sinv * bm.transpose()
    }

    #[test]
    fn example5_incidence_matches_printed_matrix() {
        let g = example5_graph(0.5);
        let b = incidence_matrix(&g);
        let expected: [[i8; 6]; 5] = [
            [1, 1, 1, 0, 0, 0],
            [-1, 0, 0, 1, 0, 0],
            [0, -1, 0, -1, 1, 0],
            [0, 0, -1, 0, 0, 1],
            [0, 0, 0, 0, -1, -1],
        ];
        for (r, row) in expected.iter().enumerate() {
            assert_eq!(b.row(r), row);
        }
    }

    #[test]
    fn single_edge_incidence_and_laplacian() {
        let g = MeasuredGraph::from_triples(2, &[(0, 1, 1.0)]).unwrap();
        let b = incidence_matrix(&g);
        assert_eq!(b.row(0), &[1]);
        assert_eq!(b.row(1), &[-1]);
        let l = laplacian(&b, &g.sigmas());
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn laplacian_matches_dense_product() {
        let g = example5_graph(0.5);
        let b = incidence_matrix(&g);
        let l = laplacian(&b, &g.sigmas());
        let oracle = dense_laplacian_oracle(&b, &g.sigmas());
        assert!((&l - &oracle).norm() < 1e-12);
        assert!((&l - g.laplacian()).norm() < 1e-12);
        let ones = DVector::from_element(5, 1.0);
        assert!((&l * ones).amax() < 1e-12);
    }

    #[test]
    fn pseudoinverse_of_single_edge() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let p = pseudoinverse(&l).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((&p.pinv - expected).amax() < 1e-14);
        assert!((p.lambda_max - 2.0).abs() < 1e-14);
        assert!((p.lambda_min_nonzero - 2.0).abs() < 1e-14);
    }

    #[test]
    fn pseudoinverse_rejects_disconnected_laplacian() {
        let raw = RawGraph {
            n: 4,
            edges: vec![Edge::new(0, 1, 1.0), Edge::new(2, 3, 1.0)],
        };
        assert!(matches!(
            pseudoinverse(&raw.laplacian()),
            Err(GraphError::NearSingularBeyondNullspace { .. })
        ));
    }

    #[test]
    fn pseudoinverse_projector_identity_on_random_graphs() {
        let cfg = RandomGraphConfig::default();
        for (seed, n) in [(1u64, 10usize), (2, 40), (3, 100)] {
            let g = random_graph(n, 0.3, &cfg, seed).unwrap();
            let l = g.laplacian();
            let p = pseudoinverse(&l).unwrap();
            let proj = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
            let err = (&p.pinv * &l - &proj).norm() / proj.norm();
            assert!(err < 1e-10, "n={n}: {err}");
            let err2 = (&l * &p.pinv - &proj).norm() / proj.norm();
            assert!(err2 < 1e-10);
            let mp = &p.pinv * &l * &p.pinv - &p.pinv;
            assert!(mp.norm() <= 1e-10 * p.pinv.norm());
            assert!((&p.pinv * DVector::from_element(n, 1.0)).amax() < 1e-10 * p.pinv.amax());
            assert!((&p.pinv - p.pinv.transpose()).amax() == 0.0);
        }
    }

    #[test]
    fn example5_tree_matches_printed_paths() {
        let g = example5_graph(0.5);
        let t = build_reset_tree(&g);
        let expected: [[i8; 6]; 5] = [
            [0, 0, 0, 0, 0, 0],
            [1, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0],
            [0, 0, 1, 0, 0, 0],
            [0, 1, 0, 0, 1, 0],
        ];
        for (i, row) in expected.iter().enumerate() {
            assert_eq!(t.path(i), row);
        }
        assert_eq!(t.height(), 2);
        assert!(t.verify(&incidence_matrix(&g)));
        assert_eq!(t.subtree_size(0), 5);
        assert_eq!(t.subtree_size(2), 2);
        assert_eq!(t.parent(4), Some(2));
    }

    #[test]
    fn star_graph_has_height_one() {
        let g =
            MeasuredGraph::from_triples(5, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0)])
                .unwrap();
        let t = build_reset_tree(&g);
        assert_eq!(t.height(), 1);
        for i in 1..5 {
            assert_eq!(t.path(i).iter().filter(|&&x| x != 0).count(), 1);
        }
    }

    #[test]
    fn tree_paths_satisfy_incidence_identity_on_random_graphs() {
        let cfg = RandomGraphConfig::default();
        for seed in 0..100u64 {
            let n = 5 + (seed as usize % 30);
            let g = random_graph(n, 0.25, &cfg, seed).unwrap();
            let t = build_reset_tree(&g);
            assert!(t.verify(&incidence_matrix(&g)), "seed {seed}");
            assert!(t.height() < n);
            let ecc = (0..n).map(|i| t.depth(i)).max().unwrap();
            assert_eq!(ecc, t.height());
        }
    }

    #[test]
    fn reversed_path_orientation_gets_negative_sign() {
        // 0 - 2 - 1: node 1 hangs below 2, so edge (1, 2) is walked against its orientation
        let g = MeasuredGraph::from_triples(3, &[(0, 2, 1.0), (1, 2, 1.0)]).unwrap();
        let t = build_reset_tree(&g);
        assert_eq!(t.path(1), &[1, -1]);
        assert!(t.verify(&incidence_matrix(&g)));
    }

    #[test]
    fn construction_validates_input() {
        assert_eq!(
            MeasuredGraph::from_triples(1, &[]),
            Err(GraphError::TooFewNodes(1))
        );
        assert_eq!(
            MeasuredGraph::from_triples(3, &[(0, 1, 1.0)]),
            Err(GraphError::NotConnected)
        );
        assert_eq!(
            MeasuredGraph::from_triples(2, &[(0, 1, 1.0), (1, 0, 2.0)]),
            Err(GraphError::DuplicateEdge(0, 1))
        );
        assert_eq!(
            MeasuredGraph::from_triples(2, &[(1, 1, 1.0), (0, 1, 1.0)]),
            Err(GraphError::SelfLoop(1))
        );
        assert!(matches!(
            MeasuredGraph::from_triples(2, &[(0, 1, 0.0)]),
            Err(GraphError::InvalidSigma(..))
        ));
        assert!(matches!(
            MeasuredGraph::from_triples(2, &[(0, 5, 1.0)]),
            Err(GraphError::NodeOutOfRange(..))
        ));
        // unordered input is canonicalized
        let g = MeasuredGraph::from_triples(3, &[(2, 1, 0.5), (1, 0, 0.1)]).unwrap();
        assert_eq!(g.edges()[0], Edge::new(0, 1, 0.1));
        assert_eq!(g.edges()[1], Edge::new(1, 2, 0.5));
    }

    #[test]
    fn random_graph_is_seeded_and_uses_sigma_set() {
        let cfg = RandomGraphConfig::default();
        let a = random_graph(10, 0.7, &cfg, 42).unwrap();
        let b = random_graph(10, 0.7, &cfg, 42).unwrap();
        assert_eq!(a, b);
        for e in a.edges() {
            assert!(cfg.sigma_set.contains(&e.sigma));
        }
        assert_eq!(
            random_graph(10, 0.0, &cfg, 1),
            Err(GraphError::InvalidEdgeProbability(0.0))
        );
        let tight = RandomGraphConfig {
            max_attempts: 3,
            ..cfg
        };
        assert_eq!(
            random_graph(30, 0.01, &tight, 1),
            Err(GraphError::ConnectivityRetriesExhausted(3))
        );
    }

    #[test]
    fn random_graph_edge_count_matches_binomial_moments() {
        // without the connectivity filter the count is Binomial(190, 0.3); the
        // filter only removes the very sparse tail at n = 20, p = 0.3
        let cfg = RandomGraphConfig {
            max_attempts: 10_000,
            ..RandomGraphConfig::default()
        };
        let draws = 1000;
        let total: usize = (0..draws)
            .map(|s| random_graph(20, 0.3, &cfg, s).unwrap().m())
            .sum();
        let mean = total as f64 / draws as f64;
        let expected = 0.3 * 190.0;
        let sd = (190.0f64 * 0.3 * 0.7).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * sd,
            "mean edge count {mean}"
        );
    }

    #[test]
    fn json_round_trip_preserves_incidence() {
        let g = random_graph(12, 0.4, &RandomGraphConfig::default(), 9).unwrap();
        let text = g.to_json(Some(9));
        let (h, seed) = MeasuredGraph::from_json(&text).unwrap();
        assert_eq!(seed, Some(9));
        assert_eq!(incidence_matrix(&g), incidence_matrix(&h));
        assert_eq!(g, h);
        assert!(MeasuredGraph::from_json("{\"n\":2,\"edges\":[[0,1,1.0]]}").is_err());
    }

    #[test]
    fn matrix_dump_is_row_major_decimal() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 2.0]);
        assert_eq!(format_matrix(&m), "1 -0.5\n0.25 2\n");
        assert_eq!(format_int_rows(&[vec![1i8, -1], vec![0, 0]]), "1 -1\n0 0\n");
    }
}
