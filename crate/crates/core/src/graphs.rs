//! Graphs with integer travel times, stationary distributions, and the set of
//! chains that conform to both.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on node counts accepted from untrusted input.
pub const MAX_NODES: usize = 1024;

/// Tolerance on the sum of an input stationary distribution.
pub const PI_SUM_TOL: f64 = 1e-12;

/// Default tolerance used by [`validate_chain`].
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// A directed edge `u -> v` with travel time `w` (in integer time units).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: u32,
}

/// Strongly connected directed graph with positive integer travel times.
///
/// Edges are kept sorted by `(u, v)`; that order is the canonical edge
/// indexing used by the gradient and the projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedDigraph {
    n: usize,
    edges: Vec<Edge>,
    weights: Vec<u32>,
    row_start: Vec<usize>,
}

impl WeightedDigraph {
    pub fn new(n: usize, mut edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "graph must have at least one node".into(),
            ));
        }
        if n > MAX_NODES {
            return Err(Error::TooLarge(format!(
                "{n} nodes exceeds the limit of {MAX_NODES}"
            )));
        }
        let mut weights = vec![0u32; n * n];
        for e in &edges {
            if e.u >= n || e.v >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) has a node index outside [0, {n})",
                    e.u, e.v
                )));
            }
            if e.w == 0 {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) has travel time 0; travel times must be >= 1",
                    e.u, e.v
                )));
            }
            let slot = &mut weights[e.u * n + e.v];
            if *slot != 0 {
                return Err(Error::InvalidParameter(format!(
                    "duplicate edge ({}, {})",
                    e.u, e.v
                )));
            }
            *slot = e.w;
        }
        edges.sort_by_key(|e| (e.u, e.v));
        let mut row_start = vec![0usize; n + 1];
        for e in &edges {
            row_start[e.u + 1] += 1;
        }
        for i in 0..n {
            row_start[i + 1] += row_start[i];
        }
        let graph = Self {
            n,
            edges,
            weights,
            row_start,
        };
        if !graph.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Travel time of `u -> v`, or 0 when the edge is absent.
    pub fn weight(&self, u: usize, v: usize) -> u32 {
        self.weights[u * self.n + v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.weight(u, v) > 0
    }

    /// Outgoing edges of `u`, in increasing target order.
    pub fn out_edges(&self, u: usize) -> &[Edge] {
        &self.edges[self.row_start[u]..self.row_start[u + 1]]
    }

    /// Index of the edge `u -> v` in [`Self::edges`].
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let row = self.out_edges(u);
        row.binary_search_by_key(&v, |e| e.v)
            .ok()
            .map(|k| self.row_start[u] + k)
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.row_start[u + 1] - self.row_start[u]
    }

    pub fn max_out_degree(&self) -> usize {
        (0..self.n).map(|u| self.out_degree(u)).max().unwrap_or(0)
    }

    pub fn w_max(&self) -> u32 {
        self.edges.iter().map(|e| e.w).max().unwrap_or(0)
    }

    /// Travel-time matrix `W` (zero where there is no edge).
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| f64::from(self.weight(i, j)))
    }

    pub fn weight_gcd(&self) -> u32 {
        self.edges.iter().fold(0, |g, e| gcd(g, e.w))
    }

    /// Copy of the graph with all travel times multiplied by `factor`.
    pub fn scaled(&self, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter(
                "scale factor must be positive".into(),
            ));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| {
                e.w.checked_mul(factor)
                    .map(|w| Edge { w, ..*e })
                    .ok_or_else(|| Error::InvalidParameter("travel time overflow".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.n, edges)
    }

    /// Divides every travel time by their gcd. Returns the graph and the gcd.
    pub fn normalized(&self) -> (Self, u32) {
        let g = self.weight_gcd();
        if g <= 1 {
            return (self.clone(), 1);
        }
        let mut out = self.clone();
        for e in &mut out.edges {
            e.w /= g;
        }
        for w in &mut out.weights {
            *w /= g;
        }
        (out, g)
    }

    fn is_strongly_connected(&self) -> bool {
        let forward = reachable_from(self.n, 0, |u| {
            self.out_edges(u).iter().map(|e| e.v).collect::<Vec<_>>()
        });
        if forward.iter().any(|r| !r) {
            return false;
        }
        let mut incoming = vec![Vec::new(); self.n];
        for e in &self.edges {
            incoming[e.v].push(e.u);
        }
        reachable_from(self.n, 0, |u| incoming[u].clone())
            .iter()
            .all(|&r| r)
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn reachable_from<F>(n: usize, start: usize, mut next: F) -> Vec<bool>
where
    F: FnMut(usize) -> Vec<usize>,
{
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(u) = queue.pop_front() {
        for v in next(u) {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Whether the support of `p` (entries above `threshold`) is strongly connected.
pub fn is_irreducible(p: &TransitionMatrix, threshold: f64) -> bool {
    let n = p.n();
    let m = p.matrix();
    let fwd = reachable_from(n, 0, |u| {
        (0..n).filter(|&v| m[(u, v)] > threshold).collect()
    });
    let bwd = reachable_from(n, 0, |v| {
        (0..n).filter(|&u| m[(u, v)] > threshold).collect()
    });
    fwd.iter().chain(bwd.iter()).all(|&r| r)
}

/// Positive probability vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution(Vec<f64>);

impl StationaryDistribution {
    /// Accepts a vector whose entries are positive and sum to 1 within
    /// [`PI_SUM_TOL`]; the stored copy is renormalized exactly.
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        check_positive(&pi)?;
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > PI_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {sum}, not 1 (tolerance {PI_SUM_TOL:e})"
            )));
        }
        Ok(Self(pi.into_iter().map(|x| x / sum).collect()))
    }

    /// Normalizes arbitrary positive weights (e.g. visit counts).
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        check_positive(weights)?;
        let sum: f64 = weights.iter().sum();
        Ok(Self(weights.iter().map(|x| x / sum).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<usize> for StationaryDistribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_positive(pi: &[f64]) -> Result<()> {
    if pi.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if let Some((i, x)) = pi
        .iter()
        .enumerate()
        .find(|(_, x)| !x.is_finite() || **x <= 0.0)
    {
        return Err(Error::InvalidDistribution(format!(
            "entry {i} is {x}; all entries must be positive and finite"
        )));
    }
    Ok(())
}

/// The ε-conforming chains of a graph with a fixed stationary distribution:
/// edge entries at least `eps`, zeros off the edge set, unit row sums and
/// `pi^T P = pi^T`.
#[derive(Debug, Clone)]
pub struct FeasibleSetSpec {
    pub graph: WeightedDigraph,
    pub pi: StationaryDistribution,
    pub eps: f64,
}

impl FeasibleSetSpec {
    pub fn new(graph: WeightedDigraph, pi: StationaryDistribution, eps: f64) -> Result<Self> {
        if pi.len() != graph.node_count() {
            return Err(Error::DimensionMismatch {
                expected: graph.node_count(),
                actual: pi.len(),
            });
        }
        if !eps.is_finite() || eps < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "eps must be >= 0, got {eps}"
            )));
        }
        if eps * graph.max_out_degree() as f64 > 1.0 {
            return Err(Error::Infeasible(format!(
                "eps = {eps} times max out-degree {} exceeds 1; the feasible set is empty",
                graph.max_out_degree()
            )));
        }
        Ok(Self { graph, pi, eps })
    }
}

/// Square real matrix interpreted as a transition matrix. Construction only
/// checks shape and finiteness; feasibility is the job of [`validate_chain`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix(DMatrix<f64>);

impl TransitionMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if p.nrows() != p.ncols() {
            return Err(Error::DimensionMismatch {
                expected: p.nrows(),
                actual: p.ncols(),
            });
        }
        if p.nrows() == 0 {
            return Err(Error::InvalidParameter("empty matrix".into()));
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "matrix has non-finite entries".into(),
            ));
        }
        Ok(Self(p))
    }

    pub fn from_row_major(n: usize, values: &[f64]) -> Result<Self> {
        let expected = n
            .checked_mul(n)
            .ok_or_else(|| Error::TooLarge(format!("n = {n}")))?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, values))
    }

    /// `1 pi^T`: every row equals the stationary distribution.
    pub fn rank_one(pi: &StationaryDistribution) -> Self {
        let n = pi.len();
        Self(DMatrix::from_fn(n, n, |_, j| pi[j]))
    }

    /// Permutation chain sending `i` to `targets[i]`.
    pub fn permutation(targets: &[usize]) -> Result<Self> {
        let n = targets.len();
        let mut hit = vec![false; n];
        for &t in targets {
            if t >= n || std::mem::replace(&mut hit[t], true) {
                return Err(Error::InvalidParameter(
                    "targets are not a permutation".into(),
                ));
            }
        }
        Ok(Self(DMatrix::from_fn(n, n, |i, j| {
            if targets[i] == j {
                1.0
            } else {
                0.0
            }
        })))
    }

    /// Builds a chain from per-edge values in the graph's canonical edge order.
    pub fn from_edge_values(graph: &WeightedDigraph, values: &[f64]) -> Result<Self> {
        if values.len() != graph.edge_count() {
            return Err(Error::DimensionMismatch {
                expected: graph.edge_count(),
                actual: values.len(),
            });
        }
        let n = graph.node_count();
        let mut p = DMatrix::zeros(n, n);
        for (e, &x) in graph.edges().iter().zip(values) {
            p[(e.u, e.v)] = x;
        }
        Self::new(p)
    }

    /// Entries on the graph's edges, in canonical edge order.
    pub fn edge_values(&self, graph: &WeightedDigraph) -> Vec<f64> {
        graph.edges().iter().map(|e| self.0[(e.u, e.v)]).collect()
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.n();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| self.0[(i, j)])
            .collect()
    }

    pub fn is_permutation(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0 || x == 1.0)
            && self
                .0
                .row_iter()
                .all(|r| r.iter().filter(|&&x| x == 1.0).count() == 1)
            && self
                .0
                .column_iter()
                .all(|c| c.iter().filter(|&&x| x == 1.0).count() == 1)
    }
}

impl std::ops::Index<(usize, usize)> for TransitionMatrix {
    type Output = f64;
    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.0[ij]
    }
}

/// Stationary distribution of an irreducible row-stochastic matrix, from the
/// linear system `pi^T (I - P) = 0`, `sum(pi) = 1`.
pub fn stationary_of(p: &TransitionMatrix) -> Result<StationaryDistribution> {
    let n = p.n();
    let mut a = DMatrix::<f64>::identity(n, n) - p.matrix().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stationary system (reducible chain?)".into()))?;
    StationaryDistribution::from_weights(x.as_slice())
}

/// Constraint families checked by [`validate_chain`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    /// Nonzero entry where the graph has no edge.
    Pattern,
    /// Entry outside `[0, 1]`.
    Range,
    RowSums,
    Stationarity,
    /// Edge entry below `eps`.
    LowerBound,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Pattern => "pattern",
            Self::Range => "range",
            Self::RowSums => "row sums",
            Self::Stationarity => "stationarity",
            Self::LowerBound => "eps lower bound",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub family: ConstraintFamily,
    pub worst_residual: f64,
    pub count: usize,
}

/// Worst-case residual per constraint family, plus the families that exceed
/// the tolerance. An empty violation list means the chain is feasible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub pattern: f64,
    pub range: f64,
    pub row_sums: f64,
    pub stationarity: f64,
    pub lower_bound: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_residual(&self) -> f64 {
        [
            self.pattern,
            self.range,
            self.row_sums,
            self.stationarity,
            self.lower_bound,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "feasible (max residual {:.3e})", self.max_residual());
        }
        for v in &self.violations {
            writeln!(
                f,
                "{}: {} violation(s), worst residual {:.3e}",
                v.family, v.count, v.worst_residual
            )?;
        }
        Ok(())
    }
}

pub fn validate_chain(p: &TransitionMatrix, spec: &FeasibleSetSpec) -> Result<ValidationReport> {
    validate_chain_with_tol(p, spec, FEASIBILITY_TOL)
}

pub fn validate_chain_with_tol(
    p: &TransitionMatrix,
    spec: &FeasibleSetSpec,
    tol: f64,
) -> Result<ValidationReport> {
    let n = spec.graph.node_count();
    if p.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: p.n(),
        });
    }
    let m = p.matrix();
    let pi = spec.pi.as_slice();
    let mut tally = [(0.0f64, 0usize); 5];
    let mut record = |family: usize, residual: f64| {
        let slot = &mut tally[family];
        slot.0 = slot.0.max(residual);
        if residual > tol {
            slot.1 += 1;
        }
    };
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            let x = m[(i, j)];
            row += x;
            if spec.graph.has_edge(i, j) {
                record(4, (spec.eps - x).max(0.0));
            } else {
                record(0, x.abs());
            }
            record(1, (-x).max(0.0).max(x - 1.0));
        }
        record(2, (row - 1.0).abs());
    }
    for j in 0..n {
        let flow: f64 = (0..n).map(|i| pi[i] * m[(i, j)]).sum();
        record(3, (flow - pi[j]).abs());
    }
    let families = [
        ConstraintFamily::Pattern,
        ConstraintFamily::Range,
        ConstraintFamily::RowSums,
        ConstraintFamily::Stationarity,
        ConstraintFamily::LowerBound,
    ];
    let violations = families
        .iter()
        .zip(tally.iter())
        .filter(|(_, (_, count))| *count > 0)
        .map(|(&family, &(worst_residual, count))| Violation {
            family,
            worst_residual,
            count,
        })
        .collect();
    Ok(ValidationReport {
        tolerance: tol,
        pattern: tally[0].0,
        range: tally[1].0,
        row_sums: tally[2].0,
        stationarity: tally[3].0,
        lower_bound: tally[4].0,
        violations,
    })
}

/// Uniform random entries on the edge set, each row scaled to sum to one.
pub(crate) fn random_edge_matrix(graph: &WeightedDigraph, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.node_count();
    let mut q = DMatrix::zeros(n, n);
    for u in 0..n {
        let edges = graph.out_edges(u);
        let draws: Vec<f64> = edges.iter().map(|_| rng.gen::<f64>()).collect();
        let total: f64 = draws.iter().sum();
        for (e, x) in edges.iter().zip(draws) {
            q[(e.u, e.v)] = if total > 0.0 {
                x / total
            } else {
                1.0 / edges.len() as f64
            };
        }
    }
    q
}

/// Projects a random row-normalized nonnegative matrix on the edge set onto
/// the feasible set. Deterministic in `seed`.
pub fn random_feasible_chain(spec: &FeasibleSetSpec, seed: u64) -> Result<TransitionMatrix> {
    let q = random_edge_matrix(&spec.graph, seed);
    let p = crate::optimize::project_feasible(&q, spec)?;
    let report = validate_chain(&p, spec)?;
    if !report.is_feasible() {
        return Err(Error::Infeasible(format!(
            "projected random chain is not feasible: {report}"
        )));
    }
    Ok(p)
}

/// Built-in graph families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// Bidirected cycle with a self-loop at every node.
    Ring { n: usize },
    /// 4-neighbour grid with a self-loop at every node.
    Grid { rows: usize, cols: usize },
    /// All `n^2` edges including self-loops.
    Complete { n: usize },
    /// 12-location San Francisco crime map with quantized by-car travel times.
    SfCrimeMap,
}

impl FromStr for GraphKind {
    type Err = Error;

    /// Accepts `ring:8`, `grid:4x4`, `complete:4` and `sf`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown graph specifier '{s}'"));
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let num = |x: &str| x.trim().parse::<usize>().map_err(|_| bad());
        match (name.trim(), arg) {
            ("ring", Some(a)) => Ok(Self::Ring { n: num(a)? }),
            ("complete", Some(a)) => Ok(Self::Complete { n: num(a)? }),
            ("grid", Some(a)) => {
                let (r, c) = a.split_once('x').ok_or_else(bad)?;
                Ok(Self::Grid {
                    rows: num(r)?,
                    cols: num(c)?,
                })
            }
            ("sf", None) | ("sf_crime_map", None) => Ok(Self::SfCrimeMap),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ring { n } => write!(f, "ring:{n}"),
            Self::Grid { rows, cols } => write!(f, "grid:{rows}x{cols}"),
            Self::Complete { n } => write!(f, "complete:{n}"),
            Self::SfCrimeMap => f.write_str("sf"),
        }
    }
}

/// Quantized by-car travel times (minutes) between locations A..L; row is the
/// origin.
pub const SF_TRAVEL_TIMES: [[u32; 12]; 12] = [
    [1, 3, 3, 5, 4, 6, 3, 5, 7, 4, 6, 6],
    [3, 1, 5, 4, 2, 4, 4, 5, 5, 3, 5, 5],
    [3, 5, 1, 7, 6, 8, 3, 4, 9, 4, 8, 7],
    [6, 4, 7, 1, 5, 6, 4, 7, 5, 6, 6, 7],
    [4, 3, 6, 5, 1, 3, 5, 5, 6, 3, 4, 4],
    [6, 4, 8, 5, 3, 1, 6, 7, 3, 6, 2, 3],
    [2, 5, 3, 5, 6, 7, 1, 5, 7, 5, 7, 8],
    [3, 5, 2, 7, 6, 7, 3, 1, 9, 3, 7, 5],
    [8, 6, 9, 4, 6, 4, 6, 9, 1, 8, 5, 7],
    [4, 3, 4, 6, 3, 5, 5, 3, 7, 1, 5, 3],
    [6, 4, 8, 6, 4, 2, 6, 6, 4, 5, 1, 3],
    [6, 4, 6, 6, 3, 3, 6, 4, 5, 3, 2, 1],
];

/// Recorded crimes per location; the visit frequency is `count / 866`.
pub const SF_CRIME_COUNTS: [u32; 12] = [133, 90, 89, 87, 83, 83, 74, 64, 48, 43, 38, 34];

pub fn build_graph(kind: GraphKind) -> Result<(WeightedDigraph, StationaryDistribution)> {
    match kind {
        GraphKind::Ring { n } => {
            if n < 3 {
                return Err(Error::InvalidParameter(format!(
                    "ring needs n >= 3, got {n}"
                )));
            }
            let mut edges = Vec::with_capacity(3 * n);
            for i in 0..n {
                for v in [i, (i + 1) % n, (i + n - 1) % n] {
                    edges.push(Edge { u: i, v, w: 1 });
                }
            }
            let graph = WeightedDigraph::new(n, edges)?;
            let pi = if n == 8 {
                let w: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect();
                StationaryDistribution::from_weights(&w)?
            } else {
                StationaryDistribution::uniform(n)?
            };
            Ok((graph, pi))
        }
        GraphKind::Grid { rows, cols } => {
            if rows < 2 || cols < 2 {
                return Err(Error::InvalidParameter(format!(
                    "grid needs rows, cols >= 2, got {rows}x{cols}"
                )));
            }
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= MAX_NODES)
                .ok_or_else(|| Error::TooLarge(format!("grid {rows}x{cols}")))?;
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let u = r * cols + c;
                    edges.push(Edge { u, v: u, w: 1 });
                    if r > 0 {
                        edges.push(Edge {
                            u,
                            v: u - cols,
                            w: 1,
                        });
                    }
                    if r + 1 < rows {
                        edges.push(Edge {
                            u,
                            v: u + cols,
                            w: 1,
                        });
                    }
                    if c > 0 {
                        edges.push(Edge { u, v: u - 1, w: 1 });
                    }
                    if c + 1 < cols {
                        edges.push(Edge { u, v: u + 1, w: 1 });
                    }
                }
            }
            let graph = WeightedDigraph::new(n, edges)?;
            // out-degree counts the self-loop
            let w: Vec<f64> = (0..n).map(|u| graph.out_degree(u) as f64).collect();
            let pi = StationaryDistribution::from_weights(&w)?;
            Ok((graph, pi))
        }
        GraphKind::Complete { n } => {
            if n < 2 {
                return Err(Error::InvalidParameter(format!(
                    "complete graph needs n >= 2, got {n}"
                )));
            }
            if n > MAX_NODES {
                return Err(Error::TooLarge(format!("{n} nodes")));
            }
            let edges = (0..n)
                .flat_map(|u| (0..n).map(move |v| Edge { u, v, w: 1 }))
                .collect();
            Ok((
                WeightedDigraph::new(n, edges)?,
                StationaryDistribution::uniform(n)?,
            ))
        }
        GraphKind::SfCrimeMap => {
            let edges = (0..12)
                .flat_map(|u| {
                    (0..12).map(move |v| Edge {
                        u,
                        v,
                        w: SF_TRAVEL_TIMES[u][v],
                    })
                })
                .collect();
            let counts: Vec<f64> = SF_CRIME_COUNTS.iter().map(|&c| f64::from(c)).collect();
            Ok((
                WeightedDigraph::new(12, edges)?,
                StationaryDistribution::from_weights(&counts)?,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closure(n: usize, adj: &[Vec<bool>]) -> Vec<Vec<bool>> {
        let mut r = adj.to_vec();
        for i in 0..n {
            r[i][i] = true;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if r[i][k] && r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
        r
    }

    fn brute_strongly_connected(g: &WeightedDigraph) -> bool {
        let n = g.node_count();
        let adj: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..n).map(|j| g.has_edge(i, j)).collect())
            .collect();
        closure(n, &adj).iter().all(|row| row.iter().all(|&x| x))
    }

    #[test]
    fn builders_are_strongly_connected() {
        let kinds = [
            GraphKind::Ring { n: 3 },
            GraphKind::Ring { n: 8 },
            GraphKind::Grid { rows: 2, cols: 2 },
            GraphKind::Grid { rows: 2, cols: 4 },
            GraphKind::Complete { n: 2 },
            GraphKind::Complete { n: 5 },
        ];
        for kind in kinds {
            let (g, pi) = build_graph(kind).unwrap();
            assert!(g.node_count() <= 8);
            assert!(brute_strongly_connected(&g), "{kind}");
            assert!((pi.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn disconnected_edge_sets_are_rejected_like_the_brute_force_oracle() {
        // every digraph on 3 nodes without self-loops
        let pairs: Vec<(usize, usize)> = (0..3)
            .flat_map(|u| (0..3).map(move |v| (u, v)))
            .filter(|(u, v)| u != v)
            .collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<Edge> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &(u, v))| Edge { u, v, w: 1 })
                .collect();
            let mut adj = vec![vec![false; 3]; 3];
            for e in &edges {
                adj[e.u][e.v] = true;
            }
            let expect = closure(3, &adj).iter().all(|r| r.iter().all(|&x| x));
            assert_eq!(
                WeightedDigraph::new(3, edges).is_ok(),
                expect,
                "mask {mask:b}"
            );
        }
    }

    #[test]
    fn grid_4x4_has_degree_proportional_pi() {
        let (g, pi) = build_graph(GraphKind::Grid { rows: 4, cols: 4 }).unwrap();
        assert_eq!(g.node_count(), 16);
        assert_eq!(g.edge_count(), 16 + 48);
        assert!((pi.min() - 3.0 / 64.0).abs() < 1e-15);
        assert!((pi[5] - 5.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn complete_two_nodes() {
        let (g, pi) = build_graph(GraphKind::Complete { n: 2 }).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 4);
        assert_eq!(pi.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn sf_crime_map_constants() {
        let (g, pi) = build_graph(GraphKind::SfCrimeMap).unwrap();
        assert_eq!(g.w_max(), 9);
        assert_eq!(g.weight_gcd(), 1);
        assert_eq!(g.edge_count(), 144);
        assert!((pi.min() - 34.0 / 866.0).abs() < 1e-15);
        assert!((pi[0] - 133.0 / 866.0).abs() < 1e-15);
    }

    #[test]
    fn ring_default_distribution_alternates() {
        let (_, pi) = build_graph(GraphKind::Ring { n: 8 }).unwrap();
        assert!((pi[0] - 1.0 / 12.0).abs() < 1e-15);
        assert!((pi[1] - 1.0 / 6.0).abs() < 1e-15);
        let (_, pi) = build_graph(GraphKind::Ring { n: 5 }).unwrap();
        assert!((pi[3] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn invalid_sizes() {
        assert!(build_graph(GraphKind::Ring { n: 2 }).is_err());
        assert!(build_graph(GraphKind::Grid { rows: 1, cols: 4 }).is_err());
        assert!(build_graph(GraphKind::Complete { n: 1 }).is_err());
    }

    #[test]
    fn graph_kind_round_trips_through_strings() {
        for s in ["ring:8", "grid:4x4", "complete:3", "sf"] {
            assert_eq!(s.parse::<GraphKind>().unwrap().to_string(), s);
        }
        assert!("grid:4".parse::<GraphKind>().is_err());
        assert!("torus:3".parse::<GraphKind>().is_err());
    }

    #[test]
    fn stationary_rejects_bad_vectors() {
        assert!(StationaryDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(StationaryDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(StationaryDistribution::new(vec![1.0, 0.0]).is_err());
        assert!(StationaryDistribution::new(vec![]).is_err());
        assert!(StationaryDistribution::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn eps_too_large_is_empty() {
        let (g, pi) = build_graph(GraphKind::Ring { n: 4 }).unwrap();
        assert!(FeasibleSetSpec::new(g.clone(), pi.clone(), 0.34).is_err());
        assert!(FeasibleSetSpec::new(g, pi, 0.33).is_ok());
    }

    #[test]
    fn two_cycle_permutation_is_feasible_on_uniform_ring() {
        let (g, pi) = build_graph(GraphKind::Ring { n: 4 }).unwrap();
        let spec = FeasibleSetSpec::new(g, pi, 0.0).unwrap();
        let p = TransitionMatrix::permutation(&[1, 0, 3, 2]).unwrap();
        let report = validate_chain(&p, &spec).unwrap();
        assert!(report.is_feasible(), "{report}");
        assert_eq!(report.max_residual(), 0.0);
    }

    #[test]
    fn rank_one_on_ring_violates_pattern() {
        let (g, pi) = build_graph(GraphKind::Ring { n: 8 }).unwrap();
        let spec = FeasibleSetSpec::new(g, pi.clone(), 0.0).unwrap();
        let p = TransitionMatrix::rank_one(&pi);
        let report = validate_chain(&p, &spec).unwrap();
        assert_eq!(report.violations.len(), 1);
        let v = report.violations[0];
        assert_eq!(v.family, ConstraintFamily::Pattern);
        assert_eq!(v.count, 64 - 24);
        assert!((v.worst_residual - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn validation_reports_each_family() {
        let (g, pi) = build_graph(GraphKind::Complete { n: 2 }).unwrap();
        let spec = FeasibleSetSpec::new(g, pi, 0.2).unwrap();
        let p = TransitionMatrix::from_row_major(2, &[1.1, -0.1, 0.1, 0.8]).unwrap();
        let report = validate_chain(&p, &spec).unwrap();
        let families: Vec<_> = report.violations.iter().map(|v| v.family).collect();
        assert_eq!(
            families,
            vec![
                ConstraintFamily::Range,
                ConstraintFamily::RowSums,
                ConstraintFamily::Stationarity,
                ConstraintFamily::LowerBound
            ]
        );
        let wrong = TransitionMatrix::from_row_major(3, &[0.0; 9]).unwrap();
        assert!(matches!(
            validate_chain(&wrong, &spec),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn random_feasible_chain_is_deterministic_and_feasible() {
        let (g, pi) = build_graph(GraphKind::Ring { n: 8 }).unwrap();
        let spec = FeasibleSetSpec::new(g, pi, 0.0).unwrap();
        let a = random_feasible_chain(&spec, 1).unwrap();
        let b = random_feasible_chain(&spec, 1).unwrap();
        let c = random_feasible_chain(&spec, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(validate_chain(&c, &spec).unwrap().is_feasible());
    }

    #[test]
    fn random_chain_on_complete_graph_respects_floor() {
        // at eps = 0 exact projections can sit on the boundary
        let (g, pi) = build_graph(GraphKind::Complete { n: 4 }).unwrap();
        let spec = FeasibleSetSpec::new(g, pi, 0.01).unwrap();
        for seed in 0..5 {
            let p = random_feasible_chain(&spec, seed).unwrap();
            assert!(validate_chain(&p, &spec).unwrap().is_feasible());
            assert!(
                p.matrix().iter().all(|&x| x >= 0.01 - 1e-9),
                "seed {seed}: {}",
                p.matrix()
            );
        }
    }

    #[test]
    fn scaling_and_normalization() {
        let (g, _) = build_graph(GraphKind::SfCrimeMap).unwrap();
        let doubled = g.scaled(2).unwrap();
        assert_eq!(doubled.weight_gcd(), 2);
        let (back, factor) = doubled.normalized();
        assert_eq!(factor, 2);
        assert_eq!(back, g);
    }

    #[test]
    fn edge_index_matches_canonical_order() {
        let (g, _) = build_graph(GraphKind::Grid { rows: 3, cols: 3 }).unwrap();
        for (k, e) in g.edges().iter().enumerate() {
            assert_eq!(g.edge_index(e.u, e.v), Some(k));
        }
        assert_eq!(g.edge_index(0, 8), None);
    }

    #[test]
    fn stationary_of_recovers_pi() {
        let p = TransitionMatrix::from_row_major(2, &[0.7, 0.3, 0.6, 0.4]).unwrap();
        let pi = stationary_of(&p).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-14);
    }
}
