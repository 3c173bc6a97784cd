//! First-hitting-time probabilities under travel times.
//!
//! `F_k(i, j)` is the probability that a walk started at `i` reaches `j` for
//! the first time after exactly `k` accumulated time units. It obeys the
//! delayed recursion
//!
//! ```text
//! F_k(i,j) = p_ij 1{k = w_ij} + sum_{h != j} p_ih F_{k - w_ih}(h, j),   F_k = 0 for k <= 0,
//! ```
//!
//! which for unit travel times collapses to `F_k = P F_{k-1}` with column `j`
//! of the right factor's block zeroed, started from `F_1 = P`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chain::{ChainEdges, CompensatedSum, HittingRecursion};
use crate::error::{Error, Result};
use crate::graphs::{TransitionMatrix, WeightedDigraph};
use crate::spectral::{spectral_radius, DenseOp, NonnegOperator};

/// Slack allowed for negative tail mass from rounding.
pub const TAIL_TOL: f64 = 1e-12;

/// Largest `w_max * n^2` for which [`AugmentedSystem`] is materialized.
pub const MAX_DENSE_AUGMENTED: usize = 4096;

/// `F_1 ..= F_K`.
#[derive(Debug, Clone)]
pub struct HittingSeries {
    matrices: Vec<DMatrix<f64>>,
}

impl HittingSeries {
    pub fn horizon(&self) -> usize {
        self.matrices.len()
    }

    /// `F_k` for `1 <= k <= K`.
    pub fn matrix(&self, k: usize) -> Option<&DMatrix<f64>> {
        k.checked_sub(1).and_then(|idx| self.matrices.get(idx))
    }

    /// `F_k(i, j)`, zero for `k <= 0`.
    pub fn entry(&self, k: i64, i: usize, j: usize) -> f64 {
        if k <= 0 {
            return 0.0;
        }
        self.matrix(k as usize).map_or(0.0, |f| f[(i, j)])
    }

    /// `sum_{k <= K} F_k`.
    pub fn partial_sum(&self) -> DMatrix<f64> {
        let n = self.matrices.first().map_or(0, |m| m.nrows());
        self.matrices
            .iter()
            .fold(DMatrix::zeros(n, n), |acc, f| acc + f)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.matrices.iter()
    }
}

pub fn hitting_series(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    horizon: usize,
) -> Result<HittingSeries> {
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let chain = ChainEdges::new(p, graph)?;
    let n = chain.n;
    let mut rec = HittingRecursion::new(&chain);
    let matrices = (0..horizon)
        .map(|_| DMatrix::from_row_slice(n, n, rec.step()))
        .collect();
    Ok(HittingSeries { matrices })
}

/// Distribution of the return time `T_ii` up to a horizon `K`.
///
/// `probs[k - 1] = P(T_ii = k)` for `k = 1..=K`; `tail_mass = P(T_ii > K)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnTimeDistribution {
    pub node: usize,
    pub probs: Vec<f64>,
    pub tail_mass: f64,
}

impl ReturnTimeDistribution {
    pub fn new(node: usize, probs: Vec<f64>) -> Result<Self> {
        let mut sum = CompensatedSum::default();
        for &x in &probs {
            sum.add(x);
        }
        let mut tail_mass = 1.0 - sum.value();
        if tail_mass < 0.0 {
            if tail_mass < -TAIL_TOL {
                return Err(Error::Numerical(format!(
                    "return-time probabilities of node {node} sum to {} > 1",
                    sum.value()
                )));
            }
            tail_mass = 0.0;
        }
        Ok(Self {
            node,
            probs,
            tail_mass,
        })
    }

    pub fn horizon(&self) -> usize {
        self.probs.len()
    }

    /// `P(T = k)`; zero for `k = 0` and beyond the horizon.
    pub fn prob(&self, k: usize) -> f64 {
        k.checked_sub(1)
            .and_then(|i| self.probs.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    /// `P(T > s)` for `0 <= s <= K`.
    pub fn survival(&self, s: usize) -> f64 {
        let mut acc = CompensatedSum::default();
        acc.add(self.tail_mass);
        for &x in self.probs.iter().skip(s) {
            acc.add(x);
        }
        acc.value()
    }

    pub fn mean_truncated(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    /// `k,prob` rows followed by `tail,<mass>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,prob\n");
        for (i, p) in self.probs.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i + 1, p);
        }
        let _ = writeln!(out, "tail,{}", self.tail_mass);
        out
    }
}

pub fn return_time_distribution(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    node: usize,
    horizon: usize,
) -> Result<ReturnTimeDistribution> {
    if node >= graph.node_count() {
        return Err(Error::InvalidParameter(format!(
            "node {node} out of range for {} nodes",
            graph.node_count()
        )));
    }
    let mut all = return_time_distributions(p, graph, horizon)?;
    Ok(all.swap_remove(node))
}

/// Return-time distributions of every node, in a single pass.
pub fn return_time_distributions(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    horizon: usize,
) -> Result<Vec<ReturnTimeDistribution>> {
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let chain = ChainEdges::new(p, graph)?;
    let n = chain.n;
    let mut probs = vec![Vec::with_capacity(horizon); n];
    let mut rec = HittingRecursion::new(&chain);
    for _ in 0..horizon {
        let f = rec.step();
        for (i, v) in probs.iter_mut().enumerate() {
            v.push(f[i * n + i]);
        }
    }
    probs
        .into_iter()
        .enumerate()
        .map(|(i, v)| ReturnTimeDistribution::new(i, v))
        .collect()
}

/// `max_i rho(P E_i)`, where `E_i` zeroes column `i`; the spectral radius of
/// the unit-travel-time system matrix.
pub fn substochastic_spectral_radius(p: &TransitionMatrix) -> Result<f64> {
    let n = p.n();
    let mut block = vec![0.0; n * n];
    let mut rho = 0.0f64;
    for c in 0..n {
        for i in 0..n {
            for j in 0..n {
                block[i * n + j] = if j == c { 0.0 } else { p[(i, j)].max(0.0) };
            }
        }
        rho = rho.max(spectral_radius(&DenseOp { n, data: &block })?);
    }
    Ok(rho)
}

/// Companion operator of the delayed recursion restricted to target column
/// `c`. State is `[x_1, ..., x_wmax]`, `x_1` the most recent.
struct CompanionBlock<'a> {
    chain: &'a ChainEdges,
    target: usize,
}

impl NonnegOperator for CompanionBlock<'_> {
    fn dim(&self) -> usize {
        self.chain.w_max * self.chain.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let c = self.chain;
        let n = c.n;
        for i in 0..n {
            let mut acc = 0.0;
            for e in c.row_start[i]..c.row_start[i + 1] {
                let v = c.targets[e];
                if v != self.target {
                    acc += c.probs[e].max(0.0) * x[(c.weights[e] - 1) * n + v];
                }
            }
            y[i] = acc;
        }
        y[n..].copy_from_slice(&x[..x.len() - n]);
    }
}

/// `rho(Psi)` of the augmented delay-free system, computed matrix-free.
///
/// `Psi` decouples into one block companion matrix per target column, so the
/// radius is the maximum over those blocks.
pub fn augmented_spectral_radius(p: &TransitionMatrix, graph: &WeightedDigraph) -> Result<f64> {
    let chain = ChainEdges::new(p, graph)?;
    let mut rho = 0.0f64;
    for target in 0..chain.n {
        rho = rho.max(spectral_radius(&CompanionBlock {
            chain: &chain,
            target,
        })?);
    }
    Ok(rho)
}

/// Dense `Psi` and `Phi_h` of the augmented system, in the column-major `vec`
/// convention (`vec(F)[j * n + i] = F(i, j)`). Only for small instances.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub psi: DMatrix<f64>,
    pub phi: Vec<DMatrix<f64>>,
}

impl AugmentedSystem {
    pub fn build(p: &TransitionMatrix, graph: &WeightedDigraph) -> Result<Self> {
        let chain = ChainEdges::new(p, graph)?;
        let n = chain.n;
        let nn = n * n;
        let w_max = chain.w_max;
        let dim = w_max * nn;
        if dim > MAX_DENSE_AUGMENTED {
            return Err(Error::TooLarge(format!(
                "augmented system of dimension {dim} exceeds {MAX_DENSE_AUGMENTED}"
            )));
        }
        let mut phi = vec![DMatrix::zeros(nn, nn); w_max];
        for i in 0..n {
            for e in chain.row_start[i]..chain.row_start[i + 1] {
                let j = chain.targets[e];
                let h = chain.weights[e];
                for c in (0..n).filter(|&c| c != j) {
                    phi[h - 1][(c * n + i, c * n + j)] += chain.probs[e];
                }
            }
        }
        let mut psi = DMatrix::zeros(dim, dim);
        for (h, block) in phi.iter().enumerate() {
            psi.view_mut((0, h * nn), (nn, nn)).copy_from(block);
        }
        for b in 1..w_max {
            psi.view_mut((b * nn, (b - 1) * nn), (nn, nn))
                .fill_with_identity();
        }
        Ok(Self { psi, phi })
    }
}

/// Expected first-hitting times `E[T_ij]` including travel times.
///
/// Column `j` solves `m = (P o W) 1 + P E_j m`.
pub fn mean_first_passage(p: &TransitionMatrix, graph: &WeightedDigraph) -> Result<DMatrix<f64>> {
    let n = graph.node_count();
    if p.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: p.n(),
        });
    }
    let pm = p.matrix();
    let step_time = DVector::from_fn(n, |i, _| {
        (0..n)
            .map(|h| pm[(i, h)] * f64::from(graph.weight(i, h)))
            .sum::<f64>()
    });
    let floor = step_time.min() * (1.0 - 1e-9);
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut a = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for h in (0..n).filter(|&h| h != j) {
                a[(i, h)] -= pm[(i, h)];
            }
        }
        let col = a.lu().solve(&step_time).ok_or_else(|| {
            Error::Singular(format!(
                "first-passage system for target {j} (reducible chain?)"
            ))
        })?;
        // a passage lasts at least one step; anything shorter is cancellation
        // in a numerically singular system
        if col.iter().any(|&x| !x.is_finite() || x < floor) {
            return Err(Error::Singular(format!(
                "first-passage system for target {j} is numerically singular"
            )));
        }
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Path-enumeration ground truth for `P(T_ij = k)`, `k = 1..=K`.
///
/// Sums the probabilities of every walk from `i` that ends at its first visit
/// to `j` with total travel time at most `K`.
pub fn oracle_first_hitting(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    from: usize,
    to: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    let n = graph.node_count();
    if n > 6 || horizon > 12 {
        return Err(Error::TooLarge(format!(
            "path enumeration limited to n <= 6 and K <= 12 (got n = {n}, K = {horizon})"
        )));
    }
    if from >= n || to >= n {
        return Err(Error::InvalidParameter("node out of range".into()));
    }
    if p.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: p.n(),
        });
    }
    fn walk(
        p: &TransitionMatrix,
        graph: &WeightedDigraph,
        node: usize,
        time: usize,
        prob: f64,
        to: usize,
        out: &mut [f64],
    ) {
        for e in graph.out_edges(node) {
            let pe = p[(e.u, e.v)];
            let t = time + e.w as usize;
            if pe == 0.0 || t > out.len() {
                continue;
            }
            if e.v == to {
                out[t - 1] += prob * pe;
            } else {
                walk(p, graph, e.v, t, prob * pe, to, out);
            }
        }
    }
    let mut out = vec![0.0; horizon];
    walk(p, graph, from, 0, 1.0, to, &mut out);
    Ok(out)
}

pub fn oracle_return_distribution(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    node: usize,
    horizon: usize,
) -> Result<ReturnTimeDistribution> {
    let probs = oracle_first_hitting(p, graph, node, node, horizon)?;
    ReturnTimeDistribution::new(node, probs)
}
