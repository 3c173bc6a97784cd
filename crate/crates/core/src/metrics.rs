//! Scalar functionals of a chain: return-time entropy (certified, truncated
//! and conditional), entropy rate, Kemeny constant, bounds and closed forms.
//!
//! All logarithms are natural; `0 log 0 = 0`.

use serde::{Deserialize, Serialize};

use crate::chain::{neg_x_log_x, ChainEdges, CompensatedSum, HittingRecursion};
use crate::error::{Error, Result};
use crate::graphs::{StationaryDistribution, TransitionMatrix, WeightedDigraph};
use crate::hitting::{augmented_spectral_radius, mean_first_passage};

/// Maximum stationarity residual accepted by [`entropy_rate`].
pub const STATIONARITY_TOL: f64 = 1e-6;

/// Default tolerance of the certified estimate used by [`ChainMetrics`].
pub const DEFAULT_ESTIMATE_TOL: f64 = 1e-9;

/// Hard cap on the number of recursion steps of [`return_entropy_estimate`].
pub const MAX_ESTIMATE_STEPS: usize = 20_000_000;

/// Relative distance under which `w_max / (eta pi_min)` is treated as an
/// integer before taking the ceiling.
const CEIL_SNAP: f64 = 1e-9;

/// Every metric of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMetrics {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "J_trunc")]
    pub j_trunc: f64,
    #[serde(rename = "J_cond")]
    pub j_cond: f64,
    #[serde(rename = "H_rate")]
    pub h_rate: f64,
    pub kemeny: f64,
    pub expected_returns: Vec<f64>,
    pub eta: f64,
    #[serde(rename = "N_eta")]
    pub n_eta: usize,
}

impl ChainMetrics {
    pub fn compute(
        p: &TransitionMatrix,
        graph: &WeightedDigraph,
        pi: &StationaryDistribution,
        eta: f64,
    ) -> Result<Self> {
        check_pi(graph, pi)?;
        let n_eta = duration_for_accuracy(eta, pi.min(), graph.w_max())?;
        let stats = truncated_stats(p, graph, n_eta)?;
        let (j, _) = return_entropy_estimate(p, graph, pi, DEFAULT_ESTIMATE_TOL)?;
        Ok(Self {
            j,
            j_trunc: weighted(pi, stats.iter().map(|s| s.entropy)),
            j_cond: conditional_from_stats(pi, &stats)?,
            h_rate: entropy_rate(p, pi)?,
            kemeny: kemeny_constant(p, graph, pi)?,
            expected_returns: expected_return_times(p, graph, pi)?,
            eta,
            n_eta,
        })
    }
}

/// `N_eta = ceil(w_max / (eta pi_min)) - 1`.
pub fn duration_for_accuracy(eta: f64, pi_min: f64, w_max: u32) -> Result<usize> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eta = {eta} must lie in (0, 1)"
        )));
    }
    if !(pi_min > 0.0 && pi_min <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "pi_min = {pi_min} must lie in (0, 1]"
        )));
    }
    if w_max < 1 {
        return Err(Error::InvalidParameter("w_max must be >= 1".into()));
    }
    let x = f64::from(w_max) / (eta * pi_min);
    if !x.is_finite() || x > 1e15 {
        return Err(Error::TooLarge(format!(
            "duration {x} is not representable"
        )));
    }
    let r = x.round();
    let ceil = if (x - r).abs() <= CEIL_SNAP * x {
        r
    } else {
        x.ceil()
    };
    Ok((ceil as usize).saturating_sub(1).max(1))
}

/// Per-node truncated entropy `-sum_k F log F` and mass `sum_k F` of `T_ii`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedStats {
    pub entropy: f64,
    pub mass: f64,
}

pub fn truncated_stats(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    horizon: usize,
) -> Result<Vec<TruncatedStats>> {
    let chain = ChainEdges::new(p, graph)?;
    let n = chain.n;
    let mut ent = vec![CompensatedSum::default(); n];
    let mut mass = vec![CompensatedSum::default(); n];
    let mut rec = HittingRecursion::new(&chain);
    for _ in 0..horizon {
        let f = rec.step();
        for i in 0..n {
            let x = f[i * n + i];
            ent[i].add(neg_x_log_x(x));
            mass[i].add(x);
        }
    }
    Ok(ent
        .iter()
        .zip(&mass)
        .map(|(e, m)| TruncatedStats {
            entropy: e.value(),
            mass: m.value(),
        })
        .collect())
}

/// `-sum_i pi_i sum_{k <= N} F_k(i,i) log F_k(i,i)` for an explicit `N`.
pub fn truncated_return_entropy_at(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    horizon: usize,
) -> Result<f64> {
    check_pi(graph, pi)?;
    let stats = truncated_stats(p, graph, horizon)?;
    Ok(weighted(pi, stats.iter().map(|s| s.entropy)))
}

/// Truncated return-time entropy at duration `N_eta`.
pub fn truncated_return_entropy(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    eta: f64,
) -> Result<f64> {
    let n_eta = duration_for_accuracy(eta, pi.min(), graph.w_max())?;
    truncated_return_entropy_at(p, graph, pi, n_eta)
}

/// pi-weighted entropy of the truncated return-time distributions after
/// renormalizing each to unit mass.
pub fn conditional_return_entropy(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    eta: f64,
) -> Result<f64> {
    check_pi(graph, pi)?;
    let n_eta = duration_for_accuracy(eta, pi.min(), graph.w_max())?;
    conditional_from_stats(pi, &truncated_stats(p, graph, n_eta)?)
}

fn conditional_from_stats(pi: &StationaryDistribution, stats: &[TruncatedStats]) -> Result<f64> {
    let mut total = CompensatedSum::default();
    for (i, s) in stats.iter().enumerate() {
        if s.mass <= 0.0 {
            return Err(Error::Numerical(format!(
                "node {i} has zero truncated return mass; eta is too large"
            )));
        }
        // H(T | T <= N) = (1/Z) sum -F log F + log Z
        total.add(pi[i] * (s.entropy / s.mass + s.mass.ln()));
    }
    Ok(total.value())
}

/// Return-time entropy with a certified truncation bound.
///
/// Steps the first-hitting recursion until a geometric envelope
/// `max_i F_k(i,i) <= c lambda^k` bounds the remaining entropy mass by `tol`.
/// `lambda` sits between the augmented spectral radius `rho` and 1, and `c`
/// is fitted to the observed diagonal maxima. Returns `(J, bound)`.
pub fn return_entropy_estimate(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    tol: f64,
) -> Result<(f64, f64)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol = {tol} must be positive"
        )));
    }
    check_pi(graph, pi)?;
    let chain = ChainEdges::new(p, graph)?;
    let rho = augmented_spectral_radius(p, graph)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let n = chain.n;
    let w_max = chain.w_max;
    let mut ent = vec![CompensatedSum::default(); n];
    let mut rec = HittingRecursion::new(&chain);

    if rho == 0.0 {
        // Psi nilpotent: every F_k vanishes past its dimension
        let horizon = w_max * n * n + w_max;
        for _ in 0..horizon {
            let f = rec.step();
            for (i, e) in ent.iter_mut().enumerate() {
                e.add(neg_x_log_x(f[i * n + i]));
            }
        }
        return Ok((weighted(pi, ent.iter().map(|e| e.value())), 0.0));
    }

    let lambda = rho + 0.1 * (1.0 - rho);
    let log_lambda = lambda.ln();
    let mut log_c = f64::NEG_INFINITY;
    let mut check_at = (64 * w_max).max(2 * n);
    loop {
        let k = rec.k() + 1;
        let f = rec.step();
        let mut peak = 0.0f64;
        for (i, e) in ent.iter_mut().enumerate() {
            let x = f[i * n + i];
            e.add(neg_x_log_x(x));
            peak = peak.max(x);
        }
        if peak > 0.0 {
            log_c = log_c.max(peak.ln() - k as f64 * log_lambda);
        }
        if k == check_at {
            let bound = geometric_tail_bound(log_c, lambda, k);
            if bound <= tol {
                return Ok((weighted(pi, ent.iter().map(|e| e.value())), bound));
            }
            if k >= MAX_ESTIMATE_STEPS {
                return Err(Error::Numerical(format!(
                    "tail bound {bound:e} still above {tol:e} after {k} steps (rho = {rho})"
                )));
            }
            check_at = (2 * k).min(MAX_ESTIMATE_STEPS);
        }
    }
}

/// Certified bound on `J - J_trunc` at `horizon`, from the same geometric
/// envelope as [`return_entropy_estimate`] with `c` fitted over the first
/// `2 * horizon` steps (at least `64 * w_max`).
pub fn truncation_error_bound(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    horizon: usize,
) -> Result<f64> {
    check_pi(graph, pi)?;
    let chain = ChainEdges::new(p, graph)?;
    let rho = augmented_spectral_radius(p, graph)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let n = chain.n;
    let mut rec = HittingRecursion::new(&chain);
    if rho == 0.0 {
        // nothing survives past the nilpotency index: sum the rest exactly
        let end = chain.w_max * n * n + chain.w_max;
        let mut rest = vec![CompensatedSum::default(); n];
        for k in 1..=end {
            let f = rec.step();
            if k > horizon {
                for (i, r) in rest.iter_mut().enumerate() {
                    r.add(neg_x_log_x(f[i * n + i]));
                }
            }
        }
        return Ok(weighted(pi, rest.iter().map(|r| r.value())));
    }
    let lambda = rho + 0.1 * (1.0 - rho);
    let log_lambda = lambda.ln();
    let mut log_c = f64::NEG_INFINITY;
    for k in 1..=(2 * horizon).max(64 * chain.w_max) {
        let f = rec.step();
        let peak = (0..n).map(|i| f[i * n + i]).fold(0.0, f64::max);
        if peak > 0.0 {
            log_c = log_c.max(peak.ln() - k as f64 * log_lambda);
        }
    }
    Ok(geometric_tail_bound(log_c, lambda, horizon))
}

/// Bound on `sum_{k > K} -x_k log x_k` given `x_k <= c lambda^k`.
///
/// `-x log x` increases on `[0, 1/e]` and never exceeds `1/e`, so terms with
/// `c lambda^k > 1/e` are bounded by `1/e` and the rest by the envelope.
fn geometric_tail_bound(log_c: f64, lambda: f64, horizon: usize) -> f64 {
    if log_c == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_lambda = lambda.ln();
    // first k with log c + k log lambda <= -1
    let crossing = ((-1.0 - log_c) / log_lambda).ceil().max(0.0);
    let start = (horizon as f64).max(crossing - 1.0);
    let plateau = (start - horizon as f64) / std::f64::consts::E;
    // sum_{k > s} -c lambda^k (log c + k log lambda)
    let s = start;
    let head = (log_c + (s + 1.0) * log_lambda).exp() / (1.0 - lambda);
    let sum_k = head * ((s + 1.0) + lambda / (1.0 - lambda));
    let tail = -(log_c * head + log_lambda * sum_k);
    plateau + tail.max(0.0)
}

/// `-sum_i pi_i sum_j p_ij log p_ij`.
pub fn entropy_rate(p: &TransitionMatrix, pi: &StationaryDistribution) -> Result<f64> {
    let n = p.n();
    if pi.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: pi.len(),
        });
    }
    let m = p.matrix();
    let residual = (0..n)
        .map(|j| ((0..n).map(|i| pi[i] * m[(i, j)]).sum::<f64>() - pi[j]).abs())
        .fold(0.0, f64::max);
    if residual > STATIONARITY_TOL {
        return Err(Error::InvalidDistribution(format!(
            "pi is not stationary for P (residual {residual:e})"
        )));
    }
    Ok(weighted(
        pi,
        (0..n).map(|i| (0..n).map(|j| neg_x_log_x(m[(i, j)])).sum::<f64>()),
    ))
}

/// `E[T_ii] = pi^T (P o W) 1 / pi_i`.
pub fn expected_return_times(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
) -> Result<Vec<f64>> {
    check_pi(graph, pi)?;
    let n = graph.node_count();
    if p.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: p.n(),
        });
    }
    let mean_step: f64 = graph
        .edges()
        .iter()
        .map(|e| pi[e.u] * p[(e.u, e.v)] * f64::from(e.w))
        .sum();
    Ok(pi.as_slice().iter().map(|x| mean_step / x).collect())
}

/// `-sum_i (pi_i log pi_i + (1 - pi_i) log(1 - pi_i))`; an upper bound on the
/// return-time entropy for unit travel times, attained by `1 pi^T` on the
/// complete graph.
pub fn max_entropy_upper_bound(pi: &StationaryDistribution) -> f64 {
    pi.as_slice()
        .iter()
        .map(|&x| neg_x_log_x(x) + neg_x_log_x(1.0 - x))
        .sum()
}

/// Entropy of the geometric distribution with mean `mu`:
/// `mu log mu - (mu - 1) log(mu - 1)`.
pub fn geometric_entropy(mu: f64) -> Result<f64> {
    if !(mu >= 1.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mean {mu} must be >= 1")));
    }
    Ok(-neg_x_log_x(mu) + neg_x_log_x(mu - 1.0))
}

/// Weighted Kemeny constant `sum_i pi_i sum_j pi_j E[T_ij]`, with `T_ii` the
/// return time. The diagonal adds the mean step duration, so for unit travel
/// times this is `1 + sum_{j >= 2} 1 / (1 - lambda_j)`.
pub fn kemeny_constant(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
) -> Result<f64> {
    check_pi(graph, pi)?;
    let m = mean_first_passage(p, graph)?;
    let n = graph.node_count();
    let mut total = CompensatedSum::default();
    for i in 0..n {
        for j in 0..n {
            total.add(pi[i] * pi[j] * m[(i, j)]);
        }
    }
    Ok(total.value())
}

/// `1 + sum_{j >= 2} 1 / (1 - lambda_j)` over the non-unit eigenvalues of
/// `P`; equals [`kemeny_constant`] for unit travel times.
pub fn kemeny_constant_spectral(p: &TransitionMatrix) -> Result<f64> {
    let eig = p.matrix().complex_eigenvalues();
    let mut eig: Vec<_> = eig.iter().copied().collect();
    let unit = eig
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(idx, _)| idx)
        .ok_or_else(|| Error::InvalidParameter("empty matrix".into()))?;
    eig.swap_remove(unit);
    let sum: nalgebra::Complex<f64> = eig
        .iter()
        .map(|l| nalgebra::Complex::new(1.0, 0.0) / (nalgebra::Complex::new(1.0, 0.0) - l))
        .sum();
    if !sum.re.is_finite() {
        return Err(Error::Singular("eigenvalue 1 is not simple".into()));
    }
    Ok(1.0 + sum.re)
}

/// Entropy of the first-return trajectory at `i`: `H_rate / pi_i`.
pub fn trajectory_entropy(
    p: &TransitionMatrix,
    pi: &StationaryDistribution,
    i: usize,
) -> Result<f64> {
    if i >= pi.len() {
        return Err(Error::InvalidParameter(format!("node {i} out of range")));
    }
    Ok(entropy_rate(p, pi)? / pi[i])
}

/// Chains with a known closed-form return-time entropy (unit travel times).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedForm {
    /// Two-node complete graph with self-loop probabilities `p11`, `p22`.
    TwoNode { p11: f64, p22: f64 },
    /// `(a - b) I + b 1 1^T` on the `n`-node complete graph.
    CompleteSymmetric { n: usize, a: f64, b: f64 },
}

pub fn closed_form_return_entropy(kind: ClosedForm) -> Result<f64> {
    const TOL: f64 = 1e-12;
    match kind {
        ClosedForm::TwoNode { p11, p22 } => {
            if !(0.0..=1.0).contains(&p11) || !(0.0..=1.0).contains(&p22) {
                return Err(Error::InvalidParameter(
                    "self-loop probabilities must lie in [0, 1]".into(),
                ));
            }
            let (p12, p21) = (1.0 - p11, 1.0 - p22);
            if p12 + p21 == 0.0 {
                return Err(Error::NotStronglyConnected);
            }
            let pi1 = p21 / (p12 + p21);
            let pi2 = 1.0 - pi1;
            Ok(2.0 * pi1 * (neg_x_log_x(p11) + neg_x_log_x(p12))
                + 2.0 * pi2 * (neg_x_log_x(p22) + neg_x_log_x(p21)))
        }
        ClosedForm::CompleteSymmetric { n, a, b } => {
            if n < 2 || a < 0.0 || b <= 0.0 || (a + (n - 1) as f64 * b - 1.0).abs() > TOL {
                return Err(Error::InvalidParameter(format!(
                    "need n >= 2, a >= 0, b > 0, a + (n-1) b = 1 (n = {n}, a = {a}, b = {b})"
                )));
            }
            let m = (n - 1) as f64;
            Ok(neg_x_log_x(a) - m * b * (m * b * b).ln() + m * neg_x_log_x(1.0 - b))
        }
    }
}

fn weighted(pi: &StationaryDistribution, values: impl Iterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for (w, v) in pi.as_slice().iter().zip(values) {
        acc.add(w * v);
    }
    acc.value()
}

fn check_pi(graph: &WeightedDigraph, pi: &StationaryDistribution) -> Result<()> {
    if pi.len() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count(),
            actual: pi.len(),
        });
    }
    Ok(())
}
