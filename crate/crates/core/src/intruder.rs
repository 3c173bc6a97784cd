//! Rational intruder: waits at a node until the patroller has been away for
//! `s` time units, then needs `tau` undisturbed units to complete an attack.
//! It picks `s` up to its patience bound to minimize the chance of capture.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphs::{StationaryDistribution, TransitionMatrix, WeightedDigraph};
use crate::hitting::{return_time_distributions, ReturnTimeDistribution};
use crate::metrics::expected_return_times;

pub const DEFAULT_DELTA: f64 = 0.1;

/// Attack times whose survival probability is at most this are not
/// considered: the conditional window probability is undefined there.
pub const MIN_SURVIVAL: f64 = 1e-12;

/// Excursions a single simulated trial may wait through before giving up.
const MAX_EXCURSIONS: usize = 10_000_000;
/// 97.5% standard normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntruderParams {
    /// Attack duration in time units.
    pub tau: u32,
    /// Degree of impatience: the intruder gives up on waits that the
    /// patroller outlasts with probability at most `delta`.
    pub delta: f64,
}

impl IntruderParams {
    pub fn new(tau: u32, delta: f64) -> Result<Self> {
        if tau < 1 {
            return Err(Error::InvalidParameter("tau must be >= 1".into()));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta = {delta} must lie in (0, 1)"
            )));
        }
        Ok(Self { tau, delta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodePlan {
    /// Patience bound `S_i`.
    pub patience: usize,
    /// Optimal attack time `s_i`.
    pub attack_time: usize,
    pub capture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackPlan {
    pub params: IntruderParams,
    pub nodes: Vec<NodePlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptureReport {
    pub plan: AttackPlan,
    pub total: f64,
}

/// `P(T > s)` for `s = 0..=K` by backward accumulation.
fn survival(dist: &ReturnTimeDistribution) -> Vec<f64> {
    let k = dist.horizon();
    let mut surv = vec![0.0; k + 1];
    surv[k] = dist.tail_mass;
    for s in (0..k).rev() {
        surv[s] = surv[s + 1] + dist.probs[s];
    }
    surv
}

fn patience_from_survival(surv: &[f64], tail: f64, delta: f64) -> Result<usize> {
    if tail > delta {
        return Err(Error::HorizonTooShort(format!(
            "tail mass {tail:e} beyond horizon {} exceeds delta = {delta}",
            surv.len() - 1
        )));
    }
    // P(T >= S) = P(T > S - 1)
    Ok(surv.iter().position(|&x| x <= delta).expect("tail checked") + 1)
}

/// Minimal `S >= 1` with `P(T >= S) <= delta`.
pub fn patience_bound(dist: &ReturnTimeDistribution, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta = {delta} must lie in (0, 1)"
        )));
    }
    patience_from_survival(&survival(dist), dist.tail_mass, delta)
}

/// Best attack time and its capture probability for one node.
fn node_plan(dist: &ReturnTimeDistribution, params: IntruderParams) -> Result<NodePlan> {
    let surv = survival(dist);
    let patience = patience_from_survival(&surv, dist.tail_mass, params.delta)?;
    let tau = params.tau as usize;
    if patience + tau > dist.horizon() {
        return Err(Error::HorizonTooShort(format!(
            "horizon {} does not cover S + tau = {}",
            dist.horizon(),
            patience + tau
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for s in 0..=patience {
        if surv[s] <= MIN_SURVIVAL {
            continue;
        }
        let window: f64 = (1..=tau).map(|k| dist.prob(s + k)).sum();
        let capture = (window / surv[s]).clamp(0.0, 1.0);
        if best.is_none_or(|(_, c)| capture < c) {
            best = Some((s, capture));
        }
    }
    let (attack_time, capture) = best.expect("s = 0 always survives");
    Ok(NodePlan {
        patience,
        attack_time,
        capture,
    })
}

fn initial_horizon(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    delta: f64,
    tau: u32,
) -> Result<usize> {
    // Markov: P(T >= S) <= E[T] / S
    let worst = expected_return_times(p, graph, pi)?
        .into_iter()
        .fold(0.0, f64::max);
    let s = (worst / delta).ceil();
    if !s.is_finite() || s > 1e9 {
        return Err(Error::TooLarge(format!("patience bound estimate {s}")));
    }
    Ok(s as usize + tau as usize + 1)
}

/// Plans for several attack durations sharing one set of distributions.
fn plans_for(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    delta: f64,
    taus: &[u32],
) -> Result<Vec<AttackPlan>> {
    let tau_max = taus.iter().copied().max().unwrap_or(1);
    let mut horizon = initial_horizon(p, graph, pi, delta, tau_max)?;
    for _ in 0..8 {
        let dists = return_time_distributions(p, graph, horizon)?;
        let attempt: Result<Vec<AttackPlan>> = taus
            .iter()
            .map(|&tau| {
                let params = IntruderParams::new(tau, delta)?;
                let nodes = dists
                    .iter()
                    .map(|d| node_plan(d, params))
                    .collect::<Result<Vec<_>>>()?;
                Ok(AttackPlan { params, nodes })
            })
            .collect();
        match attempt {
            Err(Error::HorizonTooShort(msg)) => {
                log::debug!("extending horizon {horizon}: {msg}");
                horizon *= 2;
            }
            other => return other,
        }
    }
    Err(Error::HorizonTooShort(format!(
        "no horizon up to {horizon} certifies the patience bounds"
    )))
}

pub fn attack_plan(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    params: IntruderParams,
) -> Result<AttackPlan> {
    let mut plans = plans_for(p, graph, pi, params.delta, &[params.tau])?;
    Ok(plans.remove(0))
}

fn total(pi: &StationaryDistribution, plan: &AttackPlan) -> f64 {
    plan.nodes
        .iter()
        .zip(pi.as_slice())
        .map(|(n, w)| w * n.capture)
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// `sum_i pi_i capture_i`.
pub fn capture_probability(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    params: IntruderParams,
) -> Result<CaptureReport> {
    let plan = attack_plan(p, graph, pi, params)?;
    Ok(CaptureReport {
        total: total(pi, &plan),
        plan,
    })
}

/// Total capture probability for each `tau` in `taus`.
pub fn capture_curve(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    delta: f64,
    taus: &[u32],
) -> Result<Vec<(u32, f64)>> {
    if taus.is_empty() {
        return Err(Error::InvalidParameter("tau range is empty".into()));
    }
    let plans = plans_for(p, graph, pi, delta, taus)?;
    Ok(taus
        .iter()
        .zip(&plans)
        .map(|(&t, plan)| (t, total(pi, plan)))
        .collect())
}

/// `tau,total` rows.
pub fn curve_to_csv(curve: &[(u32, f64)]) -> String {
    let mut out = String::from("tau,total\n");
    for (t, v) in curve {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimulationReport {
    pub trials: usize,
    pub captures: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SimulationReport {
    pub fn contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }
}

/// Monte Carlo replay of the intruder's policy against sampled walks.
///
/// Each trial draws the intruder's node from `pi`, then samples excursions of
/// the patroller away from it until one outlasts `s_i`; the attack is caught
/// if the patroller is back within `s_i + tau`. Trial `t` uses its own
/// stream of a ChaCha generator seeded by `seed`.
pub fn simulate_capture(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    params: IntruderParams,
    trials: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let plan = attack_plan(p, graph, pi, params)?;
    let n = graph.node_count();
    let rows: Vec<Vec<(usize, u32, f64)>> = (0..n)
        .map(|u| {
            let mut acc = 0.0;
            graph
                .out_edges(u)
                .iter()
                .filter(|e| p[(e.u, e.v)] > 0.0)
                .map(|e| {
                    acc += p[(e.u, e.v)];
                    (e.v, e.w, acc)
                })
                .collect()
        })
        .collect();
    let mut pi_cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &x in pi.as_slice() {
        acc += x;
        pi_cdf.push(acc);
    }
    let pick = |cdf: &mut dyn Iterator<Item = f64>, u: f64| -> usize {
        let mut last = 0;
        for (i, c) in cdf.enumerate() {
            last = i;
            if u < c {
                return i;
            }
        }
        last
    };
    let tau = params.tau as usize;
    let outcomes: Vec<Result<bool>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let target = pick(&mut pi_cdf.iter().copied(), rng.gen::<f64>() * acc);
            let s = plan.nodes[target].attack_time;
            for _ in 0..MAX_EXCURSIONS {
                // one excursion from target, stopped once the outcome is known
                let mut node = target;
                let mut time = 0usize;
                loop {
                    let row = &rows[node];
                    let total = row.last().map_or(0.0, |r| r.2);
                    let idx = pick(&mut row.iter().map(|r| r.2), rng.gen::<f64>() * total);
                    let (v, w, _) = row[idx];
                    time += w as usize;
                    node = v;
                    if node == target || time > s + tau {
                        break;
                    }
                }
                if time > s {
                    return Ok(node == target && time <= s + tau);
                }
            }
            Err(Error::Numerical(format!(
                "trial {t}: no excursion outlasted the attack time {s}"
            )))
        })
        .collect();
    let mut captures = 0;
    for o in outcomes {
        captures += usize::from(o?);
    }
    let estimate = captures as f64 / trials as f64;
    let half = Z_95 * (estimate * (1.0 - estimate) / trials as f64).sqrt();
    Ok(SimulationReport {
        trials,
        captures,
        estimate,
        ci_low: (estimate - half).max(0.0),
        ci_high: (estimate + half).min(1.0),
    })
}
