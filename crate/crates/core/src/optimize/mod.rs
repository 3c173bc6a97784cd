//! Projected-gradient optimization over the ε-conforming chains of a graph.

mod projection;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

pub use projection::{
    kkt_residuals, project_feasible, KktReport, Projection, Projector, DYKSTRA_MAX_ROUNDS,
    DYKSTRA_TOL,
};

use crate::error::{Error, Result};
use crate::gradient::entropy_and_gradient_at;
use crate::graphs::{is_irreducible, FeasibleSetSpec, TransitionMatrix};
use crate::metrics::{
    duration_for_accuracy, entropy_rate, kemeny_constant, truncated_return_entropy_at, ChainMetrics,
};

/// Default evaluation accuracy for reported metrics.
pub const DEFAULT_ETA_EVAL: f64 = 0.01;

/// Step of the central differences used for the Kemeny gradient.
pub const KEMENY_FD_STEP: f64 = 1e-6;

/// Probability floor inside the entropy-rate gradient's logarithm.
const RATE_LOG_FLOOR: f64 = 1e-12;
/// Smallest trial step before a line search gives up.
const MIN_STEP: f64 = 1e-14;
/// Largest trial step.
const MAX_STEP: f64 = 1e12;
/// Largest max-norm move of a trial point before projection.
const MAX_MOVE: f64 = 100.0;
/// Iterates closer than this are treated as identical.
const SAME_POINT: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Maximize the truncated return-time entropy.
    ReturnEntropy,
    /// Maximize the entropy rate.
    EntropyRate,
    /// Minimize the weighted Kemeny constant.
    MinKemeny,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::ReturnEntropy => "return-entropy",
            Objective::EntropyRate => "entropy-rate",
            Objective::MinKemeny => "min-kemeny",
        }
    }

    /// Whether the reported objective is minimized.
    pub fn minimizes(self) -> bool {
        matches!(self, Objective::MinKemeny)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "return-entropy" => Ok(Objective::ReturnEntropy),
            "entropy-rate" => Ok(Objective::EntropyRate),
            "min-kemeny" | "kemeny" => Ok(Objective::MinKemeny),
            other => Err(Error::Parse(format!("unknown objective '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Truncation accuracy of the optimized return-time entropy.
    pub eta: f64,
    pub max_iters: usize,
    /// First trial step; later iterations start from twice the last accepted step.
    pub step0: f64,
    pub backtrack: f64,
    pub sufficient_increase: f64,
    /// Relative objective gain over `window` iterations below which a start stops.
    pub tol: f64,
    pub window: usize,
    pub starts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            max_iters: 500,
            step0: 1.0,
            backtrack: 0.5,
            sufficient_increase: 1e-4,
            tol: 1e-7,
            window: 10,
            starts: 5,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad("eta must lie in (0, 1)");
        }
        if self.max_iters == 0 || self.starts == 0 || self.window == 0 {
            return bad("max_iters, starts and window must be positive");
        }
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return bad("step0 must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.sufficient_increase > 0.0 && self.sufficient_increase < 1.0) {
            return bad("sufficient_increase must lie in (0, 1)");
        }
        if !(self.tol >= 0.0) {
            return bad("tol must be nonnegative");
        }
        Ok(())
    }
}

/// Best chain over all starts.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub objective_kind: Objective,
    pub chain: TransitionMatrix,
    /// Objective of `chain` (the Kemeny constant itself for `MinKemeny`).
    pub objective: f64,
    /// Objective after every accepted step, starting at the initial chain.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub start_index: usize,
    pub seed: u64,
    pub iterations: usize,
}

#[derive(Serialize)]
struct OptimizeResultJson<'a> {
    objective_kind: Objective,
    n: usize,
    chain: Vec<f64>,
    objective: f64,
    trace: &'a [f64],
    converged: bool,
    start_index: usize,
    seed: u64,
    iterations: usize,
}

impl Serialize for OptimizeResult {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OptimizeResultJson {
            objective_kind: self.objective_kind,
            n: self.chain.n(),
            chain: self.chain.to_row_major(),
            objective: self.objective,
            trace: &self.trace,
            converged: self.converged,
            start_index: self.start_index,
            seed: self.seed,
            iterations: self.iterations,
        }
        .serialize(s)
    }
}

/// Seed of start `index`, derived from the base seed.
pub fn start_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Maximized objective (`-K` for `MinKemeny`) and, optionally, its gradient.
struct Evaluator<'a> {
    objective: Objective,
    spec: &'a FeasibleSetSpec,
    horizon: usize,
}

impl Evaluator<'_> {
    fn value(&self, p: &TransitionMatrix) -> Result<f64> {
        let FeasibleSetSpec { graph, pi, .. } = self.spec;
        match self.objective {
            Objective::ReturnEntropy => truncated_return_entropy_at(p, graph, pi, self.horizon),
            Objective::EntropyRate => entropy_rate(p, pi),
            Objective::MinKemeny => kemeny_constant(p, graph, pi).map(|k| -k),
        }
    }

    fn value_and_gradient(&self, p: &TransitionMatrix) -> Result<(f64, DMatrix<f64>)> {
        let FeasibleSetSpec { graph, pi, .. } = self.spec;
        let n = graph.node_count();
        match self.objective {
            Objective::ReturnEntropy => {
                let (v, g) = entropy_and_gradient_at(p, graph, pi, self.horizon)?;
                Ok((v, g.into_matrix()))
            }
            Objective::EntropyRate => {
                let mut g = DMatrix::zeros(n, n);
                for e in graph.edges() {
                    let x = p[(e.u, e.v)].max(RATE_LOG_FLOOR);
                    g[(e.u, e.v)] = -pi[e.u] * (1.0 + x.ln());
                }
                Ok((self.value(p)?, g))
            }
            Objective::MinKemeny => {
                let k0 = kemeny_constant(p, graph, pi)?;
                let at = |u: usize, v: usize, x: f64| -> Result<f64> {
                    let mut m = p.matrix().clone();
                    m[(u, v)] = x;
                    kemeny_constant(&TransitionMatrix::new(m)?, graph, pi)
                };
                let mut g = DMatrix::zeros(n, n);
                let h = KEMENY_FD_STEP;
                for e in graph.edges() {
                    let x = p[(e.u, e.v)];
                    // one-sided second-order stencils keep entries in [0, 1]
                    let d = if x - h < 0.0 {
                        (-3.0 * k0 + 4.0 * at(e.u, e.v, x + h)? - at(e.u, e.v, x + 2.0 * h)?)
                            / (2.0 * h)
                    } else if x + h > 1.0 {
                        (3.0 * k0 - 4.0 * at(e.u, e.v, x - h)? + at(e.u, e.v, x - 2.0 * h)?)
                            / (2.0 * h)
                    } else {
                        (at(e.u, e.v, x + h)? - at(e.u, e.v, x - h)?) / (2.0 * h)
                    };
                    g[(e.u, e.v)] = -d;
                }
                Ok((-k0, g))
            }
        }
    }

    /// Reported objective from the maximized one.
    fn report(&self, f: f64) -> f64 {
        if self.objective.minimizes() {
            -f
        } else {
            f
        }
    }
}

struct StartOutcome {
    chain: TransitionMatrix,
    value: f64,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

/// Most random projections averaged into one start.
const MAX_START_PROJECTIONS: u64 = 16;

/// Projection of a random matrix. Projections often touch the boundary and
/// can be reducible; further projections are averaged in (the average stays
/// feasible) until the chain is irreducible.
fn initial_chain(projector: &Projector, seed: u64) -> Result<TransitionMatrix> {
    let graph = &projector.spec().graph;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = DMatrix::zeros(graph.node_count(), graph.node_count());
    for k in 1..=MAX_START_PROJECTIONS {
        let q = crate::graphs::random_edge_matrix(graph, rng.next_u64());
        sum += projector.project(&q)?.matrix();
        let p = TransitionMatrix::new(&sum / k as f64)?;
        if k == MAX_START_PROJECTIONS || is_irreducible(&p, 0.0) {
            return Ok(p);
        }
    }
    unreachable!()
}

fn run_start(
    eval: &Evaluator<'_>,
    projector: &Projector,
    config: &OptimizerConfig,
    index: usize,
) -> Result<StartOutcome> {
    let mut p = initial_chain(projector, start_seed(config.seed, index))?;
    let (mut f, mut g) = eval.value_and_gradient(&p)?;
    let mut trace = vec![eval.report(f)];
    let mut best = vec![f];
    let mut step = config.step0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        // far-out trial points only lose precision in the projection
        let mut alpha = step.min(MAX_MOVE / g.amax().max(f64::MIN_POSITIVE));
        let mut accepted = None;
        while alpha >= MIN_STEP {
            let trial = match projector.project(&(p.matrix() + &g * alpha)) {
                Ok(t) => t,
                Err(e @ Error::ProjectionNotConverged { .. }) => {
                    log::debug!("rejecting trial step {alpha:e}: {e}");
                    alpha *= config.backtrack;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let delta = trial.matrix() - p.matrix();
            if delta.amax() <= SAME_POINT {
                // the projected arc has collapsed onto P: stationary point
                break;
            }
            let predicted = g.dot(&delta);
            let ft = match eval.value(&trial) {
                Ok(v) => v,
                // a reducible trial has no first-passage times; reject it
                Err(Error::Singular(_)) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            if ft >= f + config.sufficient_increase * predicted && ft >= f {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= config.backtrack;
        }
        let Some((next, _)) = accepted else {
            converged = true;
            break;
        };
        let s_k = next.matrix() - p.matrix();
        p = next;
        let g_prev = std::mem::replace(&mut g, DMatrix::zeros(0, 0));
        (f, g) = eval.value_and_gradient(&p)?;
        // Barzilai-Borwein guess for the next trial step, 2x the last one otherwise
        let curvature = -s_k.dot(&(&g - &g_prev));
        step = if curvature > 0.0 {
            (s_k.norm_squared() / curvature).clamp(alpha, MAX_STEP)
        } else {
            alpha * 2.0
        };
        trace.push(eval.report(f));
        best.push(f);
        if best.len() > config.window {
            let old = best[best.len() - 1 - config.window];
            if f - old <= config.tol * f.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    log::debug!(
        "start {index}: {} = {} after {iterations} iterations (converged: {converged})",
        eval.objective,
        eval.report(f)
    );
    Ok(StartOutcome {
        chain: p,
        value: f,
        trace,
        converged,
        iterations,
    })
}

/// Multi-start projected gradient ascent (descent for `MinKemeny`).
///
/// Starts are independent, seeded from `config.seed`, and run in parallel;
/// the best objective wins, ties going to the lowest start index.
pub fn optimize_chain(
    objective: Objective,
    spec: &FeasibleSetSpec,
    config: &OptimizerConfig,
) -> Result<OptimizeResult> {
    config.validate()?;
    let horizon = duration_for_accuracy(config.eta, spec.pi.min(), spec.graph.w_max())?;
    let eval = Evaluator {
        objective,
        spec,
        horizon,
    };
    let projector = Projector::new(spec)?;
    let outcomes: Vec<Result<StartOutcome>> = (0..config.starts)
        .into_par_iter()
        .map(|i| run_start(&eval, &projector, config, i))
        .collect();
    let mut best: Option<(usize, StartOutcome)> = None;
    let mut failures = Vec::new();
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => {
                if best.as_ref().is_none_or(|(_, b)| o.value > b.value) {
                    best = Some((i, o));
                }
            }
            Err(e) => {
                log::warn!("start {i} failed: {e}");
                failures.push(format!("start {i}: {e}"));
            }
        }
    }
    let (start_index, o) = best.ok_or_else(|| {
        Error::OptimizationFailed(format!("every start failed: {}", failures.join("; ")))
    })?;
    Ok(OptimizeResult {
        objective_kind: objective,
        objective: eval.report(o.value),
        chain: o.chain,
        trace: o.trace,
        converged: o.converged,
        start_index,
        seed: config.seed,
        iterations: o.iterations,
    })
}

/// All metrics of a chain at evaluation accuracy `eta_eval`.
pub fn evaluate_all(
    chain: &TransitionMatrix,
    spec: &FeasibleSetSpec,
    eta_eval: f64,
) -> Result<ChainMetrics> {
    ChainMetrics::compute(chain, &spec.graph, &spec.pi, eta_eval)
}
