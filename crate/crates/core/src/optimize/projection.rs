//! Euclidean projection onto the ε-conforming chains of a graph.
//!
//! In edge coordinates `x` the feasible set is `{A x = b, x >= eps}`, where
//! `A` stacks unit row sums and the stationarity equations. Dykstra's method
//! alternates between the affine set and the box; its output fixes the active
//! set, on which the equality-constrained problem is then solved exactly and
//! kept if the KKT sign conditions hold.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graphs::{FeasibleSetSpec, TransitionMatrix};

pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_ROUNDS: usize = 20_000;
/// Dykstra rounds between attempts to finish exactly on the current active set.
const POLISH_EVERY: usize = 25;

/// Affine residual accepted for a Dykstra iterate when polishing fails.
const AFFINE_TOL: f64 = 1e-9;
/// Relative singular-value cutoff for the rank of the constraint matrix.
const RANK_TOL: f64 = 1e-10;
/// Coordinates within this of `eps` count as active.
const ACTIVE_TOL: f64 = 1e-10;
const POLISH_SIGN_TOL: f64 = 1e-10;
const POLISH_MAX_ROUNDS: usize = 50;

/// Constraint matrix in edge coordinates. Stationarity rows are divided by
/// `pi_v` so both blocks have unit scale.
fn constraints(spec: &FeasibleSetSpec) -> (DMatrix<f64>, DVector<f64>) {
    let g = &spec.graph;
    let n = g.node_count();
    let pi = spec.pi.as_slice();
    let mut a = DMatrix::zeros(2 * n, g.edge_count());
    for (idx, e) in g.edges().iter().enumerate() {
        a[(e.u, idx)] = 1.0;
        a[(n + e.v, idx)] = pi[e.u] / pi[e.v];
    }
    (a, DVector::from_element(2 * n, 1.0))
}

/// Orthonormal basis of the column space of `at` (an `m x r` matrix).
fn range_basis(at: &DMatrix<f64>) -> DMatrix<f64> {
    if at.ncols() == 0 || at.nrows() == 0 {
        return DMatrix::zeros(at.nrows(), 0);
    }
    let svd = at.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > RANK_TOL * top)
        .map(|(i, _)| i)
        .collect();
    DMatrix::from_fn(at.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Projection onto `{x : A x = b}` given an orthonormal basis of the row
/// space of `A` and any point `anchor` of the set.
fn affine_projection(
    x: &DVector<f64>,
    basis: &DMatrix<f64>,
    anchor: &DVector<f64>,
) -> DVector<f64> {
    let d = x - anchor;
    x - basis * (basis.transpose() * d)
}

/// Cached projector for one feasible set.
#[derive(Debug, Clone)]
pub struct Projector {
    spec: FeasibleSetSpec,
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: DMatrix<f64>,
    anchor: DVector<f64>,
}

/// Outcome of one projection.
#[derive(Debug, Clone)]
pub struct Projection {
    pub chain: TransitionMatrix,
    pub rounds: usize,
    pub polished: bool,
    pub affine_residual: f64,
}

impl Projector {
    pub fn new(spec: &FeasibleSetSpec) -> Result<Self> {
        let (a, b) = constraints(spec);
        let at = a.transpose();
        let basis = range_basis(&at);
        let pinv = at
            .clone()
            .pseudo_inverse(RANK_TOL)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        // minimum-norm solution of A x = b
        let anchor = pinv.transpose() * &b;
        let residual = (&a * &anchor - &b).amax();
        if residual > AFFINE_TOL {
            return Err(Error::Infeasible(format!(
                "row-sum and stationarity equations are inconsistent (residual {residual:e})"
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            a,
            b,
            basis,
            anchor,
        })
    }

    pub fn spec(&self) -> &FeasibleSetSpec {
        &self.spec
    }

    fn edge_vector(&self, q: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = self.spec.graph.node_count();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: q.nrows(),
            });
        }
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(
                "matrix to project has non-finite entries".into(),
            ));
        }
        Ok(DVector::from_iterator(
            self.spec.graph.edge_count(),
            self.spec.graph.edges().iter().map(|e| q[(e.u, e.v)]),
        ))
    }

    fn to_chain(&self, x: &DVector<f64>) -> Result<TransitionMatrix> {
        // rounding can leave a forced entry a few ulps above one
        let x: Vec<f64> = x.iter().map(|&v| v.min(1.0)).collect();
        TransitionMatrix::from_edge_values(&self.spec.graph, &x)
    }

    pub fn project(&self, q: &DMatrix<f64>) -> Result<TransitionMatrix> {
        self.project_detailed(q).map(|p| p.chain)
    }

    pub fn project_detailed(&self, q: &DMatrix<f64>) -> Result<Projection> {
        let q = self.edge_vector(q)?;
        let eps = self.spec.eps;
        let m = q.len();
        let mut x = q.clone();
        let mut p = DVector::zeros(m);
        let mut r = DVector::zeros(m);
        let mut rounds = 0;
        let mut last_change = f64::INFINITY;
        let mut tried: Option<Vec<bool>> = None;
        while rounds < DYKSTRA_MAX_ROUNDS {
            rounds += 1;
            let y = affine_projection(&(&x + &p), &self.basis, &self.anchor);
            p = &x + &p - &y;
            let shifted = &y + &r;
            let next = shifted.map(|v| v.max(eps));
            r = shifted - &next;
            last_change = (&next - &x).amax();
            x = next;
            // small steps alone do not mean convergence: Dykstra can crawl
            if last_change < DYKSTRA_TOL && (&self.a * &x - &self.b).amax() <= AFFINE_TOL {
                break;
            }
            if rounds % POLISH_EVERY == 0 {
                let active: Vec<bool> = x.iter().map(|&v| v <= eps + ACTIVE_TOL).collect();
                if tried.as_ref() != Some(&active) {
                    if let Some(polished) = self.polish(&q, &x) {
                        return self.finish(polished, rounds);
                    }
                    tried = Some(active);
                }
            }
        }
        if let Some(polished) = self.polish(&q, &x) {
            return self.finish(polished, rounds);
        }
        let affine_residual = (&self.a * &x - &self.b).amax();
        if affine_residual > AFFINE_TOL || last_change >= DYKSTRA_TOL {
            return Err(Error::ProjectionNotConverged {
                rounds,
                affine_residual,
                last_change,
            });
        }
        Ok(Projection {
            chain: self.to_chain(&x)?,
            rounds,
            polished: false,
            affine_residual,
        })
    }

    fn finish(&self, x: DVector<f64>, rounds: usize) -> Result<Projection> {
        let affine_residual = (&self.a * &x - &self.b).amax();
        Ok(Projection {
            chain: self.to_chain(&x)?,
            rounds,
            polished: true,
            affine_residual,
        })
    }

    /// Exact solution for the active set suggested by `x`, refined by a few
    /// primal-dual active-set rounds. `None` when no consistent set is found.
    fn polish(&self, q: &DVector<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
        let eps = self.spec.eps;
        let m = q.len();
        let mut active: Vec<bool> = x.iter().map(|&v| v <= eps + ACTIVE_TOL).collect();
        for _ in 0..POLISH_MAX_ROUNDS {
            let free: Vec<usize> = (0..m).filter(|&e| !active[e]).collect();
            // b' = b - A_act eps
            let mut rhs = self.b.clone();
            for e in (0..m).filter(|&e| active[e]) {
                rhs -= self.a.column(e) * eps;
            }
            let af = self.a.select_columns(&free);
            let qf = DVector::from_iterator(free.len(), free.iter().map(|&e| q[e]));
            // x_F = q_F - A_F^T mu with A_F A_F^T mu = A_F q_F - b'
            let gram_pinv = (&af * af.transpose()).pseudo_inverse(RANK_TOL).ok()?;
            let mu = &gram_pinv * (&af * &qf - &rhs);
            let xf = &qf - af.transpose() * &mu;
            if (&af * &xf - &rhs).amax() > AFFINE_TOL {
                return None;
            }
            let mut sol = DVector::from_element(m, eps);
            for (k, &e) in free.iter().enumerate() {
                sol[e] = xf[k];
            }
            let primal_ok = (0..m).all(|e| active[e] || sol[e] >= eps - POLISH_SIGN_TOL);
            // multiplier of x_e >= eps on active coordinates
            let at_mu = self.a.transpose() * &mu;
            let negative: Vec<usize> = (0..m)
                .filter(|&e| active[e] && eps - q[e] + at_mu[e] < -POLISH_SIGN_TOL)
                .collect();
            if primal_ok {
                if negative.is_empty() {
                    return Some(sol.map(|v| v.max(eps)));
                }
                // the equality multipliers need not be unique; look for any
                // choice that makes the bound multipliers nonnegative
                let act: Vec<usize> = (0..m).filter(|&e| active[e]).collect();
                let (_, residual) = fit_bound_multipliers(&self.basis, &(q - &sol), &act);
                if residual <= POLISH_SIGN_TOL * q.amax().max(1.0) {
                    return Some(sol.map(|v| v.max(eps)));
                }
            }
            let mut changed = false;
            for e in negative {
                active[e] = false;
                changed = true;
            }
            for e in 0..m {
                if !active[e] && sol[e] < eps - POLISH_SIGN_TOL {
                    active[e] = true;
                    changed = true;
                }
            }
            if !changed {
                return None;
            }
        }
        None
    }
}

/// Projects `q` onto the feasible set of `spec`.
pub fn project_feasible(q: &DMatrix<f64>, spec: &FeasibleSetSpec) -> Result<TransitionMatrix> {
    Projector::new(spec)?.project(q)
}

/// KKT residuals of `p` as the projection of `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// Worst entry of `x - q + A^T lambda - mu` for the best multipliers
    /// with `mu >= 0` supported on the active bounds.
    pub stationarity: f64,
    /// Worst `|mu_e (x_e - eps)|`.
    pub complementarity: f64,
    /// Worst equality, bound or pattern violation.
    pub primal: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.primal)
    }
}

/// Nonnegative bound multipliers on `active` that best satisfy stationarity.
///
/// With `Pi` the projector onto the complement of the row space of `A`, the
/// equality multipliers are eliminated and `min ||Pi (d + E mu)||, mu >= 0`
/// is solved by cyclic coordinate descent, where `d = q - x`. Returns `mu`
/// and the worst entry of the remaining residual.
fn fit_bound_multipliers(
    basis: &DMatrix<f64>,
    d: &DVector<f64>,
    active: &[usize],
) -> (DVector<f64>, f64) {
    let perp = |v: &DVector<f64>| v - basis * (basis.transpose() * v);
    let r0 = perp(d);
    let cols: Vec<DVector<f64>> = active
        .iter()
        .map(|&e| {
            let mut unit = DVector::zeros(d.len());
            unit[e] = 1.0;
            perp(&unit)
        })
        .collect();
    let k = cols.len();
    let gram = DMatrix::from_fn(k, k, |i, j| cols[i].dot(&cols[j]));
    let lin = DVector::from_fn(k, |i, _| cols[i].dot(&r0));
    let mut mu = DVector::zeros(k);
    for _ in 0..20_000 {
        let mut moved = 0.0f64;
        for i in 0..k {
            if gram[(i, i)] <= 1e-14 {
                continue;
            }
            let grad = lin[i] + gram.row(i).transpose().dot(&mu);
            let next = (mu[i] - grad / gram[(i, i)]).max(0.0);
            moved = moved.max((next - mu[i]).abs());
            mu[i] = next;
        }
        if moved < 1e-15 {
            break;
        }
    }
    let mut r = r0;
    for (i, c) in cols.iter().enumerate() {
        r += c * mu[i];
    }
    (mu, r.amax())
}

/// Checks the projection optimality conditions of `p` for `q`. Coordinates
/// within `active_tol` of `eps` are treated as active.
pub fn kkt_residuals(
    q: &DMatrix<f64>,
    p: &TransitionMatrix,
    spec: &FeasibleSetSpec,
    active_tol: f64,
) -> Result<KktReport> {
    let (a, b) = constraints(spec);
    let g = &spec.graph;
    let eps = spec.eps;
    let qv = DVector::from_iterator(g.edge_count(), g.edges().iter().map(|e| q[(e.u, e.v)]));
    let x = DVector::from_iterator(g.edge_count(), g.edges().iter().map(|e| p[(e.u, e.v)]));
    let active: Vec<usize> = (0..x.len()).filter(|&e| x[e] <= eps + active_tol).collect();
    let basis = range_basis(&a.transpose());
    let (mu, stationarity) = fit_bound_multipliers(&basis, &(&qv - &x), &active);
    let complementarity = active
        .iter()
        .zip(mu.iter())
        .map(|(&e, m)| (m * (x[e] - eps)).abs())
        .fold(0.0, f64::max);
    let primal = (&a * &x - &b)
        .amax()
        .max(x.iter().map(|&v| (eps - v).max(0.0)).fold(0.0, f64::max));
    let n = g.node_count();
    let off_pattern = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| !g.has_edge(i, j))
        .map(|(i, j)| p[(i, j)].abs())
        .fold(0.0, f64::max);
    Ok(KktReport {
        stationarity,
        complementarity,
        primal: primal.max(off_pattern),
    })
}
