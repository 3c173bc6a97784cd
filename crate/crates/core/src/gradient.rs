//! Gradient of the truncated return-time entropy.
//!
//! The sensitivities `G_k = d vec(F_k) / d vec(P)` obey the recursion obtained
//! by differentiating the first-hitting recursion entrywise. For the edge
//! `(u, v)` with travel time `w`, the sensitivity `D_k = dF_k / dp_uv` is
//!
//! ```text
//! D_k(i,j) = 1{k = w, i = u, j = v}
//!          + 1{i = u, j != v} F_{k-w}(v, j)
//!          + sum_{h != j} p_ih D_{k - w_ih}(h, j).
//! ```
//!
//! [`gradient_series`] and [`truncated_entropy_gradient`] run that forward
//! recursion. [`entropy_and_gradient`] computes the same gradient by a reverse
//! (adjoint) sweep over the stored `F_k`, which is cheaper by a factor of the
//! edge count and is what the optimizer uses.

use nalgebra::DMatrix;

use crate::chain::{axpy_skip, neg_x_log_x, ChainEdges, CompensatedSum, HittingRecursion};
use crate::error::{Error, Result};
use crate::graphs::{StationaryDistribution, TransitionMatrix, WeightedDigraph};
use crate::metrics::{duration_for_accuracy, truncated_return_entropy_at};

/// Largest number of stored `F_k` entries for the adjoint sweep.
pub const MAX_ADJOINT_ENTRIES: usize = 400_000_000;

/// `d/dF [-F log F] = -(1 + log F)`, taken as 0 at `F = 0`.
fn entropy_weight(f: f64) -> f64 {
    if f > 0.0 {
        -(1.0 + f.ln())
    } else {
        0.0
    }
}

/// Forward sensitivity recursion sharing its `F` ring buffer.
struct SensitivityRecursion<'a> {
    chain: &'a ChainEdges,
    sources: Vec<usize>,
    f: HittingRecursion<'a>,
    k: usize,
    // slot layout: [edge][i * n + j]
    slots: Vec<Vec<f64>>,
}

impl<'a> SensitivityRecursion<'a> {
    fn new(chain: &'a ChainEdges) -> Self {
        let size = chain.edge_count() * chain.n * chain.n;
        Self {
            chain,
            sources: chain.sources(),
            f: HittingRecursion::new(chain),
            k: 0,
            slots: vec![vec![0.0; size]; chain.w_max + 1],
        }
    }

    /// Advances both `F` and `D` to `k + 1`.
    fn step(&mut self) {
        let c = self.chain;
        let n = c.n;
        let nn = n * n;
        self.f.step();
        let k = self.k + 1;
        let len = self.slots.len();
        let mut out = std::mem::take(&mut self.slots[k % len]);
        out.iter_mut().for_each(|x| *x = 0.0);
        for (col, block) in out.chunks_exact_mut(nn).enumerate() {
            let (u, v, w) = (self.sources[col], c.targets[col], c.weights[col]);
            if k == w {
                block[u * n + v] += 1.0;
            } else if k > w {
                let f = self.f.lagged(w).expect("lag within the ring");
                let row = &mut block[u * n..(u + 1) * n];
                axpy_skip(row, &f[v * n..(v + 1) * n], 1.0, v);
            }
            for i in 0..n {
                let row = &mut block[i * n..(i + 1) * n];
                for e in c.row_start[i]..c.row_start[i + 1] {
                    let (p, h, we) = (c.probs[e], c.targets[e], c.weights[e]);
                    if p == 0.0 || k <= we {
                        continue;
                    }
                    let src = &self.slots[(k - we) % len][col * nn + h * n..col * nn + (h + 1) * n];
                    axpy_skip(row, src, p, h);
                }
            }
        }
        self.slots[k % len] = out;
        self.k = k;
    }

    fn current(&self) -> &[f64] {
        &self.slots[self.k % self.slots.len()]
    }

    fn current_f(&self) -> &[f64] {
        self.f.lagged(0).expect("at least one step taken")
    }
}

/// Window `G_{k - w_max + 1} ..= G_k` of the sensitivity matrices, stored by
/// edge column.
#[derive(Debug, Clone)]
pub struct GradientSeries {
    n: usize,
    horizon: usize,
    edges: Vec<(usize, usize)>,
    // window[t] holds G_{horizon - t}, layout [edge][i * n + j]
    window: Vec<Vec<f64>>,
}

impl GradientSeries {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    fn slot(&self, k: i64) -> Option<&[f64]> {
        if k <= 0 || k as usize > self.horizon {
            return None;
        }
        self.window
            .get(self.horizon - k as usize)
            .map(Vec::as_slice)
    }

    /// Whether `G_k` is known: `k <= 0` (identically zero) or inside the window.
    pub fn covers(&self, k: i64) -> bool {
        k <= 0 || self.slot(k).is_some()
    }

    /// `dF_k / dp_uv` as an `n x n` matrix. Zero for `k <= 0` and for
    /// non-edges; `None` outside the window.
    pub fn column(&self, k: i64, u: usize, v: usize) -> Option<DMatrix<f64>> {
        let n = self.n;
        if !self.covers(k) {
            return None;
        }
        let Some(slot) = self.slot(k) else {
            return Some(DMatrix::zeros(n, n));
        };
        Some(match self.edges.iter().position(|&e| e == (u, v)) {
            Some(col) => DMatrix::from_row_slice(n, n, &slot[col * n * n..(col + 1) * n * n]),
            None => DMatrix::zeros(n, n),
        })
    }

    /// `G_k` as a dense `n^2 x n^2` matrix in column-major `vec` order:
    /// entry `(j n + i, v n + u)` is `dF_k(i,j) / dp_uv`.
    pub fn to_dense(&self, k: i64) -> Option<DMatrix<f64>> {
        let n = self.n;
        let nn = n * n;
        if !self.covers(k) {
            return None;
        }
        let mut g = DMatrix::zeros(nn, nn);
        if let Some(slot) = self.slot(k) {
            for (col, &(u, v)) in self.edges.iter().enumerate() {
                for i in 0..n {
                    for j in 0..n {
                        g[(j * n + i, v * n + u)] = slot[col * nn + i * n + j];
                    }
                }
            }
        }
        Some(g)
    }

    /// Largest entry magnitude of `G_k`.
    pub fn max_abs(&self, k: i64) -> Option<f64> {
        if k <= 0 {
            return Some(0.0);
        }
        self.slot(k)
            .map(|s| s.iter().fold(0.0f64, |a, x| a.max(x.abs())))
    }
}

pub fn gradient_series(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    horizon: usize,
) -> Result<GradientSeries> {
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let chain = ChainEdges::new(p, graph)?;
    let mut rec = SensitivityRecursion::new(&chain);
    let keep = chain.w_max;
    let mut window = std::collections::VecDeque::with_capacity(keep);
    for _ in 0..horizon {
        rec.step();
        if window.len() == keep {
            window.pop_back();
        }
        window.push_front(rec.current().to_vec());
    }
    Ok(GradientSeries {
        n: chain.n,
        horizon,
        edges: graph.edges().iter().map(|e| (e.u, e.v)).collect(),
        window: window.into(),
    })
}

/// `dJ_trunc / dP` as an `n x n` matrix; zero off the edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyGradient(pub DMatrix<f64>);

impl EntropyGradient {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

fn edge_matrix(graph: &WeightedDigraph, values: &[f64]) -> DMatrix<f64> {
    let n = graph.node_count();
    let mut g = DMatrix::zeros(n, n);
    for (e, x) in graph.edges().iter().zip(values) {
        g[(e.u, e.v)] = *x;
    }
    g
}

/// Gradient of `J_trunc` at duration `N_eta` by the forward sensitivity
/// recursion.
pub fn truncated_entropy_gradient(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    eta: f64,
) -> Result<EntropyGradient> {
    let horizon = duration_for_accuracy(eta, pi.min(), graph.w_max())?;
    truncated_entropy_gradient_at(p, graph, pi, horizon)
}

pub fn truncated_entropy_gradient_at(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    horizon: usize,
) -> Result<EntropyGradient> {
    check_pi(graph, pi)?;
    let chain = ChainEdges::new(p, graph)?;
    let n = chain.n;
    let nn = n * n;
    let mut acc = vec![CompensatedSum::default(); chain.edge_count()];
    let mut rec = SensitivityRecursion::new(&chain);
    let mut weights = vec![0.0; n];
    for _ in 0..horizon {
        rec.step();
        let f = rec.current_f();
        for (i, w) in weights.iter_mut().enumerate() {
            *w = pi[i] * entropy_weight(f[i * n + i]);
        }
        for (col, block) in rec.current().chunks_exact(nn).enumerate() {
            let s: f64 = (0..n).map(|i| weights[i] * block[i * n + i]).sum();
            acc[col].add(s);
        }
    }
    let values: Vec<f64> = acc.iter().map(|a| a.value()).collect();
    Ok(EntropyGradient(edge_matrix(graph, &values)))
}

/// `J_trunc` and its gradient at an explicit duration, by a forward pass that
/// stores every `F_k` followed by a reverse adjoint sweep.
///
/// The adjoint `L_k(h, j) = dJ / dF_k(h, j)` satisfies
/// `L_k(h, j) = c_k(h) 1{h = j} + 1{h != j} sum_{(i,h)} p_ih L_{k + w_ih}(i, j)`
/// with `c_k(h) = -pi_h (1 + log F_k(h, h))`, and
/// `dJ/dp_ih = L_{w_ih}(i, h) + sum_{k > w_ih} sum_{j != h} L_k(i, j) F_{k - w_ih}(h, j)`.
pub fn entropy_and_gradient_at(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    horizon: usize,
) -> Result<(f64, EntropyGradient)> {
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    check_pi(graph, pi)?;
    let chain = ChainEdges::new(p, graph)?;
    let n = chain.n;
    let nn = n * n;
    if horizon.saturating_mul(nn) > MAX_ADJOINT_ENTRIES {
        return Err(Error::TooLarge(format!(
            "adjoint sweep would store {horizon} x {nn} entries"
        )));
    }
    // forward: keep every F_k, k = 1..=N, at offset (k - 1) * nn
    let mut fs = Vec::with_capacity(horizon * nn);
    let mut rec = HittingRecursion::new(&chain);
    let mut value = CompensatedSum::default();
    for _ in 0..horizon {
        let f = rec.step();
        for i in 0..n {
            value.add(pi[i] * neg_x_log_x(f[i * n + i]));
        }
        fs.extend_from_slice(f);
    }
    let f_at = |k: usize| &fs[(k - 1) * nn..k * nn];

    let sources = chain.sources();
    let len = chain.w_max + 1;
    let mut lam = vec![vec![0.0; nn]; len];
    let mut grad = vec![CompensatedSum::default(); chain.edge_count()];
    for k in (1..=horizon).rev() {
        let mut cur = std::mem::take(&mut lam[k % len]);
        cur.iter_mut().for_each(|x| *x = 0.0);
        for e in 0..chain.edge_count() {
            let (i, h, w, pe) = (
                sources[e],
                chain.targets[e],
                chain.weights[e],
                chain.probs[e],
            );
            if pe == 0.0 || k + w > horizon {
                continue;
            }
            let src = &lam[(k + w) % len][i * n..(i + 1) * n];
            axpy_skip(&mut cur[h * n..(h + 1) * n], src, pe, h);
        }
        let fk = f_at(k);
        for h in 0..n {
            cur[h * n + h] = pi[h] * entropy_weight(fk[h * n + h]);
        }
        for e in 0..chain.edge_count() {
            let (i, h, w) = (sources[e], chain.targets[e], chain.weights[e]);
            let row = &cur[i * n..(i + 1) * n];
            if k == w {
                grad[e].add(row[h]);
            } else if k > w {
                let fr = &f_at(k - w)[h * n..(h + 1) * n];
                let s: f64 = row
                    .iter()
                    .zip(fr)
                    .enumerate()
                    .filter(|&(j, _)| j != h)
                    .map(|(_, (a, b))| a * b)
                    .sum();
                grad[e].add(s);
            }
        }
        lam[k % len] = cur;
    }
    let values: Vec<f64> = grad.iter().map(|g| g.value()).collect();
    Ok((value.value(), EntropyGradient(edge_matrix(graph, &values))))
}

/// [`entropy_and_gradient_at`] at duration `N_eta`.
pub fn entropy_and_gradient(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    eta: f64,
) -> Result<(f64, EntropyGradient)> {
    let horizon = duration_for_accuracy(eta, pi.min(), graph.w_max())?;
    entropy_and_gradient_at(p, graph, pi, horizon)
}

/// Finite differences of `J_trunc` on every edge entry, perturbing entries
/// independently: central where `x +- h` stays in `[0, 1]`, second-order
/// one-sided at the bounds.
pub fn finite_difference_gradient(
    p: &TransitionMatrix,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
    eta: f64,
    h: f64,
) -> Result<EntropyGradient> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {h} outside [1e-8, 1e-4]"
        )));
    }
    let horizon = duration_for_accuracy(eta, pi.min(), graph.w_max())?;
    let eval = |e: &crate::graphs::Edge, x: f64| -> Result<f64> {
        let mut m = p.matrix().clone();
        m[(e.u, e.v)] = x;
        truncated_return_entropy_at(&TransitionMatrix::new(m)?, graph, pi, horizon)
    };
    let mut values = Vec::with_capacity(graph.edge_count());
    for e in graph.edges() {
        let x = p[(e.u, e.v)];
        let d = if x + h > 1.0 {
            // second-order one-sided stencils keep entries inside [0, 1]
            (3.0 * eval(e, x)? - 4.0 * eval(e, x - h)? + eval(e, x - 2.0 * h)?) / (2.0 * h)
        } else if x - h < 0.0 {
            (-3.0 * eval(e, x)? + 4.0 * eval(e, x + h)? - eval(e, x + 2.0 * h)?) / (2.0 * h)
        } else {
            (eval(e, x + h)? - eval(e, x - h)?) / (2.0 * h)
        };
        values.push(d);
    }
    Ok(EntropyGradient(edge_matrix(graph, &values)))
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
