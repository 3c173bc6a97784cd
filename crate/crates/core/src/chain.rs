//! Sparse view of a chain on its graph and the streaming first-hitting-time
//! recursion shared by the series, metrics and gradient code.

use crate::error::{Error, Result};
use crate::graphs::{TransitionMatrix, WeightedDigraph};

/// Entries of `P` outside the edge set larger than this are rejected.
pub(crate) const PATTERN_TOL: f64 = 1e-12;

/// Edge list of a chain in the graph's canonical (row-sorted) order.
#[derive(Debug, Clone)]
pub(crate) struct ChainEdges {
    pub n: usize,
    pub w_max: usize,
    pub row_start: Vec<usize>,
    pub targets: Vec<usize>,
    pub weights: Vec<usize>,
    pub probs: Vec<f64>,
}

impl ChainEdges {
    pub fn new(p: &TransitionMatrix, graph: &WeightedDigraph) -> Result<Self> {
        let n = graph.node_count();
        if p.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: p.n(),
            });
        }
        let m = p.matrix();
        for i in 0..n {
            for j in 0..n {
                if !graph.has_edge(i, j) && m[(i, j)].abs() > PATTERN_TOL {
                    return Err(Error::PatternMismatch(format!(
                        "P[{i}][{j}] = {} but the graph has no edge {i} -> {j}",
                        m[(i, j)]
                    )));
                }
            }
        }
        let mut row_start = vec![0; n + 1];
        for u in 0..n {
            row_start[u + 1] = row_start[u] + graph.out_degree(u);
        }
        let edges = graph.edges();
        Ok(Self {
            n,
            w_max: graph.w_max() as usize,
            row_start,
            targets: edges.iter().map(|e| e.v).collect(),
            weights: edges.iter().map(|e| e.w as usize).collect(),
            probs: edges.iter().map(|e| m[(e.u, e.v)]).collect(),
        })
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn sources(&self) -> Vec<usize> {
        (0..self.n)
            .flat_map(|u| std::iter::repeat_n(u, self.row_start[u + 1] - self.row_start[u]))
            .collect()
    }
}

/// Computes `F_1, F_2, ...` one step at a time, keeping the last `w_max + 1`
/// matrices (row-major, `n * n`) in a ring buffer.
pub(crate) struct HittingRecursion<'a> {
    chain: &'a ChainEdges,
    k: usize,
    slots: Vec<Vec<f64>>,
}

impl<'a> HittingRecursion<'a> {
    pub fn new(chain: &'a ChainEdges) -> Self {
        let nn = chain.n * chain.n;
        Self {
            chain,
            k: 0,
            slots: vec![vec![0.0; nn]; chain.w_max + 1],
        }
    }

    /// Index of the most recently computed matrix.
    pub fn k(&self) -> usize {
        self.k
    }

    /// `F_{k - lag}` for `lag <= w_max`, or `None` when that index is `<= 0`.
    pub fn lagged(&self, lag: usize) -> Option<&[f64]> {
        if lag > self.k || lag > self.chain.w_max {
            return None;
        }
        Some(&self.slots[(self.k - lag) % self.slots.len()])
    }

    /// Advances to `F_{k+1}` and returns it.
    pub fn step(&mut self) -> &[f64] {
        let c = self.chain;
        let n = c.n;
        let k = self.k + 1;
        let len = self.slots.len();
        let mut out = std::mem::take(&mut self.slots[k % len]);
        out.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for e in c.row_start[i]..c.row_start[i + 1] {
                let p = c.probs[e];
                if p == 0.0 {
                    continue;
                }
                let h = c.targets[e];
                let w = c.weights[e];
                if k == w {
                    row[h] += p;
                } else if k > w {
                    let src = &self.slots[(k - w) % len][h * n..(h + 1) * n];
                    // column h is skipped: a path that reached h has stopped
                    axpy_skip(row, src, p, h);
                }
            }
        }
        self.slots[k % len] = out;
        self.k = k;
        &self.slots[k % len]
    }
}

/// `dst[j] += a * src[j]` for every `j != skip`.
#[inline]
pub(crate) fn axpy_skip(dst: &mut [f64], src: &[f64], a: f64, skip: usize) {
    let (d0, d1) = dst.split_at_mut(skip);
    let (s0, s1) = src.split_at(skip);
    for (d, s) in d0.iter_mut().zip(s0) {
        *d += a * s;
    }
    for (d, s) in d1[1..].iter_mut().zip(&s1[1..]) {
        *d += a * s;
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `-x log x` with `0 log 0 = 0`.
pub(crate) fn neg_x_log_x(x: f64) -> f64 {
    if x > 0.0 {
        -x * x.ln()
    } else {
        0.0
    }
}
