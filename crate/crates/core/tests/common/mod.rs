// Random instances shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use return_entropy::graphs::{stationary_of, Edge};
use return_entropy::{FeasibleSetSpec, StationaryDistribution, TransitionMatrix, WeightedDigraph};

/// Strongly connected digraph: a directed Hamiltonian cycle plus every other
/// ordered pair (self-loops included) with probability `density`.
pub fn random_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_weight: u32,
    density: f64,
) -> WeightedDigraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if v == (u + 1) % n || rng.gen_bool(density) {
                edges.push(Edge {
                    u,
                    v,
                    w: rng.gen_range(1..=max_weight),
                });
            }
        }
    }
    WeightedDigraph::new(n, edges).unwrap()
}

/// Row-stochastic matrix on the edges of `g` with entries drawn from
/// `[floor, 1]` before normalization.
pub fn random_stochastic(
    rng: &mut ChaCha8Rng,
    g: &WeightedDigraph,
    floor: f64,
) -> TransitionMatrix {
    let n = g.node_count();
    let mut m = DMatrix::zeros(n, n);
    for u in 0..n {
        let edges = g.out_edges(u);
        let draws: Vec<f64> = edges.iter().map(|_| rng.gen_range(floor..=1.0)).collect();
        let total: f64 = draws.iter().sum();
        for (e, x) in edges.iter().zip(draws) {
            m[(u, e.v)] = x / total;
        }
    }
    TransitionMatrix::new(m).unwrap()
}

/// A random positive chain together with its own stationary distribution,
/// so the chain is feasible for `(g, pi)` by construction.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
    max_weight: u32,
) -> (WeightedDigraph, TransitionMatrix, StationaryDistribution) {
    let g = random_graph(rng, n, max_weight, 0.4);
    let p = random_stochastic(rng, &g, 0.05);
    let pi = stationary_of(&p).unwrap();
    (g, p, pi)
}

pub fn spec(g: &WeightedDigraph, pi: &StationaryDistribution, eps: f64) -> FeasibleSetSpec {
    FeasibleSetSpec::new(g.clone(), pi.clone(), eps).unwrap()
}

/// Two-parameter chain on the four-node digraph with edges
/// 0->1, 1->0, 1->3, 3->2, 2->3, 2->0.
pub fn four_node_example(
    a: f64,
    b: f64,
) -> (WeightedDigraph, TransitionMatrix, StationaryDistribution) {
    let pairs = [(0, 1), (1, 0), (1, 3), (3, 2), (2, 3), (2, 0)];
    let edges = pairs.iter().map(|&(u, v)| Edge { u, v, w: 1 }).collect();
    let g = WeightedDigraph::new(4, edges).unwrap();
    let mut m = DMatrix::zeros(4, 4);
    m[(0, 1)] = 1.0;
    m[(1, 0)] = a;
    m[(1, 3)] = 1.0 - a;
    m[(3, 2)] = 1.0;
    m[(2, 3)] = b;
    m[(2, 0)] = 1.0 - b;
    let p = TransitionMatrix::new(m).unwrap();
    let pi = stationary_of(&p).unwrap();
    (g, p, pi)
}
