//! JSON files for graphs and chains, and small textual argument formats.
//!
//! Graph file: `{"n": 3, "edges": [{"u": 0, "v": 1, "w": 2}, ...], "pi": [..]}`.
//! Chain file: `{"n": 3, "p": [row-major entries]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{Edge, StationaryDistribution, TransitionMatrix, WeightedDigraph, MAX_NODES};

/// Longest accepted `a..b` range of attack durations.
pub const MAX_TAU_RANGE: usize = 100_000;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    n: usize,
    edges: Vec<Edge>,
    pi: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    n: usize,
    p: Vec<f64>,
}

/// A graph read from disk. Travel times are divided by their gcd;
/// `gcd_factor > 1` records that this happened.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedGraph {
    pub graph: WeightedDigraph,
    pub pi: StationaryDistribution,
    pub gcd_factor: u32,
}

impl LoadedGraph {
    pub fn was_rescaled(&self) -> bool {
        self.gcd_factor > 1
    }
}

fn parse_err(e: serde_json::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn parse_graph_json(text: &str) -> Result<LoadedGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(parse_err)?;
    if file.n > MAX_NODES {
        return Err(Error::TooLarge(format!(
            "{} nodes exceeds the limit of {MAX_NODES}",
            file.n
        )));
    }
    if file.pi.len() != file.n {
        return Err(Error::DimensionMismatch {
            expected: file.n,
            actual: file.pi.len(),
        });
    }
    let raw = WeightedDigraph::new(file.n, file.edges)?;
    let pi = StationaryDistribution::new(file.pi)?;
    let (graph, gcd_factor) = raw.normalized();
    if gcd_factor > 1 {
        log::warn!("travel times share the factor {gcd_factor}; dividing it out");
    }
    Ok(LoadedGraph {
        graph,
        pi,
        gcd_factor,
    })
}

pub fn graph_to_json(graph: &WeightedDigraph, pi: &StationaryDistribution) -> String {
    let file = GraphFile {
        n: graph.node_count(),
        edges: graph.edges().to_vec(),
        pi: pi.as_slice().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("graph serializes")
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<LoadedGraph> {
    parse_graph_json(&fs::read_to_string(path)?)
}

pub fn save_graph(
    path: impl AsRef<Path>,
    graph: &WeightedDigraph,
    pi: &StationaryDistribution,
) -> Result<()> {
    fs::write(path, graph_to_json(graph, pi) + "\n")?;
    Ok(())
}

pub fn parse_chain_json(text: &str) -> Result<TransitionMatrix> {
    let file: ChainFile = serde_json::from_str(text).map_err(parse_err)?;
    if file.n == 0 || file.n > MAX_NODES {
        return Err(Error::InvalidParameter(format!(
            "chain size {} outside [1, {MAX_NODES}]",
            file.n
        )));
    }
    TransitionMatrix::from_row_major(file.n, &file.p)
}

pub fn chain_to_json(p: &TransitionMatrix) -> String {
    let file = ChainFile {
        n: p.n(),
        p: p.to_row_major(),
    };
    serde_json::to_string_pretty(&file).expect("chain serializes")
}

pub fn load_chain(path: impl AsRef<Path>) -> Result<TransitionMatrix> {
    parse_chain_json(&fs::read_to_string(path)?)
}

pub fn save_chain(path: impl AsRef<Path>, p: &TransitionMatrix) -> Result<()> {
    fs::write(path, chain_to_json(p) + "\n")?;
    Ok(())
}

/// Inclusive range `a..b` (or `a..=b`) of attack durations, `1 <= a <= b`.
pub fn parse_tau_range(text: &str) -> Result<Vec<u32>> {
    let bad = || Error::Parse(format!("expected a tau range like 1..20, got '{text}'"));
    let (a, b) = text.trim().split_once("..").ok_or_else(bad)?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: u32 = a.trim().parse().map_err(|_| bad())?;
    let b: u32 = b.trim().parse().map_err(|_| bad())?;
    if a < 1 || a > b {
        return Err(Error::Parse(format!(
            "tau range {a}..{b} must satisfy 1 <= start <= end"
        )));
    }
    if (b - a) as usize >= MAX_TAU_RANGE {
        return Err(Error::TooLarge(format!("tau range {a}..{b} is too long")));
    }
    Ok((a..=b).collect())
}
