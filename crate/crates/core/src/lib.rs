//! Markov-chain patrol strategies on strongly connected digraphs with integer
//! travel times.
//!
//! The central quantity is the *return-time entropy* of a chain: the
//! stationary-weighted Shannon entropy (in nats) of the first-return-time
//! distribution of every node. The crate computes those distributions through
//! a delayed linear recursion ([`hitting`]), evaluates the entropy and several
//! baseline metrics ([`metrics`]), differentiates the truncated entropy
//! ([`gradient`]), and maximizes it over the set of chains that conform to a
//! graph and a prescribed stationary distribution ([`optimize`]). The
//! [`intruder`] module scores chains against a rational intruder that learns
//! return-time statistics.
//!
//! ```
//! use return_entropy::graphs::{build_graph, GraphKind};
//! use return_entropy::metrics::{return_entropy_estimate, max_entropy_upper_bound};
//! use return_entropy::TransitionMatrix;
//!
//! let (graph, pi) = build_graph(GraphKind::Complete { n: 4 }).unwrap();
//! let chain = TransitionMatrix::rank_one(&pi);
//! let (j, bound) = return_entropy_estimate(&chain, &graph, &pi, 1e-9).unwrap();
//! assert!((j - max_entropy_upper_bound(&pi)).abs() < 1e-8 + bound);
//! ```

pub mod error;
pub mod gradient;
pub mod graphs;
pub mod hitting;
pub mod intruder;
pub mod io;
pub mod metrics;
pub mod optimize;

mod chain;
mod spectral;

pub use error::{Error, Result};
pub use graphs::{
    FeasibleSetSpec, StationaryDistribution, TransitionMatrix, ValidationReport, WeightedDigraph,
};
