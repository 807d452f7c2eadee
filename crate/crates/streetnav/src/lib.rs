//! Desk-scale street-graph navigation: a directed graph environment with
//! heading-labeled edges, landmark phrase extraction and grounding, a
//! dynamically growing topology map with a graph-convolution encoder,
//! pluggable decision policies, and TC/SPD/KPA trajectory evaluation.
//!
//! The crate is organized around the stages of one navigation episode:
//!
//! - [`env`] — the street graph, agent state, and transition function
//! - [`data`] — file formats, synthetic world generation, splits, statistics
//! - [`extract`] — landmark phrase extraction from instruction text
//! - [`fusion`] — region/text feature fusion, match scoring, verbalization
//! - [`topo`] — the growing topology map and its adjacency/loss
//! - [`kernels`] — dense numerical kernels with analytic gradients
//! - [`encoder`] — the composed topology-map encoder
//! - [`runtime`] — the episode loop, policies, losses, and training
//! - [`metrics`] — TC, SPD, and KPA evaluation and report emission
//!
//! Each capability has a runnable demo under `examples/`; the `streetnav`
//! binary wires the same pieces into `gen`, `run`, `train`, `eval`,
//! `extract-eval`, `gradcheck`, and `stats` subcommands.

pub mod bundle;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod env;
pub mod extract;
pub mod fusion;
pub mod kernels;
pub mod metrics;
pub mod runtime;
pub mod topo;

pub use env::{Action, AgentState, EnvGraph, Heading, NodeId};
