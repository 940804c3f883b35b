//! Learned heuristics for budget-constrained set combinatorial problems on
//! graphs (max coverage, budgeted vertex cover, influence maximization).
//!
//! The pipeline samples soft labels with probabilistic greedy, trains a
//! mean-pool graph convolutional node scorer, prunes low-ranked nodes with
//! a budget-indexed cutoff, and finishes with an n-step fitted Q-learning
//! head whose locality feature can be estimated by importance sampling.
//! Classical baselines (greedy, CELF, stochastic greedy) and an exact
//! branch-and-bound solver are included for comparison.

pub mod baselines;
pub mod error;
pub mod fmt;
pub mod gcn;
pub mod graph;
pub mod objectives;
pub mod pipeline;
pub mod qlearn;
pub mod nn;
pub mod noise;
pub mod seed;
pub mod supervision;

pub use error::{GcombError, Result};
pub use graph::Graph;
pub use objectives::{Objective, ObjectiveKind, ObjectiveSpec};
