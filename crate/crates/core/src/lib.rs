//! Distributed subgradient optimization over directed graphs.
//!
//! A set of nodes connected by a strongly connected digraph cooperatively
//! minimizes the sum of locally known convex functions. Each round, every
//! node combines its in-neighbors' weight-scaled estimates with its own,
//! takes a step along its local subgradient, and simultaneously updates a
//! scalar balancing weight. The weights converge to balancing weights of
//! the graph, which makes the (always column-stochastic) round transition
//! matrices doubly stochastic in the limit; that is enough for the ergodic
//! averages of the estimates to reach consensus on a minimizer.
//!
//! The crate provides:
//!
//! * [`digraph`] — the directed-graph model, validation, and structural
//!   stats (diameter, max out-degree),
//! * [`balancing`] — the weight update, its matrix form, and the balance
//!   residual,
//! * [`objective`] — local convex objectives via value/subgradient oracles,
//! * [`engine`] — the centralized round recursion, step-size schedules,
//!   ergodic averages,
//! * [`simkernel`] — a per-node message-passing execution of the same
//!   algorithm that bit-matches the centralized one,
//! * [`analysis`] — diagnostics on recorded traces: transition-product
//!   uniformization, geometric-rate fits, consensus violation, optimality
//!   gaps, and convergence-bound audits,
//! * [`experiment`] — experiment configs, presets, and CSV artifacts.

pub mod analysis;
pub mod balancing;
pub mod digraph;
pub mod engine;
pub mod experiment;
pub mod objective;
pub mod schedule;
pub mod simkernel;
pub mod trace;

pub(crate) mod textfmt;

pub use analysis::{DiagnosticsReport, PhiSeries};
pub use balancing::{MatrixKind, PropagationMatrix, WeightVector};
pub use digraph::{DiGraph, GraphStats, LabeledGraph};
pub use engine::RunOptions;
pub use objective::ObjectiveSpec;
pub use schedule::StepSchedule;
pub use trace::{RunState, RunTrace};
