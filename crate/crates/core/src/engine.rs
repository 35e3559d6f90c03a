//! The centralized round recursion.
//!
//! One round updates estimates and weights simultaneously from the same
//! round-t snapshot (single time scale, never pre-balanced):
//!
//! ```text
//! x_i <- x_i * (1 - w_i d_i_out) + sum_{j in N_in(i)} w_j x_j - alpha g_i
//! w_i <- w_i / 2 + (1 / d_i_out) * sum_{j in N_in(i)} w_j / 2
//! ```
//!
//! with `g_i` a subgradient of node i's objective at `x_i`. In matrix form
//! the estimate update is `x <- Q(w) x - alpha g` where `Q(w)` is column
//! stochastic by construction and becomes doubly stochastic as the weights
//! balance. Estimates live in `R^d` with the recursion applied
//! componentwise; the scalar case is `d = 1`.
//!
//! Neighbor sums always accumulate in ascending node-id order, which makes
//! runs bit-reproducible and lets the message-passing kernel reproduce this
//! recursion exactly.

use ndarray::Array2;
use thiserror::Error;

use crate::balancing::{
    self, init_weights, node_weight_update, MatrixKind, PropagationMatrix, WeightVector,
    DEFAULT_SAFETY,
};
use crate::digraph::{DiGraph, GraphError};
use crate::objective::ObjectiveSpec;
use crate::schedule::StepSchedule;
use crate::trace::{fnv1a64, ConfigDigest, RunState, RunTrace};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Balance(#[from] balancing::BalanceError),
    #[error(
        "round {round}: node {node} has self-term coefficient {coefficient} <= 0; \
         initial weights violate the safe-initialization contract"
    )]
    DegenerateCoefficient {
        node: usize,
        round: usize,
        coefficient: f64,
    },
    #[error(
        "round {round}: node {node} subgradient norm {norm} exceeds declared bound {bound}"
    )]
    SubgradientBoundExceeded {
        node: usize,
        round: usize,
        norm: f64,
        bound: f64,
    },
    #[error("estimates are {got_rows}x{got_cols}, expected {rows}x{cols}")]
    DimensionMismatch {
        got_rows: usize,
        got_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("run needs at least 1 round")]
    NoRounds,
    #[error("round {round}: estimate for node {node} is not finite")]
    NonFiniteEstimate { node: usize, round: usize },
}

/// Options for a run; `safety` scales the initialization bound and stays in
/// (0, 1].
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub rounds: usize,
    pub schedule: StepSchedule,
    pub safety: f64,
}

impl RunOptions {
    pub fn new(rounds: usize) -> Self {
        RunOptions {
            rounds,
            schedule: StepSchedule::SqrtDefault,
            safety: DEFAULT_SAFETY,
        }
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_safety(mut self, safety: f64) -> Self {
        self.safety = safety;
        self
    }
}

/// One-node estimate update; shared verbatim with the per-node simulation
/// kernel. `neighbor_sum` must hold `sum_j w_j x_j` per component,
/// accumulated in ascending sender-id order.
#[inline]
pub(crate) fn node_estimate_update(
    x_i: &[f64],
    coefficient: f64,
    neighbor_sum: &[f64],
    alpha: f64,
    grad: &[f64],
) -> Vec<f64> {
    x_i.iter()
        .zip(neighbor_sum)
        .zip(grad)
        .map(|((x, s), g)| x * coefficient + s - alpha * g)
        .collect()
}

/// Euclidean norm of one node's subgradient row.
fn grad_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Evaluates every node's subgradient at the given estimates and enforces
/// the declared norm bound.
fn eval_subgradients(
    obj: &ObjectiveSpec,
    estimates: &Array2<f64>,
    round: usize,
) -> Result<Array2<f64>, EngineError> {
    let (n, d) = (estimates.nrows(), estimates.ncols());
    let mut grads = Array2::zeros((n, d));
    for node in 0..n {
        let x: Vec<f64> = estimates.row(node).to_vec();
        let g = obj.subgradient(node, &x);
        debug_assert_eq!(g.len(), d);
        let norm = grad_norm(&g);
        if norm > obj.subgrad_bound() {
            return Err(EngineError::SubgradientBoundExceeded {
                node,
                round,
                norm,
                bound: obj.subgrad_bound(),
            });
        }
        for (c, v) in g.into_iter().enumerate() {
            grads[(node, c)] = v;
        }
    }
    Ok(grads)
}

/// Advances one joint round: returns the subgradients used at `state` and
/// the next state. `next_alpha` becomes the new state's step size.
fn advance(
    g: &DiGraph,
    state: &RunState,
    obj: &ObjectiveSpec,
    next_alpha: f64,
) -> Result<(Array2<f64>, RunState), EngineError> {
    let n = g.node_count();
    let d = state.estimates.ncols();
    let grads = eval_subgradients(obj, &state.estimates, state.round)?;
    let mut next_estimates = Array2::zeros((n, d));
    let mut next_weights = Vec::with_capacity(n);
    let mut neighbor_sum = vec![0.0f64; d];
    for i in 0..n {
        let w_i = state.weights.weights[i];
        let coefficient = 1.0 - w_i * g.out_degree(i) as f64;
        if coefficient <= 0.0 {
            return Err(EngineError::DegenerateCoefficient {
                node: i,
                round: state.round,
                coefficient,
            });
        }
        neighbor_sum.iter_mut().for_each(|s| *s = 0.0);
        let mut half_weight_sum = 0.0;
        for &j in g.in_neighbors(i) {
            let w_j = state.weights.weights[j];
            for (c, s) in neighbor_sum.iter_mut().enumerate() {
                *s += w_j * state.estimates[(j, c)];
            }
            half_weight_sum += 0.5 * w_j;
        }
        let x_i: Vec<f64> = state.estimates.row(i).to_vec();
        let g_i: Vec<f64> = grads.row(i).to_vec();
        let new_x = node_estimate_update(&x_i, coefficient, &neighbor_sum, state.step, &g_i);
        for (c, v) in new_x.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(EngineError::NonFiniteEstimate {
                    node: i,
                    round: state.round + 1,
                });
            }
            next_estimates[(i, c)] = v;
        }
        next_weights.push(node_weight_update(w_i, g.out_degree(i), half_weight_sum));
    }
    let next = RunState {
        round: state.round + 1,
        estimates: next_estimates,
        weights: WeightVector {
            weights: next_weights,
            round: state.round + 1,
        },
        step: next_alpha,
    };
    Ok((grads, next))
}

/// One joint round of the algorithm: round-(t+1) estimates and weights,
/// both computed from the round-t snapshot. The state's own `step` is the
/// alpha used; the returned state carries `schedule(t + 1)`.
pub fn estimate_step(
    g: &DiGraph,
    state: &RunState,
    obj: &ObjectiveSpec,
    schedule: &StepSchedule,
) -> Result<RunState, EngineError> {
    let (_, next) = advance(g, state, obj, schedule.step_size(state.round + 1))?;
    Ok(next)
}

/// The estimate propagation matrix `Q(w)`: `Q[i][i] = 1 - w_i d_i_out`,
/// `Q[i][j] = w_j` for `j` an in-neighbor of `i`, zero otherwise. Column
/// stochastic for any weights satisfying `w_i d_i_out < 1`; also row
/// stochastic exactly when the weights balance the graph.
pub fn build_q(g: &DiGraph, w: &WeightVector) -> Result<PropagationMatrix, EngineError> {
    let n = g.node_count();
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        let diag = 1.0 - w.weights[i] * g.out_degree(i) as f64;
        if diag <= 0.0 {
            return Err(EngineError::DegenerateCoefficient {
                node: i,
                round: w.round,
                coefficient: diag,
            });
        }
        entries[(i, i)] = diag;
        for &j in g.in_neighbors(i) {
            entries[(i, j)] = w.weights[j];
        }
    }
    Ok(PropagationMatrix {
        entries,
        kind: MatrixKind::EstimateQ,
    })
}

/// Config digest shared by the centralized and message-passing executions.
pub(crate) fn run_digest(
    g: &DiGraph,
    obj: &ObjectiveSpec,
    x0: &Array2<f64>,
    opts: &RunOptions,
) -> ConfigDigest {
    let mut edge_bytes = Vec::with_capacity(g.edge_count() * 16);
    for &(u, v) in g.edges() {
        edge_bytes.extend_from_slice(&(u as u64).to_le_bytes());
        edge_bytes.extend_from_slice(&(v as u64).to_le_bytes());
    }
    let mut x0_bytes = Vec::with_capacity(x0.len() * 8);
    for v in x0.iter() {
        x0_bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    let mut digest = ConfigDigest::default();
    digest.push("nodes", g.node_count());
    digest.push("edges", g.edge_count());
    digest.push("graph_fnv", format!("{:016x}", fnv1a64(&edge_bytes)));
    digest.push("objective", obj.name());
    digest.push("subgrad_bound", obj.subgrad_bound());
    digest.push("dim", obj.dim());
    digest.push("x0_fnv", format!("{:016x}", fnv1a64(&x0_bytes)));
    digest.push("schedule", &opts.schedule);
    digest.push("safety", opts.safety);
    digest.push("rounds", opts.rounds);
    digest
}

pub(crate) fn check_shapes(
    g: &DiGraph,
    obj: &ObjectiveSpec,
    x0: &Array2<f64>,
) -> Result<(), EngineError> {
    let n = g.node_count();
    assert_eq!(obj.len(), n, "objective has {} locals for {n} nodes", obj.len());
    if x0.nrows() != n || x0.ncols() != obj.dim() {
        return Err(EngineError::DimensionMismatch {
            got_rows: x0.nrows(),
            got_cols: x0.ncols(),
            rows: n,
            cols: obj.dim(),
        });
    }
    Ok(())
}

/// Runs the joint recursion for `opts.rounds` rounds and records the full
/// trace. The subgradients at the final estimates are evaluated (and
/// bound-checked) as well so every recorded state is complete.
pub fn run(
    g: &DiGraph,
    obj: &ObjectiveSpec,
    x0: &Array2<f64>,
    opts: &RunOptions,
) -> Result<RunTrace, EngineError> {
    if opts.rounds == 0 {
        return Err(EngineError::NoRounds);
    }
    g.validate_strongly_connected()?;
    check_shapes(g, obj, x0)?;
    let stats = g.stats()?;
    let w0 = init_weights(g, &stats, opts.safety)?;
    let mut states = Vec::with_capacity(opts.rounds + 1);
    states.push(RunState {
        round: 0,
        estimates: x0.clone(),
        weights: w0,
        step: opts.schedule.step_size(0),
    });
    let mut subgrads = Vec::with_capacity(opts.rounds + 1);
    for t in 0..opts.rounds {
        let (grads, next) = advance(g, &states[t], obj, opts.schedule.step_size(t + 1))?;
        subgrads.push(grads);
        states.push(next);
    }
    subgrads.push(eval_subgradients(obj, &states[opts.rounds].estimates, opts.rounds)?);
    Ok(RunTrace {
        states,
        subgrads,
        config_digest: run_digest(g, obj, x0, opts),
    })
}

/// Step-size-weighted average of each node's estimates over rounds `0..=t`.
///
/// If every step size in the window is zero (possible only with a zero
/// constant schedule) the unweighted mean of the iterates is returned.
pub fn ergodic_average(trace: &RunTrace, t: usize) -> Array2<f64> {
    assert!(t <= trace.last_round(), "round {t} beyond trace");
    let (n, d) = (trace.node_count(), trace.dim());
    let mut acc = Array2::<f64>::zeros((n, d));
    let mut total = 0.0;
    for state in &trace.states[..=t] {
        let alpha = state.step;
        total += alpha;
        acc.scaled_add(alpha, &state.estimates);
    }
    if total == 0.0 {
        let mut mean = Array2::<f64>::zeros((n, d));
        for state in &trace.states[..=t] {
            mean += &state.estimates;
        }
        return mean / (t + 1) as f64;
    }
    acc / total
}

/// The centroid reference sequence and its ergodic average.
#[derive(Debug, Clone)]
pub struct AuxiliarySequence {
    /// `y(t)` for `t = 0..=T`; `y(0)` is the mean of the initial estimates
    /// and each step subtracts `alpha(t)/n` times the summed subgradients.
    pub values: Vec<Vec<f64>>,
    /// Step-size-weighted average of `values[0..=T]`.
    pub ergodic: Vec<f64>,
}

/// Builds the auxiliary sequence from a recorded trace.
///
/// Because every transition matrix is column stochastic, `y(t)` tracks the
/// estimate centroid exactly in exact arithmetic; its recursion here uses
/// only the recorded subgradients.
pub fn auxiliary_y(trace: &RunTrace, t_end: usize) -> AuxiliarySequence {
    assert!(t_end <= trace.last_round(), "round {t_end} beyond trace");
    let (n, d) = (trace.node_count(), trace.dim());
    let mut y = vec![0.0f64; d];
    for node in 0..n {
        for c in 0..d {
            y[c] += trace.states[0].estimates[(node, c)];
        }
    }
    y.iter_mut().for_each(|v| *v /= n as f64);

    let mut values = Vec::with_capacity(t_end + 1);
    values.push(y.clone());
    for t in 0..t_end {
        let alpha = trace.states[t].step;
        let grads = &trace.subgrads[t];
        for (c, yc) in y.iter_mut().enumerate() {
            let mut grad_sum = 0.0;
            for node in 0..n {
                grad_sum += grads[(node, c)];
            }
            *yc -= alpha * grad_sum / n as f64;
        }
        values.push(y.clone());
    }

    let mut ergodic = vec![0.0f64; d];
    let mut total = 0.0;
    for (t, value) in values.iter().enumerate() {
        let alpha = trace.states[t].step;
        total += alpha;
        for (c, v) in value.iter().enumerate() {
            ergodic[c] += alpha * v;
        }
    }
    if total > 0.0 {
        ergodic.iter_mut().for_each(|v| *v /= total);
    } else {
        for (c, v) in ergodic.iter_mut().enumerate() {
            *v = values.iter().map(|row| row[c]).sum::<f64>() / values.len() as f64;
        }
    }
    AuxiliarySequence { values, ergodic }
}
