//! Per-node, message-passing execution of the algorithm.
//!
//! Each node holds only its id, its out-degree, its own objective, its
//! estimate, and its weight. Once per round it broadcasts the pair
//! `(w x, w)` — the same payload to every out-neighbor — and consumes
//! exactly one such message from each in-neighbor. No node ever sees the
//! graph, the node count, or another node's objective; the driver routes
//! messages, nothing more.
//!
//! Because the per-node arithmetic is shared with the centralized engine
//! and inbox sums run in ascending sender order, a simulation is
//! bit-identical to the corresponding centralized run.

use std::sync::Arc;

use ndarray::Array2;
use thiserror::Error;

use crate::balancing::{init_weights, node_weight_update, WeightVector};
use crate::digraph::DiGraph;
use crate::engine::{check_shapes, node_estimate_update, run_digest, EngineError, RunOptions};
use crate::objective::{LocalObjective, ObjectiveSpec};
use crate::textfmt::sig17;
use crate::trace::{RunState, RunTrace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("round {round}: node {node} received two messages from sender {sender}")]
    DuplicateSender {
        round: usize,
        node: usize,
        sender: usize,
    },
    #[error("round {round}: node {node} inbox does not match its established senders")]
    SenderSetMismatch { round: usize, node: usize },
    #[error("round {round}: node {node} got a message stamped for round {got}")]
    RoundMismatch {
        round: usize,
        node: usize,
        got: usize,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// The payload a node sends to all of its out-neighbors at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub sender: usize,
    /// `w * x`, one entry per component.
    pub weighted_estimate: Vec<f64>,
    pub weight: f64,
    pub round: usize,
}

/// A node's complete local state. Beyond its own numbers it knows only its
/// out-degree (the update rules need it) — not the node count, the graph,
/// or anyone else's objective.
pub struct NodeActor {
    id: usize,
    out_degree: usize,
    local_objective: Arc<dyn LocalObjective>,
    subgrad_bound: f64,
    x: Vec<f64>,
    w: f64,
    round: usize,
    /// Sender set learned from the first inbox; the graph is static, so any
    /// later deviation is a synchrony violation.
    established_senders: Option<Vec<usize>>,
}

/// What one round of local processing produces.
#[derive(Debug)]
pub struct NodeRound {
    pub broadcast: Broadcast,
    /// The subgradient the node used this round.
    pub subgradient: Vec<f64>,
}

impl NodeActor {
    pub fn new(
        id: usize,
        out_degree: usize,
        local_objective: Arc<dyn LocalObjective>,
        subgrad_bound: f64,
        x0: Vec<f64>,
        w0: f64,
    ) -> Self {
        NodeActor {
            id,
            out_degree,
            local_objective,
            subgrad_bound,
            x: x0,
            w: w0,
            round: 0,
            established_senders: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn estimate(&self) -> &[f64] {
        &self.x
    }

    pub fn weight(&self) -> f64 {
        self.w
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// The round-stamped payload for the node's current state.
    pub fn broadcast(&self) -> Broadcast {
        Broadcast {
            sender: self.id,
            weighted_estimate: self.x.iter().map(|x| self.w * x).collect(),
            weight: self.w,
            round: self.round,
        }
    }

    fn checked_subgradient(&self) -> Result<Vec<f64>, SimError> {
        let g = self.local_objective.subgradient(&self.x);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.subgrad_bound {
            return Err(EngineError::SubgradientBoundExceeded {
                node: self.id,
                round: self.round,
                norm,
                bound: self.subgrad_bound,
            }
            .into());
        }
        Ok(g)
    }

    /// Consumes one round's inbox (exactly one message per in-neighbor) and
    /// advances the local state; returns the next round's broadcast and the
    /// subgradient that was used. Inbox sums run in ascending sender order
    /// regardless of delivery order.
    pub fn node_round(&mut self, inbox: &[Broadcast], alpha: f64) -> Result<NodeRound, SimError> {
        let mut messages: Vec<&Broadcast> = inbox.iter().collect();
        messages.sort_by_key(|m| m.sender);
        for pair in messages.windows(2) {
            if pair[0].sender == pair[1].sender {
                return Err(SimError::DuplicateSender {
                    round: self.round,
                    node: self.id,
                    sender: pair[0].sender,
                });
            }
        }
        for m in &messages {
            if m.round != self.round {
                return Err(SimError::RoundMismatch {
                    round: self.round,
                    node: self.id,
                    got: m.round,
                });
            }
        }
        let senders: Vec<usize> = messages.iter().map(|m| m.sender).collect();
        match &self.established_senders {
            Some(expected) if *expected != senders => {
                return Err(SimError::SenderSetMismatch {
                    round: self.round,
                    node: self.id,
                });
            }
            Some(_) => {}
            None => self.established_senders = Some(senders),
        }

        let coefficient = 1.0 - self.w * self.out_degree as f64;
        if coefficient <= 0.0 {
            return Err(EngineError::DegenerateCoefficient {
                node: self.id,
                round: self.round,
                coefficient,
            }
            .into());
        }
        let grad = self.checked_subgradient()?;
        let dim = self.x.len();
        let mut neighbor_sum = vec![0.0f64; dim];
        let mut half_weight_sum = 0.0;
        for m in &messages {
            for (s, we) in neighbor_sum.iter_mut().zip(&m.weighted_estimate) {
                *s += we;
            }
            half_weight_sum += 0.5 * m.weight;
        }
        self.x = node_estimate_update(&self.x, coefficient, &neighbor_sum, alpha, &grad);
        self.w = node_weight_update(self.w, self.out_degree, half_weight_sum);
        self.round += 1;
        Ok(NodeRound {
            broadcast: self.broadcast(),
            subgradient: grad,
        })
    }
}

/// One delivered message, for the optional protocol log.
#[derive(Debug, Clone)]
pub struct MessageRecord {
    pub round: usize,
    pub sender: usize,
    pub weight: f64,
    pub weighted_estimate: Vec<f64>,
}

/// Log of every broadcast actually delivered, one record per sender per
/// round (a broadcast is a single emission however many receive it).
#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
    /// Messages delivered per round; equals the edge count every round.
    pub delivered_per_round: Vec<usize>,
}

impl MessageLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,sender,weight,weighted_estimate\n");
        for r in &self.records {
            let estimate = r
                .weighted_estimate
                .iter()
                .map(|v| sig17(*v))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!(
                "{},{},{},{estimate}\n",
                r.round,
                r.sender,
                sig17(r.weight)
            ));
        }
        out
    }
}

/// Runs the synchronous message-passing protocol and records the same trace
/// the centralized engine would produce — bit-identical, including the
/// config digest.
pub fn simulate(
    g: &DiGraph,
    obj: &ObjectiveSpec,
    x0: &Array2<f64>,
    opts: &RunOptions,
) -> Result<RunTrace, SimError> {
    simulate_inner(g, obj, x0, opts, None)
}

/// Like [`simulate`] but also returns the per-round message log.
pub fn simulate_logged(
    g: &DiGraph,
    obj: &ObjectiveSpec,
    x0: &Array2<f64>,
    opts: &RunOptions,
) -> Result<(RunTrace, MessageLog), SimError> {
    let mut log = MessageLog::default();
    let trace = simulate_inner(g, obj, x0, opts, Some(&mut log))?;
    Ok((trace, log))
}

fn simulate_inner(
    g: &DiGraph,
    obj: &ObjectiveSpec,
    x0: &Array2<f64>,
    opts: &RunOptions,
    mut log: Option<&mut MessageLog>,
) -> Result<RunTrace, SimError> {
    if opts.rounds == 0 {
        return Err(EngineError::NoRounds.into());
    }
    g.validate_strongly_connected().map_err(EngineError::from)?;
    check_shapes(g, obj, x0)?;
    let stats = g.stats().map_err(EngineError::from)?;
    let w0 = init_weights(g, &stats, opts.safety).map_err(EngineError::from)?;

    let n = g.node_count();
    let d = obj.dim();
    let mut actors: Vec<NodeActor> = (0..n)
        .map(|i| {
            NodeActor::new(
                i,
                g.out_degree(i),
                obj.local(i).clone(),
                obj.subgrad_bound(),
                x0.row(i).to_vec(),
                w0.weights[i],
            )
        })
        .collect();

    let snapshot = |actors: &[NodeActor], round: usize, step: f64| -> RunState {
        let mut estimates = Array2::zeros((n, d));
        let mut weights = Vec::with_capacity(n);
        for (i, actor) in actors.iter().enumerate() {
            for (c, v) in actor.estimate().iter().enumerate() {
                estimates[(i, c)] = *v;
            }
            weights.push(actor.weight());
        }
        RunState {
            round,
            estimates,
            weights: WeightVector { weights, round },
            step,
        }
    };

    let mut states = Vec::with_capacity(opts.rounds + 1);
    states.push(snapshot(&actors, 0, opts.schedule.step_size(0)));
    let mut subgrads: Vec<Array2<f64>> = Vec::with_capacity(opts.rounds + 1);

    // Current round's broadcasts, indexed by sender.
    let mut outbox: Vec<Broadcast> = actors.iter().map(|a| a.broadcast()).collect();
    let edge_count = g.edge_count();

    for t in 0..opts.rounds {
        if let Some(log) = log.as_deref_mut() {
            for b in &outbox {
                log.records.push(MessageRecord {
                    round: b.round,
                    sender: b.sender,
                    weight: b.weight,
                    weighted_estimate: b.weighted_estimate.clone(),
                });
            }
        }
        let alpha = opts.schedule.step_size(t);
        let mut delivered = 0usize;
        let mut next_outbox: Vec<Broadcast> = Vec::with_capacity(n);
        let mut grads = Array2::zeros((n, d));
        // Global barrier: all round-t broadcasts exist before any node
        // computes round t+1.
        for (i, actor) in actors.iter_mut().enumerate() {
            let inbox: Vec<Broadcast> = g
                .in_neighbors(i)
                .iter()
                .map(|&j| outbox[j].clone())
                .collect();
            delivered += inbox.len();
            let output = actor.node_round(&inbox, alpha)?;
            for (c, v) in output.subgradient.iter().enumerate() {
                grads[(i, c)] = *v;
            }
            next_outbox.push(output.broadcast);
        }
        assert_eq!(
            delivered, edge_count,
            "every round delivers exactly one message per edge"
        );
        if let Some(log) = log.as_deref_mut() {
            log.delivered_per_round.push(delivered);
        }
        subgrads.push(grads);
        outbox = next_outbox;
        states.push(snapshot(&actors, t + 1, opts.schedule.step_size(t + 1)));
    }

    // Final-round subgradients, recorded for trace completeness.
    let mut final_grads = Array2::zeros((n, d));
    for (i, actor) in actors.iter().enumerate() {
        let g_i = actor.checked_subgradient()?;
        for (c, v) in g_i.into_iter().enumerate() {
            final_grads[(i, c)] = v;
        }
    }
    subgrads.push(final_grads);

    Ok(RunTrace {
        states,
        subgrads,
        config_digest: run_digest(g, obj, x0, opts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine;
    use crate::objective::Zero;
    use crate::schedule::StepSchedule;
    use ndarray::arr2;

    fn zero_local() -> Arc<dyn LocalObjective> {
        Arc::new(Zero { dim: 1 })
    }

    /// A lone actor built from purely local data reproduces the
    /// hand-computed update; nothing global exists in this test.
    #[test]
    fn node_round_hand_values() {
        let mut actor = NodeActor::new(0, 1, zero_local(), 0.0, vec![0.0], 0.25);
        let inbox = [Broadcast {
            sender: 7,
            weighted_estimate: vec![0.5],
            weight: 0.25,
            round: 0,
        }];
        let out = actor.node_round(&inbox, 1.0).unwrap();
        assert_eq!(actor.estimate(), &[0.5]);
        assert_eq!(actor.weight(), 0.25);
        assert_eq!(out.broadcast.round, 1);
        assert_eq!(out.broadcast.weighted_estimate, vec![0.125]);
    }

    #[test]
    fn equal_estimates_on_cycle_are_fixed() {
        // Uniform weights and equal estimates: a cycle node's state is
        // unchanged by a round with zero objective.
        let mut actor = NodeActor::new(1, 1, zero_local(), 0.0, vec![3.0], 0.5);
        let inbox = [Broadcast {
            sender: 0,
            weighted_estimate: vec![1.5],
            weight: 0.5,
            round: 0,
        }];
        actor.node_round(&inbox, 1.0).unwrap();
        assert_eq!(actor.estimate(), &[3.0]);
        assert_eq!(actor.weight(), 0.5);
    }

    #[test]
    fn duplicate_sender_is_rejected() {
        let mut actor = NodeActor::new(0, 1, zero_local(), 0.0, vec![0.0], 0.25);
        let msg = Broadcast {
            sender: 3,
            weighted_estimate: vec![0.1],
            weight: 0.1,
            round: 0,
        };
        let err = actor.node_round(&[msg.clone(), msg], 1.0).unwrap_err();
        assert!(matches!(err, SimError::DuplicateSender { sender: 3, .. }));
    }

    #[test]
    fn sender_set_changes_are_rejected() {
        let mut actor = NodeActor::new(0, 1, zero_local(), 0.0, vec![0.0], 0.25);
        let msg = |sender: usize, round: usize| Broadcast {
            sender,
            weighted_estimate: vec![0.1],
            weight: 0.1,
            round,
        };
        actor.node_round(&[msg(3, 0)], 1.0).unwrap();
        let err = actor.node_round(&[msg(4, 1)], 1.0).unwrap_err();
        assert!(matches!(err, SimError::SenderSetMismatch { .. }));
        // Missing message: empty inbox also mismatches.
        let err = actor.node_round(&[], 1.0).unwrap_err();
        assert!(matches!(err, SimError::SenderSetMismatch { .. }));
    }

    #[test]
    fn stale_round_is_rejected() {
        let mut actor = NodeActor::new(0, 1, zero_local(), 0.0, vec![0.0], 0.25);
        let msg = Broadcast {
            sender: 3,
            weighted_estimate: vec![0.1],
            weight: 0.1,
            round: 5,
        };
        let err = actor.node_round(&[msg], 1.0).unwrap_err();
        assert!(matches!(err, SimError::RoundMismatch { got: 5, .. }));
    }

    #[test]
    fn one_round_on_g4_matches_hand_arithmetic() {
        let g = DiGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap();
        let obj = ObjectiveSpec::quadratic_estimation(&[1.0, 2.0, 3.0]);
        let x0 = arr2(&[[0.0], [1.0], [2.0]]);
        let opts = RunOptions::new(1).with_schedule(StepSchedule::constant(0.1).unwrap());
        let trace = simulate(&g, &obj, &x0, &opts).unwrap();
        // w0 = 0.5 * (1/2)^5 = 0.015625 everywhere.
        let w0 = 0.015625;
        // Node 0: x (1 - 2 w0) + w0 x2 - 0.1 (x0 - 1)
        let expect0 = 0.0 * (1.0 - 2.0 * w0) + w0 * 2.0 - 0.1 * (0.0 - 1.0);
        // Node 1: x (1 - w0) + w0 x0 - 0.1 (x1 - 2)
        let expect1 = 1.0 * (1.0 - w0) + w0 * 0.0 - 0.1 * (1.0 - 2.0);
        // Node 2: x (1 - w0) + w0 x0 + w0 x1 - 0.1 (x2 - 3)
        let expect2 = 2.0 * (1.0 - w0) + (w0 * 0.0 + w0 * 1.0) - 0.1 * (2.0 - 3.0);
        let got = &trace.states[1].estimates;
        assert!((got[(0, 0)] - expect0).abs() < 1e-15);
        assert!((got[(1, 0)] - expect1).abs() < 1e-15);
        assert!((got[(2, 0)] - expect2).abs() < 1e-15);
    }

    #[test]
    fn simulation_is_bit_identical_to_engine_run() {
        let g = DiGraph::generate(11, 0.25, 17).unwrap();
        let targets: Vec<f64> = (1..=11).map(|i| i as f64).collect();
        let obj = ObjectiveSpec::quadratic_estimation(&targets);
        let x0 = Array2::zeros((11, 1));
        let opts = RunOptions::new(300);
        let sim = simulate(&g, &obj, &x0, &opts).unwrap();
        let eng = engine::run(&g, &obj, &x0, &opts).unwrap();
        assert!(sim.bit_identical(&eng));
    }

    #[test]
    fn consensus_on_random_graph_reaches_mean() {
        let g = DiGraph::generate(20, 0.0, 1).unwrap(); // 20-cycle draw
        let obj = ObjectiveSpec::zero(20, 1);
        let x0 = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let trace = simulate(&g, &obj, &x0, &RunOptions::new(4000)).unwrap();
        let last = &trace.states[4000].estimates;
        for i in 0..20 {
            assert!((last[(i, 0)] - 9.5).abs() < 1e-8, "node {i}");
        }
    }

    #[test]
    fn message_count_per_round_equals_edge_count() {
        let g = DiGraph::generate(9, 0.3, 2).unwrap();
        let obj = ObjectiveSpec::zero(9, 1);
        let x0 = Array2::zeros((9, 1));
        let (_, log) = simulate_logged(&g, &obj, &x0, &RunOptions::new(20)).unwrap();
        assert_eq!(log.delivered_per_round.len(), 20);
        for &count in &log.delivered_per_round {
            assert_eq!(count, g.edge_count());
        }
        // One emission per node per round.
        assert_eq!(log.records.len(), 20 * 9);
        let csv = log.to_csv();
        assert!(csv.starts_with("t,sender,weight,weighted_estimate\n"));
    }
}
