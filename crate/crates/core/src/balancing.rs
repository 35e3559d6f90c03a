//! Online weight balancing.
//!
//! Each node carries a positive scalar weight. One round of the update
//! halves the node's own weight and adds the halved weights of its
//! in-neighbors scaled by `1 / d_out`:
//!
//! ```text
//! w_i <- w_i / 2  +  (1 / d_i_out) * sum_{j in N_in(i)} w_j / 2
//! ```
//!
//! On a strongly connected graph the iteration converges to weights that
//! balance the graph: each node's total outgoing weight `w_i * d_i_out`
//! equals its total incoming weight `sum_{j in N_in(i)} w_j`. The update is
//! the matrix iteration `w <- P w` with `P = (I + D^-1 A) / 2`, a primitive
//! matrix with spectral radius 1.

use ndarray::Array2;
use thiserror::Error;

use crate::digraph::{DiGraph, GraphStats};
use crate::textfmt::sig17;

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error("safety factor must lie in (0, 1], got {0}")]
    InvalidSafety(f64),
    #[error("weight vector has {got} entries for a graph with {expected} nodes")]
    SizeMismatch { got: usize, expected: usize },
    #[error("weights must be strictly positive (entry {index} is {value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("balance residual {residual:e} still above {tol:e} after {rounds} rounds")]
    NotConverged {
        rounds: usize,
        residual: f64,
        tol: f64,
    },
}

/// Per-node balancing weights at a given round.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub round: usize,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>, round: usize) -> Result<Self, BalanceError> {
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0) {
                return Err(BalanceError::NonPositiveWeight { index, value });
            }
        }
        Ok(WeightVector { weights, round })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check_sized(&self, g: &DiGraph) -> Result<(), BalanceError> {
        if self.len() != g.node_count() {
            return Err(BalanceError::SizeMismatch {
                got: self.len(),
                expected: g.node_count(),
            });
        }
        Ok(())
    }
}

/// Which round transition a matrix describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixKind {
    /// Weight propagation `P = (I + D^-1 A) / 2`; diagonal entries 1/2.
    WeightP,
    /// Estimate propagation `Q(w)`; column sums exactly 1.
    EstimateQ,
}

/// A dense nonnegative round-transition matrix, tagged with its role.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    pub entries: Array2<f64>,
    pub kind: MatrixKind,
}

impl PropagationMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|j| self.entries.column(j).sum()).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| self.entries.row(i).sum()).collect()
    }

    /// Largest deviation of a column sum from 1.
    pub fn max_column_sum_deviation(&self) -> f64 {
        self.column_sums()
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_sum_deviation(&self) -> f64 {
        self.row_sums()
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// The initialization bound `(1/d*)^(2D+1)`.
///
/// Starting every weight at or below this value keeps `w_i(t) * d_i_out < 1`
/// at every round, which the estimate update needs to keep its self-term
/// coefficient positive. On a directed cycle (`d* = 1`) the bound equals 1
/// and starting exactly on it makes that coefficient 0, so callers should
/// stay strictly below it; see [`init_weights`].
pub fn safe_weight_bound(stats: &GraphStats) -> f64 {
    let base = 1.0 / stats.max_out_degree as f64;
    base.powi(2 * stats.diameter as i32 + 1)
}

/// Uniform initial weights `safety * safe_weight_bound(stats)`.
///
/// `safety` must lie in (0, 1]. The default used throughout the crate is
/// 1/2: strictly inside the bound, so the self-term coefficient stays
/// strictly positive even on cycles where the bound itself is 1.
pub fn init_weights(
    g: &DiGraph,
    stats: &GraphStats,
    safety: f64,
) -> Result<WeightVector, BalanceError> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(BalanceError::InvalidSafety(safety));
    }
    let w0 = safety * safe_weight_bound(stats);
    WeightVector::new(vec![w0; g.node_count()], 0)
}

/// Default safety factor for [`init_weights`].
pub const DEFAULT_SAFETY: f64 = 0.5;

/// One-node weight update; also used verbatim by the per-node simulation
/// kernel so the two execution paths stay bit-identical. `half_weight_sum`
/// must be the in-neighbor sum of `w_j / 2` accumulated in ascending id
/// order.
#[inline]
pub(crate) fn node_weight_update(w_i: f64, out_degree: usize, half_weight_sum: f64) -> f64 {
    0.5 * w_i + half_weight_sum / out_degree as f64
}

/// One synchronous round of the weight update over the whole graph.
pub fn weight_step(g: &DiGraph, w: &WeightVector) -> WeightVector {
    debug_assert_eq!(w.len(), g.node_count());
    let mut next = Vec::with_capacity(w.len());
    for i in 0..g.node_count() {
        let mut half_sum = 0.0;
        for &j in g.in_neighbors(i) {
            half_sum += 0.5 * w.weights[j];
        }
        next.push(node_weight_update(w.weights[i], g.out_degree(i), half_sum));
    }
    WeightVector {
        weights: next,
        round: w.round + 1,
    }
}

/// The weight propagation matrix `P = (I + D^-1 A) / 2`:
/// `P[i][i] = 1/2`, `P[i][j] = 1 / (2 d_i_out)` for `j` an in-neighbor of
/// `i`, zero otherwise. `weight_step` equals multiplication by this matrix.
///
/// `P` itself is not column stochastic in general; its similarity transform
/// `D P D^-1 = (I + A D^-1) / 2` is, which pins its spectral radius at 1.
pub fn build_p(g: &DiGraph) -> PropagationMatrix {
    let n = g.node_count();
    let mut entries = Array2::zeros((n, n));
    for i in 0..n {
        entries[(i, i)] = 0.5;
        let coeff = 0.5 / g.out_degree(i) as f64;
        for &j in g.in_neighbors(i) {
            entries[(i, j)] = coeff;
        }
    }
    PropagationMatrix {
        entries,
        kind: MatrixKind::WeightP,
    }
}

/// Column-stochastic similarity transform `D P D^-1` of [`build_p`].
pub fn build_p_similar(g: &DiGraph) -> Array2<f64> {
    let p = build_p(g).entries;
    let n = g.node_count();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = p[(i, j)] * g.out_degree(i) as f64 / g.out_degree(j) as f64;
        }
    }
    out
}

/// How far the weights are from balancing the graph:
/// `max_i | w_i * d_i_out - sum_{j in N_in(i)} w_j |`.
pub fn balance_residual(g: &DiGraph, w: &WeightVector) -> f64 {
    debug_assert_eq!(w.len(), g.node_count());
    let mut worst = 0.0f64;
    for i in 0..g.node_count() {
        let outgoing = w.weights[i] * g.out_degree(i) as f64;
        let incoming: f64 = g.in_neighbors(i).iter().map(|&j| w.weights[j]).sum();
        worst = worst.max((outgoing - incoming).abs());
    }
    worst
}

/// Result of iterating the weight update to a residual tolerance.
#[derive(Debug, Clone)]
pub struct BalanceOutcome {
    pub weights: WeightVector,
    pub rounds: usize,
    pub residual: f64,
}

/// Iterates [`weight_step`] until the balance residual drops to `tol`.
///
/// Convergence is geometric on strongly connected graphs, so `max_rounds`
/// is a diagnostic guard rather than a tuning knob.
pub fn run_to_balance(
    g: &DiGraph,
    w0: &WeightVector,
    tol: f64,
    max_rounds: usize,
) -> Result<BalanceOutcome, BalanceError> {
    assert!(tol > 0.0, "tolerance must be positive");
    w0.check_sized(g)?;
    let mut w = w0.clone();
    let mut residual = balance_residual(g, &w);
    let mut rounds = 0;
    while residual > tol {
        if rounds >= max_rounds {
            return Err(BalanceError::NotConverged {
                rounds,
                residual,
                tol,
            });
        }
        w = weight_step(g, &w);
        rounds += 1;
        residual = balance_residual(g, &w);
    }
    Ok(BalanceOutcome {
        weights: w,
        rounds,
        residual,
    })
}

/// Balance certificate: one `label weight` line per node plus a trailing
/// `residual` line, all values at 17 significant digits.
pub fn format_balance_certificate(labels: &[String], w: &WeightVector, residual: f64) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for (label, weight) in labels.iter().zip(&w.weights) {
        let _ = writeln!(out, "{label} {}", sig17(*weight));
    }
    let _ = writeln!(out, "residual {}", sig17(residual));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn g4() -> DiGraph {
        DiGraph::from_edges(3, &[(0, 1), (1, 2), (2, 0), (0, 2)]).unwrap()
    }

    fn wv(values: &[f64]) -> WeightVector {
        WeightVector::new(values.to_vec(), 0).unwrap()
    }

    #[test]
    fn safe_bound_values() {
        let b = safe_weight_bound(&GraphStats {
            diameter: 2,
            max_out_degree: 2,
        });
        assert_eq!(b, 0.03125);
        let two_node = safe_weight_bound(&GraphStats {
            diameter: 1,
            max_out_degree: 1,
        });
        assert_eq!(two_node, 1.0);
        let cycle3 = safe_weight_bound(&GraphStats {
            diameter: 2,
            max_out_degree: 1,
        });
        assert_eq!(cycle3, 1.0);
    }

    #[test]
    fn init_weights_uniform_and_validated() {
        let g = g4();
        let stats = g.stats().unwrap();
        let w = init_weights(&g, &stats, 0.5).unwrap();
        assert_eq!(w.weights, vec![0.015625; 3]);
        assert_eq!(w.round, 0);

        let cycle = DiGraph::cycle(3);
        let w = init_weights(&cycle, &cycle.stats().unwrap(), 0.5).unwrap();
        assert_eq!(w.weights, vec![0.5; 3]);

        assert!(matches!(
            init_weights(&g, &stats, 0.0),
            Err(BalanceError::InvalidSafety(_))
        ));
        assert!(matches!(
            init_weights(&g, &stats, 1.5),
            Err(BalanceError::InvalidSafety(_))
        ));
    }

    #[test]
    fn uniform_weights_are_fixed_on_cycles() {
        let g = DiGraph::cycle(3);
        let w = wv(&[0.3, 0.3, 0.3]);
        let next = weight_step(&g, &w);
        assert_eq!(next.weights, vec![0.3, 0.3, 0.3]);
        assert_eq!(next.round, 1);
    }

    #[test]
    fn hand_computed_step_on_g4() {
        let g = g4();
        let next = weight_step(&g, &wv(&[0.1, 0.1, 0.1]));
        let expect = [0.075, 0.1, 0.15];
        for (a, b) in next.weights.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn step_matches_matrix_product() {
        for g in [
            g4(),
            DiGraph::cycle(5),
            DiGraph::complete(4),
            DiGraph::generate(12, 0.3, 11).unwrap(),
        ] {
            let n = g.node_count();
            let w = wv(&(0..n).map(|i| 0.01 + 0.001 * i as f64).collect::<Vec<_>>());
            let p = build_p(&g);
            let expect = p.entries.dot(&Array1::from(w.weights.clone()));
            let got = weight_step(&g, &w);
            for i in 0..n {
                assert!(
                    (got.weights[i] - expect[i]).abs() < 1e-14,
                    "node {i}: {} vs {}",
                    got.weights[i],
                    expect[i]
                );
            }
        }
    }

    #[test]
    fn p_matrix_on_small_graphs() {
        let two = DiGraph::from_edges(2, &[(0, 1), (1, 0)]).unwrap();
        let p = build_p(&two);
        assert_eq!(p.kind, MatrixKind::WeightP);
        for v in p.entries.iter() {
            assert_eq!(*v, 0.5);
        }

        let p = build_p(&DiGraph::cycle(3)).entries;
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j || j == (i + 2) % 3 { 0.5 } else { 0.0 };
                assert_eq!(p[(i, j)], expect);
            }
        }

        let p = build_p(&g4()).entries;
        let rows = [[0.5, 0.0, 0.25], [0.5, 0.5, 0.0], [0.5, 0.5, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p[(i, j)], rows[i][j]);
            }
        }
        // (1, 1, 2) balances this graph, so it is a fixed point of P.
        let fixed = Array1::from(vec![1.0, 1.0, 2.0]);
        let image = build_p(&g4()).entries.dot(&fixed);
        for i in 0..3 {
            assert!((image[i] - fixed[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn p_similarity_transform_is_column_stochastic() {
        for g in [
            g4(),
            DiGraph::cycle(7),
            DiGraph::complete(5),
            DiGraph::generate(15, 0.2, 2).unwrap(),
        ] {
            let similar = build_p_similar(&g);
            for j in 0..g.node_count() {
                let sum: f64 = similar.column(j).sum();
                assert!((sum - 1.0).abs() < 1e-12, "column {j} sums to {sum}");
            }
        }
    }

    #[test]
    fn residual_hand_values() {
        let g = g4();
        assert_eq!(balance_residual(&g, &wv(&[1.0, 1.0, 2.0])), 0.0);
        assert_eq!(balance_residual(&g, &wv(&[1.0, 1.0, 1.0])), 1.0);
    }

    #[test]
    fn cycle_balances_in_zero_rounds() {
        let g = DiGraph::cycle(4);
        let out = run_to_balance(&g, &wv(&[0.2; 4]), 1e-12, 10).unwrap();
        assert_eq!(out.rounds, 0);
        assert_eq!(out.residual, 0.0);
    }

    /// Independent power-iteration oracle for the dominant eigenvector of P.
    fn dominant_eigvec(p: &Array2<f64>, iters: usize) -> Array1<f64> {
        let n = p.nrows();
        let mut v = Array1::from(vec![1.0 / n as f64; n]);
        for _ in 0..iters {
            v = p.dot(&v);
            let norm: f64 = v.iter().map(|x| x.abs()).sum();
            v.mapv_inplace(|x| x / norm);
        }
        v
    }

    #[test]
    fn g4_limit_is_proportional_to_1_1_2() {
        let g = g4();
        let out = run_to_balance(&g, &wv(&[0.015625; 3]), 1e-12, 1_000_000).unwrap();
        let w = &out.weights.weights;
        assert!((w[1] / w[0] - 1.0).abs() < 1e-8);
        assert!((w[2] / w[0] - 2.0).abs() < 1e-8);

        let oracle = dominant_eigvec(&build_p(&g).entries, 500);
        for i in 0..3 {
            assert!((w[i] / w[0] - oracle[i] / oracle[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn limit_invariant_to_uniform_rescaling() {
        let g = DiGraph::generate(10, 0.25, 4).unwrap();
        let base: Vec<f64> = (0..10).map(|i| 0.001 + 1e-4 * i as f64).collect();
        let scaled: Vec<f64> = base.iter().map(|v| v * 3.0).collect();
        let a = run_to_balance(&g, &wv(&base), 1e-12, 1_000_000).unwrap();
        let b = run_to_balance(&g, &wv(&scaled), 1e-12, 1_000_000).unwrap();
        for i in 0..10 {
            let ra = a.weights.weights[i] / a.weights.weights[0];
            let rb = b.weights.weights[i] / b.weights.weights[0];
            assert!((ra - rb).abs() / ra.abs() < 1e-9);
        }
    }

    #[test]
    fn residual_decays_geometrically_on_random_graph() {
        let g = DiGraph::generate(20, 0.2, 8).unwrap();
        let stats = g.stats().unwrap();
        let mut w = init_weights(&g, &stats, 0.5).unwrap();
        let mut residuals = Vec::new();
        for _ in 0..400 {
            residuals.push(balance_residual(&g, &w));
            w = weight_step(&g, &w);
        }
        // Log-residual over the mid range should regress to a clearly
        // negative slope.
        let pts: Vec<(f64, f64)> = residuals
            .iter()
            .enumerate()
            .skip(50)
            .take(250)
            .filter(|(_, r)| **r > 1e-300)
            .map(|(t, r)| (t as f64, r.ln()))
            .collect();
        let (slope, _) = least_squares(&pts);
        assert!(slope < -1e-4, "slope {slope}");
    }

    fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        (slope, (sy - slope * sx) / n)
    }

    #[test]
    fn lemma_bound_consequence_holds_with_half_safety() {
        for g in [
            g4(),
            DiGraph::cycle(20),
            DiGraph::complete(6),
            DiGraph::generate(15, 0.15, 21).unwrap(),
        ] {
            let stats = g.stats().unwrap();
            let mut w = init_weights(&g, &stats, 0.5).unwrap();
            for _ in 0..5000 {
                for i in 0..g.node_count() {
                    assert!(w.weights[i] * (g.out_degree(i) as f64) < 1.0);
                }
                w = weight_step(&g, &w);
            }
        }
    }

    #[test]
    fn certificate_format() {
        let w = wv(&[0.5, 0.25]);
        let labels = vec!["a".to_string(), "b".to_string()];
        let cert = format_balance_certificate(&labels, &w, 1e-10);
        let lines: Vec<&str> = cert.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "a 5.0000000000000000e-1");
        assert_eq!(lines[1], "b 2.5000000000000000e-1");
        assert!(lines[2].starts_with("residual 1.0000000000000"));
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = g4();
        let err = run_to_balance(&g, &wv(&[0.1, 0.2, 0.3]), 1e-15, 3).unwrap_err();
        assert!(matches!(err, BalanceError::NotConverged { rounds: 3, .. }));
    }
}
