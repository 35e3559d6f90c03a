//! Centralized diagnostics over recorded traces.
//!
//! The transition matrices of a run are column stochastic every round and
//! doubly stochastic in the limit, so their left products drive every entry
//! to `1/n` geometrically. This module forms those products, fits the
//! geometric envelope `C * lambda^k`, measures consensus violations and
//! optimality gaps at checkpoints, and evaluates the convergence-bound
//! right-hand sides that the fitted constants imply so a run can be audited
//! against them.

use ndarray::Array2;
use thiserror::Error;

use crate::engine::{auxiliary_y, build_q, ergodic_average, EngineError};
use crate::objective::ObjectiveSpec;
use crate::textfmt::sig17;
use crate::trace::RunTrace;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} usable points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no minimizer is registered for objective {0:?}; gap undefined")]
    NoMinimizer(String),
    #[error("checkpoint {t} exceeds trace length {last}")]
    CheckpointOutOfRange { t: usize, last: usize },
    #[error("checkpoint {t} is below 4; the log-based rate statistic needs T >= 4")]
    CheckpointTooSmall { t: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Deviation history of the left products of round transition matrices.
///
/// `deviations[k]` is `max_ij |[product of k factors]_ij - 1/n|`, where the
/// factors are the transition matrices of rounds `start, start+1, ...`.
/// `k = 0` is the empty product (the identity), whose deviation is
/// `1 - 1/n`.
#[derive(Debug, Clone)]
pub struct PhiSeries {
    pub start: usize,
    pub node_count: usize,
    pub deviations: Vec<f64>,
}

impl PhiSeries {
    /// The default window for fitting: factor counts `1..` up to (not
    /// including) the first deviation below `floor`, where roundoff rather
    /// than the geometric regime dominates.
    pub fn fit_window(&self, floor: f64) -> std::ops::Range<usize> {
        let end = self
            .deviations
            .iter()
            .position(|&d| d < floor)
            .unwrap_or(self.deviations.len());
        1..end.max(1)
    }
}

/// Forms the products incrementally from the trace's per-round weights and
/// records the max entry deviation from `1/n` after each factor.
///
/// Columns of every partial product sum to 1 (each factor is column
/// stochastic), which keeps the recursion numerically tame even over
/// thousands of factors.
pub fn phi_series(
    trace: &RunTrace,
    graph: &crate::digraph::DiGraph,
    start: usize,
    t_max: usize,
) -> Result<PhiSeries, AnalysisError> {
    assert!(start <= t_max, "start must not exceed t_max");
    if t_max > trace.last_round() {
        return Err(AnalysisError::CheckpointOutOfRange {
            t: t_max,
            last: trace.last_round(),
        });
    }
    let n = trace.node_count();
    let uniform = 1.0 / n as f64;
    let mut product = Array2::<f64>::eye(n);
    let max_dev = |m: &Array2<f64>| {
        m.iter()
            .map(|v| (v - uniform).abs())
            .fold(0.0f64, f64::max)
    };
    let mut deviations = Vec::with_capacity(t_max - start + 2);
    deviations.push(max_dev(&product));
    for t in start..=t_max {
        let q = build_q(graph, &trace.states[t].weights)?;
        product = q.entries.dot(&product);
        deviations.push(max_dev(&product));
    }
    Ok(PhiSeries {
        start,
        node_count: n,
        deviations,
    })
}

/// A straight-line least-squares fit with its coefficient of determination.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares on `(x, y)` points.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::InsufficientData {
            needed: 2,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for &(x, y) in points {
        let pred = slope * x + intercept;
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - mean_y) * (y - mean_y);
    }
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// The geometric envelope fitted to a deviation series.
#[derive(Debug, Clone, Copy)]
pub struct GeometricFit {
    pub c: f64,
    pub lambda: f64,
    pub r_squared: f64,
}

/// Least-squares line on log-deviation against factor count over `window`;
/// `lambda = exp(slope)`, `c = exp(intercept)`. The fit stops at the first
/// nonpositive deviation (log undefined past it) and needs at least 10
/// usable points.
pub fn fit_geometric(
    series: &PhiSeries,
    window: std::ops::Range<usize>,
) -> Result<GeometricFit, AnalysisError> {
    let mut points = Vec::new();
    for k in window {
        if k >= series.deviations.len() {
            break;
        }
        let dev = series.deviations[k];
        if dev <= 0.0 {
            break;
        }
        points.push((k as f64, dev.ln()));
    }
    if points.len() < 10 {
        return Err(AnalysisError::InsufficientData {
            needed: 10,
            got: points.len(),
        });
    }
    let fit = linear_fit(&points)?;
    Ok(GeometricFit {
        c: fit.intercept.exp(),
        lambda: fit.slope.exp(),
        r_squared: fit.r_squared,
    })
}

/// Max pairwise disagreement under the max norm. Equals the largest
/// per-component spread, so it is computed in O(n d).
pub fn consensus_violation(estimates: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for c in 0..estimates.ncols() {
        let col = estimates.column(c);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        worst = worst.max(hi - lo);
    }
    worst
}

/// `sum_i f_i(point_i) - sum_i f_i(x*)` with `x*` the registered minimizer.
pub fn optimality_gap(obj: &ObjectiveSpec, point: &Array2<f64>) -> Result<f64, AnalysisError> {
    let minimizer = obj
        .minimizer_hint()
        .ok_or_else(|| AnalysisError::NoMinimizer(obj.name().to_string()))?
        .to_vec();
    let mut value = 0.0;
    for i in 0..obj.len() {
        let row: Vec<f64> = point.row(i).to_vec();
        value += obj.value(i, &row);
    }
    Ok(value - obj.total_value_at(&minimizer))
}

/// Gap at a single point broadcast to every node.
pub fn optimality_gap_at(obj: &ObjectiveSpec, point: &[f64]) -> Result<f64, AnalysisError> {
    let minimizer = obj
        .minimizer_hint()
        .ok_or_else(|| AnalysisError::NoMinimizer(obj.name().to_string()))?
        .to_vec();
    Ok(obj.total_value_at(point) - obj.total_value_at(&minimizer))
}

/// `value * sqrt(T) / log(T)`; finite for `T >= 2` and used at `T >= 4`.
pub fn rate_statistic(value: f64, t: usize) -> f64 {
    value * (t as f64).sqrt() / (t as f64).ln()
}

/// The ergodic consensus rate envelope `2 L n C * 4/(1-lambda) * log T / sqrt T`
/// (the zero-initial-state specialization; meaningful only for runs started
/// at the origin).
pub fn consensus_rate_bound(n: usize, l: f64, c: f64, lambda: f64, t: usize) -> f64 {
    2.0 * l * n as f64 * c * (4.0 / (1.0 - lambda)) * (t as f64).ln() / (t as f64).sqrt()
}

/// The optimality rate envelope for runs started at the origin:
/// `n ||x*||^2 / (2 sqrt T) + n L^2 log T / sqrt T + (2 L^2 n C + n L^2 C) * 4/(1-lambda) * log T / sqrt T`.
pub fn optimality_rate_bound(
    n: usize,
    l: f64,
    c: f64,
    lambda: f64,
    minimizer_sq_norm: f64,
    t: usize,
) -> f64 {
    let nf = n as f64;
    let logt = (t as f64).ln();
    let sqrt = (t as f64).sqrt();
    nf * minimizer_sq_norm / (2.0 * sqrt)
        + (nf * l * l / 2.0) * (2.0 * logt / sqrt)
        + 2.0 * l * l * nf * c * (4.0 / (1.0 - lambda)) * logt / sqrt
        + nf * l * l * c * (4.0 / (1.0 - lambda)) * logt / sqrt
}

/// Per-round envelope on each node's deviation from the centroid sequence:
/// `C lambda^t ||x(0)||_1 + n L C sum_{s<t} lambda^(t-1-s) alpha(s)`.
///
/// Returned for every round `0..=t_end`; the inner sum is carried
/// incrementally, so the whole series costs O(T).
pub fn centroid_deviation_bounds(
    trace: &RunTrace,
    l: f64,
    c: f64,
    lambda: f64,
    t_end: usize,
) -> Vec<f64> {
    let n = trace.node_count() as f64;
    let x0_l1: f64 = trace.states[0].estimates.iter().map(|v| v.abs()).sum();
    let mut bounds = Vec::with_capacity(t_end + 1);
    let mut lambda_pow = 1.0; // lambda^t
    let mut tail = 0.0; // sum_{s<t} lambda^(t-1-s) alpha(s)
    for t in 0..=t_end {
        bounds.push(c * lambda_pow * x0_l1 + n * l * c * tail);
        tail = lambda * tail + trace.states[t].step;
        lambda_pow *= lambda;
    }
    bounds
}

/// Diagnostics at one checkpoint round.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointReport {
    pub round: usize,
    /// Max pairwise disagreement of the ergodic averages.
    pub ergodic_violation: f64,
    /// Gap of the ergodic averages against the registered minimizer.
    pub optimality_gap: f64,
    /// `optimality_gap * sqrt(T) / log T`.
    pub gap_rate_statistic: f64,
    /// `ergodic_violation * sqrt(T) / log T`.
    pub violation_rate_statistic: f64,
    /// Zero-initial-state consensus rate envelope with fitted constants.
    pub consensus_rate_bound: f64,
    /// Zero-initial-state optimality rate envelope with fitted constants.
    pub optimality_rate_bound: f64,
    /// General envelope on `|xhat_i - yhat|` (valid for any x(0)).
    pub ergodic_consensus_bound: f64,
    /// General envelope on the ergodic optimality gap (valid for any x(0)).
    pub optimality_bound: f64,
}

/// Trace diagnostics: per-round consensus violation, fitted geometric
/// constants, and per-checkpoint measurements with bound envelopes.
#[derive(Debug, Clone)]
pub struct DiagnosticsReport {
    pub consensus_violation: Vec<f64>,
    pub fitted_c: f64,
    pub fitted_lambda: f64,
    pub fit_r_squared: f64,
    pub checkpoints: Vec<CheckpointReport>,
}

impl DiagnosticsReport {
    /// Report CSV: fitted constants in a header comment, then one row per
    /// checkpoint. Column names are part of the file contract.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# fitted_C = {} fitted_lambda = {}\n",
            sig17(self.fitted_c),
            sig17(self.fitted_lambda)
        ));
        out.push_str("T,ergodic_violation,optimality_gap,rate_statistic,bound_rhs_eq27,bound_rhs_eq28\n");
        for cp in &self.checkpoints {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                cp.round,
                sig17(cp.ergodic_violation),
                sig17(cp.optimality_gap),
                sig17(cp.gap_rate_statistic),
                sig17(cp.consensus_rate_bound),
                sig17(cp.optimality_rate_bound),
            ));
        }
        out
    }
}

/// How many factors the geometric fit consumes at most.
const FIT_SPAN: usize = 2000;
/// Deviations below this are treated as roundoff, not signal.
pub const DEVIATION_FLOOR: f64 = 1e-13;

/// Runs the full diagnostics pass over a trace.
///
/// Checkpoints must lie within the trace and be at least 4 (the log-based
/// statistics need it). The geometric constants are fitted on the
/// round-0-anchored product series, then every checkpoint gets measured
/// violations, gaps, rate statistics, and the bound envelopes those
/// constants imply.
pub fn rate_report(
    trace: &RunTrace,
    graph: &crate::digraph::DiGraph,
    obj: &ObjectiveSpec,
    checkpoints: &[usize],
) -> Result<DiagnosticsReport, AnalysisError> {
    let last = trace.last_round();
    for &t in checkpoints {
        if t > last {
            return Err(AnalysisError::CheckpointOutOfRange { t, last });
        }
        if t < 4 {
            return Err(AnalysisError::CheckpointTooSmall { t });
        }
    }
    let n = trace.node_count();
    let l = obj.subgrad_bound();

    let violations: Vec<f64> = trace
        .states
        .iter()
        .map(|s| consensus_violation(&s.estimates))
        .collect();

    let series = phi_series(trace, graph, 0, last.min(FIT_SPAN))?;
    let fit = fit_geometric(&series, series.fit_window(DEVIATION_FLOOR))?;

    let minimizer = obj
        .minimizer_hint()
        .ok_or_else(|| AnalysisError::NoMinimizer(obj.name().to_string()))?
        .to_vec();
    let minimizer_sq_norm: f64 = minimizer.iter().map(|v| v * v).sum();

    let max_t = checkpoints.iter().copied().max().unwrap_or(0);
    let aux = auxiliary_y(trace, max_t);
    let x0_l1: f64 = trace.states[0].estimates.iter().map(|v| v.abs()).sum();
    let y0 = &aux.values[0];
    let y0_dist_sq: f64 = y0
        .iter()
        .zip(&minimizer)
        .map(|(y, m)| (y - m) * (y - m))
        .sum();

    // Running pieces for the general envelopes, advanced round by round.
    let mut alpha_sum = 0.0;
    let mut alpha_sq_sum = 0.0;
    let mut tail = 0.0; // sum_{s<t} lambda^(t-1-s) alpha(s)
    let mut lambda_pow = 1.0; // lambda^t
    let mut consensus_acc = 0.0; // sum_t alpha(t) (C l^t ||x0||_1 + L n C tail)
    let mut gap_tail_acc = 0.0; // same but with lambda^(t-s) inner exponent
    let mut y_dev_acc = 0.0; // sum_t alpha(t) sum_i |y(t) - x_i(t)|
    let mut reports = Vec::with_capacity(checkpoints.len());
    let mut sorted: Vec<usize> = checkpoints.to_vec();
    sorted.sort_unstable();
    let mut next_cp = 0usize;
    for t in 0..=max_t {
        let alpha = trace.states[t].step;
        alpha_sum += alpha;
        alpha_sq_sum += alpha * alpha;
        let per_round = fit.c * lambda_pow * x0_l1 + l * n as f64 * fit.c * tail;
        consensus_acc += alpha * per_round;
        gap_tail_acc += alpha * (fit.c * lambda_pow * x0_l1 + l * n as f64 * fit.c * fit.lambda * tail);
        let mut y_dev = 0.0;
        for node in 0..n {
            let mut dist = 0.0f64;
            for c in 0..trace.dim() {
                dist += (aux.values[t][c] - trace.states[t].estimates[(node, c)]).abs();
            }
            y_dev += dist;
        }
        y_dev_acc += alpha * y_dev;

        while next_cp < sorted.len() && sorted[next_cp] == t {
            let round = sorted[next_cp];
            let averages = ergodic_average(trace, round);
            let ergodic_violation = consensus_violation(&averages);
            let gap = optimality_gap(obj, &averages)?;
            let ergodic_consensus_bound = if alpha_sum > 0.0 {
                2.0 / alpha_sum * consensus_acc
            } else {
                f64::INFINITY
            };
            let optimality_bound = if alpha_sum > 0.0 {
                n as f64 / (2.0 * alpha_sum) * y0_dist_sq
                    + n as f64 * l * l / (2.0 * alpha_sum) * alpha_sq_sum
                    + 2.0 * l / alpha_sum * y_dev_acc
                    + l / alpha_sum * gap_tail_acc
            } else {
                f64::INFINITY
            };
            reports.push(CheckpointReport {
                round,
                ergodic_violation,
                optimality_gap: gap,
                gap_rate_statistic: rate_statistic(gap, round),
                violation_rate_statistic: rate_statistic(ergodic_violation, round),
                consensus_rate_bound: consensus_rate_bound(n, l, fit.c, fit.lambda, round),
                optimality_rate_bound: optimality_rate_bound(
                    n,
                    l,
                    fit.c,
                    fit.lambda,
                    minimizer_sq_norm,
                    round,
                ),
                ergodic_consensus_bound,
                optimality_bound,
            });
            next_cp += 1;
        }
        tail = fit.lambda * tail + alpha;
        lambda_pow *= fit.lambda;
    }

    Ok(DiagnosticsReport {
        consensus_violation: violations,
        fitted_c: fit.c,
        fitted_lambda: fit.lambda,
        fit_r_squared: fit.r_squared,
        checkpoints: reports,
    })
}
