//! Local convex objectives as value + subgradient oracles.
//!
//! The global objective is the sum of one convex (possibly nonsmooth)
//! function per node. Each node only ever evaluates its own. The spec of a
//! run declares a uniform bound `L` on subgradient norms; the engine
//! asserts it at every visited point and aborts with a diagnostic if it is
//! exceeded, so objectives with globally unbounded gradients (like
//! quadratics) are usable as long as trajectories stay in a sane region.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("objective needs at least one local function")]
    Empty,
    #[error("subgradient bound must be nonnegative and finite, got {0}")]
    InvalidBound(f64),
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("no minimizer is registered for objective {0:?}")]
    NoMinimizer(String),
}

/// One node's convex function.
pub trait LocalObjective: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    /// A deterministic element of the subdifferential at `x`.
    fn subgradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Quadratic `f(x) = ||x - a||^2 / 2` with gradient `x - a`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub target: Vec<f64>,
}

impl LocalObjective for Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.target)
            .map(|(x, a)| (x - a) * (x - a))
            .sum::<f64>()
    }

    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.target).map(|(x, a)| x - a).collect()
    }
}

/// Absolute deviation `f(x) = sum_c |x_c - a_c|`. The subgradient at a kink
/// is pinned to 0 so oracles stay deterministic.
#[derive(Debug, Clone)]
pub struct AbsDeviation {
    pub target: Vec<f64>,
}

impl LocalObjective for AbsDeviation {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.target)
            .map(|(x, a)| (x - a).abs())
            .sum()
    }

    fn subgradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.target)
            .map(|(x, a)| {
                let d = x - a;
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Identically zero; turns the algorithm into pure average consensus.
#[derive(Debug, Clone)]
pub struct Zero {
    pub dim: usize,
}

impl LocalObjective for Zero {
    fn value(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn subgradient(&self, _x: &[f64]) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// The collection of local objectives for a run.
#[derive(Clone)]
pub struct ObjectiveSpec {
    name: String,
    dim: usize,
    locals: Vec<Arc<dyn LocalObjective>>,
    subgrad_bound: f64,
    minimizer_hint: Option<Vec<f64>>,
}

impl std::fmt::Debug for ObjectiveSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveSpec")
            .field("name", &self.name)
            .field("n", &self.locals.len())
            .field("dim", &self.dim)
            .field("subgrad_bound", &self.subgrad_bound)
            .field("minimizer_hint", &self.minimizer_hint)
            .finish()
    }
}

impl ObjectiveSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        locals: Vec<Arc<dyn LocalObjective>>,
        subgrad_bound: f64,
        minimizer_hint: Option<Vec<f64>>,
    ) -> Result<Self, ObjectiveError> {
        if locals.is_empty() {
            return Err(ObjectiveError::Empty);
        }
        if dim == 0 {
            return Err(ObjectiveError::ZeroDim);
        }
        if !(subgrad_bound >= 0.0 && subgrad_bound.is_finite()) {
            return Err(ObjectiveError::InvalidBound(subgrad_bound));
        }
        if let Some(hint) = &minimizer_hint {
            assert_eq!(hint.len(), dim, "minimizer hint has wrong dimension");
        }
        Ok(ObjectiveSpec {
            name: name.into(),
            dim,
            locals,
            subgrad_bound,
            minimizer_hint,
        })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The declared uniform bound on subgradient norms.
    pub fn subgrad_bound(&self) -> f64 {
        self.subgrad_bound
    }

    pub fn minimizer_hint(&self) -> Option<&[f64]> {
        self.minimizer_hint.as_deref()
    }

    pub fn local(&self, node: usize) -> &Arc<dyn LocalObjective> {
        &self.locals[node]
    }

    /// `f_node(x)`.
    pub fn value(&self, node: usize, x: &[f64]) -> f64 {
        self.locals[node].value(x)
    }

    /// Subgradient of `f_node` at `x`.
    pub fn subgradient(&self, node: usize, x: &[f64]) -> Vec<f64> {
        self.locals[node].subgradient(x)
    }

    /// Sum of all local values at a common point.
    pub fn total_value_at(&self, x: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.value(i, x)).sum()
    }

    /// Scalar quadratic estimation: node `i` holds `f_i(x) = (x - a_i)^2/2`.
    /// The global minimizer is the mean of the targets. The declared bound
    /// `1.25 n` leaves headroom over the largest subgradient seen from runs
    /// started at 0 with targets of magnitude up to `n`.
    pub fn quadratic_estimation(targets: &[f64]) -> Self {
        let n = targets.len();
        let mean = targets.iter().sum::<f64>() / n as f64;
        let locals: Vec<Arc<dyn LocalObjective>> = targets
            .iter()
            .map(|&a| Arc::new(Quadratic { target: vec![a] }) as Arc<dyn LocalObjective>)
            .collect();
        ObjectiveSpec::new(
            "quadratic_estimation",
            1,
            locals,
            1.25 * n as f64,
            Some(vec![mean]),
        )
        .expect("valid preset")
    }

    /// Scalar absolute deviation: node `i` holds `f_i(x) = |x - a_i|`. Any
    /// median of the targets minimizes the sum; the midpoint of the two
    /// central order statistics is registered as the hint.
    pub fn abs_deviation(targets: &[f64]) -> Self {
        let locals: Vec<Arc<dyn LocalObjective>> = targets
            .iter()
            .map(|&a| Arc::new(AbsDeviation { target: vec![a] }) as Arc<dyn LocalObjective>)
            .collect();
        let mut sorted = targets.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        ObjectiveSpec::new("abs_deviation", 1, locals, 1.0, Some(vec![median]))
            .expect("valid preset")
    }

    /// Zero objective on `n` nodes in dimension `dim`; the run reduces to
    /// average consensus and any point is a minimizer.
    pub fn zero(n: usize, dim: usize) -> Self {
        let locals: Vec<Arc<dyn LocalObjective>> = (0..n)
            .map(|_| Arc::new(Zero { dim }) as Arc<dyn LocalObjective>)
            .collect();
        ObjectiveSpec::new("zero", dim, locals, 0.0, Some(vec![0.0; dim])).expect("valid preset")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_oracle_values() {
        let q = Quadratic { target: vec![3.0] };
        assert_eq!(q.value(&[5.0]), 2.0);
        assert_eq!(q.subgradient(&[5.0]), vec![2.0]);
    }

    #[test]
    fn abs_deviation_kink_is_zero() {
        let a = AbsDeviation { target: vec![2.0] };
        assert_eq!(a.subgradient(&[2.0]), vec![0.0]);
        assert_eq!(a.subgradient(&[3.0]), vec![1.0]);
        assert_eq!(a.subgradient(&[1.0]), vec![-1.0]);
    }

    #[test]
    fn preset_minimizers() {
        let targets: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        let q = ObjectiveSpec::quadratic_estimation(&targets);
        assert_eq!(q.minimizer_hint().unwrap(), &[10.5]);
        assert_eq!(q.subgrad_bound(), 25.0);

        let a = ObjectiveSpec::abs_deviation(&targets);
        assert_eq!(a.minimizer_hint().unwrap(), &[10.5]);

        let z = ObjectiveSpec::zero(4, 2);
        assert_eq!(z.len(), 4);
        assert_eq!(z.dim(), 2);
        assert_eq!(z.total_value_at(&[7.0, -1.0]), 0.0);
    }

    /// The subgradient inequality f(y) >= f(x) + g(x) . (y - x), sampled on
    /// random pairs for every built-in oracle.
    #[test]
    fn subgradient_inequality_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let oracles: Vec<Box<dyn LocalObjective>> = vec![
            Box::new(Quadratic {
                target: vec![2.5, -1.0],
            }),
            Box::new(AbsDeviation {
                target: vec![0.0, 4.0],
            }),
            Box::new(Zero { dim: 2 }),
        ];
        for oracle in &oracles {
            for _ in 0..1000 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-10.0..10.0)).collect();
                let y: Vec<f64> = (0..2).map(|_| rng.random_range(-10.0..10.0)).collect();
                let g = oracle.subgradient(&x);
                let linear: f64 = g.iter().zip(y.iter().zip(&x)).map(|(g, (y, x))| g * (y - x)).sum();
                assert!(
                    oracle.value(&y) >= oracle.value(&x) + linear - 1e-9,
                    "subgradient inequality violated"
                );
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            ObjectiveSpec::new("x", 1, vec![], 1.0, None),
            Err(ObjectiveError::Empty)
        ));
        let one: Vec<Arc<dyn LocalObjective>> = vec![Arc::new(Zero { dim: 1 })];
        assert!(matches!(
            ObjectiveSpec::new("x", 1, one.clone(), -1.0, None),
            Err(ObjectiveError::InvalidBound(_))
        ));
        assert!(matches!(
            ObjectiveSpec::new("x", 0, one, 1.0, None),
            Err(ObjectiveError::ZeroDim)
        ));
    }
}
