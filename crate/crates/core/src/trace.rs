//! Run state and full time-indexed run histories.

use ndarray::Array2;

use crate::balancing::WeightVector;
use crate::textfmt::sig17;

/// The algorithm state at one round: per-node estimates, the weight vector,
/// and the step size in force at that round.
#[derive(Debug, Clone)]
pub struct RunState {
    pub round: usize,
    /// n x d estimates, one row per node.
    pub estimates: Array2<f64>,
    pub weights: WeightVector,
    /// `alpha(round)`.
    pub step: f64,
}

/// A key = value record identifying a run closely enough to replay it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigDigest {
    pub entries: Vec<(String, String)>,
}

impl ConfigDigest {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// `# key = value` comment lines for embedding in CSV artifacts.
    pub fn comment_lines(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out
    }
}

/// Stable FNV-1a fingerprint used to pin graphs and initial states inside
/// config digests; std hashers are not stable across releases.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// The full history of a run: states for rounds `0..=T` plus the
/// subgradients evaluated at each round's estimates. `subgrads[t]` is the
/// subgradient matrix at `states[t].estimates`; rounds `0..T` actually
/// drive the updates, the final one is recorded for completeness.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub states: Vec<RunState>,
    pub subgrads: Vec<Array2<f64>>,
    pub config_digest: ConfigDigest,
}

impl RunTrace {
    /// Last recorded round (the T in rounds `0..=T`).
    pub fn last_round(&self) -> usize {
        self.states.len() - 1
    }

    pub fn node_count(&self) -> usize {
        self.states[0].estimates.nrows()
    }

    pub fn dim(&self) -> usize {
        self.states[0].estimates.ncols()
    }

    /// Sanity check: rounds contiguous from 0, lengths consistent.
    pub fn is_consistent(&self) -> bool {
        self.states.len() == self.subgrads.len()
            && self
                .states
                .iter()
                .enumerate()
                .all(|(t, s)| s.round == t && s.weights.len() == s.estimates.nrows())
    }

    /// True iff the two traces hold exactly the same 64-bit values in every
    /// estimate, weight, step, and subgradient, and the same digest.
    pub fn bit_identical(&self, other: &RunTrace) -> bool {
        if self.states.len() != other.states.len() || self.config_digest != other.config_digest {
            return false;
        }
        let same_bits = |a: f64, b: f64| a.to_bits() == b.to_bits();
        for (sa, sb) in self.states.iter().zip(&other.states) {
            if sa.round != sb.round
                || !same_bits(sa.step, sb.step)
                || sa.estimates.shape() != sb.estimates.shape()
                || !sa
                    .estimates
                    .iter()
                    .zip(sb.estimates.iter())
                    .all(|(a, b)| same_bits(*a, *b))
                || !sa
                    .weights
                    .weights
                    .iter()
                    .zip(&sb.weights.weights)
                    .all(|(a, b)| same_bits(*a, *b))
            {
                return false;
            }
        }
        self.subgrads
            .iter()
            .zip(&other.subgrads)
            .all(|(ga, gb)| ga.iter().zip(gb.iter()).all(|(a, b)| same_bits(*a, *b)))
    }

    /// Renders the trace as CSV: digest comment lines, a
    /// `t,node,component,x,w,g,alpha` header, then one row per
    /// (round, node, component) with floats at 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.states.len() * self.node_count() * 48);
        out.push_str(&self.config_digest.comment_lines());
        out.push_str("t,node,component,x,w,g,alpha\n");
        for (state, grads) in self.states.iter().zip(&self.subgrads) {
            let t = state.round;
            for node in 0..state.estimates.nrows() {
                for component in 0..state.estimates.ncols() {
                    out.push_str(&format!(
                        "{t},{node},{component},{},{},{},{}\n",
                        sig17(state.estimates[(node, component)]),
                        sig17(state.weights.weights[node]),
                        sig17(grads[(node, component)]),
                        sig17(state.step),
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn digest_comments_and_lookup() {
        let mut d = ConfigDigest::default();
        d.push("rounds", 10);
        d.push("schedule", "sqrt");
        assert_eq!(d.get("rounds"), Some("10"));
        assert_eq!(d.comment_lines(), "# rounds = 10\n# schedule = sqrt\n");
    }

    #[test]
    fn csv_shape() {
        use crate::balancing::WeightVector;
        let state = RunState {
            round: 0,
            estimates: Array2::from_shape_vec((2, 1), vec![0.0, 2.0]).unwrap(),
            weights: WeightVector::new(vec![0.25, 0.25], 0).unwrap(),
            step: 1.0,
        };
        let trace = RunTrace {
            states: vec![state],
            subgrads: vec![Array2::zeros((2, 1))],
            config_digest: ConfigDigest::default(),
        };
        assert!(trace.is_consistent());
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,node,component,x,w,g,alpha"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("0,0,0,0.0000000000000000e0,2.5000000000000000e-1,"));
        assert_eq!(csv.lines().count(), 3);
    }
}
