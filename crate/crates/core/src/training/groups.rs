use serde::{Deserialize, Serialize};

use crate::bias::EnvironmentKey;
use crate::error::{Error, Result};

/// Online GroupDRO mixture weights over environments.
///
/// After each batch, every group present in the batch is updated by
/// `q_g <- q_g * exp(eta * (loss_g + C / sqrt(n_g)))`; absent groups keep
/// their weight, and all weights are renormalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    pub keys: Vec<EnvironmentKey>,
    pub sizes: Vec<usize>,
    pub q: Vec<f64>,
    pub eta: f64,
    pub adjustment: f64,
}

impl GroupWeights {
    /// Uniform initial weights. `groups` pairs each key with its training
    /// size `n_g`.
    pub fn new(groups: &[(EnvironmentKey, usize)], eta: f64, adjustment: f64) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Config("GroupDRO needs at least one environment".into()));
        }
        if groups.iter().any(|&(_, n)| n == 0) {
            return Err(Error::Config("environment sizes must be positive".into()));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("eta_q must be a non-negative number, got {eta}")));
        }
        let mut keys: Vec<EnvironmentKey> = groups.iter().map(|g| g.0).collect();
        keys.sort();
        keys.dedup();
        if keys.len() != groups.len() {
            return Err(Error::Config("duplicate environment key".into()));
        }
        let k = groups.len();
        Ok(Self {
            keys: groups.iter().map(|g| g.0).collect(),
            sizes: groups.iter().map(|g| g.1).collect(),
            q: vec![1.0 / k as f64; k],
            eta,
            adjustment,
        })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn index_of(&self, key: EnvironmentKey) -> Result<usize> {
        self.keys
            .iter()
            .position(|&k| k == key)
            .ok_or_else(|| Error::Integrity(format!("environment {key} has no GroupDRO weight")))
    }

    /// `C / sqrt(n_g)` for every group.
    pub fn adjustments(&self) -> Vec<f64> {
        self.sizes
            .iter()
            .map(|&n| self.adjustment / (n as f64).sqrt())
            .collect()
    }

    /// Exponentiated-gradient update from the mean losses of the groups
    /// present in a batch (`(group index, mean loss)` pairs).
    pub fn update(&mut self, present: &[(usize, f64)]) {
        for &(g, loss) in present {
            let adjusted = loss + self.adjustment / (self.sizes[g] as f64).sqrt();
            self.q[g] *= (self.eta * adjusted).exp();
        }
        let total: f64 = self.q.iter().sum();
        for q in &mut self.q {
            *q /= total;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Label;

    fn key(bits: u8) -> EnvironmentKey {
        EnvironmentKey {
            artifact_bitmask: bits,
            label: Label::Benign,
        }
    }

    #[test]
    fn closed_form_two_group_update() {
        let mut w = GroupWeights::new(&[(key(0), 10), (key(1), 10)], 1.0, 0.0).unwrap();
        w.update(&[(0, 1.0), (1, 0.0)]);
        let e = std::f64::consts::E;
        assert!((w.q[0] - e / (1.0 + e)).abs() < 1e-12);
        assert!((w.q[1] - 1.0 / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn adjustment_terms() {
        let w = GroupWeights::new(&[(key(0), 100), (key(1), 25)], 0.01, 2.0).unwrap();
        let adj = w.adjustments();
        assert!((adj[0] - 0.2).abs() < 1e-12 && (adj[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn absent_groups_keep_relative_weight() {
        let mut w = GroupWeights::new(&[(key(0), 5), (key(1), 5), (key(2), 5)], 0.5, 0.0).unwrap();
        w.update(&[(0, 2.0)]);
        assert!((w.q[1] - w.q[2]).abs() < 1e-15);
        assert!(w.q[0] > w.q[1]);
    }

    #[test]
    fn unknown_key_is_integrity_error() {
        let w = GroupWeights::new(&[(key(0), 5)], 0.5, 0.0).unwrap();
        assert!(matches!(w.index_of(key(3)), Err(Error::Integrity(_))));
    }
}
