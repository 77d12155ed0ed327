//! Behavior-policy estimation by K nearest neighbors.
//!
//! For every observation at period `t` the estimator looks up the `k` closest
//! historical states (periods `<= t`) under a ridge-regularized Mahalanobis
//! metric that ignores coordinates missing in either state, takes the local
//! action frequencies and mixes them with the uniform distribution.

mod covariance;
mod neighbors;
mod rolling;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajdata::{ActionLabel, Trajectory};

pub use covariance::{pairwise_covariance, regularized_precision, CovarianceEstimate, PairwiseCovariance};
pub use neighbors::{knn_probs, nan_mahalanobis, HistoricalPool, KnnOutcome, PoolObservation};
pub use rolling::{rolling_estimate, RollingConfig};

pub type ActionProbs = [f64; ActionLabel::COUNT];

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("covariance (K = {k}) not positive definite even with ridge {lambda:e}; try a larger knn.lambda")]
    SingularCovariance { k: usize, lambda: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no policy estimate for entity `{entity}` period {period}")]
    LikelihoodUnavailable { entity: String, period: i64 },
    #[error("panel actions are not discretized")]
    NotDiscretized,
}

/// `(1 - eps) p + eps / 7`.
pub fn smooth(p: &ActionProbs, eps: f64) -> ActionProbs {
    let floor = eps / ActionLabel::COUNT as f64;
    p.map(|v| (1.0 - eps) * v + floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySource {
    Knn,
    /// Exact conditional policy of a synthetic law.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRef {
    pub entity: String,
    pub period: i64,
}

/// One `(entity, period)` record. Excluded queries keep a record with no
/// probabilities so they are counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub entity: String,
    pub period: i64,
    /// Probabilities for actions `-3, …, 3`.
    pub probs: Option<ActionProbs>,
    pub n_valid_neighbors: usize,
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<Vec<NeighborRef>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub source: PolicySource,
    pub smoothing_eps: f64,
    pub k_neighbors: usize,
    pub min_overlap: usize,
    pub lambda: f64,
    pub standardized: bool,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Sorted by `(entity, period)`.
    entries: Vec<PolicyEntry>,
}

impl PolicyTable {
    pub fn new(source: PolicySource, smoothing_eps: f64, k_neighbors: usize, min_overlap: usize, lambda: f64) -> Self {
        Self {
            source,
            smoothing_eps,
            k_neighbors,
            min_overlap,
            lambda,
            standardized: false,
            config_hash: None,
            warnings: Vec::new(),
            entries: Vec::new(),
        }
    }

    /// Inserts or replaces the record for `(entity, period)`.
    pub fn insert(&mut self, entry: PolicyEntry) {
        match self.position(&entry.entity, entry.period) {
            Ok(i) => self.entries[i] = entry,
            Err(i) => self.entries.insert(i, entry),
        }
    }

    /// Builds a table from records in any order.
    pub fn with_entries(mut self, mut entries: Vec<PolicyEntry>) -> Self {
        entries.sort_by(|a, b| (&a.entity, a.period).cmp(&(&b.entity, b.period)));
        entries.dedup_by(|b, a| a.entity == b.entity && a.period == b.period);
        self.entries = entries;
        self
    }

    fn position(&self, entity: &str, period: i64) -> Result<usize, usize> {
        self.entries
            .binary_search_by(|e| (e.entity.as_str(), e.period).cmp(&(entity, period)))
    }

    pub fn get(&self, entity: &str, period: i64) -> Option<&PolicyEntry> {
        self.position(entity, period).ok().map(|i| &self.entries[i])
    }

    pub fn probs(&self, entity: &str, period: i64) -> Option<&ActionProbs> {
        self.get(entity, period).and_then(|e| e.probs.as_ref())
    }

    pub fn entries(&self) -> &[PolicyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_excluded(&self) -> usize {
        self.entries.iter().filter(|e| e.excluded).count()
    }
}

/// `ln Π_{t<H} π(a_t | s_t)` from the table.
pub fn policy_log_likelihood(traj: &Trajectory, table: &PolicyTable) -> Result<f64, KnnError> {
    let mut total = 0.0;
    for (t, a) in traj.actions.iter().enumerate() {
        let period = traj.period_at(t);
        let p = table
            .probs(&traj.entity, period)
            .map(|probs| probs[a.index()])
            .filter(|&p| p > 0.0)
            .ok_or_else(|| KnnError::LikelihoodUnavailable {
                entity: traj.entity.clone(),
                period,
            })?;
        total += p.ln();
    }
    Ok(total)
}

/// `π(τ) = Π_{t<H} π(a_t | s_t)`.
pub fn policy_likelihood(traj: &Trajectory, table: &PolicyTable) -> Result<f64, KnnError> {
    let mut product = 1.0;
    for (t, a) in traj.actions.iter().enumerate() {
        let period = traj.period_at(t);
        let p = table
            .probs(&traj.entity, period)
            .map(|probs| probs[a.index()])
            .ok_or_else(|| KnnError::LikelihoodUnavailable {
                entity: traj.entity.clone(),
                period,
            })?;
        product *= p;
    }
    Ok(product)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::StateVector;
    use proptest::prelude::*;

    fn entry(entity: &str, period: i64, probs: Option<ActionProbs>) -> PolicyEntry {
        PolicyEntry {
            entity: entity.into(),
            period,
            excluded: probs.is_none(),
            probs,
            n_valid_neighbors: 0,
            neighbors: None,
        }
    }

    fn traj(actions: &[i8]) -> Trajectory {
        Trajectory {
            id: "x".into(),
            entity: "x".into(),
            start_period: 10,
            states: vec![StateVector::new(vec![0.0]); actions.len() + 1],
            actions: actions.iter().map(|&a| ActionLabel::new(a).unwrap()).collect(),
        }
    }

    #[test]
    fn smoothing_examples() {
        let mut delta = [0.0; 7];
        delta[ActionLabel::new(0).unwrap().index()] = 1.0;
        let s = smooth(&delta, 0.07);
        assert!((s[3] - 0.94).abs() < 1e-15);
        for (i, v) in s.iter().enumerate() {
            if i != 3 {
                assert!((v - 0.01).abs() < 1e-15);
            }
        }
        let u = [1.0 / 7.0; 7];
        let su = smooth(&u, 0.3);
        for v in su {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
        let tiny = smooth(&delta, 1e-300);
        assert_eq!(tiny[3], 1.0);
    }

    proptest! {
        #[test]
        fn smoothed_vectors_are_distributions(raw in prop::collection::vec(0.0f64..1.0, 7), eps in 1e-6f64..0.999) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-3);
            let mut p = [0.0; 7];
            for (d, r) in p.iter_mut().zip(&raw) {
                *d = r / total;
            }
            let s = smooth(&p, eps);
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for v in s {
                prop_assert!(v >= eps / 7.0 * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn likelihood_examples() {
        let uniform = [1.0 / 7.0; 7];
        let table = PolicyTable::new(PolicySource::Knn, 0.0, 1, 1, 1e-3)
            .with_entries(vec![entry("x", 10, Some(uniform)), entry("x", 11, Some(uniform))]);
        let l = policy_likelihood(&traj(&[1, -2]), &table).unwrap();
        assert!((l - 1.0 / 49.0).abs() < 1e-15);

        let eps = 0.05;
        let mut p = [0.0; 7];
        p[ActionLabel::new(2).unwrap().index()] = 1.0;
        let sm = smooth(&p, eps);
        let table = PolicyTable::new(PolicySource::Knn, eps, 1, 1, 1e-3).with_entries(vec![entry("x", 10, Some(sm))]);
        assert_eq!(policy_likelihood(&traj(&[2]), &table).unwrap(), 1.0 - eps + eps / 7.0);
        // smoothing floor
        let l = policy_likelihood(&traj(&[-3]), &table).unwrap();
        assert!(l >= eps / 7.0 * (1.0 - 1e-15));
        assert!((policy_log_likelihood(&traj(&[-3]), &table).unwrap() - l.ln()).abs() < 1e-15);
    }

    #[test]
    fn missing_or_excluded_entry_is_unavailable() {
        let table = PolicyTable::new(PolicySource::Knn, 0.05, 1, 1, 1e-3)
            .with_entries(vec![entry("x", 10, Some([1.0 / 7.0; 7])), entry("x", 11, None)]);
        let err = policy_likelihood(&traj(&[0, 0]), &table).unwrap_err();
        assert!(matches!(err, KnnError::LikelihoodUnavailable { period: 11, .. }));
        assert!(policy_log_likelihood(&traj(&[0, 0, 0]), &table).is_err());
    }

    #[test]
    fn table_lookup_and_serde() {
        let mut table = PolicyTable::new(PolicySource::Exact, 0.0, 0, 0, 0.0)
            .with_entries(vec![entry("b", 1, Some([1.0 / 7.0; 7])), entry("a", 2, None)]);
        table.insert(entry("a", 1, Some([1.0 / 7.0; 7])));
        let keys: Vec<_> = table.entries().iter().map(|e| (e.entity.as_str(), e.period)).collect();
        assert_eq!(keys, vec![("a", 1), ("a", 2), ("b", 1)]);
        assert_eq!(table.n_excluded(), 1);
        let json = serde_json::to_string(&table).unwrap();
        let back: PolicyTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table);
    }
}
