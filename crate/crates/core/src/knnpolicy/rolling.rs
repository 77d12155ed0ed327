use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use super::covariance::{pairwise_covariance, CovarianceEstimate};
use super::neighbors::{local_frequencies, masked_sq_distance, overlap_at_least, select_nearest};
use super::{smooth, KnnError, NeighborRef, PolicyEntry, PolicySource, PolicyTable};
use crate::trajdata::PanelDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    pub k: usize,
    /// Minimum overlap; `None` means `ceil(K / 2)`.
    pub m: Option<usize>,
    pub lambda: f64,
    pub eps: f64,
    pub start_period: Option<i64>,
    /// Keep neighbor keys on every entry.
    pub debug_neighbors: bool,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            k: 50,
            m: None,
            lambda: 1e-3,
            eps: 0.05,
            start_period: None,
            debug_neighbors: false,
        }
    }
}

impl RollingConfig {
    pub fn min_overlap(&self, k_features: usize) -> usize {
        self.m.unwrap_or(k_features.div_ceil(2)).max(1)
    }

    fn validate(&self, k_features: usize) -> Result<(), KnnError> {
        if self.k == 0 {
            return Err(KnnError::Config("knn.k must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(KnnError::Config(format!("knn.eps must be in (0, 1), got {}", self.eps)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(KnnError::Config(format!("knn.lambda must be positive, got {}", self.lambda)));
        }
        let m = self.min_overlap(k_features);
        if m > k_features {
            return Err(KnnError::Config(format!("knn.m = {m} exceeds the {k_features} features")));
        }
        Ok(())
    }
}

/// Rolling KNN policy estimate without look-ahead.
///
/// For each period `t` (from `start_period`): the covariance uses every row
/// with period `<= t`; the pool holds every labeled observation with period
/// `<= t` except the query itself, ordered most recent period first, then by
/// entity, which fixes how distance ties resolve. Queries with fewer than `k`
/// finite-distance pool members are recorded as excluded.
pub fn rolling_estimate(panel: &PanelDataset, config: &RollingConfig) -> Result<PolicyTable, KnnError> {
    if !panel.is_discretized() {
        return Err(KnnError::NotDiscretized);
    }
    let kf = panel.k();
    config.validate(kf)?;
    let m = config.min_overlap(kf);

    let mut table = PolicyTable::new(PolicySource::Knn, config.eps, config.k, m, config.lambda);
    table.standardized = panel.standardization.is_some();

    let rows = &panel.rows;
    let mut by_period: Vec<usize> = (0..rows.len()).collect();
    by_period.sort_by_key(|&i| rows[i].period);
    let mut pool_order: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].action.is_some()).collect();
    pool_order.sort_by(|&a, &b| (Reverse(rows[a].period), &rows[a].entity).cmp(&(Reverse(rows[b].period), &rows[b].entity)));

    let mut entries = Vec::new();
    let mut diff = Vec::with_capacity(kf);
    let mut z = Vec::new();
    let mut complete = Vec::new();
    for t in panel.periods() {
        if config.start_period.is_some_and(|s| t < s) {
            continue;
        }
        let history_end = by_period.partition_point(|&i| rows[i].period <= t);
        let pool_start = pool_order.partition_point(|&i| rows[i].period > t);
        let pool = &pool_order[pool_start..];
        // the pool is ordered by descending period, so the queries lead it
        let n_queries = pool.partition_point(|&i| rows[i].period == t);
        if n_queries == 0 {
            continue;
        }

        let cov = pairwise_covariance(by_period[..history_end].iter().map(|&i| &rows[i].features), kf);
        if !cov.sparse_pairs.is_empty() {
            table.warnings.push(format!(
                "period {t}: {} feature pairs with < 2 joint observations set to 0",
                cov.sparse_pairs.len()
            ));
        }
        let estimate = match CovarianceEstimate::new(cov.sigma, config.lambda, t) {
            Ok(e) => e,
            Err(err) => {
                log::warn!("period {t} skipped: {err}");
                table.warnings.push(format!("period {t} skipped: {err}"));
                for &qi in &pool[..n_queries] {
                    entries.push(PolicyEntry {
                        entity: rows[qi].entity.clone(),
                        period: t,
                        probs: None,
                        n_valid_neighbors: 0,
                        excluded: true,
                        neighbors: None,
                    });
                }
                continue;
            }
        };
        if estimate.lambda != config.lambda {
            table.warnings.push(format!("period {t}: ridge escalated to {:e}", estimate.lambda));
        }

        // whitened coordinates zᵢ = Lᵀ xᵢ for complete states: xᵀΩx = |Lᵀx|²
        let l = &estimate.omega_factor;
        z.clear();
        z.resize(pool.len() * kf, 0.0);
        complete.clear();
        for (p, &i) in pool.iter().enumerate() {
            let s = &rows[i].features;
            let ok = s.is_complete();
            complete.push(ok);
            if ok {
                let x = s.raw();
                for c in 0..kf {
                    z[p * kf + c] = (c..kf).map(|r| l[(r, c)] * x[r]).sum();
                }
            }
        }

        let incomplete: Vec<usize> = (0..pool.len()).filter(|&p| !complete[p]).collect();
        let mut complete_suffix = vec![0; pool.len() + 1];
        for p in (0..pool.len()).rev() {
            complete_suffix[p] = complete_suffix[p + 1] + usize::from(complete[p]);
        }

        for q in 0..n_queries {
            let qi = pool[q];
            let qx = rows[qi].features.raw();
            let zq = z[q * kf..(q + 1) * kf].to_vec();
            let (selected, mut n_valid, stopped) = select_nearest(pool.len(), config.k, Some(q), |p| {
                if complete[q] && complete[p] {
                    let zp = &z[p * kf..(p + 1) * kf];
                    Some(zq.iter().zip(zp).map(|(a, b)| (a - b) * (a - b)).sum())
                } else {
                    masked_sq_distance(qx, rows[pool[p]].features.raw(), &estimate.omega, m, &mut diff)
                }
            });
            if stopped < pool.len() {
                // the unscanned tail still counts toward n_valid
                let tail_incomplete = incomplete.partition_point(|&p| p < stopped);
                n_valid += incomplete[tail_incomplete..]
                    .iter()
                    .filter(|&&p| p != q && overlap_at_least(qx, rows[pool[p]].features.raw(), m))
                    .count();
                if complete[q] {
                    n_valid += complete_suffix[stopped] - usize::from(q >= stopped);
                } else {
                    n_valid += (stopped..pool.len())
                        .filter(|&p| complete[p] && p != q && overlap_at_least(qx, rows[pool[p]].features.raw(), m))
                        .count();
                }
            }
            let excluded = selected.len() < config.k;
            let probs = (!excluded).then(|| {
                let freq = local_frequencies(selected.iter().map(|&p| rows[pool[p]].action.as_ref().expect("pool rows are labeled")), config.k);
                smooth(&freq, config.eps)
            });
            let neighbors = config.debug_neighbors.then(|| {
                selected
                    .iter()
                    .map(|&p| NeighborRef {
                        entity: rows[pool[p]].entity.clone(),
                        period: rows[pool[p]].period,
                    })
                    .collect()
            });
            entries.push(PolicyEntry {
                entity: rows[qi].entity.clone(),
                period: t,
                probs,
                n_valid_neighbors: n_valid,
                excluded,
                neighbors,
            });
        }
    }
    Ok(table.with_entries(entries))
}
