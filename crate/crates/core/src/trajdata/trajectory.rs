use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ActionLabel, PanelDataset, StateVector, TrajDataError};

/// `(s_0, a_0, s_1, …, a_{H-1}, s_H)` for one entity over contiguous periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    pub entity: String,
    pub start_period: i64,
    pub states: Vec<StateVector>,
    pub actions: Vec<ActionLabel>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Panel key of step `t`.
    pub fn period_at(&self, t: usize) -> i64 {
        self.start_period + t as i64
    }

    fn validate(&self, k: usize) -> Result<(), TrajDataError> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(TrajDataError::InvalidSet(format!(
                "trajectory `{}` has {} states for {} actions",
                self.id,
                self.states.len(),
                self.actions.len()
            )));
        }
        if let Some(s) = self.states.iter().find(|s| s.dim() != k) {
            return Err(TrajDataError::InvalidSet(format!(
                "trajectory `{}` has a state of dimension {}, expected {k}",
                self.id,
                s.dim()
            )));
        }
        Ok(())
    }
}

/// Trajectories sharing one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub horizon: usize,
    pub k: usize,
    pub gamma: f64,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn new(k: usize, gamma: f64, trajectories: Vec<Trajectory>) -> Result<Self, TrajDataError> {
        let Some(first) = trajectories.first() else {
            return Err(TrajDataError::InvalidSet("no trajectories".into()));
        };
        if !(0.0..=1.0).contains(&gamma) {
            return Err(TrajDataError::InvalidSet(format!("gamma {gamma} outside [0, 1]")));
        }
        let horizon = first.horizon();
        for t in &trajectories {
            t.validate(k)?;
            if t.horizon() != horizon {
                return Err(TrajDataError::InvalidSet(format!(
                    "trajectory `{}` has horizon {}, set horizon is {horizon}",
                    t.id,
                    t.horizon()
                )));
            }
        }
        Ok(Self {
            horizon,
            k,
            gamma,
            trajectories,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryBuild {
    /// One set per horizon, ascending.
    pub sets: Vec<TrajectorySet>,
    /// Runs too short to give `H >= 1`.
    pub dropped_runs: usize,
}

/// Chains rows into maximal period-contiguous runs per entity. A run also
/// ends at a row without a discretized action, since that row can only be a
/// terminal state. Runs are grouped by horizon and never truncated.
pub fn build_trajectories(panel: &PanelDataset, gamma: f64) -> Result<TrajectoryBuild, TrajDataError> {
    let k = panel.k();
    let mut by_horizon: BTreeMap<usize, Vec<Trajectory>> = BTreeMap::new();
    let mut dropped_runs = 0;

    let mut flush = |run: &[usize], by_horizon: &mut BTreeMap<usize, Vec<Trajectory>>| {
        if run.len() < 2 {
            dropped_runs += 1;
            return;
        }
        let first = &panel.rows[run[0]];
        let states = run.iter().map(|&i| panel.rows[i].features.clone()).collect();
        let actions = run[..run.len() - 1]
            .iter()
            .map(|&i| panel.rows[i].action.expect("run interior rows carry actions"))
            .collect();
        let traj = Trajectory {
            id: format!("{}@{}", first.entity, first.period),
            entity: first.entity.clone(),
            start_period: first.period,
            states,
            actions,
        };
        by_horizon.entry(run.len() - 1).or_default().push(traj);
    };

    let mut run: Vec<usize> = Vec::new();
    for (i, row) in panel.rows.iter().enumerate() {
        if let Some(&last) = run.last() {
            let prev = &panel.rows[last];
            let continues =
                prev.entity == row.entity && prev.period + 1 == row.period && prev.action.is_some();
            if !continues {
                flush(&run, &mut by_horizon);
                run.clear();
            }
        }
        run.push(i);
    }
    if !run.is_empty() {
        flush(&run, &mut by_horizon);
    }

    let sets = by_horizon
        .into_values()
        .map(|trajs| TrajectorySet::new(k, gamma, trajs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrajectoryBuild { sets, dropped_runs })
}

/// Discounted feature count `s_k = Σ_{t=0}^{H} γ^t s_{t,k}`. Missing entries
/// count as zero, the mean of a standardized feature.
pub fn feature_counts(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let k = traj.states.first().map_or(0, StateVector::dim);
    let mut counts = vec![0.0; k];
    let mut discount = 1.0;
    for state in &traj.states {
        for (j, c) in counts.iter_mut().enumerate() {
            *c += discount * state.value_or_zero(j);
        }
        discount *= gamma;
    }
    counts
}

/// Sample mean of the feature counts over the set.
pub fn empirical_mean_counts(set: &TrajectorySet) -> Vec<f64> {
    mean_of_counts(set.trajectories.iter().map(|t| feature_counts(t, set.gamma)), set.k)
}

pub(crate) fn mean_of_counts(counts: impl Iterator<Item = Vec<f64>>, k: usize) -> Vec<f64> {
    let mut sum = vec![0.0; k];
    let mut n = 0usize;
    for c in counts {
        for (s, v) in sum.iter_mut().zip(&c) {
            *s += v;
        }
        n += 1;
    }
    sum.iter().map(|s| s / n as f64).collect()
}

/// Per-step feature range used to size the count tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl FeatureBounds {
    pub fn new(upper: Vec<f64>, lower: Vec<f64>) -> Self {
        assert_eq!(upper.len(), lower.len());
        assert!(upper.iter().zip(&lower).all(|(u, l)| u >= l), "upper below lower");
        Self { upper, lower }
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn k(&self) -> usize {
        self.upper.len()
    }

    /// Range of the discounted count `s_k`: the per-step range times the
    /// geometric factor.
    pub fn count_width(&self, k: usize, gamma: f64, horizon: usize) -> f64 {
        geometric_factor(gamma, horizon) * self.width(k)
    }

    pub fn union(&self, other: &FeatureBounds) -> FeatureBounds {
        FeatureBounds {
            upper: self.upper.iter().zip(&other.upper).map(|(a, b)| a.max(*b)).collect(),
            lower: self.lower.iter().zip(&other.lower).map(|(a, b)| a.min(*b)).collect(),
        }
    }
}

/// `Σ_{t=0}^{H} γ^t`, equal to `H + 1` at `γ = 1`.
pub fn geometric_factor(gamma: f64, horizon: usize) -> f64 {
    if gamma == 1.0 {
        (horizon + 1) as f64
    } else {
        (gamma.powi(horizon as i32 + 1) - 1.0) / (gamma - 1.0)
    }
}

/// Empirical min/max of each per-step feature over every state in the set.
/// A feature that is never observed gets the degenerate range `[0, 0]`.
pub fn feature_bounds(set: &TrajectorySet) -> FeatureBounds {
    let mut upper = vec![f64::NEG_INFINITY; set.k];
    let mut lower = vec![f64::INFINITY; set.k];
    for state in set.trajectories.iter().flat_map(|t| &t.states) {
        for j in 0..set.k {
            if let Some(v) = state.get(j) {
                upper[j] = upper[j].max(v);
                lower[j] = lower[j].min(v);
            }
        }
    }
    for j in 0..set.k {
        if upper[j] < lower[j] {
            upper[j] = 0.0;
            lower[j] = 0.0;
        }
    }
    FeatureBounds { upper, lower }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::{discretize_actions, PanelRow};
    use proptest::prelude::*;

    fn traj(id: &str, states: Vec<Vec<f64>>) -> Trajectory {
        let h = states.len() - 1;
        Trajectory {
            id: id.into(),
            entity: id.into(),
            start_period: 0,
            states: states.into_iter().map(StateVector::new).collect(),
            actions: vec![ActionLabel::new(0).unwrap(); h],
        }
    }

    #[test]
    fn feature_counts_examples() {
        let t = traj("a", vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(feature_counts(&t, 1.0), vec![4.0, 6.0]);
        assert_eq!(feature_counts(&t, 0.0), vec![1.0, 2.0]);
        let t = traj("b", vec![vec![2.0, 0.0], vec![4.0, 8.0]]);
        assert_eq!(feature_counts(&t, 0.5), vec![4.0, 4.0]);
    }

    #[test]
    fn missing_entry_counts_as_zero() {
        let t = traj("a", vec![vec![1.0, f64::NAN], vec![3.0, 4.0]]);
        assert_eq!(feature_counts(&t, 1.0), vec![4.0, 4.0]);
    }

    #[test]
    fn empirical_mean_examples() {
        let one = TrajectorySet::new(2, 1.0, vec![traj("a", vec![vec![1.0, 2.0], vec![3.0, 4.0]])]).unwrap();
        assert_eq!(empirical_mean_counts(&one), vec![4.0, 6.0]);
        let two = TrajectorySet::new(
            2,
            1.0,
            vec![traj("a", vec![vec![0.5, 0.5], vec![0.5, 0.5]]), traj("b", vec![vec![1.5, 1.5], vec![1.5, 1.5]])],
        )
        .unwrap();
        assert_eq!(empirical_mean_counts(&two), vec![2.0, 2.0]);
    }

    #[test]
    fn bounds_examples() {
        let set = TrajectorySet::new(
            2,
            1.0,
            vec![traj("a", vec![vec![-1.0, 3.0], vec![2.0, 3.0]]), traj("b", vec![vec![0.0, 3.0], vec![1.0, 3.0]])],
        )
        .unwrap();
        let b = feature_bounds(&set);
        assert_eq!(b.lower, vec![-1.0, 3.0]);
        assert_eq!(b.upper, vec![2.0, 3.0]);
        assert_eq!(b.count_width(0, 1.0, 1), 6.0);
    }

    #[test]
    fn geometric_factor_limit() {
        assert_eq!(geometric_factor(1.0, 3), 4.0);
        assert!((geometric_factor(0.5, 2) - 1.75).abs() < 1e-15);
        assert_eq!(geometric_factor(0.0, 5), 1.0);
        // continuity at γ → 1
        assert!((geometric_factor(1.0 - 1e-9, 3) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn set_rejects_mixed_horizons() {
        let err = TrajectorySet::new(
            1,
            1.0,
            vec![traj("a", vec![vec![1.0], vec![1.0]]), traj("b", vec![vec![1.0], vec![1.0], vec![1.0]])],
        )
        .unwrap_err();
        assert!(matches!(err, TrajDataError::InvalidSet(_)));
    }

    fn row(entity: &str, period: i64, action: Option<f64>) -> PanelRow {
        PanelRow {
            entity: entity.into(),
            period,
            features: StateVector::new(vec![period as f64]),
            raw_action: action,
            action: None,
        }
    }

    fn build(rows: Vec<PanelRow>) -> TrajectoryBuild {
        let panel = discretize_actions(PanelDataset::new(vec!["f".into()], rows).unwrap()).unwrap();
        build_trajectories(&panel, 1.0).unwrap()
    }

    #[test]
    fn contiguous_entity_gives_one_trajectory() {
        let b = build((1..=5).map(|p| row("a", p, Some(0.1))).collect());
        assert_eq!(b.sets.len(), 1);
        assert_eq!(b.sets[0].horizon, 4);
        assert_eq!(b.sets[0].len(), 1);
        assert_eq!(b.dropped_runs, 0);
    }

    #[test]
    fn gap_splits_trajectory() {
        let rows = vec![row("a", 1, Some(0.1)), row("a", 2, Some(0.1)), row("a", 4, Some(0.1)), row("a", 5, Some(0.1)), row("a", 6, None)];
        let b = build(rows);
        let hs: Vec<_> = b.sets.iter().map(|s| (s.horizon, s.len())).collect();
        assert_eq!(hs, vec![(1, 1), (2, 1)]);
        assert_eq!(b.sets[1].trajectories[0].start_period, 4);
    }

    #[test]
    fn equal_horizons_share_a_set() {
        let rows = vec![row("a", 1, Some(0.1)), row("a", 2, None), row("b", 1, Some(-0.1)), row("b", 2, None), row("c", 2, None)];
        let b = build(rows);
        assert_eq!(b.sets.len(), 1);
        assert_eq!(b.sets[0].len(), 2);
        assert_eq!(b.dropped_runs, 1);
    }

    proptest! {
        #[test]
        fn trajectories_partition_the_panel(
            entries in prop::collection::btree_set((0u8..4, 0i64..12), 1..40),
            missing in prop::collection::vec(any::<bool>(), 40),
        ) {
            let rows: Vec<_> = entries.iter().map(|&(e, p)| row(&format!("e{e}"), p, Some(0.2))).collect();
            let n_rows = rows.len();
            let mut panel = discretize_actions(PanelDataset::new(vec!["f".into()], rows).unwrap()).unwrap();
            for (r, &m) in panel.rows.iter_mut().zip(&missing) {
                if m {
                    r.raw_action = None;
                    r.action = None;
                }
            }
            let b = build_trajectories(&panel, 1.0).unwrap();
            let mut seen = std::collections::BTreeSet::new();
            for set in &b.sets {
                for t in &set.trajectories {
                    for (step, s) in t.states.iter().enumerate() {
                        // features encode the period
                        prop_assert_eq!(s.get(0).unwrap() as i64, t.period_at(step));
                        prop_assert!(seen.insert((t.entity.clone(), t.period_at(step))));
                    }
                }
            }
            prop_assert!(seen.len() <= n_rows);
        }

        #[test]
        fn mean_counts_permutation_invariant(seed in 0u64..1000) {
            let trajs: Vec<_> = (0..6)
                .map(|i| traj(&format!("t{i}"), vec![vec![(seed % 7) as f64 + i as f64], vec![i as f64 * 0.25]]))
                .collect();
            let mut rev = trajs.clone();
            rev.reverse();
            let a = empirical_mean_counts(&TrajectorySet::new(1, 1.0, trajs).unwrap());
            let b = empirical_mean_counts(&TrajectorySet::new(1, 1.0, rev).unwrap());
            prop_assert!((a[0] - b[0]).abs() < 1e-12);
        }

        #[test]
        fn unit_discount_counts_are_column_sums(vals in prop::collection::vec(-100.0f64..100.0, 2..20)) {
            let states: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
            let t = traj("a", states);
            let sum: f64 = vals.iter().sum();
            prop_assert_eq!(feature_counts(&t, 1.0)[0], sum);
        }
    }
}
