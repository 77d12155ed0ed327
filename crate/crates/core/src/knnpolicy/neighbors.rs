use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use super::{ActionProbs, KnnError};
use crate::trajdata::{ActionLabel, StateVector};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolObservation {
    pub state: StateVector,
    pub action: ActionLabel,
    pub entity: String,
    pub period: i64,
}

/// Observations available to a query at `asof_period`. Order matters: ties
/// in distance go to the earlier pool position.
#[derive(Debug, Clone)]
pub struct HistoricalPool {
    asof_period: i64,
    observations: Vec<PoolObservation>,
}

impl HistoricalPool {
    /// Keeps only observations with `period <= asof_period`, in the given order.
    pub fn new(asof_period: i64, observations: impl IntoIterator<Item = PoolObservation>) -> Self {
        Self {
            asof_period,
            observations: observations.into_iter().filter(|o| o.period <= asof_period).collect(),
        }
    }

    pub fn asof_period(&self) -> i64 {
        self.asof_period
    }

    pub fn observations(&self) -> &[PoolObservation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Squared quadratic form `xᵀ Ω x` over the coordinates observed in both
/// states, or `None` when fewer than `m` coordinates overlap.
pub(crate) fn masked_sq_distance(s: &[f64], s2: &[f64], omega: &DMatrix<f64>, m: usize, diff: &mut Vec<f64>) -> Option<f64> {
    diff.clear();
    let mut overlap = 0;
    for (a, b) in s.iter().zip(s2) {
        let d = a - b;
        if d.is_nan() {
            diff.push(0.0);
        } else {
            diff.push(d);
            overlap += 1;
        }
    }
    if overlap < m {
        return None;
    }
    let k = diff.len();
    let mut q = 0.0;
    for i in 0..k {
        if diff[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..k {
            row += omega[(i, j)] * diff[j];
        }
        q += diff[i] * row;
    }
    Some(q)
}

pub(crate) fn overlap_at_least(s: &[f64], s2: &[f64], m: usize) -> bool {
    s.iter().zip(s2).filter(|(a, b)| !a.is_nan() && !b.is_nan()).count() >= m
}

/// NaN-robust Mahalanobis distance restricted to the jointly observed
/// coordinates `J`: `sqrt((s_J - s2_J)ᵀ Ω_JJ (s_J - s2_J))`. `None` stands for
/// an infinite distance when `|J| < m`; such pairs are never neighbors.
pub fn nan_mahalanobis(s: &StateVector, s2: &StateVector, omega: &DMatrix<f64>, m: usize) -> Option<f64> {
    let mut diff = Vec::with_capacity(s.dim());
    let q = masked_sq_distance(s.raw(), s2.raw(), omega, m.max(1), &mut diff)?;
    // Ω_JJ is a principal submatrix of a PD matrix
    debug_assert!(q > -1e-9 * (1.0 + q.abs()), "negative quadratic form {q}");
    Some(q.max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub enum KnnOutcome {
    Estimated {
        /// Local action frequencies, before smoothing.
        probs: ActionProbs,
        /// Pool positions of the selected neighbors, nearest first.
        neighbors: Vec<usize>,
        n_valid: usize,
    },
    /// Fewer than `k` pool members at finite distance.
    Excluded { n_valid: usize },
}

/// Heap key: squared distance bits (monotone for non-negative floats) and
/// pool position.
type Candidate = (u64, usize);

/// Selects the `k` smallest finite distances among `n` pool positions,
/// breaking ties by position. Returns the selected positions nearest first,
/// the number of finite-distance candidates seen, and the position where the
/// scan stopped: once `k` candidates at distance zero are held nothing later
/// can displace them, so positions from there on are not scanned.
pub(crate) fn select_nearest(
    n: usize,
    k: usize,
    skip: Option<usize>,
    mut sq_distance: impl FnMut(usize) -> Option<f64>,
) -> (Vec<usize>, usize, usize) {
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    let mut n_valid = 0;
    let mut stopped = n;
    for i in 0..n {
        if heap.len() == k && heap.peek().is_some_and(|top| top.0 == 0) {
            stopped = i;
            break;
        }
        if Some(i) == skip {
            continue;
        }
        let Some(d2) = sq_distance(i) else { continue };
        n_valid += 1;
        let d2 = if d2 > 0.0 { d2 } else { 0.0 };
        let key = (d2.to_bits(), i);
        if heap.len() < k {
            heap.push(key);
        } else if let Some(&top) = heap.peek() {
            // positions only increase, so an equal distance never displaces
            if key.0 < top.0 {
                heap.pop();
                heap.push(key);
            }
        }
    }
    let selected = heap.into_sorted_vec().into_iter().map(|(_, i)| i).collect();
    (selected, n_valid, stopped)
}

pub(crate) fn local_frequencies<'a>(actions: impl Iterator<Item = &'a ActionLabel>, k: usize) -> ActionProbs {
    let mut probs = [0.0; ActionLabel::COUNT];
    for a in actions {
        probs[a.index()] += 1.0;
    }
    for p in &mut probs {
        *p /= k as f64;
    }
    probs
}

/// Local action frequencies among the `k` nearest pool members of `query`.
/// `skip` leaves one pool position out (the query itself when it belongs to
/// the pool).
pub fn knn_probs(
    query: &StateVector,
    pool: &HistoricalPool,
    omega: &DMatrix<f64>,
    k: usize,
    m: usize,
    skip: Option<usize>,
) -> Result<KnnOutcome, KnnError> {
    if k == 0 {
        return Err(KnnError::Config("k must be at least 1".into()));
    }
    let obs = pool.observations();
    let mut diff = Vec::with_capacity(query.dim());
    let (neighbors, mut n_valid, stopped) = select_nearest(obs.len(), k, skip, |i| {
        masked_sq_distance(query.raw(), obs[i].state.raw(), omega, m.max(1), &mut diff)
    });
    n_valid += (stopped..obs.len())
        .filter(|&i| Some(i) != skip && overlap_at_least(query.raw(), obs[i].state.raw(), m.max(1)))
        .count();
    if neighbors.len() < k {
        return Ok(KnnOutcome::Excluded { n_valid });
    }
    let probs = local_frequencies(neighbors.iter().map(|&i| &obs[i].action), k);
    Ok(KnnOutcome::Estimated { probs, neighbors, n_valid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(state: &[f64], action: i8, period: i64) -> PoolObservation {
        PoolObservation {
            state: StateVector::new(state.to_vec()),
            action: ActionLabel::new(action).unwrap(),
            entity: format!("e{period}"),
            period,
        }
    }

    fn sv(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec())
    }

    #[test]
    fn identity_metric_is_euclidean() {
        let id = DMatrix::identity(2, 2);
        let d = nan_mahalanobis(&sv(&[0.0, 0.0]), &sv(&[3.0, 4.0]), &id, 1).unwrap();
        assert!((d - 5.0).abs() < 1e-15);
        assert_eq!(nan_mahalanobis(&sv(&[1.5, -2.0]), &sv(&[1.5, -2.0]), &id, 2), Some(0.0));
    }

    #[test]
    fn overlap_below_threshold_is_infinite() {
        let id = DMatrix::identity(3, 3);
        let nan = f64::NAN;
        let a = sv(&[1.0, nan, 2.0]);
        let b = sv(&[0.0, 1.0, nan]);
        // |J| = 1 = m - 1
        assert_eq!(nan_mahalanobis(&a, &b, &id, 2), None);
        assert_eq!(nan_mahalanobis(&a, &b, &id, 1), Some(1.0));
    }

    #[test]
    fn submatrix_form_uses_joint_coordinates() {
        let omega = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 3.0]);
        let a = sv(&[1.0, f64::NAN, 2.0]);
        let b = sv(&[0.0, 5.0, 1.0]);
        // J = {0, 2}, x = (1, 1): 2 + 2·0.1 + 3
        let d = nan_mahalanobis(&a, &b, &omega, 2).unwrap();
        assert!((d * d - 5.2).abs() < 1e-14);
    }

    #[test]
    fn knn_frequency_examples() {
        let id = DMatrix::identity(1, 1);
        let pool = HistoricalPool::new(5, (0..5).map(|i| obs(&[i as f64], 2, i)));
        match knn_probs(&sv(&[0.0]), &pool, &id, 3, 1, None).unwrap() {
            KnnOutcome::Estimated { probs, neighbors, n_valid } => {
                assert_eq!(probs[ActionLabel::new(2).unwrap().index()], 1.0);
                assert_eq!(probs.iter().sum::<f64>(), 1.0);
                assert_eq!(neighbors, vec![0, 1, 2]);
                assert_eq!(n_valid, 5);
            }
            other => panic!("{other:?}"),
        }

        let pool = HistoricalPool::new(
            9,
            vec![obs(&[0.1], 1, 0), obs(&[0.2], 1, 1), obs(&[0.3], 0, 2), obs(&[0.4], -1, 3), obs(&[9.0], 3, 4)],
        );
        match knn_probs(&sv(&[0.0]), &pool, &id, 4, 1, None).unwrap() {
            KnnOutcome::Estimated { probs, .. } => {
                let p = |a: i8| probs[ActionLabel::new(a).unwrap().index()];
                assert_eq!(p(1), 0.5);
                assert_eq!(p(0), 0.25);
                assert_eq!(p(-1), 0.25);
                assert_eq!(p(3), 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_few_valid_neighbors_is_excluded() {
        let id = DMatrix::identity(2, 2);
        let nan = f64::NAN;
        let pool = HistoricalPool::new(3, vec![obs(&[0.0, 0.0], 0, 0), obs(&[1.0, 1.0], 0, 1), obs(&[nan, 1.0], 0, 2)]);
        let out = knn_probs(&sv(&[0.0, 0.0]), &pool, &id, 3, 2, None).unwrap();
        assert_eq!(out, KnnOutcome::Excluded { n_valid: 2 });
    }

    #[test]
    fn pool_drops_future_observations() {
        let pool = HistoricalPool::new(1, (0..4).map(|i| obs(&[0.0], 0, i)));
        assert_eq!(pool.len(), 2);
        assert!(pool.observations().iter().all(|o| o.period <= pool.asof_period()));
    }

    #[test]
    fn ties_go_to_earlier_pool_position_and_skip_is_honored() {
        let id = DMatrix::identity(1, 1);
        let pool = HistoricalPool::new(9, (0..6).map(|i| obs(&[1.0], (i % 3) as i8, i)));
        match knn_probs(&sv(&[1.0]), &pool, &id, 2, 1, Some(0)).unwrap() {
            KnnOutcome::Estimated { neighbors, n_valid, .. } => {
                assert_eq!(neighbors, vec![1, 2]);
                assert_eq!(n_valid, 5);
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(a in prop::collection::vec(-5.0f64..5.0, 3), b in prop::collection::vec(-5.0f64..5.0, 3), mask in 0u8..8) {
            let omega = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 3.0]);
            let mut a = a;
            if mask & 1 == 1 { a[0] = f64::NAN; }
            if mask & 2 == 2 { a[2] = f64::NAN; }
            let (sa, sb) = (sv(&a), sv(&b));
            let d1 = nan_mahalanobis(&sa, &sb, &omega, 1);
            let d2 = nan_mahalanobis(&sb, &sa, &omega, 1);
            prop_assert_eq!(d1.is_some(), d2.is_some());
            if let (Some(x), Some(y)) = (d1, d2) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x));
                prop_assert!(x >= 0.0);
            }
            let same = nan_mahalanobis(&sa, &sa, &omega, 1);
            prop_assert!(same.is_none() || same == Some(0.0));
        }

        #[test]
        fn undefined_members_do_not_change_selection(xs in prop::collection::vec(-3.0f64..3.0, 5..30), extra in 1usize..10) {
            let id = DMatrix::identity(2, 2);
            let base: Vec<_> = xs.iter().enumerate().map(|(i, &x)| obs(&[x, x * 0.5], (i % 7) as i8 - 3, 0)).collect();
            let mut padded = base.clone();
            for _ in 0..extra {
                padded.push(obs(&[f64::NAN, f64::NAN], 3, 0));
            }
            let q = sv(&[0.3, -0.2]);
            let a = knn_probs(&q, &HistoricalPool::new(0, base), &id, 4, 1, None).unwrap();
            let b = knn_probs(&q, &HistoricalPool::new(0, padded), &id, 4, 1, None).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
