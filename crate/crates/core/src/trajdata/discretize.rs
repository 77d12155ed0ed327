use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ActionLabel, PanelDataset, TrajDataError};
use crate::numeric::percentile_sorted;

const CUTOFF_PERCENTILES: [f64; 3] = [1.0, 30.0, 70.0];

/// Cross-sectional cutoffs `(p1, p2, p3)` of one period. The negative branch
/// cutoffs are percentiles of absolute values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodCutoffs {
    pub period: i64,
    pub nonnegative: Option<[f64; 3]>,
    pub negative: Option<[f64; 3]>,
}

impl PeriodCutoffs {
    pub fn label(&self, x: f64) -> ActionLabel {
        let (magnitude, cutoffs, sign) = if x >= 0.0 {
            (x, self.nonnegative, 1)
        } else {
            (-x, self.negative, -1)
        };
        let [p1, p2, p3] = cutoffs.expect("cutoffs exist for every branch with members");
        let bin = if magnitude >= p3 {
            3
        } else if magnitude >= p2 {
            2
        } else if magnitude >= p1 {
            1
        } else {
            0
        };
        ActionLabel::new(sign * bin).expect("bin in 0..=3")
    }
}

fn cutoffs(mut values: Vec<f64>) -> Option<[f64; 3]> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(CUTOFF_PERCENTILES.map(|q| percentile_sorted(&values, q)))
}

/// Computes per-period cutoffs. Zero goes to the nonnegative branch only.
/// A period without any raw action is an error unless it is the final
/// period of the panel, whose forward change is never observed.
pub fn period_cutoffs(panel: &PanelDataset) -> Result<Vec<PeriodCutoffs>, TrajDataError> {
    let mut by_period: BTreeMap<i64, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for row in &panel.rows {
        let entry = by_period.entry(row.period).or_default();
        entry.2 += 1;
        match row.raw_action {
            Some(x) if x >= 0.0 => entry.0.push(x),
            Some(y) => entry.1.push(y.abs()),
            None => {}
        }
    }
    let last = by_period.keys().next_back().copied();
    let mut out = Vec::with_capacity(by_period.len());
    for (period, (nonneg, neg, _)) in by_period {
        if nonneg.is_empty() && neg.is_empty() {
            if Some(period) == last {
                continue;
            }
            return Err(TrajDataError::EmptyCrossSection { period });
        }
        out.push(PeriodCutoffs {
            period,
            nonnegative: cutoffs(nonneg),
            negative: cutoffs(neg),
        });
    }
    Ok(out)
}

/// Maps raw actions to labels in `{-3, …, 3}` by cross-sectional quantiles
/// of each period: `[0, p1) → 0`, `[p1, p2) → 1`, `[p2, p3) → 2`,
/// `[p3, ∞) → 3`, mirrored on absolute values for negative changes.
pub fn discretize_actions(mut panel: PanelDataset) -> Result<PanelDataset, TrajDataError> {
    let cuts: BTreeMap<i64, PeriodCutoffs> = period_cutoffs(&panel)?
        .into_iter()
        .map(|c| (c.period, c))
        .collect();
    for row in &mut panel.rows {
        row.action = row.raw_action.map(|x| cuts[&row.period].label(x));
    }
    Ok(panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::{PanelRow, StateVector};
    use proptest::prelude::*;

    fn panel_with_actions(actions: &[(i64, Option<f64>)]) -> PanelDataset {
        let rows = actions
            .iter()
            .enumerate()
            .map(|(i, &(period, raw_action))| PanelRow {
                entity: format!("e{i:04}"),
                period,
                features: StateVector::new(vec![0.0]),
                raw_action,
                action: None,
            })
            .collect();
        PanelDataset::new(vec!["f".into()], rows).unwrap()
    }

    fn labels(p: &PanelDataset) -> Vec<i8> {
        p.rows.iter().map(|r| r.action.map(|a| a.value()).unwrap_or(99)).collect()
    }

    #[test]
    fn boundary_cases_follow_piecewise_definition() {
        let cut = PeriodCutoffs {
            period: 0,
            nonnegative: Some([0.1, 0.5, 0.9]),
            negative: Some([0.2, 0.4, 0.8]),
        };
        // 0 <= x < p1 with p1 > 0
        assert_eq!(cut.label(0.0).value(), 0);
        assert_eq!(cut.label(0.0999).value(), 0);
        // lower bound inclusive
        assert_eq!(cut.label(0.1).value(), 1);
        assert_eq!(cut.label(0.5).value(), 2);
        // top bin closed below
        assert_eq!(cut.label(0.9).value(), 3);
        assert_eq!(cut.label(7.0).value(), 3);
        assert_eq!(cut.label(-0.1).value(), 0);
        assert_eq!(cut.label(-0.2).value(), -1);
        assert_eq!(cut.label(-0.4).value(), -2);
        assert_eq!(cut.label(-0.8).value(), -3);
        assert_eq!(cut.label(-5.0).value(), -3);
    }

    #[test]
    fn labels_by_period_quantiles() {
        // nonnegative sample 0..=100 step 1 → p1 = 1, p2 = 30, p3 = 70
        let mut acts: Vec<(i64, Option<f64>)> = (0..=100).map(|i| (1, Some(i as f64))).collect();
        acts.push((1, Some(-1.0)));
        acts.push((1, Some(-2.0)));
        acts.push((2, None));
        let p = discretize_actions(panel_with_actions(&acts)).unwrap();
        let cuts = period_cutoffs(&p).unwrap();
        assert_eq!(cuts.len(), 1);
        assert_eq!(cuts[0].nonnegative, Some([1.0, 30.0, 70.0]));
        let l = labels(&p);
        assert_eq!(&l[0..3], &[0, 1, 1]);
        assert_eq!(l[29], 1);
        assert_eq!(l[30], 2);
        assert_eq!(l[69], 2);
        assert_eq!(l[70], 3);
        // negatives {1, 2}: p1 = 1.01, p2 = 1.3, p3 = 1.7
        assert_eq!(l[101], 0);
        assert_eq!(l[102], -3);
        // final period without actions is left unlabeled
        assert_eq!(l[103], 99);
    }

    #[test]
    fn zero_is_routed_to_nonnegative_branch() {
        let p = discretize_actions(panel_with_actions(&[(0, Some(0.0)), (0, Some(-1.0))])).unwrap();
        let cuts = period_cutoffs(&p).unwrap();
        assert_eq!(cuts[0].nonnegative, Some([0.0; 3]));
        assert_eq!(cuts[0].negative, Some([1.0; 3]));
    }

    #[test]
    fn empty_interior_period_is_an_error() {
        let err = discretize_actions(panel_with_actions(&[(0, Some(1.0)), (1, None), (2, Some(1.0))])).unwrap_err();
        assert!(matches!(err, TrajDataError::EmptyCrossSection { period: 1 }));
    }

    proptest! {
        #[test]
        fn nonnegative_branch_is_scale_invariant(
            xs in prop::collection::vec(0.0f64..10.0, 1..60),
            ys in prop::collection::vec(-10.0f64..-1e-6, 0..20),
            pow in -3i32..4,
        ) {
            let c = 2f64.powi(pow);
            let base: Vec<_> = xs.iter().chain(&ys).map(|&v| (0, Some(v))).collect();
            let scaled: Vec<_> = xs.iter().map(|&v| (0, Some(v * c))).chain(ys.iter().map(|&v| (0, Some(v)))).collect();
            let a = labels(&discretize_actions(panel_with_actions(&base)).unwrap());
            let b = labels(&discretize_actions(panel_with_actions(&scaled)).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn every_label_in_range(xs in prop::collection::vec(-5.0f64..5.0, 1..80)) {
            let acts: Vec<_> = xs.iter().map(|&v| (0, Some(v))).collect();
            let p = discretize_actions(panel_with_actions(&acts)).unwrap();
            for r in &p.rows {
                let a = r.action.unwrap().value();
                prop_assert!((-3..=3).contains(&a));
                prop_assert_eq!(a >= 0, r.raw_action.unwrap() >= 0.0 || a == 0);
            }
        }
    }
}
