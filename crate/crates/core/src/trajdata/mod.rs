//! Panel data, discretized actions and trajectories.
//!
//! Raw input is a long panel of `(entity, period, features, raw_action)` rows.
//! Raw actions are discretized per period into seven labels, rows are chained
//! into period-contiguous trajectories, and trajectories are grouped by
//! horizon `H` for estimation.

mod discretize;
mod panel;
mod trajectory;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use discretize::{discretize_actions, period_cutoffs, PeriodCutoffs};
pub use panel::{load_panel, PanelDataset, PanelRow, PanelSchema, Standardization};
pub use trajectory::{
    build_trajectories, empirical_mean_counts, feature_bounds, feature_counts, geometric_factor,
    FeatureBounds, Trajectory, TrajectoryBuild, TrajectorySet,
};

#[derive(Debug, Error)]
pub enum TrajDataError {
    #[error("row {row}, column `{column}`: cannot parse {value:?} as {expected}")]
    Parse {
        row: usize,
        column: String,
        value: String,
        expected: &'static str,
    },
    #[error("duplicate key: entity `{entity}` period {period}")]
    DuplicateKey { entity: String, period: i64 },
    #[error("schema: {0}")]
    Schema(String),
    #[error("period {period}: no raw actions to discretize")]
    EmptyCrossSection { period: i64 },
    #[error("invalid trajectory set: {0}")]
    InvalidSet(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Discretized action in `{-3, …, 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub struct ActionLabel(i8);

impl ActionLabel {
    pub const COUNT: usize = 7;
    pub const MIN: i8 = -3;
    pub const MAX: i8 = 3;

    pub fn new(value: i8) -> Option<Self> {
        (Self::MIN..=Self::MAX).contains(&value).then_some(Self(value))
    }

    pub fn value(self) -> i8 {
        self.0
    }

    /// Position in probability vectors ordered `-3, …, 3`.
    pub fn index(self) -> usize {
        (self.0 - Self::MIN) as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index < Self::COUNT {
            Some(Self(index as i8 + Self::MIN))
        } else {
            None
        }
    }

    pub fn all() -> impl Iterator<Item = ActionLabel> {
        (Self::MIN..=Self::MAX).map(ActionLabel)
    }
}

impl TryFrom<i8> for ActionLabel {
    type Error = String;

    fn try_from(value: i8) -> Result<Self, Self::Error> {
        ActionLabel::new(value).ok_or_else(|| format!("action label {value} outside -3..=3"))
    }
}

impl From<ActionLabel> for i8 {
    fn from(a: ActionLabel) -> i8 {
        a.0
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// K-dimensional feature vector. Missing entries are stored as NaN and
/// serialized as `null`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn from_options(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        Self(values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        let v = self.0[k];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_missing(&self, k: usize) -> bool {
        self.0[k].is_nan()
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(|v| !v.is_nan())
    }

    /// Raw values with NaN for missing entries.
    pub fn raw(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    /// Value with missing entries read as zero, i.e. the feature mean once
    /// features are standardized.
    pub fn value_or_zero(&self, k: usize) -> f64 {
        self.get(k).unwrap_or(0.0)
    }
}

impl Serialize for StateVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let opts: Vec<Option<f64>> = (0..self.dim()).map(|k| self.get(k)).collect();
        opts.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let opts = Vec::<Option<f64>>::deserialize(deserializer)?;
        Ok(StateVector::from_options(opts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_label_range() {
        assert!(ActionLabel::new(-4).is_none());
        assert!(ActionLabel::new(4).is_none());
        assert_eq!(ActionLabel::new(-3).unwrap().index(), 0);
        assert_eq!(ActionLabel::new(3).unwrap().index(), 6);
        assert_eq!(ActionLabel::all().count(), 7);
        for a in ActionLabel::all() {
            assert_eq!(ActionLabel::from_index(a.index()), Some(a));
        }
        assert!(serde_json::from_str::<ActionLabel>("5").is_err());
    }

    #[test]
    fn state_vector_serializes_missing_as_null() {
        let s = StateVector::new(vec![1.5, f64::NAN]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[1.5,null]");
        let back: StateVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back.get(0), Some(1.5));
        assert!(back.is_missing(1));
        assert_eq!(back.value_or_zero(1), 0.0);
    }
}
