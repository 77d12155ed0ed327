use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{ActionLabel, StateVector, TrajDataError};

/// Column mapping for delimited panel input. Every column not named here is
/// a feature, in header order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub entity_column: String,
    pub period_column: String,
    pub action_column: String,
    pub delimiter: u8,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            entity_column: "entity".into(),
            period_column: "period".into(),
            action_column: "action_raw".into(),
            delimiter: b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub entity: String,
    pub period: i64,
    pub features: StateVector,
    /// Change in hold ratio; missing when the next period is unobserved.
    pub raw_action: Option<f64>,
    #[serde(default)]
    pub action: Option<ActionLabel>,
}

/// Per-feature z-score statistics, computed once over the observed entries
/// of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub observed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub feature_names: Vec<String>,
    /// Sorted by `(entity, period)`.
    pub rows: Vec<PanelRow>,
    #[serde(default)]
    pub standardization: Option<Standardization>,
}

impl PanelDataset {
    /// Builds a dataset, sorting rows and rejecting duplicate keys or
    /// inconsistent feature dimensions.
    pub fn new(feature_names: Vec<String>, mut rows: Vec<PanelRow>) -> Result<Self, TrajDataError> {
        let k = feature_names.len();
        if let Some(bad) = rows.iter().find(|r| r.features.dim() != k) {
            return Err(TrajDataError::Schema(format!(
                "entity `{}` period {} has {} features, expected {k}",
                bad.entity,
                bad.period,
                bad.features.dim()
            )));
        }
        rows.sort_by(|a, b| (&a.entity, a.period).cmp(&(&b.entity, b.period)));
        if let Some(w) = rows
            .windows(2)
            .find(|w| w[0].entity == w[1].entity && w[0].period == w[1].period)
        {
            return Err(TrajDataError::DuplicateKey {
                entity: w[0].entity.clone(),
                period: w[0].period,
            });
        }
        Ok(Self {
            feature_names,
            rows,
            standardization: None,
        })
    }

    pub fn k(&self) -> usize {
        self.feature_names.len()
    }

    pub fn periods(&self) -> BTreeSet<i64> {
        self.rows.iter().map(|r| r.period).collect()
    }

    pub fn is_discretized(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.raw_action.is_none() || r.action.is_some())
    }

    /// Z-scores every feature in place over its observed entries. Features
    /// with zero spread are only centered. Missing entries stay missing.
    pub fn standardize(&mut self) -> &Standardization {
        let k = self.k();
        let mut sum = vec![0.0; k];
        let mut observed = vec![0usize; k];
        for row in &self.rows {
            for j in 0..k {
                if let Some(v) = row.features.get(j) {
                    sum[j] += v;
                    observed[j] += 1;
                }
            }
        }
        let mean: Vec<f64> = (0..k)
            .map(|j| if observed[j] > 0 { sum[j] / observed[j] as f64 } else { 0.0 })
            .collect();
        let mut ss = vec![0.0; k];
        for row in &self.rows {
            for j in 0..k {
                if let Some(v) = row.features.get(j) {
                    ss[j] += (v - mean[j]).powi(2);
                }
            }
        }
        let std: Vec<f64> = (0..k)
            .map(|j| {
                let s = if observed[j] > 1 { (ss[j] / (observed[j] - 1) as f64).sqrt() } else { 0.0 };
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        for row in &mut self.rows {
            for (j, v) in row.features.raw_mut().iter_mut().enumerate() {
                if !v.is_nan() {
                    *v = (*v - mean[j]) / std[j];
                }
            }
        }
        self.standardization.insert(Standardization { mean, std, observed })
    }
}

/// Reads a delimited panel with a header row. Empty cells are missing
/// values; they are never imputed here.
pub fn load_panel<R: Read>(source: R, schema: &PanelSchema) -> Result<PanelDataset, TrajDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TrajDataError::Schema(format!("missing column `{name}`")))
    };
    let entity_col = position(&schema.entity_column)?;
    let period_col = position(&schema.period_column)?;
    let action_col = position(&schema.action_column)?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != entity_col && i != period_col && i != action_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(TrajDataError::Schema("no feature columns".into()));
    }
    let feature_names: Vec<String> = feature_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = i + 2;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let parse_err = |col: usize, expected| TrajDataError::Parse {
            row: line,
            column: headers[col].to_string(),
            value: cell(col).to_string(),
            expected,
        };
        let parse_opt = |col: usize| -> Result<Option<f64>, TrajDataError> {
            let s = cell(col);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| parse_err(col, "a finite number"))
        };
        let entity = cell(entity_col).to_string();
        if entity.is_empty() {
            return Err(parse_err(entity_col, "a non-empty identifier"));
        }
        let period: i64 = cell(period_col)
            .parse()
            .map_err(|_| parse_err(period_col, "an integer period"))?;
        let features = feature_cols
            .iter()
            .map(|&c| parse_opt(c))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(PanelRow {
            entity,
            period,
            features: StateVector::from_options(features),
            raw_action: parse_opt(action_col)?,
            action: None,
        });
    }
    PanelDataset::new(feature_names, rows)
}
