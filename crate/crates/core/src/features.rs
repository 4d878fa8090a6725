//! Feature engineering: every predictor column is replaced by its running
//! area under the curve, the discrete analogue of charge drawn, energy
//! delivered, or heat accumulated since the start of the experiment.
//!
//! For a series sampled at a fixed interval the engineered value at row `k`
//! is `interval * sum(series[0..=k])` (left Riemann sum). Sums restart at
//! zero history for each experiment.

use std::fmt::Write as _;

use crate::numeric::{compensated_mean, CompensatedSum, Matrix};
use crate::telemetry::{ColumnSchema, TelemetryFrame, PREDICTOR_COUNT};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot accumulate an empty series")]
    EmptySeries,
    #[error("sample interval must be positive, got {0}")]
    InvalidInterval(f64),
    #[error("column {0:?} contains a non-finite value")]
    NonFiniteInput(String),
    #[error("column {0:?} has zero variance")]
    ZeroVarianceColumn(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("column names differ between experiments")]
    SchemaMismatch,
}

/// Engineered predictors for one experiment (or a concatenation of
/// several): an n x 17 matrix plus the untouched response column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub experiment_id: String,
    pub column_names: Vec<String>,
    pub values: Matrix,
    pub response: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(
        experiment_id: impl Into<String>,
        column_names: Vec<String>,
        values: Matrix,
        response: Vec<f64>,
    ) -> Result<Self, FeatureError> {
        if column_names.len() != values.n_cols() {
            return Err(FeatureError::SchemaMismatch);
        }
        if response.len() != values.n_rows() {
            return Err(FeatureError::TooFewRows {
                needed: values.n_rows(),
                got: response.len(),
            });
        }
        Ok(Self {
            experiment_id: experiment_id.into(),
            column_names,
            values,
            response,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.n_cols()
    }
}

/// Running interval-scaled prefix sum of a series. Uses compensated
/// accumulation so million-row experiments do not drift.
pub fn cumulative_auc(series: &[f64], sample_interval_s: f64) -> Result<Vec<f64>, FeatureError> {
    if series.is_empty() {
        return Err(FeatureError::EmptySeries);
    }
    if !(sample_interval_s > 0.0) {
        return Err(FeatureError::InvalidInterval(sample_interval_s));
    }
    let mut acc = CompensatedSum::new();
    let mut out = Vec::with_capacity(series.len());
    for &v in series {
        acc.add(v);
        out.push(acc.value() * sample_interval_s);
    }
    Ok(out)
}

/// Applies the cumulative transform to all 17 predictors of a clean frame.
/// The response column is copied through unchanged.
pub fn featurize(frame: &TelemetryFrame) -> Result<FeatureMatrix, FeatureError> {
    let schema = ColumnSchema::standard();
    if frame.n_rows() == 0 {
        return Err(FeatureError::EmptySeries);
    }
    let names: Vec<String> = schema.predictor_names().iter().map(|s| s.to_string()).collect();
    let mut values = Matrix::zeros(frame.n_rows(), PREDICTOR_COUNT);
    for j in 0..PREDICTOR_COUNT {
        let column = frame.predictor_column(j);
        if column.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFiniteInput(names[j].clone()));
        }
        let engineered = cumulative_auc(&column, frame.sample_interval_s())?;
        for (r, v) in engineered.into_iter().enumerate() {
            values.set(r, j, v);
        }
    }
    let response = frame.response();
    if response.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFiniteInput("remaining_time_s".to_string()));
    }
    FeatureMatrix::new(frame.experiment_id(), names, values, response)
}

/// Stacks per-experiment feature matrices row-wise. All parts must share
/// one column schema; experiment ids are joined with `+`.
pub fn concat_experiments(parts: &[FeatureMatrix]) -> Result<FeatureMatrix, FeatureError> {
    let first = parts.first().ok_or(FeatureError::EmptySeries)?;
    let mut rows = Vec::new();
    let mut response = Vec::new();
    let mut ids = Vec::new();
    for part in parts {
        if part.column_names != first.column_names {
            return Err(FeatureError::SchemaMismatch);
        }
        rows.extend(part.values.rows().map(<[f64]>::to_vec));
        response.extend_from_slice(&part.response);
        ids.push(part.experiment_id.as_str());
    }
    FeatureMatrix::new(ids.join("+"), first.column_names.clone(), Matrix::from_rows(rows), response)
}

/// Pearson correlation matrix over the engineered predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub column_names: Vec<String>,
    pub values: Matrix,
}

impl CorrelationMatrix {
    /// CSV rendering with a leading name column, one row per predictor.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("column");
        for name in &self.column_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (i, name) in self.column_names.iter().enumerate() {
            out.push_str(name);
            for j in 0..self.column_names.len() {
                let _ = write!(out, ",{:.12}", self.values.get(i, j));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise Pearson correlations of the feature columns. Entries are
/// clamped to [-1, 1] to absorb last-ulp overshoot; the diagonal is set to
/// exactly 1.
pub fn correlation(features: &FeatureMatrix) -> Result<CorrelationMatrix, FeatureError> {
    let n = features.n_rows();
    let p = features.n_cols();
    if n < 2 {
        return Err(FeatureError::TooFewRows { needed: 2, got: n });
    }
    let columns: Vec<Vec<f64>> = (0..p).map(|j| features.values.column(j)).collect();
    for (j, column) in columns.iter().enumerate() {
        let (min, max) = column
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if min == max {
            return Err(FeatureError::ZeroVarianceColumn(
                features.column_names[j].clone(),
            ));
        }
    }
    let means: Vec<f64> = columns.iter().map(|c| compensated_mean(c)).collect();
    let mut centered = columns;
    for (column, &mean) in centered.iter_mut().zip(&means) {
        for v in column.iter_mut() {
            *v -= mean;
        }
    }
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| {
            let mut acc = CompensatedSum::new();
            for &v in c {
                acc.add(v * v);
            }
            acc.value().sqrt()
        })
        .collect();
    let mut values = Matrix::zeros(p, p);
    for i in 0..p {
        values.set(i, i, 1.0);
        for j in i + 1..p {
            let mut acc = CompensatedSum::new();
            for (a, b) in centered[i].iter().zip(&centered[j]) {
                acc.add(a * b);
            }
            let r = (acc.value() / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values.set(i, j, r);
            values.set(j, i, r);
        }
    }
    Ok(CorrelationMatrix {
        column_names: features.column_names.clone(),
        values,
    })
}
