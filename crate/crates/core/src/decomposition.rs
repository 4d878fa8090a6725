//! Principal component analysis over the engineered features.
//!
//! The covariance (or correlation, when standardizing) matrix is built
//! explicitly and diagonalized with cyclic Jacobi rotations. At 17 columns
//! this is exact, dependency-free, and fast; the numerical contract is
//! orthonormal axes and eigenvalues that reproduce the column variances.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::numeric::{compensated_mean, compensated_sum, CompensatedSum, Matrix};
use crate::persist::{self, PersistError};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecompositionError {
    #[error("column {0:?} has zero variance, cannot standardize")]
    ZeroVarianceColumn(String),
    #[error("need more rows than columns: got {rows} rows for {cols} columns")]
    TooFewRows { rows: usize, cols: usize },
    #[error("k = {k} is outside 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("feature columns do not match the fitted model")]
    SchemaMismatch,
}

/// A fitted decomposition. `components` rows are the principal axes in
/// feature space, sorted by explained variance (descending). Each row has
/// unit norm and its largest-magnitude entry is made positive, which pins
/// the sign ambiguity and keeps refits bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub feature_names: Vec<String>,
    pub standardized: bool,
    pub feature_means: Vec<f64>,
    /// Per-column divisor applied after centering: sample standard
    /// deviation when standardizing, 1 otherwise.
    pub feature_scales: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

const MODEL_KIND: &str = "pca-model";
const MODEL_VERSION: u32 = 1;

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn save_json(&self, path: &Path) -> Result<(), PersistError> {
        persist::save_document(path, MODEL_KIND, MODEL_VERSION, self)
    }

    pub fn load_json(path: &Path) -> Result<Self, PersistError> {
        persist::load_document(path, MODEL_KIND, MODEL_VERSION)
    }

    /// CSV with one row per component: eigenvalue, variance ratio, and the
    /// running total, for elbow plots.
    pub fn explained_variance_csv(&self) -> String {
        let mut out = String::from("component,eigenvalue,variance_ratio,cumulative_ratio\n");
        let mut cumulative = 0.0;
        for (i, (ev, ratio)) in self
            .eigenvalues
            .iter()
            .zip(&self.explained_variance_ratio)
            .enumerate()
        {
            cumulative += ratio;
            let _ = writeln!(out, "{},{ev:.15e},{ratio:.15e},{cumulative:.15e}", i + 1);
        }
        out
    }
}

/// Fits the decomposition. Centering always happens; `standardize`
/// additionally divides each column by its sample standard deviation so
/// channels with large physical units do not dominate.
pub fn fit_pca(
    features: &FeatureMatrix,
    standardize: bool,
) -> Result<PcaModel, DecompositionError> {
    let n = features.n_rows();
    let p = features.n_cols();
    if n <= p {
        return Err(DecompositionError::TooFewRows { rows: n, cols: p });
    }

    let columns: Vec<Vec<f64>> = (0..p).map(|j| features.values.column(j)).collect();
    if standardize {
        for (j, column) in columns.iter().enumerate() {
            // An exactly constant column has no direction to offer and
            // would divide by ~0 below.
            if column.iter().all(|&v| v == column[0]) {
                return Err(DecompositionError::ZeroVarianceColumn(
                    features.column_names[j].clone(),
                ));
            }
        }
    }

    let feature_means: Vec<f64> = columns.iter().map(|c| compensated_mean(c)).collect();
    let feature_scales: Vec<f64> = if standardize {
        columns
            .iter()
            .zip(&feature_means)
            .map(|(c, &m)| {
                let mut acc = CompensatedSum::new();
                for &v in c {
                    let d = v - m;
                    acc.add(d * d);
                }
                (acc.value() / (n - 1) as f64).sqrt()
            })
            .collect()
    } else {
        vec![1.0; p]
    };

    // Standardized data, column-major; reused for the covariance entries.
    let z: Vec<Vec<f64>> = columns
        .iter()
        .zip(feature_means.iter().zip(&feature_scales))
        .map(|(c, (&m, &s))| c.iter().map(|&v| (v - m) / s).collect())
        .collect();

    let mut covariance = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in i..p {
            let mut acc = CompensatedSum::new();
            for (a, b) in z[i].iter().zip(&z[j]) {
                acc.add(a * b);
            }
            let value = acc.value() / (n - 1) as f64;
            covariance[i][j] = value;
            covariance[j][i] = value;
        }
    }

    let (mut eigenvalues, eigenvectors) = jacobi_eigen(&covariance);

    // Sort descending; the sort is stable so exactly tied eigenvalues keep
    // their diagonalization order.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    eigenvalues = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
    let mut components: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| (0..p).map(|r| eigenvectors[r][i]).collect())
        .collect();
    for axis in &mut components {
        let mut dominant = 0;
        for (j, v) in axis.iter().enumerate() {
            if v.abs() > axis[dominant].abs() {
                dominant = j;
            }
        }
        if axis[dominant] < 0.0 {
            for v in axis.iter_mut() {
                *v = -*v;
            }
        }
    }

    let total = compensated_sum(&eigenvalues);
    let explained_variance_ratio = if total > 0.0 {
        eigenvalues.iter().map(|&ev| ev / total).collect()
    } else {
        vec![0.0; p]
    };

    Ok(PcaModel {
        feature_names: features.column_names.clone(),
        standardized: standardize,
        feature_means,
        feature_scales,
        components,
        eigenvalues,
        explained_variance_ratio,
    })
}

/// Cyclic Jacobi diagonalization of a symmetric matrix. Returns the
/// eigenvalues (diagonal at convergence) and the eigenvectors as matrix
/// columns. Sweeps stop once the off-diagonal norm falls below 1e-12 of
/// the input's Frobenius norm.
fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    let frobenius = {
        let mut acc = CompensatedSum::new();
        for row in &a {
            for &x in row {
                acc.add(x * x);
            }
        }
        acc.value().sqrt()
    };
    let tolerance = 1e-12 * frobenius;
    let off_norm = |a: &[Vec<f64>]| -> f64 {
        let mut acc = 0.0;
        for (i, row) in a.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if i != j {
                    acc += x * x;
                }
            }
        }
        acc.sqrt()
    };

    // A 17 x 17 system converges in well under ten sweeps; the cap only
    // guards against a NaN-poisoned input spinning forever.
    for _sweep in 0..100 {
        if off_norm(&a) <= tolerance {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                let app = a[p][p];
                let aqq = a[q][q];
                a[p][p] = app - t * apq;
                a[q][q] = aqq + t * apq;
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for i in 0..n {
                    if i != p && i != q {
                        let aip = a[i][p];
                        let aiq = a[i][q];
                        a[i][p] = c * aip - s * aiq;
                        a[p][i] = a[i][p];
                        a[i][q] = s * aip + c * aiq;
                        a[q][i] = a[i][q];
                    }
                }
                for row in v.iter_mut() {
                    let vip = row[p];
                    let viq = row[q];
                    row[p] = c * vip - s * viq;
                    row[q] = s * vip + c * viq;
                }
            }
        }
    }

    let eigenvalues = (0..n).map(|i| a[i][i]).collect();
    (eigenvalues, v)
}

/// Projects features onto the first `k` principal axes using the fitted
/// centering and scaling, never statistics of `features` itself.
pub fn transform(
    model: &PcaModel,
    features: &FeatureMatrix,
    k: usize,
) -> Result<Matrix, DecompositionError> {
    if features.column_names != model.feature_names {
        return Err(DecompositionError::SchemaMismatch);
    }
    let p = model.n_features();
    if k == 0 || k > p {
        return Err(DecompositionError::KOutOfRange { k, max: p });
    }
    let n = features.n_rows();
    let mut out = Matrix::zeros(n, k);
    let mut z = vec![0.0; p];
    for r in 0..n {
        let row = features.values.row(r);
        for j in 0..p {
            z[j] = (row[j] - model.feature_means[j]) / model.feature_scales[j];
        }
        for (axis_idx, axis) in model.components[..k].iter().enumerate() {
            let mut acc = 0.0;
            for (zj, aj) in z.iter().zip(axis) {
                acc += zj * aj;
            }
            out.set(r, axis_idx, acc);
        }
    }
    Ok(out)
}

/// Maps projections back to feature space, undoing scaling and centering.
/// With `k = n_features` this inverts `transform` up to roundoff; with
/// smaller `k` it yields the rank-k reconstruction.
pub fn inverse_transform(
    model: &PcaModel,
    projected: &Matrix,
) -> Result<Matrix, DecompositionError> {
    let p = model.n_features();
    let k = projected.n_cols();
    if k == 0 || k > p {
        return Err(DecompositionError::KOutOfRange { k, max: p });
    }
    let n = projected.n_rows();
    let mut out = Matrix::zeros(n, p);
    for r in 0..n {
        let scores = projected.row(r);
        for j in 0..p {
            let mut acc = 0.0;
            for (axis, &score) in model.components[..k].iter().zip(scores) {
                acc += score * axis[j];
            }
            out.set(r, j, acc * model.feature_scales[j] + model.feature_means[j]);
        }
    }
    Ok(out)
}

/// Smallest k whose cumulative explained-variance ratio reaches the
/// threshold; all components when even the full set falls short.
pub fn select_components(model: &PcaModel, threshold: f64) -> usize {
    let mut cumulative = 0.0;
    for (i, ratio) in model.explained_variance_ratio.iter().enumerate() {
        cumulative += ratio;
        if cumulative >= threshold {
            return i + 1;
        }
    }
    model.n_features()
}
