//! Bagged CART regression forest, grown greedily by variance reduction.
//!
//! Split search and leaf means are written against a fixed arithmetic
//! contract so that an independently coded exhaustive CART gives
//! bit-identical trees when bagging is disabled:
//!
//! * candidates are evaluated per feature over (value, row) pairs sorted
//!   ascending by value then row index, thresholds at midpoints
//!   `(v[i] + v[i+1]) / 2.0` between consecutive distinct values;
//! * the gain of a candidate is `(sl*sl/nl + sr*sr/nr - s*s/n) / n`, where
//!   `sl` is the plain left-to-right prefix sum of targets in sorted order,
//!   `s` the full prefix sum, and `sr = s - sl`;
//! * a candidate wins only on strictly greater gain, so ties resolve to the
//!   lowest feature index, then the lowest threshold;
//! * leaf predictions sum targets in node row order before dividing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::numeric::{stream_seed, Matrix};
use crate::persist::{self, PersistError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Maximum node depth; the root sits at depth 0.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features considered per split; `None` means all of them.
    pub feature_subsample: Option<usize>,
    /// Grow each tree on `n` rows drawn with replacement instead of the
    /// full training set.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 16,
            min_samples_leaf: 5,
            feature_subsample: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ForestError {
    #[error("no split improves on the parent node")]
    NoValidSplit,
    #[error("need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("expected {expected} feature columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("target contains a non-finite value at row {0}")]
    NonFiniteTarget(usize),
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Flattened tree storage; node 0 is the root and `left`/`right` index
/// into the same array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node")]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { prediction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    /// Rows at or below a split threshold go left.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                TreeNode::Leaf { prediction } => return prediction,
                TreeNode::Split { feature, threshold, left, right } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub input_dim: usize,
    pub trees: Vec<RegressionTree>,
}

const MODEL_KIND: &str = "forest-model";
const MODEL_VERSION: u32 = 1;

impl ForestModel {
    pub fn save_json(&self, path: &Path) -> Result<(), PersistError> {
        persist::save_document(path, MODEL_KIND, MODEL_VERSION, self)
    }

    pub fn load_json(path: &Path) -> Result<Self, PersistError> {
        persist::load_document(path, MODEL_KIND, MODEL_VERSION)
    }
}

fn node_is_pure(y: &[f64], rows: &[usize]) -> bool {
    let first = y[rows[0]];
    rows.iter().all(|&r| y[r] == first)
}

/// Best variance-reducing split over `rows`, or `None` when every
/// candidate violates the leaf minimum or no candidate has positive gain.
fn best_split_rows(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 * min_samples_leaf || node_is_pure(y, rows) {
        return None;
    }
    let n_f = n as f64;
    let mut best: Option<SplitCandidate> = None;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &feature in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&r| (x.get(r, feature), r)));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        // Plain running sum in sorted order; part of the oracle contract.
        let mut prefix = 0.0;
        let mut prefixes = Vec::with_capacity(n);
        for &(_, r) in &pairs {
            prefix += y[r];
            prefixes.push(prefix);
        }
        let total = prefixes[n - 1];
        let parent_term = total * total / n_f;

        for i in 0..n - 1 {
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_samples_leaf || n_right < min_samples_leaf {
                continue;
            }
            let sl = prefixes[i];
            let sr = total - sl;
            let gain =
                (sl * sl / n_left as f64 + sr * sr / n_right as f64 - parent_term) / n_f;
            if gain > best.map_or(0.0, |b| b.gain) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: (pairs[i].0 + pairs[i + 1].0) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

/// Public split search over every row of `x`.
pub fn best_split(
    x: &Matrix,
    y: &[f64],
    candidate_features: &[usize],
    min_samples_leaf: usize,
) -> Result<SplitCandidate, ForestError> {
    if x.n_rows() != y.len() {
        return Err(ForestError::DimensionMismatch { expected: x.n_rows(), got: y.len() });
    }
    if x.n_rows() == 0 || candidate_features.is_empty() {
        return Err(ForestError::NoValidSplit);
    }
    if let Some(&bad) = candidate_features.iter().find(|&&f| f >= x.n_cols()) {
        return Err(ForestError::DimensionMismatch { expected: x.n_cols(), got: bad });
    }
    if min_samples_leaf == 0 {
        return Err(ForestError::InvalidConfig(
            "min_samples_leaf must be at least 1".to_string(),
        ));
    }
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    best_split_rows(x, y, &rows, candidate_features, min_samples_leaf)
        .ok_or(ForestError::NoValidSplit)
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    min_samples_leaf: usize,
    max_depth: usize,
    n_candidate_features: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        // Sum in node row order; the oracle mirrors this exactly.
        let mut sum = 0.0;
        for &r in rows {
            sum += self.y[r];
        }
        self.nodes.push(TreeNode::Leaf { prediction: sum / rows.len() as f64 });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        if depth >= self.max_depth
            || rows.len() < 2 * self.min_samples_leaf
            || node_is_pure(self.y, &rows)
        {
            return self.leaf(&rows);
        }

        let d = self.x.n_cols();
        let features: Vec<usize> = if self.n_candidate_features >= d {
            (0..d).collect()
        } else {
            // Partial Fisher-Yates; drawn in a fixed preorder position so
            // the tree is a pure function of its seed.
            let mut pool: Vec<usize> = (0..d).collect();
            for i in 0..self.n_candidate_features {
                let j = rng.random_range(i..d);
                pool.swap(i, j);
            }
            let mut picked = pool[..self.n_candidate_features].to_vec();
            picked.sort_unstable();
            picked
        };

        let Some(split) = best_split_rows(
            self.x,
            self.y,
            &rows,
            &features,
            self.min_samples_leaf,
        ) else {
            return self.leaf(&rows);
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.x.get(r, split.feature) <= split.threshold);

        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { prediction: f64::NAN });
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[at] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

/// Fits the forest. Trees train in parallel, each from its own generator
/// seeded by `stream_seed(config.seed, tree_index)`, so the result is
/// bit-identical regardless of thread count.
pub fn fit_forest(x: &Matrix, y: &[f64], config: &ForestConfig) -> Result<ForestModel, ForestError> {
    if x.n_rows() != y.len() {
        return Err(ForestError::DimensionMismatch { expected: x.n_rows(), got: y.len() });
    }
    if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
        return Err(ForestError::NonFiniteTarget(bad));
    }
    let n = x.n_rows();
    let d = x.n_cols();
    if config.n_trees == 0 {
        return Err(ForestError::InvalidConfig("n_trees must be at least 1".to_string()));
    }
    if config.min_samples_leaf == 0 {
        return Err(ForestError::InvalidConfig(
            "min_samples_leaf must be at least 1".to_string(),
        ));
    }
    if d == 0 {
        return Err(ForestError::InvalidConfig("need at least one feature".to_string()));
    }
    let n_candidate_features = config.feature_subsample.unwrap_or(d);
    if n_candidate_features == 0 || n_candidate_features > d {
        return Err(ForestError::InvalidConfig(format!(
            "feature_subsample must be in 1..={d}"
        )));
    }
    let needed = (2 * config.min_samples_leaf).max(2);
    if n < needed {
        return Err(ForestError::InsufficientData { needed, got: n });
    }

    let trees: Vec<RegressionTree> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, t as u64));
            let rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut builder = TreeBuilder {
                x,
                y,
                min_samples_leaf: config.min_samples_leaf,
                max_depth: config.max_depth,
                n_candidate_features,
                nodes: Vec::new(),
            };
            builder.grow(rows, 0, &mut rng);
            RegressionTree { nodes: builder.nodes }
        })
        .collect();

    Ok(ForestModel { config: config.clone(), input_dim: d, trees })
}

/// Ensemble prediction: the plain mean of the per-tree predictions, taken
/// in tree index order.
pub fn predict_forest(model: &ForestModel, x: &Matrix) -> Result<Vec<f64>, ForestError> {
    if x.n_cols() != model.input_dim {
        return Err(ForestError::DimensionMismatch {
            expected: model.input_dim,
            got: x.n_cols(),
        });
    }
    let n_trees = model.trees.len() as f64;
    Ok(x.rows()
        .map(|row| {
            let mut sum = 0.0;
            for tree in &model.trees {
                sum += tree.predict_row(row);
            }
            sum / n_trees
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column_matrix(values: &[f64]) -> Matrix {
        Matrix::from_rows(values.iter().map(|&v| vec![v]).collect())
    }

    #[test]
    fn best_split_finds_the_obvious_boundary() {
        let x = column_matrix(&[0.0, 1.0, 2.0, 3.0]);
        let y = vec![0.0, 0.0, 10.0, 10.0];
        let split = best_split(&x, &y, &[0], 1).unwrap();
        assert_eq!(split.feature, 0);
        assert_eq!(split.threshold, 1.5);
        assert!(split.gain > 0.0);
    }

    #[test]
    fn best_split_refuses_constant_target() {
        let x = column_matrix(&[0.0, 1.0, 2.0, 3.0]);
        let y = vec![7.0; 4];
        assert_eq!(best_split(&x, &y, &[0], 1), Err(ForestError::NoValidSplit));
    }

    #[test]
    fn best_split_prefers_the_separating_feature_over_noise() {
        // Feature 1 separates y perfectly; feature 0 is shuffled noise.
        let rows = vec![
            vec![0.3, 0.0],
            vec![0.9, 1.0],
            vec![0.1, 2.0],
            vec![0.7, 3.0],
            vec![0.5, 4.0],
            vec![0.2, 5.0],
        ];
        let x = Matrix::from_rows(rows);
        let y = vec![1.0, 1.0, 1.0, 9.0, 9.0, 9.0];
        let split = best_split(&x, &y, &[0, 1], 1).unwrap();
        assert_eq!(split.feature, 1);
        assert_eq!(split.threshold, 2.5);
    }

    #[test]
    fn best_split_respects_leaf_minimum() {
        let x = column_matrix(&[0.0, 1.0, 2.0, 3.0]);
        let y = vec![0.0, 0.0, 0.0, 100.0];
        // With min leaf 2 the only admissible boundary is the middle one.
        let split = best_split(&x, &y, &[0], 2).unwrap();
        assert_eq!(split.threshold, 1.5);
    }

    #[test]
    fn best_split_breaks_gain_ties_toward_lowest_feature_and_threshold() {
        // Feature 1 mirrors feature 0, so every split gain is duplicated.
        let rows = vec![vec![0.0, 10.0], vec![1.0, 11.0], vec![2.0, 12.0], vec![3.0, 13.0]];
        let x = Matrix::from_rows(rows);
        let y = vec![0.0, 0.0, 10.0, 10.0];
        let split = best_split(&x, &y, &[0, 1], 1).unwrap();
        assert_eq!(split.feature, 0);
        assert_eq!(split.threshold, 1.5);
    }

    /// Independent exhaustive CART used to pin the greedy search. Same
    /// arithmetic contract, written as straight-line code over row sets.
    mod oracle {
        pub fn predict(x: &super::Matrix, y: &[f64], min_leaf: usize, max_depth: usize, query: &[f64]) -> f64 {
            let rows: Vec<usize> = (0..x.n_rows()).collect();
            node_predict(x, y, rows, min_leaf, max_depth, 0, query)
        }

        fn node_predict(
            x: &super::Matrix,
            y: &[f64],
            rows: Vec<usize>,
            min_leaf: usize,
            max_depth: usize,
            depth: usize,
            query: &[f64],
        ) -> f64 {
            let pure = rows.iter().all(|&r| y[r] == y[rows[0]]);
            if depth >= max_depth || rows.len() < 2 * min_leaf || pure {
                let mut sum = 0.0;
                for &r in &rows {
                    sum += y[r];
                }
                return sum / rows.len() as f64;
            }
            let mut best: Option<(f64, usize, f64)> = None; // gain, feature, threshold
            let n = rows.len();
            for feature in 0..x.n_cols() {
                let mut pairs: Vec<(f64, usize)> =
                    rows.iter().map(|&r| (x.get(r, feature), r)).collect();
                pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut prefixes = Vec::with_capacity(n);
                let mut acc = 0.0;
                for &(_, r) in &pairs {
                    acc += y[r];
                    prefixes.push(acc);
                }
                let total = prefixes[n - 1];
                for i in 0..n - 1 {
                    if pairs[i].0 == pairs[i + 1].0 {
                        continue;
                    }
                    let (nl, nr) = (i + 1, n - i - 1);
                    if nl < min_leaf || nr < min_leaf {
                        continue;
                    }
                    let sl = prefixes[i];
                    let sr = total - sl;
                    let gain = (sl * sl / nl as f64 + sr * sr / nr as f64
                        - total * total / n as f64)
                        / n as f64;
                    if gain > best.map_or(0.0, |b| b.0) {
                        best = Some((gain, feature, (pairs[i].0 + pairs[i + 1].0) / 2.0));
                    }
                }
            }
            let Some((_, feature, threshold)) = best else {
                let mut sum = 0.0;
                for &r in &rows {
                    sum += y[r];
                }
                return sum / rows.len() as f64;
            };
            let picked: Vec<usize> = rows
                .iter()
                .copied()
                .filter(|&r| {
                    (x.get(r, feature) <= threshold) == (query[feature] <= threshold)
                })
                .collect();
            node_predict(x, y, picked, min_leaf, max_depth, depth + 1, query)
        }
    }

    fn random_problem(seed: u64, n: usize, d: usize) -> (Matrix, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().sum::<f64>() + rng.random_range(-0.5..0.5))
            .collect();
        (Matrix::from_rows(rows), y)
    }

    #[test]
    fn single_unbagged_tree_matches_the_exhaustive_oracle_exactly() {
        for seed in 0..8u64 {
            let (x, y) = random_problem(seed, 60, 3);
            let config = ForestConfig {
                n_trees: 1,
                max_depth: 6,
                min_samples_leaf: 3,
                feature_subsample: None,
                bootstrap: false,
                seed,
            };
            let model = fit_forest(&x, &y, &config).unwrap();
            let predictions = predict_forest(&model, &x).unwrap();
            for (r, &p) in predictions.iter().enumerate() {
                let expected = oracle::predict(&x, &y, 3, 6, x.row(r));
                assert_eq!(p.to_bits(), expected.to_bits(), "seed {seed}, row {r}");
            }
        }
    }

    #[test]
    fn constant_target_predicts_that_constant_exactly() {
        let (x, _) = random_problem(3, 40, 2);
        let y = vec![7.0; 40];
        let model = fit_forest(&x, &y, &ForestConfig::default()).unwrap();
        for p in predict_forest(&model, &x).unwrap() {
            assert_eq!(p, 7.0);
        }
    }

    #[test]
    fn manual_forest_takes_the_mean_across_trees() {
        let leaf = |prediction| RegressionTree { nodes: vec![TreeNode::Leaf { prediction }] };
        let model = ForestModel {
            config: ForestConfig::default(),
            input_dim: 1,
            trees: vec![leaf(4.0), leaf(6.0)],
        };
        let x = column_matrix(&[0.0]);
        assert_eq!(predict_forest(&model, &x).unwrap(), vec![5.0]);
    }

    #[test]
    fn depth_limit_holds() {
        let (x, y) = random_problem(9, 200, 2);
        let config = ForestConfig { max_depth: 4, min_samples_leaf: 1, bootstrap: false, n_trees: 3, ..Default::default() };
        let model = fit_forest(&x, &y, &config).unwrap();
        for tree in &model.trees {
            assert!(tree.depth() <= 4);
        }
    }

    #[test]
    fn same_seed_refits_identically_different_seed_does_not() {
        let (x, y) = random_problem(4, 80, 2);
        let config = ForestConfig { n_trees: 10, seed: 5, ..Default::default() };
        let a = fit_forest(&x, &y, &config).unwrap();
        let b = fit_forest(&x, &y, &config).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, &ForestConfig { seed: 6, ..config }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn validation_errors_cover_bad_inputs() {
        let (x, y) = random_problem(1, 12, 2);
        assert_eq!(
            fit_forest(&x, &y[..5], &ForestConfig::default()).unwrap_err(),
            ForestError::DimensionMismatch { expected: 12, got: 5 }
        );
        assert_eq!(
            fit_forest(&x, &y, &ForestConfig { min_samples_leaf: 7, ..Default::default() })
                .unwrap_err(),
            ForestError::InsufficientData { needed: 14, got: 12 }
        );
        let mut bad_y = y.clone();
        bad_y[3] = f64::NAN;
        assert_eq!(
            fit_forest(&x, &bad_y, &ForestConfig::default()).unwrap_err(),
            ForestError::NonFiniteTarget(3)
        );
        assert!(matches!(
            fit_forest(&x, &y, &ForestConfig { feature_subsample: Some(9), ..Default::default() }),
            Err(ForestError::InvalidConfig(_))
        ));
        let model = fit_forest(&x, &y, &ForestConfig { min_samples_leaf: 2, ..Default::default() }).unwrap();
        let wide = Matrix::zeros(1, 5);
        assert_eq!(
            predict_forest(&model, &wide).unwrap_err(),
            ForestError::DimensionMismatch { expected: 2, got: 5 }
        );
    }

    #[test]
    fn feature_subsampling_still_builds_working_trees() {
        let (x, y) = random_problem(8, 100, 4);
        let config = ForestConfig {
            n_trees: 20,
            feature_subsample: Some(2),
            min_samples_leaf: 2,
            seed: 11,
            ..Default::default()
        };
        let model = fit_forest(&x, &y, &config).unwrap();
        let refit = fit_forest(&x, &y, &config).unwrap();
        assert_eq!(model, refit);
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for p in predict_forest(&model, &x).unwrap() {
            assert!(p >= lo - 1e-9 && p <= hi + 1e-9);
        }
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let (x, y) = random_problem(21, 50, 2);
        let config = ForestConfig { n_trees: 4, seed: 2, ..Default::default() };
        let model = fit_forest(&x, &y, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forest.json");
        model.save_json(&path).unwrap();
        assert_eq!(ForestModel::load_json(&path).unwrap(), model);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn predictions_stay_within_the_training_target_range(
            seed in 0u64..1000,
            n in 12usize..80,
            bootstrap in proptest::bool::ANY,
        ) {
            let (x, y) = random_problem(seed, n, 2);
            let config = ForestConfig {
                n_trees: 7,
                min_samples_leaf: 2,
                bootstrap,
                seed,
                ..Default::default()
            };
            let model = fit_forest(&x, &y, &config).unwrap();
            let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-9 * (hi - lo).abs().max(1.0);
            for p in predict_forest(&model, &x).unwrap() {
                prop_assert!(p >= lo - slack && p <= hi + slack);
            }
        }
    }
}
