//! Holdout evaluation: per-experiment splits, the MSE metric, and the
//! five-model comparison (random forest on 2 principal components, four
//! network shapes on 5) over a telemetry corpus.
//!
//! The comparison is a pure function of the corpus, the config, and the
//! master seed: reruns reproduce every MSE bit for bit. Wall-clock
//! training times are the only non-deterministic outputs. All fitted
//! statistics (standardization and principal axes) come from training
//! experiments only; the tests guard against holdout leakage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::decomposition::{fit_pca, select_components, transform, PcaModel};
use crate::features::{concat_experiments, featurize, FeatureMatrix};
use crate::forest::{fit_forest, predict_forest, ForestConfig, ForestModel};
use crate::mlp::{init_mlp, predict_mlp, train, MlpConfig, MlpModel};
use crate::numeric::{compensated_mean, stream_seed, CompensatedSum, Matrix};
use crate::persist::{self, PersistError};
use crate::telemetry::{clean_frame, CleaningPolicy, TelemetryFrame};

/// Sub-stream of the master seed used for the forest fit.
const FOREST_STREAM: u64 = 0xF000_0000_0000_0001;
/// Sub-stream base for the networks; model i adds i.
const MLP_STREAM_BASE: u64 = 0xF000_0000_0000_0010;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("experiment {0:?} is not in the corpus")]
    UnknownExperiment(String),
    #[error("prediction and actual series differ in length: {predicted} vs {actual}")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("cannot score an empty series")]
    EmptyInput,
    #[error("comparison needs at least 2 experiments, got {0}")]
    TooFewExperiments(usize),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(
    stage: &'static str,
) -> impl FnOnce(E) -> EvalError {
    move |source| EvalError::Stage { stage, source: Box::new(source) }
}

/// Which experiments train and which are held out; experiments are never
/// split at the row level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Assigns the holdout experiment to test and every other experiment to
/// train, preserving corpus order.
pub fn split_by_experiment(
    corpus: &[TelemetryFrame],
    holdout_id: &str,
) -> Result<SplitPlan, EvalError> {
    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for frame in corpus {
        if frame.experiment_id() == holdout_id {
            test_ids.push(frame.experiment_id().to_string());
        } else {
            train_ids.push(frame.experiment_id().to_string());
        }
    }
    if test_ids.is_empty() {
        return Err(EvalError::UnknownExperiment(holdout_id.to_string()));
    }
    Ok(SplitPlan { train_ids, test_ids })
}

/// Mean squared error, (1/m) * sum of squared differences.
pub fn mse(predicted: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    if predicted.len() != actual.len() {
        return Err(EvalError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    if predicted.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut acc = CompensatedSum::new();
    for (p, a) in predicted.iter().zip(actual) {
        let d = p - a;
        acc.add(d * d);
    }
    Ok(acc.value() / predicted.len() as f64)
}

/// Scorecard for one trained model on the held-out experiment. The input
/// dimensionality doubles as the robustness note: fewer inputs means less
/// exposure to sensor faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    /// Principal components the model consumed.
    pub input_dim: usize,
    /// Wall clock around the fit call, in seconds (not reproducible).
    pub train_seconds: f64,
    /// MSE on the held-out experiment, in seconds squared.
    pub test_mse: f64,
    /// MSE on the training experiments, for overfit diagnosis.
    pub train_mse: f64,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

const REPORT_KIND: &str = "eval-report";
const REPORT_VERSION: u32 = 1;

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<(), PersistError> {
        persist::save_document(path, REPORT_KIND, REPORT_VERSION, self)
    }

    pub fn load_json(path: &Path) -> Result<Self, PersistError> {
        persist::load_document(path, REPORT_KIND, REPORT_VERSION)
    }
}

/// Everything `run_comparison` needs beyond the corpus itself. Per-model
/// seeds are derived from `seed`; the seeds inside `forest` and
/// `mlp_template` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    /// Held-out experiment; defaults to the lexically last id.
    pub holdout_id: Option<String>,
    pub cleaning: CleaningPolicy,
    pub standardize: bool,
    /// Principal components fed to the forest.
    pub pca_k_rf: usize,
    /// Principal components fed to the networks.
    pub pca_k_nn: usize,
    /// Explained-variance thresholds reported as component counts.
    pub variance_thresholds: Vec<f64>,
    pub forest: ForestConfig,
    /// Hidden-layer shapes, one network per entry.
    pub mlp_hidden: Vec<Vec<usize>>,
    /// Shared training hyperparameters for every network.
    pub mlp_template: MlpConfig,
    /// Master seed; all model randomness derives from it.
    pub seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            holdout_id: None,
            cleaning: CleaningPolicy::default(),
            standardize: true,
            pca_k_rf: 2,
            pca_k_nn: 5,
            variance_thresholds: vec![0.99, 0.99999],
            forest: ForestConfig::default(),
            mlp_hidden: vec![vec![3], vec![5], vec![5, 1], vec![5, 3]],
            mlp_template: MlpConfig::default(),
            seed: 42,
        }
    }
}

/// Comparison results plus the fitted artifacts, reports in fixed model
/// order (forest first, then the networks in config order).
#[derive(Debug, Clone)]
pub struct ComparisonOutcome {
    pub split: SplitPlan,
    pub reports: Vec<EvalReport>,
    pub pca: PcaModel,
    pub forest: ForestModel,
    pub mlps: Vec<MlpModel>,
    /// (threshold, components needed) for each configured threshold.
    pub selected_components: Vec<(f64, usize)>,
}

enum TrainedModel {
    Forest(ForestModel),
    Mlp(MlpModel),
}

fn network_name(hidden: &[usize]) -> String {
    let widths: Vec<String> = hidden.iter().map(ToString::to_string).collect();
    format!("NN-[{}]", widths.join(","))
}

/// Runs the full pipeline: clean, featurize, fit the principal axes on
/// training experiments only, project, then train and score every model
/// on the held-out experiment. Model trainings run concurrently; they
/// share only immutable inputs and are merged in fixed order.
pub fn run_comparison(
    corpus: &[TelemetryFrame],
    config: &ComparisonConfig,
) -> Result<ComparisonOutcome, EvalError> {
    if corpus.len() < 2 {
        return Err(EvalError::TooFewExperiments(corpus.len()));
    }
    let holdout = match &config.holdout_id {
        Some(id) => id.clone(),
        None => corpus
            .iter()
            .map(|f| f.experiment_id())
            .max()
            .expect("corpus is non-empty")
            .to_string(),
    };
    let split = split_by_experiment(corpus, &holdout)?;
    if split.train_ids.is_empty() {
        return Err(EvalError::TooFewExperiments(1));
    }

    let mut train_parts = Vec::new();
    let mut test_parts = Vec::new();
    for frame in corpus {
        let cleaned = clean_frame(frame, config.cleaning).map_err(stage_err("clean"))?;
        let features = featurize(&cleaned).map_err(stage_err("features"))?;
        if frame.experiment_id() == holdout {
            test_parts.push(features);
        } else {
            train_parts.push(features);
        }
    }
    let train_all = concat_experiments(&train_parts).map_err(stage_err("features"))?;
    let test_all = concat_experiments(&test_parts).map_err(stage_err("features"))?;

    let pca = fit_pca(&train_all, config.standardize).map_err(stage_err("decomposition"))?;
    debug_assert!(
        (0..train_all.n_cols())
            .all(|j| compensated_mean(&train_all.values.column(j)) == pca.feature_means[j]),
        "fitted statistics must be reproducible from training rows alone"
    );
    let selected_components: Vec<(f64, usize)> = config
        .variance_thresholds
        .iter()
        .map(|&t| (t, select_components(&pca, t)))
        .collect();

    let project = |features: &FeatureMatrix, k: usize| -> Result<Matrix, EvalError> {
        transform(&pca, features, k).map_err(stage_err("decomposition"))
    };
    let train_rf = project(&train_all, config.pca_k_rf)?;
    let test_rf = project(&test_all, config.pca_k_rf)?;
    let train_nn = project(&train_all, config.pca_k_nn)?;
    let test_nn = project(&test_all, config.pca_k_nn)?;
    let train_y = &train_all.response;
    let test_y = &test_all.response;

    // 0 is the forest; i >= 1 is network config i - 1.
    let fitted: Result<Vec<(EvalReport, TrainedModel)>, EvalError> = (0..=config.mlp_hidden.len())
        .into_par_iter()
        .map(|slot| {
            if slot == 0 {
                let forest_config = ForestConfig {
                    seed: stream_seed(config.seed, FOREST_STREAM),
                    ..config.forest.clone()
                };
                let started = Instant::now();
                let model =
                    fit_forest(&train_rf, train_y, &forest_config).map_err(stage_err("forest"))?;
                let train_seconds = started.elapsed().as_secs_f64();
                let predicted = predict_forest(&model, &test_rf).map_err(stage_err("forest"))?;
                let on_train = predict_forest(&model, &train_rf).map_err(stage_err("forest"))?;
                let report = EvalReport {
                    model_name: "RF".to_string(),
                    input_dim: config.pca_k_rf,
                    train_seconds,
                    test_mse: mse(&predicted, test_y)?,
                    train_mse: mse(&on_train, train_y)?,
                    actual: test_y.clone(),
                    predicted,
                };
                Ok((report, TrainedModel::Forest(model)))
            } else {
                let hidden = &config.mlp_hidden[slot - 1];
                let mlp_config = MlpConfig {
                    hidden_layers: hidden.clone(),
                    input_dim: config.pca_k_nn,
                    seed: stream_seed(config.seed, MLP_STREAM_BASE + (slot - 1) as u64),
                    ..config.mlp_template.clone()
                };
                let started = Instant::now();
                let model = train(init_mlp(&mlp_config).map_err(stage_err("mlp"))?, &train_nn, train_y)
                    .map_err(stage_err("mlp"))?;
                let train_seconds = started.elapsed().as_secs_f64();
                let predicted = predict_mlp(&model, &test_nn).map_err(stage_err("mlp"))?;
                let on_train = predict_mlp(&model, &train_nn).map_err(stage_err("mlp"))?;
                let report = EvalReport {
                    model_name: network_name(hidden),
                    input_dim: config.pca_k_nn,
                    train_seconds,
                    test_mse: mse(&predicted, test_y)?,
                    train_mse: mse(&on_train, train_y)?,
                    actual: test_y.clone(),
                    predicted,
                };
                Ok((report, TrainedModel::Mlp(model)))
            }
        })
        .collect();

    let mut reports = Vec::new();
    let mut forest = None;
    let mut mlps = Vec::new();
    for (report, model) in fitted? {
        reports.push(report);
        match model {
            TrainedModel::Forest(m) => forest = Some(m),
            TrainedModel::Mlp(m) => mlps.push(m),
        }
    }
    Ok(ComparisonOutcome {
        split,
        reports,
        pca,
        forest: forest.expect("slot 0 always trains the forest"),
        mlps,
        selected_components,
    })
}

/// Aligned plain-text comparison table.
pub fn render_table(reports: &[EvalReport]) -> String {
    let headers = ["Model", "Test MSE", "Computational Time", "Input Dim"];
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            [
                r.model_name.clone(),
                format!("{:.6e}", r.test_mse),
                format!("{:.3} s", r.train_seconds),
                r.input_dim.to_string(),
            ]
        })
        .collect();
    let mut widths = headers.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let emit = |out: &mut String, cells: [&str; 4]| {
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let _ = write!(out, "{cell:<w$}");
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    emit(&mut out, headers);
    for row in &rows {
        emit(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
    }
    out
}

/// Comparison table as CSV; the MSE column carries 17 significant digits
/// so reparsing reproduces the exact values.
pub fn table_csv(reports: &[EvalReport]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["Model", "Test MSE", "Computational Time", "Input Dim"])
        .expect("writing to memory cannot fail");
    for r in reports {
        writer
            .write_record([
                r.model_name.clone(),
                format!("{:.16e}", r.test_mse),
                format!("{:.6}", r.train_seconds),
                r.input_dim.to_string(),
            ])
            .expect("writing to memory cannot fail");
    }
    String::from_utf8(writer.into_inner().expect("no partial flush on memory"))
        .expect("CSV output is UTF-8")
}

/// Writes the goodness-of-fit series (row index, actual, predicted) for
/// external plotting; 17 significant digits so a reparse is exact.
pub fn export_fit_series(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut out = String::from("row,actual_remaining_time_s,predicted_remaining_time_s\n");
    for (i, (a, p)) in report.actual.iter().zip(&report.predicted).enumerate() {
        let _ = writeln!(out, "{i},{a:.16e},{p:.16e}");
    }
    std::fs::write(path, out)?;
    Ok(())
}
