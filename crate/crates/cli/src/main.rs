//! `voltair`: end-to-end pipeline for predicting remaining flight time
//! from battery telemetry. Subcommands generate synthetic corpora,
//! inspect data quality, engineer features, fit the principal axes, and
//! run the five-model comparison.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure (training divergence), 5 I/O error.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, Settings};
use voltair_core::decomposition::{fit_pca, select_components};
use voltair_core::evaluation::{
    export_fit_series, render_table, run_comparison, table_csv, ComparisonOutcome, EvalError,
    EvalReport,
};
use voltair_core::features::{concat_experiments, correlation, featurize, FeatureError, FeatureMatrix};
use voltair_core::forest::ForestError;
use voltair_core::mlp::MlpError;
use voltair_core::persist::PersistError;
use voltair_core::synthgen::{generate_corpus, SynthError};
use voltair_core::telemetry::{
    clean_frame, load_corpus, validate_frame, write_experiment_csv, ColumnSchema, TelemetryError,
    TelemetryFrame,
};
use voltair_core::decomposition::DecompositionError;

#[derive(Parser)]
#[command(name = "voltair", version, about = "Battery telemetry flight-time prediction pipeline")]
struct Cli {
    /// TOML config file (defaults to ./voltair.toml when present).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of experiment CSVs (one file per experiment).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory artifacts are written to.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic telemetry corpus into the data directory.
    Synth {
        /// Number of experiments to generate.
        #[arg(long)]
        experiments: Option<usize>,
        /// Rows per experiment.
        #[arg(long)]
        rows: Option<usize>,
        /// Multiplicative channel noise scale.
        #[arg(long)]
        noise_scale: Option<f64>,
    },
    /// Summarize data quality for every experiment.
    Validate,
    /// Write the engineered feature matrix of each experiment as CSV.
    Featurize,
    /// Write the feature correlation matrix of the whole corpus.
    Correlate,
    /// Fit principal axes on the whole corpus and report component counts.
    Pca,
    /// Train the five comparison models and save them (no report files).
    Train {
        /// Held-out experiment id (default: lexically last).
        #[arg(long)]
        holdout: Option<String>,
        /// Principal components fed to the forest.
        #[arg(long)]
        pca_k_rf: Option<usize>,
        /// Principal components fed to the networks.
        #[arg(long)]
        pca_k_nn: Option<usize>,
    },
    /// Run the full comparison: table, reports, models, and fit series.
    Compare {
        /// Held-out experiment id (default: lexically last).
        #[arg(long)]
        holdout: Option<String>,
        /// Principal components fed to the forest.
        #[arg(long)]
        pca_k_rf: Option<usize>,
        /// Principal components fed to the networks.
        #[arg(long)]
        pca_k_nn: Option<usize>,
    },
    /// Rewrite goodness-of-fit CSVs from saved evaluation reports.
    Export {
        /// A single report JSON (default: every report in output_dir).
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

struct AppError {
    code: u8,
    message: String,
}

impl AppError {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
    fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
    fn numeric(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
    fn io(message: impl Into<String>) -> Self {
        Self { code: 5, message: message.into() }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::io(e.to_string())
    }
}

impl From<SynthError> for AppError {
    fn from(e: SynthError) -> Self {
        AppError::config(e.to_string())
    }
}

impl From<TelemetryError> for AppError {
    fn from(e: TelemetryError) -> Self {
        match e {
            TelemetryError::Io(_) => AppError::io(e.to_string()),
            TelemetryError::InvalidInterval(_) => AppError::config(e.to_string()),
            _ => AppError::data(e.to_string()),
        }
    }
}

impl From<FeatureError> for AppError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::InvalidInterval(_) => AppError::config(e.to_string()),
            _ => AppError::data(e.to_string()),
        }
    }
}

impl From<DecompositionError> for AppError {
    fn from(e: DecompositionError) -> Self {
        match e {
            DecompositionError::KOutOfRange { .. } => AppError::config(e.to_string()),
            _ => AppError::data(e.to_string()),
        }
    }
}

impl From<ForestError> for AppError {
    fn from(e: ForestError) -> Self {
        match e {
            ForestError::InvalidConfig(_) => AppError::config(e.to_string()),
            _ => AppError::data(e.to_string()),
        }
    }
}

impl From<MlpError> for AppError {
    fn from(e: MlpError) -> Self {
        match e {
            MlpError::InvalidConfig(_) => AppError::config(e.to_string()),
            MlpError::NonFiniteLoss { .. } => AppError::numeric(e.to_string()),
            _ => AppError::data(e.to_string()),
        }
    }
}

impl From<PersistError> for AppError {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Io(_) => AppError::io(e.to_string()),
            _ => AppError::data(e.to_string()),
        }
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Io(_) => AppError::io(e.to_string()),
            EvalError::Stage { source, .. } => {
                let code = if let Some(m) = source.downcast_ref::<MlpError>() {
                    AppError::from(m_clone(m)).code
                } else if let Some(t) = source.downcast_ref::<TelemetryError>() {
                    if matches!(t, TelemetryError::Io(_)) {
                        5
                    } else {
                        3
                    }
                } else {
                    3
                };
                AppError { code, message: e.to_string() }
            }
            _ => AppError::data(e.to_string()),
        }
    }
}

// MlpError is PartialEq but not Clone; rebuild the variant for reuse of
// the classification above.
fn m_clone(e: &MlpError) -> MlpError {
    match e {
        MlpError::InvalidConfig(s) => MlpError::InvalidConfig(s.clone()),
        MlpError::DimensionMismatch { expected, got } => {
            MlpError::DimensionMismatch { expected: *expected, got: *got }
        }
        MlpError::NonFiniteInput => MlpError::NonFiniteInput,
        MlpError::NonFiniteLoss { epoch } => MlpError::NonFiniteLoss { epoch: *epoch },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let overrides = Overrides {
        data_dir: cli.data_dir.clone(),
        output_dir: cli.output_dir.clone(),
        seed: cli.seed,
    };
    let settings = config::load(cli.config.as_deref(), &overrides).map_err(AppError::config)?;
    match cli.command {
        Command::Synth { experiments, rows, noise_scale } => {
            cmd_synth(settings, experiments, rows, noise_scale)
        }
        Command::Validate => cmd_validate(settings),
        Command::Featurize => cmd_featurize(settings),
        Command::Correlate => cmd_correlate(settings),
        Command::Pca => cmd_pca(settings),
        Command::Train { holdout, pca_k_rf, pca_k_nn } => {
            let outcome = comparison(&settings, holdout, pca_k_rf, pca_k_nn)?;
            save_models(&settings.output_dir, &outcome)?;
            for report in &outcome.reports {
                println!(
                    "{}: train MSE {:.6e}, fitted in {:.3} s",
                    report.model_name, report.train_mse, report.train_seconds
                );
            }
            println!("models written to {}", settings.output_dir.display());
            Ok(())
        }
        Command::Compare { holdout, pca_k_rf, pca_k_nn } => {
            cmd_compare(settings, holdout, pca_k_rf, pca_k_nn)
        }
        Command::Export { report } => cmd_export(settings, report),
    }
}

fn load_settings_corpus(settings: &Settings) -> Result<Vec<TelemetryFrame>, AppError> {
    let corpus = load_corpus(
        &settings.data_dir,
        &ColumnSchema::standard(),
        settings.sample_interval_s,
    )?;
    if corpus.is_empty() {
        return Err(AppError::data(format!(
            "no experiment CSVs found in {}",
            settings.data_dir.display()
        )));
    }
    Ok(corpus)
}

/// Cleans and featurizes every experiment, returning the concatenation.
fn corpus_features(settings: &Settings, corpus: &[TelemetryFrame]) -> Result<FeatureMatrix, AppError> {
    let mut parts = Vec::with_capacity(corpus.len());
    for frame in corpus {
        let cleaned = clean_frame(frame, settings.comparison.cleaning)?;
        parts.push(featurize(&cleaned)?);
    }
    Ok(concat_experiments(&parts)?)
}

fn cmd_synth(
    settings: Settings,
    experiments: Option<usize>,
    rows: Option<usize>,
    noise_scale: Option<f64>,
) -> Result<(), AppError> {
    let mut synth = settings.synth.clone();
    if let Some(v) = experiments {
        synth.n_experiments = v;
    }
    if let Some(v) = rows {
        synth.rows_per_experiment = v;
    }
    if let Some(v) = noise_scale {
        synth.noise_scale = v;
    }
    let corpus = generate_corpus(&synth)?;
    std::fs::create_dir_all(&settings.data_dir)?;
    for frame in &corpus {
        let path = settings.data_dir.join(format!("{}.csv", frame.experiment_id()));
        write_experiment_csv(frame, &path)?;
    }
    println!(
        "wrote {} experiments x {} rows (seed {}) to {}",
        corpus.len(),
        synth.rows_per_experiment,
        synth.seed,
        settings.data_dir.display()
    );
    Ok(())
}

fn cmd_validate(settings: Settings) -> Result<(), AppError> {
    let corpus = load_settings_corpus(&settings)?;
    let mut clean = 0usize;
    for frame in &corpus {
        let report = validate_frame(frame);
        if report.is_clean() {
            clean += 1;
            println!("{}: {} rows, clean", report.experiment_id, report.n_rows);
        } else {
            println!(
                "{}: {} rows, {} missing cells, {} non-finite cells, {} negative-response rows",
                report.experiment_id,
                report.n_rows,
                report.missing_cells,
                report.non_finite_cells,
                report.negative_response_rows
            );
        }
    }
    println!("{clean}/{} experiments clean", corpus.len());
    Ok(())
}

fn cmd_featurize(settings: Settings) -> Result<(), AppError> {
    let corpus = load_settings_corpus(&settings)?;
    std::fs::create_dir_all(&settings.output_dir)?;
    for frame in &corpus {
        let cleaned = clean_frame(frame, settings.comparison.cleaning)?;
        let features = featurize(&cleaned)?;
        let mut out = String::new();
        let _ = writeln!(out, "{},remaining_time_s", features.column_names.join(","));
        for r in 0..features.n_rows() {
            for j in 0..features.n_cols() {
                let _ = write!(out, "{:.16e},", features.values.get(r, j));
            }
            let _ = writeln!(out, "{:.16e}", features.response[r]);
        }
        let path = settings
            .output_dir
            .join(format!("features_{}.csv", frame.experiment_id()));
        std::fs::write(&path, out)?;
    }
    println!(
        "wrote {} feature matrices to {}",
        corpus.len(),
        settings.output_dir.display()
    );
    Ok(())
}

fn cmd_correlate(settings: Settings) -> Result<(), AppError> {
    let corpus = load_settings_corpus(&settings)?;
    let features = corpus_features(&settings, &corpus)?;
    let matrix = correlation(&features)?;
    std::fs::create_dir_all(&settings.output_dir)?;
    let path = settings.output_dir.join("correlation.csv");
    std::fs::write(&path, matrix.to_csv())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_pca(settings: Settings) -> Result<(), AppError> {
    let corpus = load_settings_corpus(&settings)?;
    let features = corpus_features(&settings, &corpus)?;
    let model = fit_pca(&features, settings.comparison.standardize)?;
    std::fs::create_dir_all(&settings.output_dir)?;
    let json_path = settings.output_dir.join("pca.json");
    model.save_json(&json_path)?;
    let csv_path = settings.output_dir.join("explained_variance.csv");
    std::fs::write(&csv_path, model.explained_variance_csv())?;
    for &threshold in &settings.comparison.variance_thresholds {
        println!(
            "{} components reach an explained-variance ratio of {threshold}",
            select_components(&model, threshold)
        );
    }
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(())
}

fn comparison(
    settings: &Settings,
    holdout: Option<String>,
    pca_k_rf: Option<usize>,
    pca_k_nn: Option<usize>,
) -> Result<ComparisonOutcome, AppError> {
    let corpus = load_settings_corpus(settings)?;
    let mut config = settings.comparison.clone();
    if holdout.is_some() {
        config.holdout_id = holdout;
    }
    if let Some(k) = pca_k_rf {
        config.pca_k_rf = k;
    }
    if let Some(k) = pca_k_nn {
        config.pca_k_nn = k;
    }
    Ok(run_comparison(&corpus, &config)?)
}

/// File-name slug for a model name: `NN-[5,1]` becomes `nn-5-1`.
fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

fn save_models(output_dir: &Path, outcome: &ComparisonOutcome) -> Result<(), AppError> {
    std::fs::create_dir_all(output_dir)?;
    outcome.pca.save_json(&output_dir.join("pca.json"))?;
    for (i, report) in outcome.reports.iter().enumerate() {
        let path = output_dir.join(format!("model_{}.json", slug(&report.model_name)));
        if i == 0 {
            outcome.forest.save_json(&path)?;
        } else {
            outcome.mlps[i - 1].save_json(&path)?;
        }
    }
    Ok(())
}

fn cmd_compare(
    settings: Settings,
    holdout: Option<String>,
    pca_k_rf: Option<usize>,
    pca_k_nn: Option<usize>,
) -> Result<(), AppError> {
    let outcome = comparison(&settings, holdout, pca_k_rf, pca_k_nn)?;
    let out = &settings.output_dir;
    save_models(out, &outcome)?;
    for report in &outcome.reports {
        let tag = slug(&report.model_name);
        report.save_json(&out.join(format!("report_{tag}.json")))?;
        export_fit_series(report, &out.join(format!("fit_{tag}.csv")))?;
    }
    let text = render_table(&outcome.reports);
    std::fs::write(out.join("comparison.txt"), &text)?;
    std::fs::write(out.join("comparison.csv"), table_csv(&outcome.reports))?;

    println!(
        "train: {:?}  test: {:?}",
        outcome.split.train_ids, outcome.split.test_ids
    );
    for (threshold, k) in &outcome.selected_components {
        println!("{k} components reach an explained-variance ratio of {threshold}");
    }
    print!("{text}");
    println!("artifacts written to {}", out.display());
    Ok(())
}

fn cmd_export(settings: Settings, report: Option<PathBuf>) -> Result<(), AppError> {
    let paths: Vec<PathBuf> = match report {
        Some(path) => vec![path],
        None => {
            let mut found: Vec<PathBuf> = std::fs::read_dir(&settings.output_dir)?
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| {
                    p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("report_") && n.ends_with(".json"))
                })
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(AppError::data(format!(
                    "no report_*.json files in {}",
                    settings.output_dir.display()
                )));
            }
            found
        }
    };
    std::fs::create_dir_all(&settings.output_dir)?;
    for path in &paths {
        let report = EvalReport::load_json(path)?;
        let target = settings
            .output_dir
            .join(format!("fit_{}.csv", slug(&report.model_name)));
        export_fit_series(&report, &target)?;
        println!("wrote {}", target.display());
    }
    Ok(())
}
