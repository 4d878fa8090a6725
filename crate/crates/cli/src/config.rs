//! Declarative pipeline configuration: a versioned TOML file provides
//! defaults, command-line flags override individual values. Every seed is
//! explicit so a recorded config file reproduces a run exactly.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use voltair_core::evaluation::ComparisonConfig;
use voltair_core::forest::ForestConfig;
use voltair_core::mlp::MlpConfig;
use voltair_core::synthgen::SynthConfig;
use voltair_core::telemetry::CleaningPolicy;

pub const SUPPORTED_VERSION: u32 = 1;
pub const DEFAULT_CONFIG_NAME: &str = "voltair.toml";

/// On-disk layout; every field is optional so a file only states what it
/// changes. Unknown keys are rejected to catch typos.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub version: Option<u32>,
    pub paths: PathsSection,
    pub telemetry: TelemetrySection,
    pub synth: SynthSection,
    pub pca: PcaSection,
    pub forest: ForestSection,
    pub mlp: MlpSection,
    pub run: RunSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetrySection {
    pub sample_interval_s: Option<f64>,
    pub cleaning: Option<CleaningPolicy>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_experiments: Option<usize>,
    pub rows_per_experiment: Option<usize>,
    pub latent_factor_count: Option<usize>,
    pub noise_scale: Option<f64>,
    pub response_uniform_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaSection {
    pub standardize: Option<bool>,
    pub thresholds: Option<Vec<f64>>,
    pub k_rf: Option<usize>,
    pub k_nn: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSection {
    pub n_trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: Option<usize>,
    pub feature_subsample: Option<usize>,
    pub bootstrap: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpSection {
    pub hidden: Option<Vec<Vec<usize>>>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub early_stop_patience: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub holdout: Option<String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let config: FileConfig =
            toml::from_str(text).map_err(|e| format!("invalid config file: {e}"))?;
        match config.version {
            Some(SUPPORTED_VERSION) => Ok(config),
            Some(v) => Err(format!(
                "unsupported config version {v}; this build reads version {SUPPORTED_VERSION}"
            )),
            None => Err("config file is missing the `version` field".to_string()),
        }
    }
}

/// Fully resolved settings every subcommand works from.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub sample_interval_s: f64,
    pub synth: SynthConfig,
    pub comparison: ComparisonConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            sample_interval_s: SynthConfig::default().sample_interval_s,
            synth: SynthConfig::default(),
            comparison: ComparisonConfig::default(),
        }
    }
}

/// Global flag values that override the file on every subcommand.
#[derive(Debug, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn resolve(file: FileConfig, overrides: &Overrides) -> Settings {
    let mut settings = Settings::default();
    let FileConfig { version: _, paths, telemetry, synth, pca, forest, mlp, run } = file;

    if let Some(v) = paths.data_dir {
        settings.data_dir = v;
    }
    if let Some(v) = paths.output_dir {
        settings.output_dir = v;
    }
    if let Some(v) = telemetry.sample_interval_s {
        settings.sample_interval_s = v;
        settings.synth.sample_interval_s = v;
    }
    if let Some(v) = telemetry.cleaning {
        settings.comparison.cleaning = v;
    }

    let s = &mut settings.synth;
    if let Some(v) = synth.n_experiments {
        s.n_experiments = v;
    }
    if let Some(v) = synth.rows_per_experiment {
        s.rows_per_experiment = v;
    }
    if let Some(v) = synth.latent_factor_count {
        s.latent_factor_count = v;
    }
    if let Some(v) = synth.noise_scale {
        s.noise_scale = v;
    }
    if let Some(v) = synth.response_uniform_fraction {
        s.response_uniform_fraction = v;
    }

    let c = &mut settings.comparison;
    if let Some(v) = pca.standardize {
        c.standardize = v;
    }
    if let Some(v) = pca.thresholds {
        c.variance_thresholds = v;
    }
    if let Some(v) = pca.k_rf {
        c.pca_k_rf = v;
    }
    if let Some(v) = pca.k_nn {
        c.pca_k_nn = v;
    }

    let default_forest = ForestConfig::default();
    c.forest = ForestConfig {
        n_trees: forest.n_trees.unwrap_or(default_forest.n_trees),
        max_depth: forest.max_depth.unwrap_or(default_forest.max_depth),
        min_samples_leaf: forest.min_samples_leaf.unwrap_or(default_forest.min_samples_leaf),
        feature_subsample: forest.feature_subsample.or(default_forest.feature_subsample),
        bootstrap: forest.bootstrap.unwrap_or(default_forest.bootstrap),
        seed: default_forest.seed,
    };

    if let Some(v) = mlp.hidden {
        c.mlp_hidden = v;
    }
    let default_mlp = MlpConfig::default();
    c.mlp_template = MlpConfig {
        learning_rate: mlp.learning_rate.unwrap_or(default_mlp.learning_rate),
        momentum: mlp.momentum.unwrap_or(default_mlp.momentum),
        batch_size: mlp.batch_size.unwrap_or(default_mlp.batch_size),
        epochs: mlp.epochs.unwrap_or(default_mlp.epochs),
        early_stop_patience: mlp.early_stop_patience.unwrap_or(default_mlp.early_stop_patience),
        ..default_mlp
    };

    if let Some(v) = run.seed {
        c.seed = v;
        settings.synth.seed = v;
    }
    c.holdout_id = run.holdout;

    if let Some(v) = &overrides.data_dir {
        settings.data_dir = v.clone();
    }
    if let Some(v) = &overrides.output_dir {
        settings.output_dir = v.clone();
    }
    if let Some(v) = overrides.seed {
        settings.comparison.seed = v;
        settings.synth.seed = v;
    }
    settings
}

/// Loads `--config` (required to exist when named), else `voltair.toml`
/// in the working directory when present, else built-in defaults.
pub fn load(explicit: Option<&Path>, overrides: &Overrides) -> Result<Settings, String> {
    let text = match explicit {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?,
        ),
        None => std::fs::read_to_string(DEFAULT_CONFIG_NAME).ok(),
    };
    let file = match text {
        Some(text) => FileConfig::parse(&text)?,
        None => FileConfig::default(),
    };
    Ok(resolve(file, overrides))
}
