//! Seeded synthetic telemetry with the same gross statistical fingerprint
//! as real flight experiments: positively correlated channels that split
//! into a powertrain-led cluster and a battery-pack cluster, a monotone
//! decreasing response, and a pooled response histogram that is roughly
//! uniform over its lower range with an exponential-like upper tail.
//!
//! Construction: each experiment draws one bounded random-walk load signal
//! per latent factor, wandering around a per-experiment mean level. Every
//! predictor is a fixed positive linear mix of the factor loads (weights
//! drawn once per corpus) times its physical column scale, with
//! multiplicative log-normal noise. Linear mixes keep the engineered
//! feature matrix at rank `latent_factor_count` in the zero-noise limit.
//! The response counts down in proportion to accumulated power so it is
//! strictly decreasing and hits zero on the last row; a per-experiment
//! exponential intensity draw stretches initial endurance, which produces
//! the uniform-body, exponential-tail pooled histogram.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::numeric::stream_seed;
use crate::telemetry::{TelemetryFrame, PREDICTOR_COUNT};

/// Physical scale per predictor column, canonical order: rpm, the two
/// motor-controller channels, six voltages, four currents, four
/// temperatures. Loads live in [0.40, 1.05], so e.g. temperature channels
/// stay within (15, 70) C at the default noise scale.
const COLUMN_SCALES: [f64; PREDICTOR_COUNT] = [
    4500.0, 130.0, 115.0, // rpm, fmc, amc
    21.0, 21.0, 42.0, 42.0, 21.0, 21.0, // voltages
    30.0, 28.0, 58.0, 55.0, // currents
    55.0, 52.0, 58.0, 56.0, // temperatures
];

/// Random-walk geometry for the latent loads.
const LATENT_STEP_SD: f64 = 0.012;
const LATENT_BAND: f64 = 0.10;
const LOAD_FLOOR: f64 = 0.40;
const LOAD_CEIL: f64 = 1.05;

/// Sub-stream index reserved for the corpus-level mixing weights;
/// experiment sub-streams use the experiment index directly, so this must
/// stay out of any realistic experiment-count range.
const MIXING_STREAM: u64 = 0x4d49_5853_5452_4d31;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_experiments: usize,
    pub rows_per_experiment: usize,
    pub seed: u64,
    /// Number of shared load signals behind the 17 channels (at most 17).
    pub latent_factor_count: usize,
    /// Standard deviation of the multiplicative log-normal channel noise.
    pub noise_scale: f64,
    /// Knob for the pooled response shape: at 1.0 every experiment has the
    /// same endurance (a purely uniform pooled histogram); lowering it
    /// feeds an exponential tail of longer flights, with roughly this
    /// fraction of the mass left in the uniform body.
    pub response_uniform_fraction: f64,
    pub sample_interval_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_experiments: 9,
            rows_per_experiment: 5000,
            seed: 42,
            latent_factor_count: 2,
            noise_scale: 0.01,
            response_uniform_fraction: 0.75,
            sample_interval_s: 1.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthesis config: {0}")]
    InvalidConfig(String),
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: &str| Err(SynthError::InvalidConfig(msg.to_string()));
        if self.n_experiments == 0 {
            return fail("n_experiments must be at least 1");
        }
        if self.rows_per_experiment == 0 {
            return fail("rows_per_experiment must be at least 1");
        }
        if self.latent_factor_count == 0 || self.latent_factor_count > PREDICTOR_COUNT {
            return fail("latent_factor_count must be in 1..=17");
        }
        if !(self.noise_scale > 0.0) {
            return fail("noise_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.response_uniform_fraction) {
            return fail("response_uniform_fraction must be in [0, 1]");
        }
        if !(self.sample_interval_s > 0.0) {
            return fail("sample_interval_s must be positive");
        }
        Ok(())
    }
}

/// Which factor dominates column `j`. With two factors the split mirrors
/// the observed correlation blocks: the first seven channels (powertrain
/// state and front voltages) against the remaining ten.
fn dominant_factor(j: usize, factor_count: usize) -> usize {
    if factor_count == 2 {
        usize::from(j >= 7)
    } else {
        j * factor_count / PREDICTOR_COUNT
    }
}

/// Per-column mixing weights over the latent factors: each column leans
/// 80-95% on its dominant factor, the remainder spread over the others.
/// Every weight is positive and each row sums to 1.
fn mixing_weights(config: &SynthConfig) -> Vec<Vec<f64>> {
    let f = config.latent_factor_count;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, MIXING_STREAM));
    let mut weights = vec![vec![0.0; f]; PREDICTOR_COUNT];
    for (j, row) in weights.iter_mut().enumerate() {
        if f == 1 {
            row[0] = 1.0;
            continue;
        }
        let dominant = dominant_factor(j, f);
        let alpha: f64 = rng.random_range(0.80..0.95);
        let raw: Vec<f64> = (0..f - 1).map(|_| rng.random_range(0.5..1.5)).collect();
        let raw_sum: f64 = raw.iter().sum();
        let mut others = raw.into_iter();
        for (target, w) in row.iter_mut().enumerate() {
            if target == dominant {
                *w = alpha;
            } else {
                *w = (1.0 - alpha) * others.next().expect("one weight per non-dominant factor")
                    / raw_sum;
            }
        }
    }
    weights
}

fn generate_experiment(
    config: &SynthConfig,
    weights: &[Vec<f64>],
    index: usize,
) -> TelemetryFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, index as u64));
    let f = config.latent_factor_count;
    let n = config.rows_per_experiment;

    // Draw order is part of the reproducibility contract: intensity, then
    // mean levels, then per row the factor steps followed by channel noise.
    let tail_scale = 1.0 - config.response_uniform_fraction;
    let tail_draw: f64 = rng.sample(Exp1);
    let intensity = 1.0 + tail_scale * tail_draw;
    let mean_levels: Vec<f64> = (0..f).map(|_| rng.random_range(0.48..0.98)).collect();

    let mut offsets = vec![0.0; f];
    let mut loads = vec![0.0; f];
    let mut predictor_rows: Vec<[f64; PREDICTOR_COUNT]> = Vec::with_capacity(n);
    let mut power_cumulative = Vec::with_capacity(n);
    let mut running_power = 0.0;
    for _ in 0..n {
        for (offset, (&level, load)) in
            offsets.iter_mut().zip(mean_levels.iter().zip(loads.iter_mut()))
        {
            let step: f64 = rng.sample(StandardNormal);
            *offset = (*offset + step * LATENT_STEP_SD).clamp(-LATENT_BAND, LATENT_BAND);
            *load = (level + *offset).clamp(LOAD_FLOOR, LOAD_CEIL);
        }
        running_power += loads.iter().sum::<f64>() / f as f64;
        power_cumulative.push(running_power);

        let mut row = [0.0; PREDICTOR_COUNT];
        for (j, cell) in row.iter_mut().enumerate() {
            let mix: f64 = weights[j].iter().zip(&loads).map(|(w, l)| w * l).sum();
            let g: f64 = rng.sample(StandardNormal);
            *cell = COLUMN_SCALES[j] * mix * (config.noise_scale * g).exp();
        }
        predictor_rows.push(row);
    }

    // remaining(k) = intensity * duration * (1 - consumed fraction); the
    // final row lands on exactly zero.
    let total_power = running_power;
    let duration = n as f64 * config.sample_interval_s;
    let rows: Vec<Vec<f64>> = predictor_rows
        .iter()
        .zip(&power_cumulative)
        .map(|(predictors, &consumed)| {
            let mut row = Vec::with_capacity(PREDICTOR_COUNT + 1);
            row.push(intensity * duration * (1.0 - consumed / total_power));
            row.extend_from_slice(predictors);
            row
        })
        .collect();

    let digits = config.n_experiments.to_string().len().max(2);
    let id = format!("exp{:0digits$}", index + 1);
    TelemetryFrame::from_rows(id, config.sample_interval_s, rows)
        .expect("generated rows match the schema")
}

/// Generates the corpus. Identical configs produce bit-identical frames;
/// experiment `i` draws from sub-seed `seed ^ i`, so corpora of different
/// sizes share their common prefix.
pub fn generate_corpus(config: &SynthConfig) -> Result<Vec<TelemetryFrame>, SynthError> {
    config.validate()?;
    let weights = mixing_weights(config);
    Ok((0..config.n_experiments)
        .map(|i| generate_experiment(config, &weights, i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{fit_pca, select_components};
    use crate::features::{concat_experiments, correlation, featurize};
    use crate::telemetry::{validate_frame, ColumnRole, ColumnSchema, COLUMN_COUNT};

    fn small(n_experiments: usize, rows: usize, noise: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_experiments,
            rows_per_experiment: rows,
            seed,
            noise_scale: noise,
            ..SynthConfig::default()
        }
    }

    fn frame_bits(frame: &TelemetryFrame) -> Vec<u64> {
        (0..frame.n_rows())
            .flat_map(|r| frame.row(r).iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn same_seed_is_bit_identical_and_seeds_differ() {
        let config = small(3, 120, 0.01, 7);
        let a = generate_corpus(&config).unwrap();
        let b = generate_corpus(&config).unwrap();
        assert_eq!(a.len(), 3);
        for (fa, fb) in a.iter().zip(&b) {
            assert_eq!(frame_bits(fa), frame_bits(fb));
        }
        let c = generate_corpus(&small(3, 120, 0.01, 8)).unwrap();
        assert_ne!(frame_bits(&a[0]), frame_bits(&c[0]));
    }

    #[test]
    fn experiment_ids_are_zero_padded_and_sorted() {
        let corpus = generate_corpus(&small(3, 10, 0.01, 1)).unwrap();
        let ids: Vec<&str> = corpus.iter().map(|f| f.experiment_id()).collect();
        assert_eq!(ids, vec!["exp01", "exp02", "exp03"]);
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(sorted, ids);
    }

    #[test]
    fn frames_validate_clean() {
        for frame in generate_corpus(&small(2, 200, 0.02, 3)).unwrap() {
            let report = validate_frame(&frame);
            assert!(report.is_clean(), "{report:?}");
        }
    }

    #[test]
    fn response_is_strictly_decreasing_and_ends_at_zero() {
        for frame in generate_corpus(&small(3, 150, 0.01, 11)).unwrap() {
            let response = frame.response();
            assert!(response[0] > 0.0);
            for pair in response.windows(2) {
                assert!(pair[1] < pair[0]);
            }
            assert_eq!(*response.last().unwrap(), 0.0);
        }
    }

    #[test]
    fn channels_respect_physical_ranges() {
        let schema = ColumnSchema::standard();
        for frame in generate_corpus(&small(3, 400, 0.01, 5)).unwrap() {
            for (idx, column) in schema.columns().iter().enumerate().skip(1) {
                for r in 0..frame.n_rows() {
                    let v = frame.value(r, idx);
                    assert!(v > 0.0, "{} row {r}: {v}", column.name);
                    if column.role == ColumnRole::Temperature {
                        assert!((15.0..70.0).contains(&v), "{} row {r}: {v}", column.name);
                    }
                }
            }
        }
    }

    #[test]
    fn engineered_correlations_are_all_positive() {
        let corpus = generate_corpus(&small(3, 300, 0.01, 13)).unwrap();
        let features: Vec<_> = corpus.iter().map(|f| featurize(f).unwrap()).collect();
        let pooled = concat_experiments(&features).unwrap();
        let corr = correlation(&pooled).unwrap();
        for i in 0..PREDICTOR_COUNT {
            for j in 0..PREDICTOR_COUNT {
                assert!(corr.values.get(i, j) > 0.0, "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_noise_limit_is_rank_two() {
        let corpus = generate_corpus(&small(2, 120, 1e-12, 17)).unwrap();
        let features: Vec<_> = corpus.iter().map(|f| featurize(f).unwrap()).collect();
        let pooled = concat_experiments(&features).unwrap();
        let model = fit_pca(&pooled, true).unwrap();
        let cum2: f64 = model.explained_variance_ratio[..2].iter().sum();
        assert!((cum2 - 1.0).abs() < 1e-9, "cumulative ratio at 2: {cum2}");
    }

    #[test]
    fn default_structure_needs_exactly_two_components_at_99_percent() {
        // Scaled-down corpus with the default generator settings; the full
        // default corpus is exercised by the acceptance suite.
        let corpus = generate_corpus(&small(9, 800, 0.01, 42)).unwrap();
        let features: Vec<_> = corpus.iter().map(|f| featurize(f).unwrap()).collect();
        let pooled = concat_experiments(&features).unwrap();
        let model = fit_pca(&pooled, true).unwrap();
        assert_eq!(select_components(&model, 0.99), 2, "{:?}", model.explained_variance_ratio);
    }

    #[test]
    fn single_factor_collapses_to_one_component() {
        let config = SynthConfig {
            latent_factor_count: 1,
            ..small(2, 150, 1e-9, 19)
        };
        let corpus = generate_corpus(&config).unwrap();
        let features: Vec<_> = corpus.iter().map(|f| featurize(f).unwrap()).collect();
        let pooled = concat_experiments(&features).unwrap();
        let model = fit_pca(&pooled, true).unwrap();
        assert!((model.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rows_have_full_schema_width() {
        let corpus = generate_corpus(&small(1, 5, 0.01, 23)).unwrap();
        assert_eq!(corpus[0].row(0).len(), COLUMN_COUNT);
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            SynthConfig { n_experiments: 0, ..SynthConfig::default() },
            SynthConfig { rows_per_experiment: 0, ..SynthConfig::default() },
            SynthConfig { latent_factor_count: 0, ..SynthConfig::default() },
            SynthConfig { latent_factor_count: 18, ..SynthConfig::default() },
            SynthConfig { noise_scale: 0.0, ..SynthConfig::default() },
            SynthConfig { response_uniform_fraction: 1.5, ..SynthConfig::default() },
            SynthConfig { sample_interval_s: 0.0, ..SynthConfig::default() },
        ];
        for config in bad {
            assert!(matches!(
                generate_corpus(&config),
                Err(SynthError::InvalidConfig(_))
            ));
        }
    }
}
