//! Small feed-forward regressors: tanh hidden layers, one linear output
//! unit, trained with mini-batch gradient descent plus classical momentum
//! on mean squared error.
//!
//! Inputs and the target are standardized with statistics fitted on the
//! training set only; predictions are mapped back to original units, and
//! the per-epoch loss history is kept in original units as well. The exact
//! backpropagated gradient is pinned by a finite-difference oracle in the
//! tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::numeric::{stream_seed, CompensatedSum, Matrix};
use crate::persist::{self, PersistError};

/// Sub-stream for the epoch shuffles, separate from the init stream.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4531;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths, e.g. `[5, 1]`; may be empty for a purely
    /// linear model. The output layer is always a single linear unit.
    pub hidden_layers: Vec<usize>,
    pub input_dim: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// 0 disables early stopping; otherwise training stops after this many
    /// consecutive epochs without improving the best training loss.
    pub early_stop_patience: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![5],
            input_dim: 5,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 256,
            epochs: 50,
            seed: 0,
            early_stop_patience: 0,
        }
    }
}

impl MlpConfig {
    pub fn with_hidden(hidden_layers: Vec<usize>) -> Self {
        Self { hidden_layers, ..Self::default() }
    }

    fn validate(&self) -> Result<(), MlpError> {
        let fail = |msg: &str| Err(MlpError::InvalidConfig(msg.to_string()));
        if self.input_dim == 0 {
            return fail("input_dim must be at least 1");
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return fail("hidden layer widths must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        Ok(())
    }

    /// Layer widths from input to output: `[input_dim, hidden..., 1]`.
    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(1);
        dims
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MlpError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training data contains a non-finite value")]
    NonFiniteInput,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

/// One dense layer; `weights[out][in]`. Also reused as the container shape
/// for gradients and momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: self.weights.iter().map(|r| vec![0.0; r.len()]).collect(),
            biases: vec![0.0; self.biases.len()],
        }
    }
}

/// Per-column affine normalizer: `(v - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Scaler {
    fn identity(dim: usize) -> Self {
        Self { means: vec![0.0; dim], scales: vec![1.0; dim] }
    }

    /// Column means and sample standard deviations; a constant column gets
    /// scale 1 so it standardizes to exactly zero instead of dividing by 0.
    fn fit(x: &Matrix) -> Self {
        let n = x.n_rows();
        let mut means = Vec::with_capacity(x.n_cols());
        let mut scales = Vec::with_capacity(x.n_cols());
        for j in 0..x.n_cols() {
            let column = x.column(j);
            let mean = crate::numeric::compensated_mean(&column);
            let variance = if n < 2 {
                0.0
            } else {
                let mut acc = CompensatedSum::new();
                for &v in &column {
                    let d = v - mean;
                    acc.add(d * d);
                }
                acc.value() / (n - 1) as f64
            };
            let scale = variance.sqrt();
            means.push(mean);
            scales.push(if scale > 0.0 { scale } else { 1.0 });
        }
        Self { means, scales }
    }

    fn apply_into(&self, row: &[f64], out: &mut [f64]) {
        for ((o, &v), (&m, &s)) in out.iter_mut().zip(row).zip(self.means.iter().zip(&self.scales))
        {
            *o = (v - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    /// Hidden layers in order, then the single-unit linear output layer.
    pub layers: Vec<Layer>,
    pub input_scaler: Scaler,
    pub target_mean: f64,
    pub target_scale: f64,
    /// Training MSE per completed epoch, in original target units.
    pub history: Vec<f64>,
}

/// Gradient of the batch MSE with respect to every weight and bias, in
/// standardized target space.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub layers: Vec<Layer>,
}

const MODEL_KIND: &str = "mlp-model";
const MODEL_VERSION: u32 = 1;

impl MlpModel {
    pub fn save_json(&self, path: &Path) -> Result<(), PersistError> {
        persist::save_document(path, MODEL_KIND, MODEL_VERSION, self)
    }

    pub fn load_json(path: &Path) -> Result<Self, PersistError> {
        persist::load_document(path, MODEL_KIND, MODEL_VERSION)
    }
}

/// Fresh network: weights drawn uniformly from ±1/sqrt(fan_in), biases
/// zero, scalers identity until `train` fits them. Weight draw order is
/// layer by layer, output unit by output unit, input by input.
pub fn init_mlp(config: &MlpConfig) -> Result<MlpModel, MlpError> {
    config.validate()?;
    let dims = config.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = dims
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            Layer {
                weights: (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.random_range(-bound..bound)).collect())
                    .collect(),
                biases: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(MlpModel {
        config: config.clone(),
        layers,
        input_scaler: Scaler::identity(config.input_dim),
        target_mean: 0.0,
        target_scale: 1.0,
        history: Vec::new(),
    })
}

/// Forward pass in standardized space over an already standardized input.
fn forward_std(layers: &[Layer], input: &[f64]) -> f64 {
    let mut current = input.to_vec();
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        let mut next = layer.biases.clone();
        for (o, acc) in next.iter_mut().enumerate() {
            let weights = &layer.weights[o];
            for (w, a) in weights.iter().zip(&current) {
                *acc += w * a;
            }
        }
        if l != last {
            for v in next.iter_mut() {
                *v = v.tanh();
            }
        }
        current = next;
    }
    current[0]
}

/// Predicted remaining time for one raw input row.
pub fn forward(model: &MlpModel, x: &[f64]) -> Result<f64, MlpError> {
    if x.len() != model.config.input_dim {
        return Err(MlpError::DimensionMismatch {
            expected: model.config.input_dim,
            got: x.len(),
        });
    }
    let mut standardized = vec![0.0; x.len()];
    model.input_scaler.apply_into(x, &mut standardized);
    Ok(forward_std(&model.layers, &standardized) * model.target_scale + model.target_mean)
}

/// Batch prediction; row for row identical to calling `forward`.
pub fn predict_mlp(model: &MlpModel, x: &Matrix) -> Result<Vec<f64>, MlpError> {
    if x.n_cols() != model.config.input_dim {
        return Err(MlpError::DimensionMismatch {
            expected: model.config.input_dim,
            got: x.n_cols(),
        });
    }
    x.rows().map(|row| forward(model, row)).collect()
}

/// Backpropagated gradient of the mean squared error of the batch, taken
/// in standardized input and target space (raw `x`, original-unit `y`).
pub fn gradient(model: &MlpModel, x: &Matrix, y: &[f64]) -> Result<MlpGradient, MlpError> {
    if x.n_cols() != model.config.input_dim {
        return Err(MlpError::DimensionMismatch {
            expected: model.config.input_dim,
            got: x.n_cols(),
        });
    }
    if x.n_rows() != y.len() || y.is_empty() {
        return Err(MlpError::DimensionMismatch { expected: x.n_rows(), got: y.len() });
    }
    let mut grads: Vec<Layer> = model.layers.iter().map(Layer::zeros_like).collect();
    let mut standardized = vec![0.0; model.config.input_dim];
    for (row, &target) in x.rows().zip(y) {
        model.input_scaler.apply_into(row, &mut standardized);
        let target_std = (target - model.target_mean) / model.target_scale;
        accumulate_sample_gradient(&model.layers, &standardized, target_std, &mut grads);
    }
    let inv_batch = 1.0 / y.len() as f64;
    for layer in &mut grads {
        for row in &mut layer.weights {
            for w in row.iter_mut() {
                *w *= inv_batch;
            }
        }
        for b in &mut layer.biases {
            *b *= inv_batch;
        }
    }
    Ok(MlpGradient { layers: grads })
}

/// Adds d(out - target)^2 / dtheta for one sample into `grads`.
fn accumulate_sample_gradient(
    layers: &[Layer],
    input: &[f64],
    target_std: f64,
    grads: &mut [Layer],
) {
    let last = layers.len() - 1;
    // activations[l] is the input to layer l; activations[last + 1] is the
    // network output.
    let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
    activations.push(input.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let prev = &activations[l];
        let mut next = layer.biases.clone();
        for (o, acc) in next.iter_mut().enumerate() {
            for (w, a) in layer.weights[o].iter().zip(prev) {
                *acc += w * a;
            }
        }
        if l != last {
            for v in next.iter_mut() {
                *v = v.tanh();
            }
        }
        activations.push(next);
    }

    let output = activations[last + 1][0];
    let mut delta = vec![2.0 * (output - target_std)];
    for l in (0..layers.len()).rev() {
        let prev = &activations[l];
        let grad = &mut grads[l];
        for (o, &d) in delta.iter().enumerate() {
            grad.biases[o] += d;
            for (gw, &a) in grad.weights[o].iter_mut().zip(prev) {
                *gw += d * a;
            }
        }
        if l == 0 {
            break;
        }
        // Propagate through the weights, then through tanh of layer l - 1.
        let mut next_delta = vec![0.0; prev.len()];
        for (o, &d) in delta.iter().enumerate() {
            for (nd, &w) in next_delta.iter_mut().zip(&layers[l].weights[o]) {
                *nd += d * w;
            }
        }
        for (nd, &a) in next_delta.iter_mut().zip(prev) {
            *nd *= 1.0 - a * a;
        }
        delta = next_delta;
    }
}

fn training_mse(model: &MlpModel, x: &Matrix, y: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    let mut standardized = vec![0.0; model.config.input_dim];
    for (row, &target) in x.rows().zip(y) {
        model.input_scaler.apply_into(row, &mut standardized);
        let predicted =
            forward_std(&model.layers, &standardized) * model.target_scale + model.target_mean;
        let d = predicted - target;
        acc.add(d * d);
    }
    acc.value() / y.len() as f64
}

/// Trains with shuffled mini-batches (classical momentum: `v = m*v - lr*g;
/// w += v`). Standardization statistics come from this training set alone.
/// Identical model, data, and config reproduce the run bit for bit.
pub fn train(model: MlpModel, x: &Matrix, y: &[f64]) -> Result<MlpModel, MlpError> {
    let mut model = model;
    let config = model.config.clone();
    config.validate()?;
    if x.n_cols() != config.input_dim {
        return Err(MlpError::DimensionMismatch { expected: config.input_dim, got: x.n_cols() });
    }
    if x.n_rows() != y.len() || y.is_empty() {
        return Err(MlpError::DimensionMismatch { expected: x.n_rows(), got: y.len() });
    }
    if x.rows().any(|r| r.iter().any(|v| !v.is_finite())) || y.iter().any(|v| !v.is_finite()) {
        return Err(MlpError::NonFiniteInput);
    }

    model.input_scaler = Scaler::fit(x);
    let target_scaler = Scaler::fit(&Matrix::from_rows(y.iter().map(|&v| vec![v]).collect()));
    model.target_mean = target_scaler.means[0];
    model.target_scale = target_scaler.scales[0];
    model.history = Vec::with_capacity(config.epochs);

    let n = x.n_rows();
    let batch_size = config.batch_size.min(n);
    let mut velocity: Vec<Layer> = model.layers.iter().map(Layer::zeros_like).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..n).collect();
    let mut best_loss = f64::INFINITY;
    let mut stall = 0usize;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let batch_x = Matrix::from_rows(batch.iter().map(|&r| x.row(r).to_vec()).collect());
            let batch_y: Vec<f64> = batch.iter().map(|&r| y[r]).collect();
            let grad = gradient(&model, &batch_x, &batch_y)?;
            for ((layer, v), g) in model.layers.iter_mut().zip(&mut velocity).zip(&grad.layers) {
                for ((w_row, v_row), g_row) in
                    layer.weights.iter_mut().zip(&mut v.weights).zip(&g.weights)
                {
                    for ((w, v), &g) in w_row.iter_mut().zip(v_row.iter_mut()).zip(g_row) {
                        *v = config.momentum * *v - config.learning_rate * g;
                        *w += *v;
                    }
                }
                for ((b, v), &g) in
                    layer.biases.iter_mut().zip(v.biases.iter_mut()).zip(&g.biases)
                {
                    *v = config.momentum * *v - config.learning_rate * g;
                    *b += *v;
                }
            }
        }
        let loss = training_mse(&model, x, y);
        if !loss.is_finite() {
            return Err(MlpError::NonFiniteLoss { epoch });
        }
        model.history.push(loss);
        if config.early_stop_patience > 0 {
            if loss < best_loss {
                best_loss = loss;
                stall = 0;
            } else {
                stall += 1;
                if stall >= config.early_stop_patience {
                    break;
                }
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn paper_configs() -> Vec<Vec<usize>> {
        vec![vec![3], vec![5], vec![5, 1], vec![5, 3]]
    }

    fn random_data(seed: u64, n: usize, d: usize) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                3.0 * r[0] - 2.0 * r.get(1).copied().unwrap_or(0.0)
                    + 0.5 * rng.random_range(-1.0..1.0)
                    + 10.0
            })
            .collect();
        (Matrix::from_rows(rows), y)
    }

    /// Loss in standardized target space via the public API only; serves
    /// as the objective for the finite-difference oracle.
    fn loss_std(model: &MlpModel, x: &Matrix, y: &[f64]) -> f64 {
        let predictions = predict_mlp(model, x).unwrap();
        let mse: f64 = predictions
            .iter()
            .zip(y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / y.len() as f64;
        mse / (model.target_scale * model.target_scale)
    }

    #[test]
    fn init_shapes_bounds_and_determinism() {
        let config = MlpConfig { hidden_layers: vec![5, 3], input_dim: 4, seed: 9, ..Default::default() };
        let model = init_mlp(&config).unwrap();
        assert_eq!(model.layers.len(), 3);
        assert_eq!(model.layers[0].weights.len(), 5);
        assert_eq!(model.layers[0].weights[0].len(), 4);
        assert_eq!(model.layers[1].weights.len(), 3);
        assert_eq!(model.layers[1].weights[0].len(), 5);
        assert_eq!(model.layers[2].weights.len(), 1);
        assert_eq!(model.layers[2].weights[0].len(), 3);
        for (layer, fan_in) in model.layers.iter().zip([4usize, 5, 3]) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for row in &layer.weights {
                for &w in row {
                    assert!(w.abs() < bound);
                }
            }
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
        assert_eq!(init_mlp(&config).unwrap(), model);
        assert_ne!(init_mlp(&MlpConfig { seed: 10, ..config }).unwrap(), model);
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            MlpConfig { input_dim: 0, ..Default::default() },
            MlpConfig { hidden_layers: vec![0], ..Default::default() },
            MlpConfig { learning_rate: 0.0, ..Default::default() },
            MlpConfig { momentum: 1.0, ..Default::default() },
            MlpConfig { batch_size: 0, ..Default::default() },
            MlpConfig { epochs: 0, ..Default::default() },
        ];
        for config in bad {
            assert!(matches!(init_mlp(&config), Err(MlpError::InvalidConfig(_))));
        }
    }

    #[test]
    fn forward_matches_the_hand_computed_network() {
        // One input, one hidden tanh unit (w=1, b=0), linear output with
        // w=2, b=0; target de-standardization mean 10, scale 4:
        // 10 + 4 * 2 * tanh(0.5)
        let model = MlpModel {
            config: MlpConfig { hidden_layers: vec![1], input_dim: 1, ..Default::default() },
            layers: vec![
                Layer { weights: vec![vec![1.0]], biases: vec![0.0] },
                Layer { weights: vec![vec![2.0]], biases: vec![0.0] },
            ],
            input_scaler: Scaler::identity(1),
            target_mean: 10.0,
            target_scale: 4.0,
            history: Vec::new(),
        };
        let out = forward(&model, &[0.5]).unwrap();
        assert!((out - 13.696937258080078).abs() < 1e-12);
        assert!((out - 13.6967).abs() < 3e-4);
    }

    #[test]
    fn forward_checks_input_width() {
        let model = init_mlp(&MlpConfig::default()).unwrap();
        assert_eq!(
            forward(&model, &[1.0, 2.0]).unwrap_err(),
            MlpError::DimensionMismatch { expected: 5, got: 2 }
        );
    }

    #[test]
    fn zero_output_layer_predicts_the_target_mean_exactly() {
        let mut model = init_mlp(&MlpConfig::default()).unwrap();
        model.target_mean = 7.5;
        model.target_scale = 2.0;
        let output = model.layers.last_mut().unwrap();
        for row in &mut output.weights {
            row.fill(0.0);
        }
        output.biases.fill(0.0);
        assert_eq!(forward(&model, &[0.3, -1.0, 2.0, 0.0, 4.0]).unwrap(), 7.5);
    }

    #[test]
    fn zero_residual_batch_has_zero_gradient() {
        let model = init_mlp(&MlpConfig { input_dim: 3, ..Default::default() }).unwrap();
        let x = Matrix::from_rows(vec![vec![0.1, -0.4, 0.9], vec![1.2, 0.3, -0.7]]);
        let y = predict_mlp(&model, &x).unwrap();
        let grad = gradient(&model, &x, &y).unwrap();
        for layer in &grad.layers {
            for row in &layer.weights {
                assert!(row.iter().all(|&g| g.abs() <= 1e-12));
            }
            assert!(layer.biases.iter().all(|&g| g.abs() <= 1e-12));
        }
    }

    #[test]
    fn batch_gradient_is_the_mean_of_sample_gradients() {
        let model = init_mlp(&MlpConfig { input_dim: 2, hidden_layers: vec![4], seed: 3, ..Default::default() }).unwrap();
        let a = Matrix::from_rows(vec![vec![0.5, -1.0]]);
        let b = Matrix::from_rows(vec![vec![-0.2, 0.8]]);
        let both = Matrix::from_rows(vec![vec![0.5, -1.0], vec![-0.2, 0.8]]);
        let ga = gradient(&model, &a, &[2.0]).unwrap();
        let gb = gradient(&model, &b, &[-1.0]).unwrap();
        let gboth = gradient(&model, &both, &[2.0, -1.0]).unwrap();
        for l in 0..gboth.layers.len() {
            for o in 0..gboth.layers[l].weights.len() {
                for i in 0..gboth.layers[l].weights[o].len() {
                    let mean =
                        (ga.layers[l].weights[o][i] + gb.layers[l].weights[o][i]) / 2.0;
                    assert!((gboth.layers[l].weights[o][i] - mean).abs() <= 1e-12);
                }
                let mean_b = (ga.layers[l].biases[o] + gb.layers[l].biases[o]) / 2.0;
                assert!((gboth.layers[l].biases[o] - mean_b).abs() <= 1e-12);
            }
        }
    }

    /// Central-difference check: perturb every parameter of every paper
    /// config and compare against backpropagation. The acceptance suite
    /// repeats this across twenty draws; this is the smoke version.
    #[test]
    fn gradient_matches_finite_differences() {
        for (c, hidden) in paper_configs().into_iter().enumerate() {
            let config = MlpConfig {
                hidden_layers: hidden,
                input_dim: 3,
                seed: 100 + c as u64,
                ..Default::default()
            };
            let mut model = init_mlp(&config).unwrap();
            model.target_mean = 4.0;
            model.target_scale = 3.0;
            let (x, y) = random_data(200 + c as u64, 8, 3);
            let analytic = gradient(&model, &x, &y).unwrap();
            let eps = 1e-5;
            for l in 0..model.layers.len() {
                for o in 0..model.layers[l].weights.len() {
                    for i in 0..model.layers[l].weights[o].len() {
                        let mut plus = model.clone();
                        plus.layers[l].weights[o][i] += eps;
                        let mut minus = model.clone();
                        minus.layers[l].weights[o][i] -= eps;
                        let numeric =
                            (loss_std(&plus, &x, &y) - loss_std(&minus, &x, &y)) / (2.0 * eps);
                        let a = analytic.layers[l].weights[o][i];
                        let rel = (numeric - a).abs() / (numeric.abs() + a.abs()).max(1e-8);
                        assert!(rel < 1e-4, "config {c} layer {l} w[{o}][{i}]: {numeric} vs {a}");
                    }
                }
            }
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (x, y) = random_data(5, 400, 3);
        let config = MlpConfig {
            hidden_layers: vec![5],
            input_dim: 3,
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 32,
            seed: 7,
            ..Default::default()
        };
        let trained = train(init_mlp(&config).unwrap(), &x, &y).unwrap();
        assert_eq!(trained.history.len(), 20);
        assert!(trained.history[19] <= trained.history[0]);
        assert!(trained.history[19] < crate::numeric::sample_variance(&y));
        let again = train(init_mlp(&config).unwrap(), &x, &y).unwrap();
        assert_eq!(trained, again);
    }

    #[test]
    fn constant_target_converges_to_that_constant() {
        // The no-hidden-layer configuration: a constant is exactly
        // representable and the quadratic loss is well conditioned, so
        // full-batch descent drives every prediction to the constant.
        // (Tanh configs have near-flat valleys that keep a tiny residual
        // for far longer; the descent test covers those.)
        let (x, _) = random_data(11, 256, 2);
        let y = vec![5.0; 256];
        let config = MlpConfig {
            hidden_layers: vec![],
            input_dim: 2,
            learning_rate: 0.05,
            batch_size: 256,
            epochs: 200,
            seed: 13,
            ..Default::default()
        };
        let trained = train(init_mlp(&config).unwrap(), &x, &y).unwrap();
        for p in predict_mlp(&trained, &x).unwrap() {
            assert!((p - 5.0).abs() < 1e-3, "{p}");
        }
        assert!(*trained.history.last().unwrap() < 1e-8);
    }

    #[test]
    fn divergence_is_reported_with_the_epoch() {
        let (x, y) = random_data(17, 64, 2);
        let config = MlpConfig {
            hidden_layers: vec![3],
            input_dim: 2,
            learning_rate: 1e12,
            epochs: 25,
            seed: 1,
            ..Default::default()
        };
        match train(init_mlp(&config).unwrap(), &x, &y) {
            Err(MlpError::NonFiniteLoss { epoch }) => assert!(epoch >= 1),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_training_data_is_rejected() {
        let (x, mut y) = random_data(19, 16, 2);
        y[3] = f64::NAN;
        let config = MlpConfig { input_dim: 2, ..Default::default() };
        assert_eq!(
            train(init_mlp(&config).unwrap(), &x, &y).unwrap_err(),
            MlpError::NonFiniteInput
        );
    }

    #[test]
    fn early_stopping_halts_on_an_exact_plateau() {
        // A zeroed output layer predicts the target mean, and a constant
        // target standardizes to exactly zero, so every residual and hence
        // every gradient is exactly zero: no epoch improves on the first,
        // and patience stops training after exactly 1 + patience epochs.
        let config = MlpConfig {
            hidden_layers: vec![3],
            input_dim: 2,
            epochs: 50,
            early_stop_patience: 2,
            batch_size: 16,
            seed: 23,
            ..Default::default()
        };
        let mut model = init_mlp(&config).unwrap();
        let output = model.layers.last_mut().unwrap();
        for row in &mut output.weights {
            row.fill(0.0);
        }
        let (x, _) = random_data(23, 64, 2);
        let y = vec![4.25; 64];
        let trained = train(model, &x, &y).unwrap();
        assert_eq!(trained.history.len(), 3);
        assert!(trained.history.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn prediction_is_locally_lipschitz() {
        // |f(x + d) - f(x)| is bounded by the product of layer weight
        // norms (tanh is 1-Lipschitz), mapped through the scalers.
        let (x, y) = random_data(29, 128, 3);
        let config = MlpConfig { input_dim: 3, hidden_layers: vec![5], epochs: 5, seed: 31, ..Default::default() };
        let model = train(init_mlp(&config).unwrap(), &x, &y).unwrap();
        let mut bound = model.target_scale;
        for (l, layer) in model.layers.iter().enumerate() {
            let max_row_l1: f64 = layer
                .weights
                .iter()
                .map(|r| r.iter().map(|w| w.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            bound *= max_row_l1.max(if l == 0 { 0.0 } else { 1.0 });
        }
        let min_scale = model.input_scaler.scales.iter().copied().fold(f64::INFINITY, f64::min);
        bound /= min_scale;
        let delta = 1e-6;
        let base = forward(&model, &[0.2, -0.3, 0.4]).unwrap();
        for i in 0..3 {
            let mut bumped = [0.2, -0.3, 0.4];
            bumped[i] += delta;
            let out = forward(&model, &bumped).unwrap();
            assert!((out - base).abs() <= bound * delta * 1.0001 + 1e-12);
        }
    }

    #[test]
    fn json_round_trip_preserves_model() {
        let (x, y) = random_data(37, 64, 2);
        let config = MlpConfig { input_dim: 2, hidden_layers: vec![3], epochs: 3, seed: 5, ..Default::default() };
        let model = train(init_mlp(&config).unwrap(), &x, &y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mlp.json");
        model.save_json(&path).unwrap();
        assert_eq!(MlpModel::load_json(&path).unwrap(), model);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn batch_predict_equals_row_by_row_forward(seed in 0u64..200, n in 1usize..20) {
            let config = MlpConfig { input_dim: 3, hidden_layers: vec![4, 2], seed, ..Default::default() };
            let model = init_mlp(&config).unwrap();
            let (x, _) = random_data(seed, n, 3);
            let batch = predict_mlp(&model, &x).unwrap();
            for (r, &p) in batch.iter().enumerate() {
                let single = forward(&model, x.row(r)).unwrap();
                prop_assert_eq!(p.to_bits(), single.to_bits());
            }
        }
    }
}
