//! Feedforward ReLU network used as the offline transition model.
//!
//! Every layer but the last applies `max(0, W a + b)`; the output layer is
//! affine. The last hidden activation, augmented with a trailing constant 1,
//! is the feature vector that the online adaptation stage regresses on, so
//! `forward(s) == [W | b] * hidden_features(s)` holds exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};

/// Datasets smaller than this are trained full-batch.
pub const FULL_BATCH_LIMIT: usize = 256;
/// Mini-batch size used for datasets at or above [`FULL_BATCH_LIMIT`].
pub const DEFAULT_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl MlpConfig {
    /// 9-40-9: three past positions in, three future positions out.
    pub fn standard(seed: u64) -> Self {
        Self {
            input_dim: 9,
            hidden_dims: vec![40],
            output_dim: 9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(
                "input_dim and output_dim must be >= 1".into(),
            ));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("hidden_dims must not be empty".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("every hidden layer needs >= 1 unit".into()));
        }
        Ok(())
    }

    /// Width of the last hidden layer.
    pub fn n_hidden(&self) -> usize {
        *self.hidden_dims.last().expect("validated config")
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in self
            .hidden_dims
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            dims.push((h, fan_in));
            fan_in = h;
        }
        dims
    }
}

/// One dense layer. `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weights: DMatrix::zeros(rows, cols),
            bias: DVector::zeros(rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    layers: Vec<Layer>,
}

/// Gradients with the same layout as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<Layer>,
}

impl MlpGradients {
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` picks full-batch below [`FULL_BATCH_LIMIT`] samples, else [`DEFAULT_BATCH`].
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainHyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn effective_batch(&self, n: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(n),
            None if n < FULL_BATCH_LIMIT => n,
            None => DEFAULT_BATCH,
        }
    }
}

/// Initialise weights uniformly in `±sqrt(6 / (fan_in + fan_out))`, biases at zero.
pub fn init_mlp(config: &MlpConfig) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = config
        .layer_dims()
        .into_iter()
        .map(|(rows, cols)| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Layer {
                weights: DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit)),
                bias: DVector::zeros(rows),
            }
        })
        .collect();
    Ok(MlpModel {
        config: config.clone(),
        layers,
    })
}

struct Trace {
    /// Inputs to each layer; `acts[0]` is the network input.
    acts: Vec<DVector<f64>>,
    output: DVector<f64>,
}

impl MlpModel {
    /// Build a model from explicit layers, checking that shapes chain.
    pub fn from_layers(config: MlpConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::dim("layer count", dims.len(), layers.len()));
        }
        for ((rows, cols), layer) in dims.iter().zip(&layers) {
            if layer.weights.nrows() != *rows {
                return Err(Error::dim("layer rows", *rows, layer.weights.nrows()));
            }
            if layer.weights.ncols() != *cols {
                return Err(Error::dim("layer columns", *cols, layer.weights.ncols()));
            }
            if layer.bias.len() != *rows {
                return Err(Error::dim("layer bias", *rows, layer.bias.len()));
            }
        }
        let model = Self { config, layers };
        if !model.is_finite() {
            return Err(Error::Input("model contains non-finite weights".into()));
        }
        Ok(model)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim
    }

    /// Length of [`MlpModel::hidden_features`]: last hidden width plus one.
    pub fn feature_dim(&self) -> usize {
        self.config.n_hidden() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.config.input_dim {
            return Err(Error::dim(
                "network input",
                self.config.input_dim,
                input.len(),
            ));
        }
        Ok(())
    }

    fn trace(&self, input: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut a = DVector::from_column_slice(input);
        for layer in &self.layers[..last] {
            let mut z = &layer.weights * &a + &layer.bias;
            z.apply(|v| *v = v.max(0.0));
            acts.push(std::mem::replace(&mut a, z));
        }
        let output = &self.layers[last].weights * &a + &self.layers[last].bias;
        acts.push(a);
        Trace { acts, output }
    }

    pub fn forward(&self, input: &[f64]) -> Result<DVector<f64>> {
        self.check_input(input)?;
        Ok(self.trace(input).output)
    }

    /// Post-ReLU activations of the last hidden layer with a constant 1 appended.
    pub fn hidden_features(&self, input: &[f64]) -> Result<DVector<f64>> {
        self.check_input(input)?;
        let trace = self.trace(input);
        let hidden = trace.acts.last().expect("at least one hidden layer");
        let mut features = DVector::zeros(hidden.len() + 1);
        features.rows_mut(0, hidden.len()).copy_from(hidden);
        features[hidden.len()] = 1.0;
        Ok(features)
    }

    /// Output layer as `[W | b]`, one row per output coordinate.
    pub fn output_layer_augmented(&self) -> DMatrix<f64> {
        let out = self.layers.last().expect("non-empty");
        let (rows, cols) = out.weights.shape();
        let mut aug = DMatrix::zeros(rows, cols + 1);
        aug.view_mut((0, 0), (rows, cols)).copy_from(&out.weights);
        aug.set_column(cols, &out.bias);
        aug
    }

    /// Replace the output layer from its `[W | b]` form.
    pub fn set_output_layer_augmented(&mut self, aug: &DMatrix<f64>) -> Result<()> {
        let out = self.layers.last_mut().expect("non-empty");
        let (rows, cols) = out.weights.shape();
        if aug.nrows() != rows {
            return Err(Error::dim("output layer rows", rows, aug.nrows()));
        }
        if aug.ncols() != cols + 1 {
            return Err(Error::dim("output layer columns", cols + 1, aug.ncols()));
        }
        out.weights.copy_from(&aug.view((0, 0), (rows, cols)));
        out.bias.copy_from(&aug.column(cols));
        Ok(())
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        MlpGradients {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    /// Accumulate `scale * d(||f(x) - y||^2)` into `grads`; returns the squared error.
    fn backprop_into(
        &self,
        input: &[f64],
        target: &[f64],
        scale: f64,
        grads: &mut MlpGradients,
    ) -> f64 {
        let trace = self.trace(input);
        let err = &trace.output - DVector::from_column_slice(target);
        let sq = err.norm_squared();
        let mut delta = err * (2.0 * scale);
        for l in (0..self.layers.len()).rev() {
            let a = &trace.acts[l];
            grads.layers[l].weights.ger(1.0, &delta, a, 1.0);
            grads.layers[l].bias += &delta;
            if l > 0 {
                let mut back = self.layers[l].weights.tr_mul(&delta);
                // acts[l] = relu(z_{l-1}); derivative is 1 where the unit is active
                back.zip_apply(a, |d, act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        sq
    }

    /// Mean squared-error norm over the batch and its gradient.
    pub fn loss_and_gradients(&self, batch: &[Sample]) -> Result<(f64, MlpGradients)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        for s in batch {
            self.check_sample(s)?;
        }
        Ok(self.loss_and_gradients_unchecked(batch.iter()))
    }

    fn loss_and_gradients_unchecked<'a>(
        &self,
        batch: impl ExactSizeIterator<Item = &'a Sample>,
    ) -> (f64, MlpGradients) {
        let scale = 1.0 / batch.len() as f64;
        let mut grads = self.zero_gradients();
        let mut loss = 0.0;
        for s in batch {
            loss += self.backprop_into(s.network_input(), &s.target, scale, &mut grads);
        }
        (loss * scale, grads)
    }

    pub(crate) fn check_sample(&self, s: &Sample) -> Result<()> {
        self.check_input(s.network_input())?;
        if s.target.len() != self.config.output_dim {
            return Err(Error::dim(
                "sample target",
                self.config.output_dim,
                s.target.len(),
            ));
        }
        Ok(())
    }

    /// `self -= step * grads`.
    pub fn apply_gradients(&mut self, grads: &MlpGradients, step: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights -= &g.weights * step;
            layer.bias.axpy(-step, &g.bias, 1.0);
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// JSON model file; every number carries 17 significant digits.
    pub fn to_json(&self) -> String {
        let c = &self.config;
        let hidden: Vec<String> = c.hidden_dims.iter().map(usize::to_string).collect();
        let mut out = format!(
            "{{\"config\":{{\"input_dim\":{},\"hidden_dims\":[{}],\"output_dim\":{},\"seed\":{}}},\"layers\":[",
            c.input_dim,
            hidden.join(","),
            c.output_dim,
            c.seed
        );
        for (li, layer) in self.layers.iter().enumerate() {
            if li > 0 {
                out.push(',');
            }
            out.push_str("{\"weights\":[");
            for r in 0..layer.weights.nrows() {
                if r > 0 {
                    out.push(',');
                }
                push_row(&mut out, layer.weights.row(r).iter().copied());
            }
            out.push_str("],\"bias\":");
            push_row(&mut out, layer.bias.iter().copied());
            out.push('}');
        }
        out.push_str("]}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawModel = serde_json::from_str(text)?;
        raw.config
            .validate()
            .map_err(|e| Error::parse("config", e.to_string()))?;
        let dims = raw.config.layer_dims();
        if dims.len() != raw.layers.len() {
            return Err(Error::parse(
                "layers",
                format!(
                    "config declares {} layers, file has {}",
                    dims.len(),
                    raw.layers.len()
                ),
            ));
        }
        let mut layers = Vec::with_capacity(dims.len());
        for (i, ((rows, cols), rl)) in dims.into_iter().zip(raw.layers).enumerate() {
            if rl.weights.len() != rows {
                return Err(Error::parse(
                    format!("layers[{i}].weights"),
                    format!("expected {rows} rows, found {}", rl.weights.len()),
                ));
            }
            if let Some((r, row)) = rl
                .weights
                .iter()
                .enumerate()
                .find(|(_, row)| row.len() != cols)
            {
                return Err(Error::parse(
                    format!("layers[{i}].weights[{r}]"),
                    format!("expected {cols} columns, found {}", row.len()),
                ));
            }
            if rl.bias.len() != rows {
                return Err(Error::parse(
                    format!("layers[{i}].bias"),
                    format!("expected {rows} entries, found {}", rl.bias.len()),
                ));
            }
            layers.push(Layer {
                weights: DMatrix::from_fn(rows, cols, |r, c| rl.weights[r][c]),
                bias: DVector::from_vec(rl.bias),
            });
        }
        MlpModel::from_layers(raw.config, layers)
    }
}

pub(crate) fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    out.push('[');
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_number(out, v);
    }
    out.push(']');
}

/// `{:.16e}` always yields 17 significant digits, which round-trips any f64.
pub(crate) fn push_number(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    config: MlpConfig,
    layers: Vec<RawLayer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// Mini-batch gradient descent on the mean squared-error loss.
///
/// Returns the trained model and the mean per-sample loss seen in each epoch.
pub fn train(
    model: &MlpModel,
    dataset: &[Sample],
    hp: &TrainHyperparams,
) -> Result<(MlpModel, Vec<f64>)> {
    hp.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("training dataset is empty".into()));
    }
    for s in dataset {
        model.check_sample(s)?;
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let batch = hp.effective_batch(dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grads) =
                model.loss_and_gradients_unchecked(chunk.iter().map(|&i| &dataset[i]));
            total += loss * chunk.len() as f64;
            model.apply_gradients(&grads, hp.learning_rate);
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Numerical(format!(
                "training diverged in epoch {epoch} (loss {mean})"
            )));
        }
        history.push(mean);
    }
    Ok((model, history))
}
