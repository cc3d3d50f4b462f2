//! Logistic regression and a one-hidden-layer perceptron, trained by
//! full-batch gradient descent on mean binary cross-entropy.
//!
//! Models are plain coefficient vectors ([`CoefVector`]) in a fixed layout so
//! FedAvg can average them element-wise:
//!
//! * logistic: `[w_0 .. w_{n-1}, b]`
//! * MLP: `[W1 (row-major, one row per hidden unit), b1, w2, b2]`
//!
//! Both the hidden and the output activation of the MLP are logistic.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::featex::FeatureRow;
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelShape {
    pub kind: ModelKind,
    pub n_inputs: usize,
    /// Hidden width; zero for logistic models.
    pub n_hidden: usize,
}

impl ModelShape {
    pub fn logistic(n_inputs: usize) -> Self {
        ModelShape {
            kind: ModelKind::Logistic,
            n_inputs,
            n_hidden: 0,
        }
    }

    pub fn mlp(n_inputs: usize, n_hidden: usize) -> Self {
        ModelShape {
            kind: ModelKind::Mlp,
            n_inputs,
            n_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 {
            return Err(Error::InvalidParameter("n_inputs must be at least 1".into()));
        }
        if self.kind == ModelKind::Mlp && self.n_hidden == 0 {
            return Err(Error::InvalidParameter("n_hidden must be at least 1".into()));
        }
        Ok(())
    }

    pub fn coefficient_count(&self) -> usize {
        match self.kind {
            ModelKind::Logistic => self.n_inputs + 1,
            ModelKind::Mlp => (self.n_inputs + 1) * self.n_hidden + self.n_hidden + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefVector {
    pub shape: ModelShape,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub init_seed: u64,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs_per_batch: 20,
            init_seed: 0,
            init_scale: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if self.epochs_per_batch == 0 {
            return Err(Error::InvalidParameter(
                "epochs_per_batch must be at least 1".into(),
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidParameter("init_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// One labeled feature vector as seen by the models.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub label: u8,
}

impl From<&FeatureRow> for Example {
    fn from(row: &FeatureRow) -> Self {
        Example {
            x: row.features().to_vec(),
            label: row.label,
        }
    }
}

pub fn examples(rows: &[FeatureRow]) -> Vec<Example> {
    rows.iter().map(Example::from).collect()
}

pub fn init_model(shape: ModelShape, config: &TrainConfig) -> Result<CoefVector> {
    shape.validate()?;
    let mut values = vec![0.0; shape.coefficient_count()];
    if shape.kind == ModelKind::Mlp {
        let mut rng = rng::stream(config.init_seed, &[tag::INIT]);
        let (i, h) = (shape.n_inputs, shape.n_hidden);
        let s = config.init_scale;
        let mut draw = || if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
        for v in &mut values[..h * i] {
            *v = draw();
        }
        for v in &mut values[h * i + h..h * i + 2 * h] {
            *v = draw();
        }
    }
    Ok(CoefVector { shape, values })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl CoefVector {
    fn check(&self) -> Result<()> {
        let expected = self.shape.coefficient_count();
        if self.values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.shape.n_inputs {
            return Err(Error::DimensionMismatch {
                expected: self.shape.n_inputs,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Output logit; `hidden` receives the hidden activations for MLPs.
    fn forward(&self, x: &[f64], hidden: &mut Vec<f64>) -> f64 {
        let n = self.shape.n_inputs;
        let v = &self.values;
        match self.shape.kind {
            ModelKind::Logistic => dot(&v[..n], x) + v[n],
            ModelKind::Mlp => {
                let h = self.shape.n_hidden;
                let (w1, rest) = v.split_at(h * n);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(h);
                hidden.clear();
                hidden.extend((0..h).map(|j| sigmoid(dot(&w1[j * n..(j + 1) * n], x) + b1[j])));
                dot(w2, hidden) + b2[0]
            }
        }
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward(x, &mut Vec::new()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Occupancy probability, kept strictly inside (0, 1).
pub fn predict(model: &CoefVector, x: &[f64]) -> Result<f64> {
    let p = sigmoid(model.logit(x)?);
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

pub fn classify(model: &CoefVector, x: &[f64], cutoff: f64) -> Result<u8> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff must be in (0, 1), got {cutoff}"
        )));
    }
    Ok((predict(model, x)? >= cutoff) as u8)
}

fn check_batch(model: &CoefVector, batch: &[Example]) -> Result<()> {
    model.check()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    for ex in batch {
        model.check_input(&ex.x)?;
    }
    Ok(())
}

/// Mean binary cross-entropy, evaluated from logits.
pub fn loss(model: &CoefVector, batch: &[Example]) -> Result<f64> {
    check_batch(model, batch)?;
    let mut hidden = Vec::new();
    let total: f64 = batch
        .iter()
        .map(|ex| {
            let z = model.forward(&ex.x, &mut hidden);
            softplus(z) - ex.label as f64 * z
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of [`loss`] in codec order.
pub fn gradient(model: &CoefVector, batch: &[Example]) -> Result<CoefVector> {
    check_batch(model, batch)?;
    let shape = model.shape;
    let n = shape.n_inputs;
    let mut grad = vec![0.0; model.values.len()];
    let mut hidden = Vec::new();
    for ex in batch {
        let z = model.forward(&ex.x, &mut hidden);
        let dz = sigmoid(z) - ex.label as f64;
        match shape.kind {
            ModelKind::Logistic => {
                for (g, x) in grad[..n].iter_mut().zip(&ex.x) {
                    *g += dz * x;
                }
                grad[n] += dz;
            }
            ModelKind::Mlp => {
                let h = shape.n_hidden;
                let w2 = &model.values[h * n + h..h * n + 2 * h];
                for j in 0..h {
                    let hj = hidden[j];
                    let da = dz * w2[j] * hj * (1.0 - hj);
                    for (g, x) in grad[j * n..(j + 1) * n].iter_mut().zip(&ex.x) {
                        *g += da * x;
                    }
                    grad[h * n + j] += da;
                    grad[h * n + h + j] += dz * hj;
                }
                grad[h * n + 2 * h] += dz;
            }
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(CoefVector {
        shape,
        values: grad,
    })
}

const MAX_HALVINGS: u32 = 8;

/// `epochs_per_batch` full-batch gradient steps. A step that would raise the
/// loss is retried with the learning rate halved, up to eight times; if every
/// retry fails the model is left where it is.
pub fn train_batch(model: &CoefVector, batch: &[Example], config: &TrainConfig) -> Result<CoefVector> {
    config.validate()?;
    let mut current = model.clone();
    let mut current_loss = loss(&current, batch)?;
    if !current_loss.is_finite() {
        return Err(Error::Diverged);
    }
    for _ in 0..config.epochs_per_batch {
        let grad = gradient(&current, batch)?;
        let mut accepted = false;
        for halving in 0..=MAX_HALVINGS {
            let lr = config.learning_rate / f64::from(1u32 << halving);
            let candidate = CoefVector {
                shape: current.shape,
                values: current
                    .values
                    .iter()
                    .zip(&grad.values)
                    .map(|(v, g)| v - lr * g)
                    .collect(),
            };
            let candidate_loss = loss(&candidate, batch)?;
            if candidate_loss <= current_loss {
                current = candidate;
                current_loss = candidate_loss;
                accepted = true;
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    if !current.is_finite() {
        return Err(Error::Diverged);
    }
    Ok(current)
}

pub fn flatten(model: &CoefVector) -> Vec<f64> {
    model.values.clone()
}

pub fn unflatten(shape: ModelShape, values: &[f64]) -> Result<CoefVector> {
    shape.validate()?;
    let model = CoefVector {
        shape,
        values: values.to_vec(),
    };
    model.check()?;
    Ok(model)
}

pub fn accuracy(model: &CoefVector, rows: &[Example]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut correct = 0usize;
    for ex in rows {
        if classify(model, &ex.x, 0.5)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / rows.len() as f64)
}

/// On-disk model representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub n_inputs: usize,
    pub n_hidden: usize,
    pub values: Vec<f64>,
    pub init_seed: u64,
}

impl ModelFile {
    pub fn new(model: &CoefVector, init_seed: u64) -> Self {
        ModelFile {
            kind: model.shape.kind,
            n_inputs: model.shape.n_inputs,
            n_hidden: model.shape.n_hidden,
            values: model.values.clone(),
            init_seed,
        }
    }

    pub fn model(&self) -> Result<CoefVector> {
        unflatten(
            ModelShape {
                kind: self.kind,
                n_inputs: self.n_inputs,
                n_hidden: self.n_hidden,
            },
            &self.values,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(e.to_string()).in_file(path))
    }
}
