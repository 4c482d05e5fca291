//! L2-regularized logistic regression over distance histograms.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{DistanceHistogram, SimScoreError};

const MODEL_MAGIC: &str = "diematch-logistic v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    SameDie,
    DifferentDie,
}

impl Label {
    fn target(self) -> f64 {
        match self {
            Label::SameDie => 1.0,
            Label::DifferentDie => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Strength of the `l2 / 2 * |w|^2` penalty; the bias is not penalized.
    pub l2: f64,
    pub max_iterations: usize,
    /// Stop once the full gradient norm falls below this.
    pub grad_tol: f64,
    pub initial_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iterations: 20_000,
            grad_tol: 1e-6,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_positive: usize,
    pub n_negative: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default)]
    pub meta: TrainingMeta,
}

impl LogisticModel {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self, SimScoreError> {
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(SimScoreError::NonFinite);
        }
        Ok(Self {
            weights,
            bias,
            meta: TrainingMeta::default(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.weights.len()
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Regularized mean binary cross-entropy and its gradient.
/// Returns `(loss, d loss / d w, d loss / d b)`.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: f64,
    features: &[Vec<f64>],
    targets: &[f64],
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (x, &y) in features.iter().zip(targets) {
        let z = dot(weights, x) + bias;
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += r * xi;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * dot(weights, weights);
    (loss, gw, gb)
}

fn objective(weights: &[f64], bias: f64, features: &[Vec<f64>], targets: &[f64], l2: f64) -> f64 {
    let n = features.len() as f64;
    let data: f64 = features
        .iter()
        .zip(targets)
        .map(|(x, &y)| {
            let z = dot(weights, x) + bias;
            softplus(z) - y * z
        })
        .sum();
    data / n + 0.5 * l2 * dot(weights, weights)
}

/// Full-batch gradient descent with Armijo backtracking from zero
/// parameters. Each accepted step strictly decreases the objective.
pub fn train_logistic(
    features: &[DistanceHistogram],
    labels: &[Label],
    config: &TrainConfig,
) -> Result<LogisticModel, SimScoreError> {
    if features.len() != labels.len() {
        return Err(SimScoreError::DimensionMismatch(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let n_positive = labels.iter().filter(|&&l| l == Label::SameDie).count();
    let n_negative = labels.len() - n_positive;
    if n_positive == 0 || n_negative == 0 {
        return Err(SimScoreError::SingleClassTraining);
    }
    let dim = features[0].bins.len();
    if let Some(bad) = features.iter().find(|f| f.bins.len() != dim) {
        return Err(SimScoreError::DimensionMismatch(format!(
            "histograms with {} and {} bins",
            dim,
            bad.bins.len()
        )));
    }
    let xs: Vec<Vec<f64>> = features.iter().map(|f| f.bins.clone()).collect();
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SimScoreError::NonFinite);
    }
    let ys: Vec<f64> = labels.iter().map(|l| l.target()).collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut step = config.initial_step;
    let (mut loss, mut gw, mut gb) = loss_and_gradient(&w, b, &xs, &ys, config.l2);
    let mut trace = vec![loss];
    let mut converged = false;
    let mut iterations = 0;
    let mut cand_w = vec![0.0; dim];
    while iterations < config.max_iterations {
        let g2 = dot(&gw, &gw) + gb * gb;
        if g2.sqrt() < config.grad_tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        while step > 1e-20 {
            for ((c, wi), gi) in cand_w.iter_mut().zip(&w).zip(&gw) {
                *c = wi - step * gi;
            }
            let cand_b = b - step * gb;
            let cand_loss = objective(&cand_w, cand_b, &xs, &ys, config.l2);
            if cand_loss <= loss - 1e-4 * step * g2 && cand_loss < loss {
                w.copy_from_slice(&cand_w);
                b = cand_b;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        iterations += 1;
        (loss, gw, gb) = loss_and_gradient(&w, b, &xs, &ys, config.l2);
        trace.push(loss);
        step *= 2.0;
    }

    let mut model = LogisticModel::new(w, b)?;
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(f, &l)| (predict_raw(&model, &f.bins) >= 0.5) == (l == Label::SameDie))
        .count();
    model.meta = TrainingMeta {
        n_positive,
        n_negative,
        iterations,
        converged,
        loss_trace: trace,
        train_accuracy: correct as f64 / labels.len() as f64,
    };
    Ok(model)
}

/// Largest value below one, so outputs stay strictly inside (0, 1).
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

fn predict_raw(model: &LogisticModel, x: &[f64]) -> f64 {
    sigmoid(dot(&model.weights, x) + model.bias).clamp(f64::MIN_POSITIVE, ONE_MINUS)
}

/// Same-die probability for a histogram.
pub fn predict(model: &LogisticModel, h: &DistanceHistogram) -> Result<f64, SimScoreError> {
    if h.bins.len() != model.dimension() {
        return Err(SimScoreError::DimensionMismatch(format!(
            "model has {} weights, histogram has {} bins",
            model.dimension(),
            h.bins.len()
        )));
    }
    Ok(predict_raw(model, &h.bins))
}

/// Fraction of examples where `predict >= 0.5` agrees with the label.
pub fn accuracy(model: &LogisticModel, features: &[DistanceHistogram], labels: &[Label]) -> Result<f64, SimScoreError> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(SimScoreError::DimensionMismatch("features and labels differ in length".into()));
    }
    let mut correct = 0;
    for (f, &l) in features.iter().zip(labels) {
        if (predict(model, f)? >= 0.5) == (l == Label::SameDie) {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

pub fn write_model<W: Write>(model: &LogisticModel, mut out: W) -> Result<(), SimScoreError> {
    writeln!(out, "{MODEL_MAGIC}")?;
    writeln!(out, "bias {}", model.bias)?;
    for (i, w) in model.weights.iter().enumerate() {
        writeln!(out, "w{i} {w}")?;
    }
    Ok(())
}

pub fn read_model<R: BufRead>(input: R) -> Result<LogisticModel, SimScoreError> {
    let mut lines = input.lines();
    let magic = lines.next().transpose()?.unwrap_or_default();
    if magic.trim() != MODEL_MAGIC {
        return Err(SimScoreError::MalformedModel(format!("unexpected header {magic:?}")));
    }
    let parse = |line: &str, key: &str| -> Result<f64, SimScoreError> {
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => v
                .parse()
                .map_err(|e| SimScoreError::MalformedModel(format!("{key}: {e}"))),
            _ => Err(SimScoreError::MalformedModel(format!("expected `{key} <value>`, got {line:?}"))),
        }
    };
    let bias_line = lines.next().transpose()?.unwrap_or_default();
    let bias = parse(&bias_line, "bias")?;
    let mut weights = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        weights.push(parse(&line, &format!("w{}", weights.len()))?);
    }
    if weights.is_empty() {
        return Err(SimScoreError::MalformedModel("no weights".into()));
    }
    LogisticModel::new(weights, bias)
}
