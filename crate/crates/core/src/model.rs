//! Minimal trainable models: multinomial logistic regression and a
//! one-hidden-layer relu MLP, with exact analytic gradients and a loss that
//! composes cross-entropy with an optional distillation regularizer.
//!
//! Parameters live in a single flat vector so they can be exchanged,
//! averaged, quantized and sparsified without caring about layer structure.
//! Layout: LR = `W (L×d) row-major, b (L)`; MLP1 = `W1 (h×d), b1 (h),
//! W2 (L×h), b2 (L)`.

use crate::error::{Error, Result};
use crate::rng::uniform_f64;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Mlp1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// 0 for LR, ≥ 1 for MLP1.
    pub hidden_dim: usize,
    pub num_labels: usize,
}

impl ModelSpec {
    pub fn lr(input_dim: usize, num_labels: usize) -> Self {
        Self {
            kind: ModelKind::Lr,
            input_dim,
            hidden_dim: 0,
            num_labels,
        }
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize, num_labels: usize) -> Self {
        Self {
            kind: ModelKind::Mlp1,
            input_dim,
            hidden_dim,
            num_labels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim < 1 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        if self.num_labels < 2 {
            return Err(Error::InvalidArgument("num_labels must be >= 2".into()));
        }
        match self.kind {
            ModelKind::Lr if self.hidden_dim != 0 => Err(Error::InvalidArgument(
                "hidden_dim must be 0 for the LR model".into(),
            )),
            ModelKind::Mlp1 if self.hidden_dim < 1 => Err(Error::InvalidArgument(
                "hidden_dim must be >= 1 for the MLP1 model".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Lr => (self.input_dim + 1) * self.num_labels,
            ModelKind::Mlp1 => {
                (self.input_dim + 1) * self.hidden_dim + (self.hidden_dim + 1) * self.num_labels
            }
        }
    }
}

/// Flat model parameters plus the spec describing their shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub spec: ModelSpec,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.param_count()],
        }
    }

    /// He-uniform weight init for MLP1, zeros for LR. Biases are zero.
    pub fn init(spec: ModelSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(spec);
        if spec.kind == ModelKind::Mlp1 {
            let (d, h, l) = (spec.input_dim, spec.hidden_dim, spec.num_labels);
            let lim1 = (6.0 / d as f64).sqrt();
            for w in p.values[..h * d].iter_mut() {
                *w = (2.0 * uniform_f64(rng) - 1.0) * lim1;
            }
            let lim2 = (6.0 / h as f64).sqrt();
            let w2_start = h * d + h;
            for w in p.values[w2_start..w2_start + l * h].iter_mut() {
                *w = (2.0 * uniform_f64(rng) - 1.0) * lim2;
            }
        }
        p
    }

    pub fn check_shape(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.spec != other.spec || self.values.len() != other.values.len() {
            return Err(Error::DimMismatch {
                context,
                expected: self.values.len(),
                actual: other.values.len(),
            });
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A labeled minibatch with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>) -> Self {
        assert_eq!(features.len(), dim * labels.len());
        Self {
            features,
            dim,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Sub-batch with the given row indices (rows may repeat).
    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch::new(features, self.dim, labels)
    }
}

/// Per-ground-truth-label average logits: row `l` is the running mean of the
/// logit vectors of samples labeled `l`. Rows with count 0 are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTable {
    num_labels: usize,
    rows: Vec<Vec<f64>>,
    counts: Vec<u64>,
}

impl LogitTable {
    pub fn new(num_labels: usize) -> Self {
        Self {
            num_labels,
            rows: vec![vec![0.0; num_labels]; num_labels],
            counts: vec![0; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn count(&self, label: usize) -> u64 {
        self.counts[label]
    }

    pub fn row(&self, label: usize) -> Option<&[f64]> {
        if self.counts[label] > 0 {
            Some(&self.rows[label])
        } else {
            None
        }
    }

    /// Fold one logit vector into the running mean of its label's row.
    pub fn push(&mut self, label: usize, logits: &[f64]) -> Result<()> {
        if label >= self.num_labels {
            return Err(Error::LabelOutOfRange {
                label,
                num_labels: self.num_labels,
            });
        }
        if logits.len() != self.num_labels {
            return Err(Error::DimMismatch {
                context: "logit table push",
                expected: self.num_labels,
                actual: logits.len(),
            });
        }
        self.counts[label] += 1;
        let c = self.counts[label] as f64;
        for (m, v) in self.rows[label].iter_mut().zip(logits) {
            *m += (v - *m) / c;
        }
        Ok(())
    }

    /// Fold another table into this one, weighting rows by their counts.
    pub fn merge(&mut self, other: &LogitTable) {
        assert_eq!(self.num_labels, other.num_labels);
        for l in 0..self.num_labels {
            if other.counts[l] == 0 {
                continue;
            }
            let total = self.counts[l] + other.counts[l];
            let w = other.counts[l] as f64 / total as f64;
            for (m, v) in self.rows[l].iter_mut().zip(&other.rows[l]) {
                *m += (v - *m) * w;
            }
            self.counts[l] = total;
        }
    }

    pub fn set_row(&mut self, label: usize, row: Vec<f64>, count: u64) {
        self.rows[label] = row;
        self.counts[label] = count;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

struct Forward {
    /// Pre-activation of the hidden layer (empty for LR).
    hidden_pre: Vec<f64>,
    /// Post-relu hidden output (empty for LR).
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_one(params: &ParamVector, x: &[f64]) -> Forward {
    let spec = params.spec;
    let (d, l) = (spec.input_dim, spec.num_labels);
    let v = &params.values;
    match spec.kind {
        ModelKind::Lr => {
            let bias = &v[l * d..];
            let logits = (0..l)
                .map(|k| {
                    let row = &v[k * d..(k + 1) * d];
                    crate::linalg::dot(row, x) + bias[k]
                })
                .collect();
            Forward {
                hidden_pre: Vec::new(),
                hidden: Vec::new(),
                logits,
            }
        }
        ModelKind::Mlp1 => {
            let h = spec.hidden_dim;
            let (w1, rest) = v.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(l * h);
            let hidden_pre: Vec<f64> = (0..h)
                .map(|m| crate::linalg::dot(&w1[m * d..(m + 1) * d], x) + b1[m])
                .collect();
            let hidden: Vec<f64> = hidden_pre.iter().map(|a| a.max(0.0)).collect();
            let logits = (0..l)
                .map(|k| crate::linalg::dot(&w2[k * h..(k + 1) * h], &hidden) + b2[k])
                .collect();
            Forward {
                hidden_pre,
                hidden,
                logits,
            }
        }
    }
}

/// Logits for every row of the batch.
pub fn forward_logits(params: &ParamVector, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    if batch.dim != params.spec.input_dim {
        return Err(Error::DimMismatch {
            context: "forward features",
            expected: params.spec.input_dim,
            actual: batch.dim,
        });
    }
    Ok((0..batch.len())
        .map(|i| forward_one(params, batch.row(i)).logits)
        .collect())
}

/// Mean cross-entropy plus an optional distillation regularizer, with its
/// exact gradient.
///
/// The regularizer for a sample labeled `y` is
/// `alpha · KL(softmax(t_y / T) ‖ softmax(z / T))` where `t_y` is the
/// kd table row for `y`; samples whose row is absent contribute
/// cross-entropy only. The gradient is the plain derivative of this loss
/// (no extra T² factor).
pub fn loss_and_grad(
    params: &ParamVector,
    batch: &Batch,
    kd_target: Option<&LogitTable>,
    alpha: f64,
    temperature: f64,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.dim != params.spec.input_dim {
        return Err(Error::DimMismatch {
            context: "loss features",
            expected: params.spec.input_dim,
            actual: batch.dim,
        });
    }
    let spec = params.spec;
    let (d, l) = (spec.input_dim, spec.num_labels);
    let n = batch.len() as f64;
    let inv_n = 1.0 / n;
    let mut loss = 0.0;
    let mut grad = ParamVector::zeros(spec);

    for i in 0..batch.len() {
        let x = batch.row(i);
        let y = batch.labels[i];
        if y >= l {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_labels: l,
            });
        }
        let fwd = forward_one(params, x);
        let z = &fwd.logits;
        let probs = softmax(z);
        let sample_ce = log_sum_exp(z) - z[y];
        let mut sample_loss = sample_ce;

        // dLoss/dz for this sample, already scaled by 1/n.
        let mut gz: Vec<f64> = (0..l)
            .map(|k| (probs[k] - if k == y { 1.0 } else { 0.0 }) * inv_n)
            .collect();

        if alpha > 0.0 {
            if let Some(row) = kd_target.and_then(|t| t.row(y)) {
                let teacher = softmax(&row.iter().map(|v| v / temperature).collect::<Vec<_>>());
                let student = softmax(&z.iter().map(|v| v / temperature).collect::<Vec<_>>());
                let kl: f64 = teacher
                    .iter()
                    .zip(&student)
                    .map(|(p, q)| if *p > 0.0 { p * (p / q).ln() } else { 0.0 })
                    .sum();
                sample_loss += alpha * kl;
                let scale = alpha * inv_n / temperature;
                for k in 0..l {
                    gz[k] += scale * (student[k] - teacher[k]);
                }
            }
        }

        if !sample_loss.is_finite() {
            return Err(Error::NonFinite { sample_index: i });
        }
        loss += sample_loss * inv_n;

        // Backpropagate gz into the flat gradient.
        let gv = &mut grad.values;
        match spec.kind {
            ModelKind::Lr => {
                for k in 0..l {
                    let g = gz[k];
                    let row = &mut gv[k * d..(k + 1) * d];
                    crate::linalg::axpy(row, g, x);
                }
                let bias = &mut gv[l * d..];
                for k in 0..l {
                    bias[k] += gz[k];
                }
            }
            ModelKind::Mlp1 => {
                let h = spec.hidden_dim;
                let w2_off = h * d + h;
                // grad W2, b2
                for k in 0..l {
                    let g = gz[k];
                    let row = &mut gv[w2_off + k * h..w2_off + (k + 1) * h];
                    crate::linalg::axpy(row, g, &fwd.hidden);
                }
                let b2_off = w2_off + l * h;
                for k in 0..l {
                    gv[b2_off + k] += gz[k];
                }
                // backprop to hidden
                let w2 = &params.values[w2_off..w2_off + l * h];
                let mut ga = vec![0.0; h];
                for k in 0..l {
                    let g = gz[k];
                    for m in 0..h {
                        ga[m] += g * w2[k * h + m];
                    }
                }
                for m in 0..h {
                    if fwd.hidden_pre[m] <= 0.0 {
                        ga[m] = 0.0;
                    }
                }
                // grad W1, b1
                for m in 0..h {
                    let g = ga[m];
                    if g != 0.0 {
                        let row = &mut gv[m * d..(m + 1) * d];
                        crate::linalg::axpy(row, g, x);
                    }
                }
                let b1_off = h * d;
                for m in 0..h {
                    gv[b1_off + m] += ga[m];
                }
            }
        }
    }

    Ok((loss, grad))
}

/// One gradient descent step: `values - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    params.check_shape(grad, "sgd step")?;
    let values = params
        .values
        .iter()
        .zip(&grad.values)
        .map(|(p, g)| p - lr * g)
        .collect();
    Ok(ParamVector {
        spec: params.spec,
        values,
    })
}

/// Fraction of argmax-correct predictions; ties break toward the lowest
/// label index.
pub fn evaluate(params: &ParamVector, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let logits = forward_logits(params, batch)?;
    let mut correct = 0usize;
    for (z, &y) in logits.iter().zip(&batch.labels) {
        let mut best = 0usize;
        for (k, v) in z.iter().enumerate().skip(1) {
            if *v > z[best] {
                best = k;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / batch.len() as f64)
}
