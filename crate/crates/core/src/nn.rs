//! Feed-forward networks trained by minibatch SGD.
//!
//! Only the shape miners need: dense layers, ReLU between them, softmax
//! cross-entropy on the output. The secure mapping layer is not a trainable
//! layer here; it sits in front of the network as a fixed feature transform
//! and travels with the parameters inside a [`ModelSolution`].

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Canonical, CodecError, Reader, Writer};
use crate::data::Dataset;
use crate::rng::{self, SimRng};
use crate::sml::SmlWeights;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("input dimension {actual}, network expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss became non-finite")]
    NumericalDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SoftmaxCrossEntropy,
}

/// Architecture plus the training knobs a task fixes for every miner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input width (the SML query count), hidden widths, class count.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub loss: LossKind,
    pub required_accuracy: f64,
    /// Simulated seconds.
    pub time_limit: f64,
    pub lr: f64,
    pub batch_size: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.layer_sizes.len() < 2 {
            return Err(NnError::InvalidSpec(
                "need at least input and output layers",
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(NnError::InvalidSpec("layer widths must be positive"));
        }
        if !(0.0..=1.0).contains(&self.required_accuracy) {
            return Err(NnError::InvalidSpec("required accuracy must lie in [0, 1]"));
        }
        if !(self.time_limit.is_finite() && self.time_limit >= 0.0) {
            return Err(NnError::InvalidSpec(
                "time limit must be finite and non-negative",
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(NnError::InvalidSpec(
                "learning rate must be finite and non-negative",
            ));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidSpec("batch size must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }
}

impl Canonical for ModelSpec {
    fn encode(&self, w: &mut Writer) {
        w.put_len(self.layer_sizes.len());
        for &n in &self.layer_sizes {
            w.put_u32(n as u32);
        }
        w.put_u8(match self.activation {
            Activation::Relu => 0,
        });
        w.put_u8(match self.loss {
            LossKind::SoftmaxCrossEntropy => 0,
        });
        w.put_f64(self.required_accuracy);
        w.put_f64(self.time_limit);
        w.put_f64(self.lr);
        w.put_u32(self.batch_size as u32);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.get_len()?;
        let layer_sizes = (0..n)
            .map(|_| r.get_u32().map(|v| v as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let activation = match r.get_u8()? {
            0 => Activation::Relu,
            tag => {
                return Err(CodecError::InvalidTag {
                    what: "activation",
                    tag,
                })
            }
        };
        let loss = match r.get_u8()? {
            0 => LossKind::SoftmaxCrossEntropy,
            tag => return Err(CodecError::InvalidTag { what: "loss", tag }),
        };
        let spec = ModelSpec {
            layer_sizes,
            activation,
            loss,
            required_accuracy: r.get_f64()?,
            time_limit: r.get_f64()?,
            lr: r.get_f64()?,
            batch_size: r.get_u32()? as usize,
        };
        spec.validate()
            .map_err(|_| CodecError::Invalid("model spec"))?;
        Ok(spec)
    }
}

/// Dense layer: `weights` is `fan_out x fan_in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks(self.fan_in).zip(&self.bias) {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<Layer>,
}

impl Params {
    pub fn zeros(layer_sizes: &[usize]) -> Self {
        Self {
            layers: layer_sizes
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Every parameter in declared order (weights then bias, per layer).
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Pre-activations of every layer plus the final logits.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.fan_out);
            layer.forward(&acts[i], &mut out);
            if i + 1 < self.layers.len() {
                relu_in_place(&mut out);
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i + 1 < self.layers.len() {
                relu_in_place(&mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }
}

impl Canonical for Params {
    fn encode(&self, w: &mut Writer) {
        w.put_len(self.layers.len());
        for l in &self.layers {
            w.put_u32(l.fan_in as u32);
            w.put_u32(l.fan_out as u32);
            for &v in l.weights.iter().chain(&l.bias) {
                w.put_f64_le(v);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.get_len()?;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let fan_in = r.get_u32()? as usize;
            let fan_out = r.get_u32()? as usize;
            let count = fan_in
                .checked_mul(fan_out)
                .and_then(|v| v.checked_add(fan_out))
                .filter(|&c| c.saturating_mul(8) <= r.remaining())
                .ok_or(CodecError::Invalid("layer size"))?;
            let mut vals = (0..count)
                .map(|_| r.get_f64_le())
                .collect::<Result<Vec<_>, _>>()?;
            let bias = vals.split_off(fan_in * fan_out);
            layers.push(Layer {
                fan_in,
                fan_out,
                weights: vals,
                bias,
            });
        }
        if layers.is_empty() || layers.windows(2).any(|w| w[0].fan_out != w[1].fan_in) {
            return Err(CodecError::Invalid("layer chain"));
        }
        Ok(Params { layers })
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<Params, NnError> {
    spec.validate()?;
    Ok(init_with_range(&spec.layer_sizes, seed, None))
}

/// Uniform init in `[-a, a]` per layer; `range` overrides the Glorot `a`.
pub fn init_with_range(layer_sizes: &[usize], seed: u64, range: Option<f64>) -> Params {
    let mut rng = rng::derived(seed, "init_model", layer_sizes.len() as u64);
    let mut params = Params::zeros(layer_sizes);
    for l in &mut params.layers {
        let a = range.unwrap_or_else(|| (6.0 / (l.fan_in + l.fan_out) as f64).sqrt());
        if a > 0.0 {
            for w in &mut l.weights {
                *w = rng.gen_range(-a..=a);
            }
        }
    }
    params
}

fn check_batch(params: &Params, features: &[f64], labels: &[usize]) -> Result<(), NnError> {
    if labels.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let dim = params.input_dim();
    if features.len() != dim * labels.len() {
        return Err(NnError::DimensionMismatch {
            expected: dim * labels.len(),
            actual: features.len(),
        });
    }
    let classes = params.classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(NnError::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Mean softmax cross-entropy of a batch and its gradient with respect to
/// every parameter. Samples are accumulated in batch order.
pub fn loss_and_gradients(
    params: &Params,
    features: &[f64],
    labels: &[usize],
) -> Result<(f64, Params), NnError> {
    check_batch(params, features, labels)?;
    let dim = params.input_dim();
    let n = labels.len() as f64;
    let mut grads = Params::zeros(
        &std::iter::once(dim)
            .chain(params.layers.iter().map(|l| l.fan_out))
            .collect::<Vec<_>>(),
    );
    let mut total = 0.0;
    for (x, &y) in features.chunks(dim).zip(labels) {
        let acts = params.forward_trace(x);
        let probs = softmax(acts.last().unwrap());
        total -= probs[y].max(f64::MIN_POSITIVE).ln();
        // dL/dlogits for the mean loss.
        let mut delta: Vec<f64> = probs.iter().map(|p| p / n).collect();
        delta[y] -= 1.0 / n;
        for li in (0..params.layers.len()).rev() {
            let layer = &params.layers[li];
            let input = &acts[li];
            let g = &mut grads.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (gw, &v) in row.iter_mut().zip(input) {
                    *gw += d * v;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU derivative; the stored activation is post-ReLU.
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(NnError::NumericalDivergence);
    }
    Ok((loss, grads))
}

/// Mean loss only.
pub fn batch_loss(params: &Params, features: &[f64], labels: &[usize]) -> Result<f64, NnError> {
    check_batch(params, features, labels)?;
    let dim = params.input_dim();
    let total: f64 = features
        .chunks(dim)
        .zip(labels)
        .map(|(x, &y)| -params.probabilities(x)[y].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// One SGD step; returns the batch loss measured before the update.
pub fn train_step(
    params: &mut Params,
    features: &[f64],
    labels: &[usize],
    lr: f64,
) -> Result<f64, NnError> {
    let (loss, grads) = loss_and_gradients(params, features, labels)?;
    for (p, g) in params.flat_mut().zip(grads.flat()) {
        *p -= lr * g;
    }
    if params
        .layers
        .iter()
        .any(|l| l.weights.iter().any(|w| !w.is_finite()))
    {
        return Err(NnError::NumericalDivergence);
    }
    Ok(loss)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate(params: &Params, ds: &Dataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let correct = (0..ds.len())
        .filter(|&i| params.predict(ds.sample(i)) == ds.label(i))
        .count();
    correct as f64 / ds.len() as f64
}

/// Per-feature standardization fitted on training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(ds: &Dataset) -> Self {
        let dim = ds.dim();
        let n = ds.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for x in ds.samples() {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for x in ds.samples() {
            for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply_one(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let features = ds.samples().flat_map(|x| self.apply_one(x)).collect();
        ds.with_features(ds.dim(), features)
            .expect("normalization keeps the shape")
    }
}

impl Canonical for Normalizer {
    fn encode(&self, w: &mut Writer) {
        w.put_len(self.mean.len());
        for (&m, &s) in self.mean.iter().zip(&self.std) {
            w.put_f64_le(m);
            w.put_f64_le(s);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.get_len()?;
        let mut mean = Vec::with_capacity(n);
        let mut std = Vec::with_capacity(n);
        for _ in 0..n {
            mean.push(r.get_f64_le()?);
            std.push(r.get_f64_le()?);
        }
        Ok(Self { mean, std })
    }
}

/// Minibatch SGD over a fixed dataset, reshuffled every epoch.
#[derive(Debug, Clone)]
pub struct TrainingSession {
    pub params: Params,
    lr: f64,
    batch_size: usize,
    data: Dataset,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    steps: u64,
    rng: SimRng,
    batch_x: Vec<f64>,
    batch_y: Vec<usize>,
}

impl TrainingSession {
    pub fn new(spec: &ModelSpec, data: Dataset, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        if data.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        if data.dim() != spec.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: spec.input_dim(),
                actual: data.dim(),
            });
        }
        let params = init_model(spec, seed)?;
        let mut rng = rng::derived(seed, "training_order", 0);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            params,
            lr: spec.lr,
            batch_size: spec.batch_size,
            data,
            order,
            cursor: 0,
            epoch: 0,
            steps: 0,
            rng,
            batch_x: Vec::new(),
            batch_y: Vec::new(),
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Completed passes over the data.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }

    /// One minibatch update. The last batch of an epoch may be short.
    pub fn step(&mut self) -> Result<f64, NnError> {
        let end = (self.cursor + self.batch_size).min(self.order.len());
        self.batch_x.clear();
        self.batch_y.clear();
        for &i in &self.order[self.cursor..end] {
            self.batch_x.extend_from_slice(self.data.sample(i));
            self.batch_y.push(self.data.label(i));
        }
        let loss = train_step(&mut self.params, &self.batch_x, &self.batch_y, self.lr)?;
        self.steps += 1;
        self.cursor = end;
        if self.cursor == self.order.len() {
            self.cursor = 0;
            self.epoch += 1;
            self.order.shuffle(&mut self.rng);
        }
        Ok(loss)
    }

    pub fn run_epoch(&mut self) -> Result<(), NnError> {
        let target = self.epoch + 1;
        while self.epoch < target {
            self.step()?;
        }
        Ok(())
    }

    pub fn train_accuracy(&self) -> f64 {
        evaluate(&self.params, &self.data)
    }
}

/// A trained model as published in a block: the network, the input
/// standardization fitted on SML features, and the SML it was trained
/// against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSolution {
    pub spec_id: u64,
    pub sml: SmlWeights,
    pub norm: Normalizer,
    pub params: Params,
    pub train_accuracy: f64,
}

impl ModelSolution {
    /// Class prediction from raw SML features.
    pub fn predict(&self, sml_features: &[f64]) -> usize {
        self.params.predict(&self.norm.apply_one(sml_features))
    }

    /// Accuracy on a dataset of raw SML features.
    pub fn accuracy(&self, sml_features: &Dataset) -> f64 {
        if sml_features.is_empty() {
            return 0.0;
        }
        let correct = (0..sml_features.len())
            .filter(|&i| self.predict(sml_features.sample(i)) == sml_features.label(i))
            .count();
        correct as f64 / sml_features.len() as f64
    }
}

impl Canonical for ModelSolution {
    fn encode(&self, w: &mut Writer) {
        w.put_u64(self.spec_id);
        w.put_bytes(&self.sml.to_canonical_bytes());
        self.norm.encode(w);
        self.params.encode(w);
        w.put_f64_le(self.train_accuracy);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let spec_id = r.get_u64()?;
        let sml = SmlWeights::from_canonical_bytes(r.get_bytes()?)?;
        let norm = Normalizer::decode(r)?;
        let params = Params::decode(r)?;
        let train_accuracy = r.get_f64_le()?;
        if norm.mean.len() != params.input_dim() || sml.queries() != params.input_dim() {
            return Err(CodecError::Invalid("model input width"));
        }
        Ok(Self {
            spec_id,
            sml,
            norm,
            params,
            train_accuracy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn spec(sizes: &[usize]) -> ModelSpec {
        ModelSpec {
            layer_sizes: sizes.to_vec(),
            activation: Activation::Relu,
            loss: LossKind::SoftmaxCrossEntropy,
            required_accuracy: 0.9,
            time_limit: 100.0,
            lr: 0.1,
            batch_size: 8,
        }
    }

    fn random_batch(dim: usize, classes: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = (0..dim * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        (x, y)
    }

    #[test]
    fn init_shapes_and_determinism() {
        let s = spec(&[4, 8, 3]);
        let p = init_model(&s, 1).unwrap();
        assert_eq!(p.layers.len(), 2);
        assert_eq!((p.layers[0].fan_out, p.layers[0].fan_in), (8, 4));
        assert_eq!((p.layers[1].fan_out, p.layers[1].fan_in), (3, 8));
        assert_eq!(p.layers[0].weights.len(), 32);
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(p, init_model(&s, 1).unwrap());
        assert_ne!(p, init_model(&s, 2).unwrap());
        let a = (6.0f64 / 12.0).sqrt();
        assert!(p.layers[0].weights.iter().all(|w| w.abs() <= a));
    }

    #[test]
    fn zero_range_gives_uniform_output() {
        let p = init_with_range(&[4, 8, 3], 0, Some(0.0));
        assert!(p.flat().iter().all(|&v| v == 0.0));
        let probs = p.probabilities(&[1.0, -2.0, 3.0, 0.5]);
        for pr in probs {
            assert!((pr - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(spec(&[4]).validate().is_err());
        assert!(spec(&[4, 0, 3]).validate().is_err());
        let mut s = spec(&[4, 3]);
        s.required_accuracy = 1.5;
        assert!(s.validate().is_err());
        s.required_accuracy = 1.0;
        s.batch_size = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..10).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let s: f64 = softmax(&logits).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }

    #[test]
    fn lr_zero_is_a_no_op() {
        let mut p = init_model(&spec(&[5, 7, 3]), 3).unwrap();
        let before = p.clone();
        let (x, y) = random_batch(5, 3, 4, 1);
        train_step(&mut p, &x, &y, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn single_sample_loss_mostly_decreases() {
        let mut p = init_model(&spec(&[6, 10, 4]), 9).unwrap();
        let (x, y) = random_batch(6, 4, 1, 2);
        let mut losses = Vec::new();
        for _ in 0..51 {
            losses.push(train_step(&mut p, &x, &y, 0.05).unwrap());
        }
        let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(non_increasing >= 45, "{non_increasing}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for trial in 0..10u64 {
            let sizes = [3 + trial as usize % 4, 5 + trial as usize, 4];
            let p = init_with_range(&sizes, trial, Some(0.8));
            let (x, y) = random_batch(sizes[0], 4, 3, 100 + trial);
            let (_, grads) = loss_and_gradients(&p, &x, &y).unwrap();
            let analytic = grads.flat();
            let eps = 1e-4;
            for (k, &a) in analytic.iter().enumerate() {
                let shifted = |delta: f64| {
                    let mut q = p.clone();
                    *q.flat_mut().nth(k).unwrap() += delta;
                    batch_loss(&q, &x, &y).unwrap()
                };
                let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-3, "trial {trial} param {k}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn evaluate_on_own_predictions_is_perfect() {
        let p = init_model(&spec(&[4, 6, 3]), 5).unwrap();
        let (x, _) = random_batch(4, 3, 50, 6);
        let labels = x.chunks(4).map(|s| p.predict(s)).collect();
        let ds = Dataset::new(4, 3, x, labels).unwrap();
        assert_eq!(evaluate(&p, &ds), 1.0);
    }

    #[test]
    fn bad_batches_rejected() {
        let mut p = init_model(&spec(&[2, 2]), 0).unwrap();
        assert_eq!(train_step(&mut p, &[], &[], 0.1), Err(NnError::EmptyBatch));
        assert!(train_step(&mut p, &[1.0], &[0], 0.1).is_err());
        assert!(matches!(
            train_step(&mut p, &[1.0, 2.0], &[5], 0.1),
            Err(NnError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn divergence_detected() {
        let mut p = init_with_range(&[2, 2], 0, Some(1.0));
        let x = [1e200, 1e200];
        let wrong = 1 - p.predict(&x);
        let r = train_step(&mut p, &x, &[wrong], 1e300);
        assert_eq!(r, Err(NnError::NumericalDivergence));
    }

    #[test]
    fn session_is_deterministic_and_learns() {
        let iris = crate::data::iris();
        let norm = Normalizer::fit(&iris);
        let ds = norm.apply(&iris);
        let mut s = spec(&[4, 16, 3]);
        s.lr = 0.05;
        let mut a = TrainingSession::new(&s, ds.clone(), 11).unwrap();
        let mut b = TrainingSession::new(&s, ds, 11).unwrap();
        for _ in 0..30 {
            a.run_epoch().unwrap();
            b.run_epoch().unwrap();
        }
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch(), 30);
        assert_eq!(a.steps(), 30 * 19);
        assert!(a.train_accuracy() > 0.9, "{}", a.train_accuracy());
    }

    #[test]
    fn canonical_roundtrips() {
        let s = spec(&[32, 16, 3]);
        assert_eq!(
            ModelSpec::from_canonical_bytes(&s.to_canonical_bytes()).unwrap(),
            s
        );
        let p = init_model(&s, 8).unwrap();
        let sml = crate::sml::generate_sml(&crate::hash::sha256(b"m"), 4, 32, 3).unwrap();
        let sol = ModelSolution {
            spec_id: 7,
            sml,
            norm: Normalizer::identity(32),
            params: p,
            train_accuracy: 0.75,
        };
        let bytes = sol.to_canonical_bytes();
        assert_eq!(ModelSolution::from_canonical_bytes(&bytes).unwrap(), sol);
        assert!(ModelSolution::from_canonical_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
