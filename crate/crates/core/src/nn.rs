//! Dense ReLU network with softmax cross-entropy.
//!
//! Parameters live in one flat `f64` vector. Layer `l` (mapping width
//! `arch[l]` to `arch[l + 1]`) stores its weight matrix row-major
//! (`fan_out × fan_in`) followed by its `fan_out` biases. Hidden layers use
//! ReLU; the last layer emits logits. All reductions run in index order so
//! identical inputs give bit-identical outputs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: usize,
}

impl Example {
    pub fn new(x: Vec<f64>, y: usize) -> Self {
        Example { x, y }
    }
}

/// Checks that `arch` lists at least an input width and a class count, all
/// widths are positive, and there are at least two classes.
pub fn validate_arch(arch: &[usize]) -> Result<()> {
    if arch.len() < 2 {
        return Err(Error::config(format!(
            "architecture needs at least 2 layer widths, got {arch:?}"
        )));
    }
    if arch.contains(&0) {
        return Err(Error::config(format!("architecture has a zero width: {arch:?}")));
    }
    if *arch.last().unwrap() < 2 {
        return Err(Error::config(format!(
            "architecture must end in at least 2 classes: {arch:?}"
        )));
    }
    Ok(())
}

/// Number of parameters (weights plus biases) for `arch`.
pub fn param_count(arch: &[usize]) -> usize {
    arch.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

fn layers(arch: &[usize]) -> Vec<Layer> {
    let mut off = 0;
    arch.windows(2)
        .map(|w| {
            let layer = Layer {
                fan_in: w[0],
                fan_out: w[1],
                w_off: off,
                b_off: off + w[0] * w[1],
            };
            off += (w[0] + 1) * w[1];
            layer
        })
        .collect()
}

/// Flat parameter vector plus the layer widths that give it shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
    arch: Vec<usize>,
}

impl ModelParams {
    pub fn zeros(arch: &[usize]) -> Result<Self> {
        validate_arch(arch)?;
        Ok(ModelParams {
            values: vec![0.0; param_count(arch)],
            arch: arch.to_vec(),
        })
    }

    pub fn from_values(arch: &[usize], values: Vec<f64>) -> Result<Self> {
        validate_arch(arch)?;
        let expected = param_count(arch);
        if values.len() != expected {
            return Err(Error::input(format!(
                "architecture {arch:?} needs {expected} parameters, got {}",
                values.len()
            )));
        }
        Ok(ModelParams {
            values,
            arch: arch.to_vec(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.arch.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::input(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        self.check_input(&ex.x)?;
        if ex.y >= self.num_classes() {
            return Err(Error::input(format!(
                "label {} out of range for {} classes",
                ex.y,
                self.num_classes()
            )));
        }
        Ok(())
    }
}

/// Mean loss gradient with the same length as the model's parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    values: Vec<f64>,
}

impl GradVector {
    /// Rejects NaN or infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite gradient entry at index {i}"
            )));
        }
        Ok(GradVector { values })
    }

    pub fn zeros(len: usize) -> Self {
        GradVector {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
pub fn init_model(arch: &[usize], seed: u64) -> Result<ModelParams> {
    let mut model = ModelParams::zeros(arch)?;
    let mut rng = rng::seeded(seed);
    for layer in layers(arch) {
        let std = (2.0 / layer.fan_in as f64).sqrt();
        for w in &mut model.values[layer.w_off..layer.b_off] {
            let z: f64 = rng.sample(StandardNormal);
            *w = std * z;
        }
    }
    Ok(model)
}

/// Activations of one forward pass: `acts[l]` is the input to layer `l`
/// (the raw features for `l = 0`), `logits` the last layer's output.
struct Trace {
    acts: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn forward_trace(model: &ModelParams, x: &[f64]) -> Trace {
    let layers = layers(&model.arch);
    let last = layers.len() - 1;
    let mut acts = Vec::with_capacity(layers.len());
    acts.push(x.to_vec());
    let mut logits = Vec::new();
    for (l, layer) in layers.iter().enumerate() {
        let input = &acts[l];
        let w = &model.values[layer.w_off..layer.b_off];
        let b = &model.values[layer.b_off..layer.b_off + layer.fan_out];
        let mut out = Vec::with_capacity(layer.fan_out);
        for o in 0..layer.fan_out {
            let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
            let mut z = b[o];
            for (wi, ai) in row.iter().zip(input) {
                z += wi * ai;
            }
            out.push(z);
        }
        if l == last {
            logits = out;
        } else {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            acts.push(out);
        }
    }
    Trace { acts, logits }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[y]`, via log-sum-exp around the max logit.
fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln() - logits[y]
}

/// Class probabilities `p(y | x)`.
pub fn forward(model: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    Ok(softmax(&forward_trace(model, x).logits))
}

/// Mean cross-entropy over a nonempty batch.
pub fn loss(model: &ModelParams, batch: &[Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::input("loss of an empty batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        model.check_example(ex)?;
        total += cross_entropy(&forward_trace(model, &ex.x).logits, ex.y);
    }
    Ok(total / batch.len() as f64)
}

/// Adds `scale · ∂ℓ/∂w` for one example, given `delta = ∂ℓ/∂logits`.
fn backprop_into(model: &ModelParams, trace: &Trace, mut delta: Vec<f64>, scale: f64, out: &mut [f64]) {
    let layers = layers(&model.arch);
    for (l, layer) in layers.iter().enumerate().rev() {
        let input = &trace.acts[l];
        for (o, &d) in delta.iter().enumerate() {
            let ds = d * scale;
            let row = &mut out[layer.w_off + o * layer.fan_in..layer.w_off + (o + 1) * layer.fan_in];
            for (g, a) in row.iter_mut().zip(input) {
                *g += ds * a;
            }
            out[layer.b_off + o] += ds;
        }
        if l > 0 {
            delta = propagate_delta(model, layer, &delta, input);
        }
    }
}

/// `(Wᵀ δ) ⊙ relu'(z)` for the layer below, with `relu'` read off the stored
/// post-activation (`a > 0` iff `z > 0`).
fn propagate_delta(model: &ModelParams, layer: &Layer, delta: &[f64], input: &[f64]) -> Vec<f64> {
    let w = &model.values[layer.w_off..layer.b_off];
    let mut prev = vec![0.0; layer.fan_in];
    for (o, &d) in delta.iter().enumerate() {
        let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
        for (p, wi) in prev.iter_mut().zip(row) {
            *p += wi * d;
        }
    }
    for (p, a) in prev.iter_mut().zip(input) {
        if *a <= 0.0 {
            *p = 0.0;
        }
    }
    prev
}

fn logit_delta(probs: &[f64], y: usize) -> Vec<f64> {
    let mut delta = probs.to_vec();
    delta[y] -= 1.0;
    delta
}

/// Mean loss and mean gradient over a batch given by reference.
pub fn batch_loss_grad<'a, I>(model: &ModelParams, batch: I) -> Result<(f64, GradVector)>
where
    I: IntoIterator<Item = &'a Example>,
    I::IntoIter: ExactSizeIterator,
{
    let batch = batch.into_iter();
    let n = batch.len();
    if n == 0 {
        return Err(Error::input("gradient of an empty batch"));
    }
    let mut sum = vec![0.0; model.len()];
    let mut total_loss = 0.0;
    for ex in batch {
        model.check_example(ex)?;
        let trace = forward_trace(model, &ex.x);
        total_loss += cross_entropy(&trace.logits, ex.y);
        let delta = logit_delta(&softmax(&trace.logits), ex.y);
        backprop_into(model, &trace, delta, 1.0, &mut sum);
    }
    let inv = 1.0 / n as f64;
    for g in &mut sum {
        *g *= inv;
    }
    Ok((total_loss * inv, GradVector::new(sum)?))
}

/// Mean cross-entropy gradient over a nonempty batch, by backpropagation.
pub fn grad(model: &ModelParams, batch: &[Example]) -> Result<GradVector> {
    batch_loss_grad(model, batch.iter()).map(|(_, g)| g)
}

/// Per-example gradient `g(x, y; w)` for a single label.
pub fn example_grad(model: &ModelParams, x: &[f64], y: usize) -> Result<GradVector> {
    model.check_example(&Example::new(x.to_vec(), y))?;
    let trace = forward_trace(model, x);
    let delta = logit_delta(&softmax(&trace.logits), y);
    let mut out = vec![0.0; model.len()];
    backprop_into(model, &trace, delta, 1.0, &mut out);
    GradVector::new(out)
}

/// Class probabilities at `x` together with `‖g(x, y; w)‖²` for every label `y`.
///
/// Each layer's weight gradient is the outer product `δ aᵀ`, so its squared
/// Frobenius norm is `‖δ‖² ‖a‖²`; adding the bias term gives
/// `‖δ‖² (‖a‖² + 1)` per layer without materialising the gradient.
pub fn label_grad_sq_norms(model: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    model.check_input(x)?;
    let trace = forward_trace(model, x);
    let probs = softmax(&trace.logits);
    let layers = layers(&model.arch);
    let act_sq: Vec<f64> = trace
        .acts
        .iter()
        .map(|a| a.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let norms = (0..model.num_classes())
        .map(|y| {
            let mut delta = logit_delta(&probs, y);
            let mut total = 0.0;
            for (l, layer) in layers.iter().enumerate().rev() {
                let delta_sq: f64 = delta.iter().map(|d| d * d).sum();
                total += delta_sq * (act_sq[l] + 1.0);
                if l > 0 {
                    delta = propagate_delta(model, layer, &delta, &trace.acts[l]);
                }
            }
            total
        })
        .collect();
    Ok((probs, norms))
}

/// `w' = w − lr · (g + weight_decay · w)`.
pub fn sgd_step(model: &ModelParams, g: &GradVector, lr: f64, weight_decay: f64) -> Result<ModelParams> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be positive, got {lr}")));
    }
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return Err(Error::config(format!(
            "weight decay must be nonnegative, got {weight_decay}"
        )));
    }
    if g.values.len() != model.values.len() {
        return Err(Error::input(format!(
            "gradient length {} does not match model length {}",
            g.values.len(),
            model.values.len()
        )));
    }
    let values = model
        .values
        .iter()
        .zip(&g.values)
        .map(|(w, g)| w - lr * (g + weight_decay * w))
        .collect();
    Ok(ModelParams {
        values,
        arch: model.arch.clone(),
    })
}

/// Draws `ŷ ~ p(· | x)` by inverting the cumulative distribution with one
/// uniform draw.
pub fn sample_label<R: Rng + ?Sized>(model: &ModelParams, x: &[f64], rng: &mut R) -> Result<usize> {
    let probs = forward(model, x)?;
    Ok(sample_from(&probs, rng))
}

pub(crate) fn sample_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (c, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return c;
        }
    }
    // u landed in the rounding gap above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy (argmax of class probabilities) and mean cross-entropy.
pub fn evaluate(model: &ModelParams, dataset: &[Example]) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::input("evaluation on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut total_loss = 0.0;
    for ex in dataset {
        model.check_example(ex)?;
        let logits = forward_trace(model, &ex.x).logits;
        total_loss += cross_entropy(&logits, ex.y);
        if argmax(&softmax(&logits)) == ex.y {
            correct += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: total_loss / n,
    })
}
