//! Dense feed-forward classifier: flatten -> 512 -> 128 -> C, rectifier
//! activations on the hidden layers, softmax output.
//!
//! Parameters are stored as f32. Forward and backward passes run in f64 over
//! f64 copies of the parameters, which keeps the 32768-wide first-layer
//! reductions accurate.

mod gemm;
mod io;
mod train;

use rand::distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{AttentionTensor, TensorShape, MAX_FLAT_LEN};
use gemm::{gemm, par_gemm, MatRef};

pub use io::{load_model, read_model_from, save_model, write_model_to, MODEL_MAGIC};
pub use train::{
    train, train_with, AdamConfig, ClassWeighting, EpochLog, StepDecay, TrainConfig, Trained,
    TrainingSet,
};

pub const HIDDEN1: usize = 512;
pub const HIDDEN2: usize = 128;

/// Rows per parallel block in the wide products. Every block repacks the
/// other operand, so blocks must be tall enough to amortize that.
const ROW_BLOCK: usize = 256;
/// Rows per inference batch.
const INFER_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl Architecture {
    /// The detector architecture: `input -> 512 -> 128 -> classes`.
    pub fn detector(input: usize, classes: usize) -> Self {
        Architecture {
            input,
            hidden1: HIDDEN1,
            hidden2: HIDDEN2,
            classes,
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.input, self.hidden1, self.hidden2, self.classes]
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn check(&self) -> Result<()> {
        if self.input > MAX_FLAT_LEN {
            return Err(Error::ShapeTooLarge(self.input));
        }
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!("zero-width layer in {:?}", self.dims())));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig(format!("{} output classes", self.classes)));
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: Architecture,
    layers: Vec<Dense>,
    pub seed: u64,
    pub trained_epochs: u32,
}

/// Logits and softmax probabilities for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Forward {
    /// Index of the largest probability; the lowest index wins ties.
    pub fn class(&self) -> usize {
        argmax(&self.probs)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Detector for tensors of `shape` with `classes` outputs (2, 3 or 4).
pub fn init_model(shape: TensorShape, classes: usize, seed: u64) -> Result<MlpModel> {
    if !(2..=4).contains(&classes) {
        return Err(Error::InvalidConfig(format!(
            "detectors have 2, 3 or 4 classes, not {classes}"
        )));
    }
    shape.check()?;
    MlpModel::init(Architecture::detector(shape.len(), classes), seed)
}

impl MlpModel {
    /// Glorot-uniform weights, `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`,
    /// and zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.check()?;
        let mut r = rng::stream(seed, rng::INIT);
        let layers = arch
            .dims()
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let mut layer = Dense::zeros(fan_in, fan_out);
                layer.weights.iter_mut().for_each(|v| *v = dist.sample(&mut r));
                layer
            })
            .collect();
        Ok(MlpModel {
            arch,
            layers,
            seed,
            trained_epochs: 0,
        })
    }

    /// All parameters zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.check()?;
        Ok(MlpModel {
            arch,
            layers: arch.dims().windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            seed: 0,
            trained_epochs: 0,
        })
    }

    /// A model whose output ignores its input: zero weights and the given
    /// output-layer biases as logits.
    pub fn constant(arch: Architecture, logits: &[f32]) -> Result<Self> {
        let mut m = Self::zeros(arch)?;
        if logits.len() != arch.classes {
            return Err(Error::DimMismatch {
                expected: arch.classes,
                actual: logits.len(),
            });
        }
        m.layers[2].bias.copy_from_slice(logits);
        Ok(m)
    }

    pub fn from_layers(arch: Architecture, layers: Vec<Dense>) -> Result<Self> {
        arch.check()?;
        let dims = arch.dims();
        if layers.len() != 3 {
            return Err(Error::InvalidConfig(format!("{} layers, expected 3", layers.len())));
        }
        for (l, w) in layers.iter().zip(dims.windows(2)) {
            if l.in_dim != w[0]
                || l.out_dim != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.bias.len() != w[1]
            {
                return Err(Error::InvalidConfig("layer dimensions do not chain".into()));
            }
        }
        let m = MlpModel {
            arch,
            layers,
            seed: 0,
            trained_epochs: 0,
        };
        if m.params().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(m)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Parameters in storage order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = f32> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    /// Mutable access to the `index`-th parameter in [`MlpModel::params`] order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f32 {
        for l in &mut self.layers {
            if index < l.weights.len() {
                return &mut l.weights[index];
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.arch.input {
            return Err(Error::DimMismatch {
                expected: self.arch.input,
                actual: len,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f32]) -> Result<Forward> {
        Ok(self.forward_batch(&[x])?.pop().expect("one row"))
    }

    /// Forward pass over many inputs; results are identical to calling
    /// [`MlpModel::forward`] on each.
    pub fn forward_batch(&self, rows: &[&[f32]]) -> Result<Vec<Forward>> {
        for r in rows {
            self.check_input(r.len())?;
        }
        let params = Params64::from_model(self);
        let mut ws = Workspace::new(self.arch, rows.len().min(INFER_BATCH));
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(INFER_BATCH) {
            ws.load_inputs(chunk, self.arch.input);
            ws.forward(&params, chunk.len());
            let c = self.arch.classes;
            for logits in ws.logits(chunk.len()).chunks_exact(c) {
                out.push(Forward {
                    logits: logits.to_vec(),
                    probs: softmax(logits),
                });
            }
        }
        Ok(out)
    }

    /// Cross-entropy loss `-ln p[label]` and its gradient for one input.
    pub fn loss_and_grad(&self, x: &[f32], label: usize) -> Result<(f64, Gradients)> {
        self.check_input(x.len())?;
        if label >= self.arch.classes {
            return Err(Error::BadLabel {
                label,
                classes: self.arch.classes,
            });
        }
        let params = Params64::from_model(self);
        let mut ws = Workspace::new(self.arch, 1);
        ws.load_inputs(&[x], self.arch.input);
        ws.forward(&params, 1);
        let loss = ws.output_delta(&[label]);
        let mut grads = Gradients::zeros(self.arch);
        ws.backward(&params, 1, &mut grads);
        Ok((loss, grads))
    }

    pub fn predict(&self, tensor: &AttentionTensor) -> Result<(usize, Vec<f64>)> {
        let f = self.forward(tensor.flatten())?;
        Ok((f.class(), f.probs))
    }
}

/// Gradient of the loss with respect to every parameter, in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(arch: Architecture) -> Self {
        let dims = arch.dims();
        Gradients {
            weights: dims.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect(),
            bias: dims.windows(2).map(|w| vec![0.0; w[1]]).collect(),
        }
    }

    /// Flattened in [`MlpModel::params`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .flat_map(|(w, b)| w.iter().chain(b).copied())
            .collect()
    }
}

/// Compares analytic gradients with central differences over the parameters
/// listed in `indices` (all of them when `None`) and returns
/// `||analytic - numeric|| / (||analytic|| + ||numeric||)`.
///
/// Each step uses the perturbation actually representable in f32.
pub fn gradient_check(
    model: &MlpModel,
    x: &[f32],
    label: usize,
    eps: f32,
    indices: Option<&[usize]>,
) -> Result<f64> {
    let (_, grads) = model.loss_and_grad(x, label)?;
    let analytic = grads.flat();
    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..model.param_count()).collect();
            &all
        }
    };
    let mut probe = model.clone();
    let (mut diff, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    for &i in indices {
        let p = *probe.param_mut(i);
        let (up, down) = (p + eps, p - eps);
        *probe.param_mut(i) = up;
        let plus = probe.loss_and_grad(x, label)?.0;
        *probe.param_mut(i) = down;
        let minus = probe.loss_and_grad(x, label)?.0;
        *probe.param_mut(i) = p;
        let numeric = (plus - minus) / (up as f64 - down as f64);
        diff += (analytic[i] - numeric).powi(2);
        norm_a += analytic[i].powi(2);
        norm_n += numeric.powi(2);
    }
    let scale = norm_a.sqrt() + norm_n.sqrt();
    Ok(if scale == 0.0 { 0.0 } else { diff.sqrt() / scale })
}

/// f64 copies of the parameters, the operands for every product.
pub(crate) struct Params64 {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl Params64 {
    fn from_model(m: &MlpModel) -> Self {
        Params64 {
            weights: m
                .layers
                .iter()
                .map(|l| l.weights.par_iter().map(|&v| v as f64).collect())
                .collect(),
            bias: m
                .layers
                .iter()
                .map(|l| l.bias.iter().map(|&v| v as f64).collect())
                .collect(),
        }
    }
}

/// Activation and delta buffers sized for a maximum batch.
pub(crate) struct Workspace {
    dims: [usize; 4],
    input: Vec<f64>,
    /// Post-activation outputs of the hidden layers, then output logits.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn new(arch: Architecture, max_batch: usize) -> Self {
        let dims = arch.dims();
        let widest = dims[1..].iter().copied().max().unwrap_or(0);
        Workspace {
            dims,
            input: vec![0.0; max_batch * dims[0]],
            acts: dims[1..].iter().map(|&d| vec![0.0; max_batch * d]).collect(),
            delta: vec![0.0; max_batch * widest],
            delta_prev: vec![0.0; max_batch * widest],
        }
    }

    fn load_inputs(&mut self, rows: &[&[f32]], dim: usize) {
        self.input[..rows.len() * dim]
            .par_chunks_mut(dim)
            .zip(rows.par_iter())
            .for_each(|(dst, src)| {
                dst.iter_mut().zip(src.iter()).for_each(|(d, &s)| *d = s as f64);
            });
    }

    fn logits(&self, batch: usize) -> &[f64] {
        &self.acts[2][..batch * self.dims[3]]
    }

    fn forward(&mut self, p: &Params64, batch: usize) {
        for l in 0..3 {
            let (in_dim, out_dim) = (self.dims[l], self.dims[l + 1]);
            let (prev, rest) = self.acts.split_at_mut(l);
            let src: &[f64] = if l == 0 { &self.input } else { &prev[l - 1] };
            let out = &mut rest[0][..batch * out_dim];
            for row in out.chunks_exact_mut(out_dim) {
                row.copy_from_slice(&p.bias[l]);
            }
            let a = MatRef::new(&src[..batch * in_dim], batch, in_dim);
            let w_t = MatRef::new(&p.weights[l], out_dim, in_dim).t();
            if l == 0 {
                par_gemm(a, w_t, 1.0, out, ROW_BLOCK);
            } else {
                gemm(a, w_t, 1.0, out);
            }
            if l < 2 {
                // NaN passes through so a diverged model surfaces as a non-finite loss
                out.iter_mut().for_each(|v| {
                    if *v < 0.0 {
                        *v = 0.0
                    }
                });
            }
        }
    }

    /// Replaces the logits' role in `delta` with `(softmax - onehot) / batch`
    /// and returns the mean loss.
    fn output_delta(&mut self, labels: &[usize]) -> f64 {
        let c = self.dims[3];
        let batch = labels.len();
        let mut loss = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let logits = &self.acts[2][b * c..(b + 1) * c];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - logits[y];
            for (j, &z) in logits.iter().enumerate() {
                let p = (z - log_z).exp();
                let t = if j == y { 1.0 } else { 0.0 };
                self.delta[b * c + j] = (p - t) / batch as f64;
            }
        }
        loss / batch as f64
    }

    /// Backpropagates the output delta into `grads` (overwriting).
    fn backward(&mut self, p: &Params64, batch: usize, grads: &mut Gradients) {
        for l in (0..3).rev() {
            let (in_dim, out_dim) = (self.dims[l], self.dims[l + 1]);
            let src: &[f64] = if l == 0 { &self.input } else { &self.acts[l - 1] };
            let delta = MatRef::new(&self.delta[..batch * out_dim], batch, out_dim);
            let a = MatRef::new(&src[..batch * in_dim], batch, in_dim);
            if l == 0 {
                par_gemm(delta.t(), a, 0.0, &mut grads.weights[l], ROW_BLOCK);
            } else {
                gemm(delta.t(), a, 0.0, &mut grads.weights[l]);
            }
            let db = &mut grads.bias[l];
            db.iter_mut().for_each(|v| *v = 0.0);
            for row in self.delta[..batch * out_dim].chunks_exact(out_dim) {
                db.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
            }
            if l > 0 {
                let w = MatRef::new(&p.weights[l], out_dim, in_dim);
                let next = &mut self.delta_prev[..batch * in_dim];
                gemm(delta, w, 0.0, next);
                // rectifier derivative: zero where the activation was clipped
                next.iter_mut()
                    .zip(&self.acts[l - 1][..batch * in_dim])
                    .for_each(|(d, &act)| {
                        if act <= 0.0 {
                            *d = 0.0;
                        }
                    });
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }
    }
}
