use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Architecture, Gradients, MlpModel, Params64, Workspace, HIDDEN1, HIDDEN2};
use crate::dataset::WeightedSampler;
use crate::error::{Error, Result};
use crate::rng;

/// Inputs and class labels borrowed from wherever the tensors live.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    inputs: Vec<&'a [f32]>,
    labels: Vec<usize>,
    classes: usize,
}

impl<'a> TrainingSet<'a> {
    pub fn new(inputs: Vec<&'a [f32]>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: inputs.len(),
                actual: labels.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let dim = inputs[0].len();
        if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::BadLabel { label, classes });
        }
        Ok(TrainingSet {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[&'a [f32]] {
        &self.inputs
    }

    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// `1 / count(c)`: every class is drawn equally often.
    InverseCount,
    /// Explicit per-class weights, indexed by class.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Multiplies the learning rate by `factor` once `epoch` epochs have run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub epoch: usize,
    pub factor: f64,
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay {
            epoch: 60,
            factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub class_weights: ClassWeighting,
    pub adam: AdamConfig,
    pub lr_decay: Option<StepDecay>,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 1024,
            learning_rate: 0.001,
            seed: 0,
            class_weights: ClassWeighting::InverseCount,
            adam: AdamConfig::default(),
            lr_decay: None,
            hidden1: HIDDEN1,
            hidden2: HIDDEN2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wallclock_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MlpModel,
    pub log: Vec<EpochLog>,
}

struct Adam {
    cfg: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(cfg: AdamConfig, grads: &Gradients) -> Self {
        let shapes = grads
            .weights
            .iter()
            .zip(&grads.bias)
            .flat_map(|(w, b)| [w.len(), b.len()]);
        let m: Vec<Vec<f64>> = shapes.map(|n| vec![0.0; n]).collect();
        Adam {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    /// Updates both the f32 master parameters and their f64 mirror.
    fn update(&mut self, lr: f64, model: &mut MlpModel, mirror: &mut Params64, grads: &Gradients) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        let mut slot = 0;
        for l in 0..3 {
            let layer = &mut model.layers[l];
            let pairs: [(&mut Vec<f32>, &mut Vec<f64>, &Vec<f64>); 2] = [
                (&mut layer.weights, &mut mirror.weights[l], &grads.weights[l]),
                (&mut layer.bias, &mut mirror.bias[l], &grads.bias[l]),
            ];
            for (master, copy, grad) in pairs {
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                slot += 1;
                master
                    .par_iter_mut()
                    .zip(copy.par_iter_mut())
                    .zip(grad.par_iter())
                    .zip(m.par_iter_mut().zip(v.par_iter_mut()))
                    .for_each(|(((w, w64), &g), (m, v))| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let step = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                        *w = (*w as f64 - step) as f32;
                        *w64 = *w as f64;
                    });
            }
        }
    }
}

/// Trains a fresh model.
///
/// Every epoch draws `|data|` samples with replacement, each with probability
/// proportional to its class weight, and takes one Adam step per mini-batch.
/// The result depends only on `(data, cfg)`, not on the thread count.
pub fn train(data: &TrainingSet, cfg: &TrainConfig) -> Result<Trained> {
    train_with(data, cfg, |_| {})
}

/// Like [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    data: &TrainingSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Trained> {
    cfg.validate()?;
    let arch = Architecture {
        input: data.input_dim(),
        hidden1: cfg.hidden1,
        hidden2: cfg.hidden2,
        classes: data.classes(),
    };
    let weights = match &cfg.class_weights {
        ClassWeighting::InverseCount => data
            .class_counts()
            .iter()
            .enumerate()
            .map(|(c, &n)| {
                if n == 0 {
                    Err(Error::EmptyClass(c.to_string()))
                } else {
                    Ok(1.0 / n as f64)
                }
            })
            .collect::<Result<Vec<f64>>>()?,
        ClassWeighting::Explicit(w) => {
            if w.len() != data.classes() {
                return Err(Error::InvalidConfig(format!(
                    "{} class weights for {} classes",
                    w.len(),
                    data.classes()
                )));
            }
            w.clone()
        }
    };
    let sampler = WeightedSampler::new(data.labels(), &weights)?;

    let mut model = MlpModel::init(arch, cfg.seed)?;
    let mut mirror = Params64::from_model(&model);
    let batch_cap = cfg.batch_size.min(data.len());
    let mut ws = Workspace::new(arch, batch_cap);
    let mut grads = Gradients::zeros(arch);
    let mut adam = Adam::new(cfg.adam, &grads);
    let mut draws = rng::stream(cfg.seed, rng::SAMPLING);

    let started = Instant::now();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut rows: Vec<&[f32]> = Vec::with_capacity(batch_cap);
    let mut labels: Vec<usize> = Vec::with_capacity(batch_cap);
    for epoch in 0..cfg.epochs {
        let lr = match cfg.lr_decay {
            Some(d) if epoch >= d.epoch => cfg.learning_rate * d.factor,
            _ => cfg.learning_rate,
        };
        let order: Vec<usize> = (0..data.len()).map(|_| sampler.draw(&mut draws)).collect();
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            rows.clear();
            labels.clear();
            rows.extend(chunk.iter().map(|&i| data.inputs[i]));
            labels.extend(chunk.iter().map(|&i| data.labels[i]));

            ws.load_inputs(&rows, arch.input);
            ws.forward(&mirror, chunk.len());
            let loss = ws.output_delta(&labels);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            loss_sum += loss * chunk.len() as f64;
            ws.backward(&mirror, chunk.len(), &mut grads);
            adam.update(lr, &mut model, &mut mirror, &grads);
        }
        model.trained_epochs += 1;
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            wallclock_ms: started.elapsed().as_millis() as u64,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(Trained { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn small_cfg(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: 0.01,
            seed,
            hidden1: 16,
            hidden2: 8,
            ..TrainConfig::default()
        }
    }

    /// Two Gaussian blobs in 8 dimensions whose means sit `margin` apart
    /// along every axis.
    fn blobs(n: usize, margin: f32, seed: u64) -> (Vec<Vec<f32>>, Vec<usize>) {
        let mut r = rng::stream(seed, "test-blobs");
        let noise = Normal::new(0.0f32, 0.1).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let center = if y == 0 { 0.0 } else { margin };
            xs.push((0..8).map(|_| center + noise.sample(&mut r)).collect());
            ys.push(y);
        }
        (xs, ys)
    }

    fn accuracy(m: &MlpModel, xs: &[Vec<f32>], ys: &[usize]) -> f64 {
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| m.forward(x).unwrap().class() == y)
            .count();
        hits as f64 / ys.len() as f64
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (xs, ys) = blobs(200, 1.0, 1);
        let data = TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), ys.clone(), 2).unwrap();
        let out = train(&data, &small_cfg(20, 3)).unwrap();
        assert_eq!(accuracy(&out.model, &xs, &ys), 1.0);
        assert!(out.log.last().unwrap().mean_loss <= out.log[0].mean_loss);
        assert_eq!(out.model.trained_epochs, 20);

        let (hx, hy) = blobs(400, 1.0, 2);
        assert!(accuracy(&out.model, &hx, &hy) >= 0.99);
    }

    #[test]
    fn memorizes_two_points() {
        let xs = [vec![0.1f32, 0.9], vec![0.9f32, 0.1]];
        let data = TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), vec![0, 1], 2).unwrap();
        let out = train(&data, &small_cfg(50, 0)).unwrap();
        assert_eq!(out.model.forward(&xs[0]).unwrap().class(), 0);
        assert_eq!(out.model.forward(&xs[1]).unwrap().class(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = blobs(100, 0.3, 5);
        let data = TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), ys, 2).unwrap();
        let a = train(&data, &small_cfg(3, 9)).unwrap().model;
        let b = train(&data, &small_cfg(3, 9)).unwrap().model;
        let bits = |m: &MlpModel| m.params().map(f32::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = train(&data, &small_cfg(3, 10)).unwrap().model;
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn config_and_class_errors() {
        let xs = [vec![0.0f32; 2], vec![1.0; 2]];
        let data = TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), vec![0, 0], 2).unwrap();
        assert!(matches!(train(&data, &small_cfg(1, 0)), Err(Error::EmptyClass(_))));
        let mut cfg = small_cfg(1, 0);
        cfg.batch_size = 0;
        assert!(matches!(train(&data, &cfg), Err(Error::InvalidConfig(_))));
        cfg = small_cfg(0, 0);
        assert!(matches!(train(&data, &cfg), Err(Error::InvalidConfig(_))));
        cfg = small_cfg(1, 0);
        cfg.learning_rate = 0.0;
        assert!(matches!(train(&data, &cfg), Err(Error::InvalidConfig(_))));
        assert!(TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), vec![0, 2], 2).is_err());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let xs = [vec![0.5f32; 4], vec![f32::NAN; 4]];
        let data = TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), vec![0, 1], 2).unwrap();
        match train(&data, &small_cfg(5, 0)) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn step_decay_changes_late_epochs_only() {
        let (xs, ys) = blobs(64, 0.5, 8);
        let data = TrainingSet::new(xs.iter().map(Vec::as_slice).collect(), ys, 2).unwrap();
        let mut cfg = small_cfg(3, 1);
        let plain = train(&data, &cfg).unwrap();
        cfg.lr_decay = Some(StepDecay { epoch: 2, factor: 0.1 });
        let decayed = train(&data, &cfg).unwrap();
        assert_eq!(plain.log[1].mean_loss, decayed.log[1].mean_loss);
        assert_ne!(
            plain.model.params().map(f32::to_bits).collect::<Vec<_>>(),
            decayed.model.params().map(f32::to_bits).collect::<Vec<_>>()
        );
    }
}
