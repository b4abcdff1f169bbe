//! AdamW with cosine learning-rate decay, and top-1 evaluation.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::vit::{argmax, bind_params, collect_grads, forward, forward_on_tape, ModelConfig, ModelParams, Params};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Measure wall-clock time per epoch. Off by default so metric files
    /// are reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            batch_size: 128,
            base_lr: 1e-3,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_epochs: 0,
            seed: 0,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if self.base_lr.is_nan() || self.base_lr <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_top1: f64,
    pub eval_top1: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_top1,eval_top1,wall_seconds";

/// Linear warmup from 0 to `base_lr`, then half-cosine decay to 0 at
/// `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> f64 {
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let progress = ((step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64).min(1.0);
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW update; `t` is the 1-based step count used for bias
/// correction. Weight decay is decoupled from the adaptive step.
pub fn adamw_step(param: &mut [f64], grad: &[f64], state: &mut Moments, t: usize, lr: f64, cfg: &TrainConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
        *p -= lr * cfg.weight_decay * *p;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
}

/// Owns the parameters and optimizer state of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    pub params: ModelParams,
    moments: Params<Moments>,
    steps_taken: usize,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, train_cfg: TrainConfig) -> Result<Self> {
        train_cfg.validate()?;
        let params = ModelParams::init(&model_cfg, train_cfg.seed)?;
        let moments = params.as_ref().map(|_, t| Moments::zeros(t.numel()));
        Ok(Self {
            model_cfg,
            train_cfg,
            params,
            moments,
            steps_taken: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Forward, backward and one AdamW update on a batch.
    pub fn step(&mut self, images: &Tensor, labels: &[usize], lr: f64) -> Result<StepStats> {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &self.params);
        let logits = forward_on_tape(&mut tape, &bound, &self.model_cfg, images)?;
        let loss = tape.cross_entropy_logits(logits, labels)?;
        tape.backward(loss)?;

        let correct = tape
            .value(logits)
            .rows()
            .zip(labels)
            .filter(|(row, &label)| argmax(row) == label)
            .count();
        let loss = tape.value(loss).item();
        let grads = collect_grads(&tape, &bound);

        self.steps_taken += 1;
        let t = self.steps_taken;
        let cfg = self.train_cfg;
        let slots = self.params.as_mut().into_named();
        let grads = grads.into_named();
        let moments = self.moments.as_mut().into_named();
        for (((_, p), (_, g)), (_, m)) in slots.into_iter().zip(grads).zip(moments) {
            adamw_step(p.data_mut(), g.data(), m, t, lr, &cfg);
        }
        Ok(StepStats { loss, correct })
    }
}

/// Fraction of examples whose arg-max logit equals the label.
pub fn evaluate_top1(params: &ModelParams, cfg: &ModelConfig, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let order: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0;
    for chunk in order.chunks(256) {
        let (images, labels) = dataset.batch(chunk)?;
        let logits = forward(params, cfg, &images)?;
        correct += logits
            .rows()
            .zip(&labels)
            .filter(|(row, &label)| argmax(row) == label)
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub metrics: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn final_eval_top1(&self) -> f64 {
        self.metrics.last().map_or(0.0, |r| r.eval_top1)
    }
}

/// Runs the full schedule: seeded reshuffle each epoch, one metrics row per
/// epoch. Deterministic in `(configs, datasets)`.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ds in [train_set, eval_set] {
        if let Some(label) = ds.labels().find(|&l| l >= model_cfg.classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: model_cfg.classes,
            });
        }
    }
    let mut trainer = Trainer::new(*model_cfg, *train_cfg)?;
    let batches_per_epoch = train_set.len().div_ceil(train_cfg.batch_size);
    let total_steps = train_cfg.epochs * batches_per_epoch;
    let warmup_steps = train_cfg.warmup_epochs * batches_per_epoch;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    shuffle_rng.set_stream(2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(train_cfg.epochs);
    let started = Instant::now();

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0, 0.0);
        for chunk in order.chunks(train_cfg.batch_size) {
            lr = cosine_lr(trainer.steps_taken(), total_steps, train_cfg.base_lr, warmup_steps);
            let (images, labels) = train_set.batch(chunk)?;
            let stats = trainer.step(&images, &labels, lr)?;
            loss_sum += stats.loss * chunk.len() as f64;
            correct += stats.correct;
        }
        let eval_top1 = evaluate_top1(&trainer.params, model_cfg, eval_set)?;
        metrics.push(MetricsRow {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_top1: correct as f64 / train_set.len() as f64,
            eval_top1,
            wall_seconds: if train_cfg.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(TrainOutcome {
        params: trainer.params,
        metrics,
    })
}

/// Writes the metrics CSV. Numbers use Rust's locale-free shortest
/// round-trip formatting.
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.lr, r.train_loss, r.train_top1, r.eval_top1, r.wall_seconds
        )?;
    }
    Ok(())
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
