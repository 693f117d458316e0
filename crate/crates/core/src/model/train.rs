//! Teacher-forced training with AdamW and best-validation selection.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta, OptimizerState};
use super::{Example, Model, ModelError, ModelParams, Result};
use crate::corpus::vocab::Vocabulary;
use crate::corpus::SliceInstance;
use crate::seed;
use crate::tensor::{AdamW, AdamWConfig, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub warmup: u64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    pub weight_decay: f64,
    /// Decay the rate linearly to zero over the run after warmup.
    pub linear_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            batch: 16,
            warmup: 1000,
            epochs: 10,
            seed: 0,
            clip_norm: Some(1.0),
            weight_decay: 0.0,
            linear_decay: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// `(step, batch loss)` for every update.
    pub steps: Vec<(u64, f64)>,
    pub best_epoch: Option<usize>,
    pub best_valid_loss: Option<f64>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,train_loss,valid_loss,lr\n");
        for e in &self.epochs {
            let v = e.valid_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.step, e.train_loss, v, e.lr);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Encodes instances for training. Any instance whose gold output cannot
/// be expressed is a data error.
pub fn prepare(instances: &[SliceInstance], vocab: &Vocabulary, max_src: usize) -> Result<Vec<Example>> {
    instances.iter().map(|i| Example::from_instance(i, vocab, max_src)).collect()
}

/// Mean loss and summed gradients of one example.
pub fn example_grads(model: &Model, ex: &Example) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let vars = model.leaves(&mut tape);
    let out = model.forward_taped(&mut tape, &vars, ex)?;
    let loss = tape.value(out.loss).data()[0];
    tape.backward(out.loss)?;
    let grads = vars.iter().map(|&v| tape.grad(v).expect("parameters require gradients")).collect();
    Ok((loss, grads))
}

/// Average loss and gradients over a batch.
pub fn batch_grads(model: &Model, batch: &[&Example]) -> Result<(f64, Vec<Vec<f64>>)> {
    let parts: Vec<(f64, Vec<Vec<f64>>)> =
        batch.par_iter().map(|ex| example_grads(model, ex)).collect::<Result<_>>()?;
    let n = parts.len().max(1) as f64;
    let mut loss = 0.0;
    let mut total: Vec<Vec<f64>> = model.params.tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
    for (l, g) in parts {
        loss += l;
        for (acc, g) in total.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    total.iter_mut().flatten().for_each(|g| *g /= n);
    Ok((loss / n, total))
}

/// Mean per-example loss without gradients.
pub fn eval_loss(model: &Model, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(ModelError::Data("no examples to evaluate".into()));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let mut tape = Tape::new();
            let vars: Vec<_> = model.params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
            let out = model.forward_taped(&mut tape, &vars, ex)?;
            Ok(tape.value(out.loss).data()[0])
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn clip(grads: &mut [Vec<f64>], max_norm: f64) {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    opt: AdamW,
    epoch: usize,
    best: Option<(f64, usize, ModelParams)>,
    pub report: TrainReport,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Self {
        let mut oc = AdamWConfig::new(config.lr, config.warmup);
        oc.weight_decay = config.weight_decay;
        Self { model, config, opt: AdamW::new(oc), epoch: 0, best: None, report: TrainReport::default() }
    }

    /// Continues from a checkpoint: step count, epoch and moments carry over.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Self {
        let mut t = Self::new(ckpt.model, config);
        t.epoch = ckpt.meta.epoch;
        if let Some(opt) = ckpt.optimizer {
            t.opt.restore(ckpt.meta.step, opt.m, opt.v);
        }
        if let Some(v) = ckpt.meta.best_valid_loss {
            t.best = Some((v, ckpt.meta.epoch, t.model.params.clone()));
        }
        t
    }

    pub fn step_count(&self) -> u64 {
        self.opt.steps_taken()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One optimizer update on a batch; returns the batch loss.
    pub fn step(&mut self, batch: &[&Example]) -> Result<f64> {
        let (loss, mut grads) = batch_grads(&self.model, batch)?;
        if let Some(c) = self.config.clip_norm {
            clip(&mut grads, c);
        }
        self.opt.step(&mut self.model.params.tensors, &grads)?;
        self.report.steps.push((self.opt.steps_taken(), loss));
        Ok(loss)
    }

    /// One pass over `train` in a seed-determined order.
    pub fn epoch_pass(&mut self, train: &[Example], valid: &[Example]) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(ModelError::Data("empty training split".into()));
        }
        if self.config.linear_decay && self.opt.config.schedule.total_steps.is_none() {
            let per_epoch = train.len().div_ceil(self.config.batch.max(1)) as u64;
            self.opt.config.schedule.total_steps = Some(per_epoch * self.config.epochs as u64);
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::substream(self.config.seed, seed::SHUFFLE, self.epoch as u64));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch.max(1)) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            total += self.step(&batch)?;
            batches += 1;
        }
        self.epoch += 1;
        let valid_loss = if valid.is_empty() { None } else { Some(eval_loss(&self.model, valid)?) };
        if let Some(v) = valid_loss {
            if self.best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                self.best = Some((v, self.epoch, self.model.params.clone()));
            }
        }
        let log = EpochLog {
            epoch: self.epoch,
            step: self.opt.steps_taken(),
            train_loss: total / batches as f64,
            valid_loss,
            lr: self.opt.config.schedule.lr_at(self.opt.steps_taken()),
        };
        log::info!(
            "epoch {} step {} train {:.4} valid {:?}",
            log.epoch,
            log.step,
            log.train_loss,
            log.valid_loss
        );
        self.report.epochs.push(log.clone());
        Ok(log)
    }

    /// Runs the configured number of epochs, then restores the parameters
    /// with the lowest validation loss.
    pub fn fit(
        &mut self,
        train: &[Example],
        valid: &[Example],
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<&TrainReport> {
        while self.epoch < self.config.epochs {
            let log = self.epoch_pass(train, valid)?;
            on_epoch(&log);
        }
        if let Some((v, e, params)) = &self.best {
            self.model.params = params.clone();
            self.report.best_epoch = Some(*e);
            self.report.best_valid_loss = Some(*v);
        }
        Ok(&self.report)
    }

    pub fn checkpoint(&self, vocab: &Vocabulary) -> Checkpoint {
        let (m, v) = self.opt.moments();
        let optimizer = (!m.is_empty()).then(|| OptimizerState { m: m.to_vec(), v: v.to_vec() });
        Checkpoint {
            model: self.model.clone(),
            vocab: vocab.clone(),
            meta: CheckpointMeta {
                seed: self.config.seed,
                step: self.opt.steps_taken(),
                epoch: self.epoch,
                best_valid_loss: self.best.as_ref().map(|b| b.0),
                no_copy: !self.model.config.copy,
            },
            optimizer,
        }
    }
}
