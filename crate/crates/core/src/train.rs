//! Imitation pre-training: AdamW with decoupled weight decay, a linear-warmup
//! cosine schedule, global-norm clipping and a deterministic mini-batch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tisa_autodiff::{Tape, Tensor};

use crate::action_space::ActionId;
use crate::error::{Error, Result};
use crate::kinematics::EgoState;
use crate::planner::{Bound, Planner};
use crate::world::rng::derive_seed;
use crate::world::TokenBundle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub aux_weight: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 6e-4,
            min_lr: 1e-6,
            weight_decay: 1e-2,
            warmup_epochs: 5.0,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            aux_weight: 0.1,
            grad_clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr <= self.peak_lr && self.min_lr >= 0.0) {
            return Err(Error::Config("train: need 0 <= min_lr <= peak_lr".into()));
        }
        if !(self.warmup_epochs >= 0.0 && self.warmup_epochs <= self.epochs as f64) {
            return Err(Error::Config("train: warmup_epochs must lie in [0, epochs]".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("train: epochs and batch_size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.aux_weight >= 0.0 && self.grad_clip_norm >= 0.0) {
            return Err(Error::Config("train: weight_decay, aux_weight and grad_clip_norm must be non-negative".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.peak_lr,
            min: self.min_lr,
            warmup: self.warmup_epochs,
            total: self.epochs as f64,
        }
    }
}

/// Linear warmup from `min` to `peak`, then cosine decay back to `min` at
/// `total`, both in (fractional) epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub min: f64,
    pub warmup: f64,
    pub total: f64,
}

impl LrSchedule {
    pub fn at(&self, epoch: f64) -> f64 {
        if epoch < self.warmup {
            return self.min + (self.peak - self.min) * (epoch.max(0.0) / self.warmup);
        }
        let span = self.total - self.warmup;
        if span <= 0.0 {
            return self.peak;
        }
        let t = ((epoch - self.warmup) / span).min(1.0);
        self.min + 0.5 * (self.peak - self.min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// AdamW: bias-corrected Adam moments plus decay applied directly to the
/// parameters, `p ← p·(1 − lr·wd) − lr·m̂/(√v̂ + ε)`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, planner: &mut Planner, grads: &[Tensor], lr: f64) -> Result<()> {
        let params = &mut planner.params;
        if grads.len() != params.len() {
            return Err(Error::domain("optimizer_step", "gradient count does not match parameters"));
        }
        if self.m.is_empty() {
            self.m = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for (i, g) in grads.iter().enumerate() {
            let p = params.tensor_mut(i);
            if g.shape() != p.shape() {
                return Err(Error::domain("optimizer_step", format!("gradient {i} has the wrong shape")));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                *pv = *pv * decay - lr * update;
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Scales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    norm
}

/// Gradients of every parameter for a loss built on `tape`.
pub fn collect_grads(planner: &Planner, tape: &Tape, bound: &Bound, loss: tisa_autodiff::Var) -> Result<Vec<Tensor>> {
    let mut grads = tape.backward(loss)?;
    Ok(bound
        .vars()
        .iter()
        .zip(planner.params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect())
}

/// One imitation example: tokens of the scene, relabeled states before each
/// action, and the derived labels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub tokens: TokenBundle,
    pub states: Vec<EgoState>,
    pub labels: Vec<ActionId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub aux: f64,
    pub acc: f64,
}

struct SampleOutcome {
    grads: Vec<Tensor>,
    ce: f64,
    aux: f64,
    correct: usize,
    steps: usize,
}

fn sample_grads(planner: &Planner, s: &Sample, aux_weight: f64) -> Result<SampleOutcome> {
    let tape = Tape::new();
    let b = planner.bind(&tape);
    let (loss, ce, aux, logits) = planner.imitation_loss(&tape, &b, &s.tokens, &s.states, &s.labels, aux_weight)?;
    let lv = tape.item(loss)?;
    if !lv.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {lv} on sample {}", s.id)));
    }
    let logits = tape.value(logits);
    let correct = s
        .labels
        .iter()
        .enumerate()
        .filter(|(r, l)| {
            let row = logits.row(*r);
            let arg = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            arg == l.index()
        })
        .count();
    Ok(SampleOutcome {
        grads: collect_grads(planner, &tape, &b, loss)?,
        ce,
        aux,
        correct,
        steps: s.labels.len(),
    })
}

/// Mean imitation loss parts and accuracy over `samples` without updating.
pub fn evaluate(planner: &Planner, samples: &[Sample], aux_weight: f64) -> Result<(f64, f64, f64)> {
    let outs: Vec<(f64, f64, usize, usize)> = samples
        .par_iter()
        .map(|s| {
            let tape = Tape::new();
            let b = planner.bind_frozen(&tape);
            let (_, ce, aux, logits) = planner.imitation_loss(&tape, &b, &s.tokens, &s.states, &s.labels, aux_weight)?;
            let logits = tape.value(logits);
            let correct = s
                .labels
                .iter()
                .enumerate()
                .filter(|(r, l)| {
                    let row = logits.row(*r);
                    (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b }) == l.index()
                })
                .count();
            Ok((ce, aux, correct, s.labels.len()))
        })
        .collect::<Result<_>>()?;
    let n = outs.len().max(1) as f64;
    let steps: usize = outs.iter().map(|o| o.3).sum();
    Ok((
        outs.iter().map(|o| o.0).sum::<f64>() / n,
        outs.iter().map(|o| o.1).sum::<f64>() / n,
        outs.iter().map(|o| o.2).sum::<usize>() as f64 / steps.max(1) as f64,
    ))
}

/// Mini-batch imitation training. Batch gradients are per-sample gradients
/// summed in sample order, so results do not depend on the thread count.
/// `on_epoch` sees each curve row as soon as its epoch finishes.
pub fn fit(
    planner: &mut Planner,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&CurveRow, &Planner) -> Result<()>,
) -> Result<Vec<CurveRow>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::domain("fit", "no training samples"));
    }
    let schedule = cfg.schedule();
    let mut opt = AdamW::new(cfg.weight_decay);
    let batches = samples.len().div_ceil(cfg.batch_size);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let (mut ce_sum, mut aux_sum, mut correct, mut steps) = (0.0, 0.0, 0usize, 0usize);
        let mut lr = schedule.at(epoch as f64);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let outs: Vec<SampleOutcome> = chunk
                .par_iter()
                .map(|&i| sample_grads(planner, &samples[i], cfg.aux_weight))
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!(
                        "{m} (epoch {epoch}, batch {bi}: {})",
                        chunk.iter().map(|&i| samples[i].id.as_str()).collect::<Vec<_>>().join(" ")
                    )),
                    other => other,
                })?;
            let mut grads: Vec<Tensor> = Vec::new();
            for o in outs {
                ce_sum += o.ce;
                aux_sum += o.aux;
                correct += o.correct;
                steps += o.steps;
                if grads.is_empty() {
                    grads = o.grads;
                } else {
                    for (g, h) in grads.iter_mut().zip(&o.grads) {
                        g.add_assign(h)?;
                    }
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            for g in grads.iter_mut() {
                g.scale_assign(inv);
            }
            clip_global_norm(&mut grads, cfg.grad_clip_norm);
            lr = schedule.at(epoch as f64 + (bi + 1) as f64 / batches as f64);
            opt.step(planner, &grads, lr)?;
            if !planner.params.is_finite() {
                return Err(Error::Numerical(format!("non-finite parameters after epoch {epoch} batch {bi}")));
            }
        }
        let row = CurveRow {
            epoch: epoch + 1,
            lr,
            ce: ce_sum / samples.len() as f64,
            aux: aux_sum / samples.len() as f64,
            acc: correct as f64 / steps.max(1) as f64,
        };
        on_epoch(&row, planner)?;
        curve.push(row);
    }
    Ok(curve)
}
