use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm_core::{cfm_loss, cfm_loss_grad, FlowSample};
use crate::infill::TemporalMask;
use crate::seqmodel::model::{FieldInput, Model, Tape};
use crate::seqmodel::params::round_f32;
use crate::seqmodel::{ConditionBundle, Parameters};

/// Frames per gradient work unit. The split depends only on the batch
/// shape, so the reduction order (and the result bits) do not depend on
/// the thread count.
const CHUNK_FRAMES: usize = 512;

/// Linear warmup from 0 to `peak`, then linear decay to 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        if self.total_steps <= self.warmup_steps {
            return self.peak;
        }
        let remaining = self.total_steps.saturating_sub(step) as f64;
        self.peak * remaining / (self.total_steps - self.warmup_steps) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Only frames inside the infilling mask are scored.
    #[default]
    Masked,
    AllFrames,
}

/// Adam with bias correction. Parameters are rounded to `f32` after every
/// update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: Parameters,
    v: Parameters,
    updates: u64,
}

impl Adam {
    pub fn new(params: &Parameters) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            m: params.zeros_like(),
            v: params.zeros_like(),
            updates: 0,
        }
    }

    pub fn with_clip_norm(mut self, clip: Option<f64>) -> Self {
        self.clip_norm = clip;
        self
    }

    /// Number of updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn apply(&mut self, params: &mut Parameters, grads: &Parameters, lr: f64) {
        self.updates += 1;
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grads.global_norm();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - self.beta1.powi(self.updates as i32);
        let bc2 = 1.0 - self.beta2.powi(self.updates as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let tensors = params.tensors_mut();
        for (i, p) in tensors.iter_mut().enumerate() {
            let g = grads.tensor(i);
            let m = self.m.tensor_mut(i);
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g * scale);
            let v = self.v.tensor_mut(i);
            v.zip_mut_with(g, |v, &g| {
                *v = b2 * *v + (1.0 - b2) * (g * scale) * (g * scale)
            });
            let m = self.m.tensor(i);
            let v = self.v.tensor(i);
            ndarray::Zip::from(p).and(m).and(v).for_each(|p, &m, &v| {
                let step = (m / bc1) / ((v / bc2).sqrt() + eps);
                *p = round_f32(*p - lr * step);
            });
        }
    }
}

/// One element of a training batch.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub sample: FlowSample,
    pub cond: ConditionBundle,
}

impl TrainItem {
    fn loss_mask(&self, scope: LossScope) -> Option<&TemporalMask> {
        match scope {
            LossScope::Masked => Some(&self.cond.mask),
            LossScope::AllFrames => None,
        }
    }
}

/// Mean CFM loss of `batch` and its parameter gradient.
pub fn batch_loss_and_grad(
    model: &Model,
    batch: &[TrainItem],
    scope: LossScope,
) -> Result<(f64, Parameters)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty training batch".into()));
    }
    let frames = batch[0].sample.x_t.ncols();
    if batch.iter().any(|b| b.sample.x_t.ncols() != frames) {
        return Err(Error::Shape("training batch mixes sequence lengths".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let chunk = (CHUNK_FRAMES / frames.max(1)).max(1);
    let parts: Vec<Result<(Vec<f64>, Parameters)>> = batch
        .par_chunks(chunk)
        .map(|chunk| {
            let inputs: Vec<FieldInput<'_>> = chunk
                .iter()
                .map(|it| FieldInput {
                    x_t: &it.sample.x_t,
                    t: it.sample.t,
                    cond: &it.cond,
                })
                .collect();
            let mut tape = Tape::default();
            let outs = model.forward(&inputs, Some(&mut tape))?;
            let mut losses = Vec::with_capacity(chunk.len());
            let mut douts = Vec::with_capacity(chunk.len());
            for (it, v) in chunk.iter().zip(&outs) {
                let mask = it.loss_mask(scope);
                losses.push(cfm_loss(v, &it.sample.u_target, mask)?);
                douts.push(cfm_loss_grad(v, &it.sample.u_target, mask)? * weight);
            }
            let grads = model.backward(&tape, &douts)?;
            Ok((losses, grads))
        })
        .collect();
    let mut total = model.params().zeros_like();
    let mut loss = 0.0;
    for part in parts {
        let (losses, grads) = part?;
        loss += losses.iter().sum::<f64>();
        total.accumulate(&grads);
    }
    Ok((loss * weight, total))
}

/// One optimizer update. Returns the pre-update batch loss.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    schedule: &LrSchedule,
    batch: &[TrainItem],
    scope: LossScope,
) -> Result<f64> {
    let (loss, grads) = batch_loss_and_grad(model, batch, scope)?;
    let step = opt.updates() + 1;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {loss} at step {step}"
        )));
    }
    let lr = schedule.at(step);
    opt.apply(model.params_mut(), &grads, lr);
    Ok(loss)
}
