//! Batch assembly and the training loop shared by the CLI and tests.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{synth_condition_oracle, SynthKind};
use crate::fm_core::{draw_flow_sample, PathConfig};
use crate::infill::{apply_condition_dropout, build_example, sample_mask, MaskRatio};
use crate::rng::FlowRng;
use crate::seqmodel::{train_step, Adam, LossScope, LrSchedule, Model, TrainItem};
use crate::Matrix;

/// One fully loaded sequence.
#[derive(Debug, Clone)]
pub struct CorpusExample {
    pub features: Matrix,
    pub phonemes: Vec<u32>,
    pub nv: Matrix,
    pub emo: Matrix,
}

impl CorpusExample {
    pub fn frames(&self) -> usize {
        self.features.ncols()
    }

    fn crop(&self, start: usize, len: usize) -> Self {
        let cols = ndarray::s![.., start..start + len];
        Self {
            features: self.features.slice(cols).to_owned(),
            phonemes: self.phonemes[start..start + len].to_vec(),
            nv: self.nv.slice(cols).to_owned(),
            emo: self.emo.slice(cols).to_owned(),
        }
    }
}

/// A named pool of examples, e.g. one manifest.
#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub examples: Vec<CorpusExample>,
}

/// Generate an in-memory oracle corpus.
pub fn oracle_source(
    name: &str,
    kind: SynthKind,
    count: usize,
    frames: usize,
    feature_dim: usize,
    n_phonemes: usize,
    rng: &mut FlowRng,
) -> Result<Source> {
    let examples = (0..count)
        .map(|_| {
            let ex = synth_condition_oracle(kind, frames, feature_dim, n_phonemes, rng)?;
            Ok(CorpusExample {
                features: ex.features,
                phonemes: ex.phonemes,
                nv: ex.nv,
                emo: ex.emo,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Source {
        name: name.to_string(),
        examples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub path: PathConfig,
    pub steps: u64,
    /// Frames per batch; the batch holds `batch_frames / crop_frames` crops.
    pub batch_frames: usize,
    pub crop_frames: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub mask_ratio: MaskRatio,
    pub p_drop: f64,
    pub loss_scope: LossScope,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            path: PathConfig::default(),
            steps: 3000,
            batch_frames: 1024,
            crop_frames: 64,
            peak_lr: 1e-3,
            warmup_steps: 200,
            mask_ratio: MaskRatio::default(),
            p_drop: 0.2,
            loss_scope: LossScope::Masked,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak: self.peak_lr,
            warmup_steps: self.warmup_steps,
            total_steps: self.steps,
        }
    }

    pub fn batch_size(&self) -> usize {
        (self.batch_frames / self.crop_frames.max(1)).max(1)
    }
}

/// Picks a source per example according to mixing ratios.
#[derive(Debug, Clone)]
pub struct Mixer {
    dist: WeightedIndex<f64>,
}

impl Mixer {
    pub fn new(ratios: &[f64]) -> Result<Self> {
        let sum: f64 = ratios.iter().sum();
        if ratios.is_empty() || (sum - 1.0).abs() > 1e-6 || ratios.iter().any(|r| *r < 0.0) {
            return Err(Error::Config(format!(
                "mixing ratios {ratios:?} must be nonnegative and sum to 1"
            )));
        }
        let dist = WeightedIndex::new(ratios).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { dist })
    }

    pub fn pick(&self, rng: &mut FlowRng) -> usize {
        self.dist.sample(rng)
    }
}

/// Draw one batch: source by mixing ratio, example uniformly, a random
/// crop, a span mask, condition dropout, and a point on the flow path.
pub fn sample_batch(
    sources: &[Source],
    mixer: &Mixer,
    cfg: &TrainConfig,
    rng: &mut FlowRng,
) -> Result<Vec<TrainItem>> {
    (0..cfg.batch_size())
        .map(|_| {
            let source = &sources[mixer.pick(rng)];
            if source.examples.is_empty() {
                return Err(Error::Config(format!("source '{}' is empty", source.name)));
            }
            let ex = &source.examples[rng.random_range(0..source.examples.len())];
            let len = cfg.crop_frames;
            if ex.frames() < len {
                return Err(Error::Config(format!(
                    "example in '{}' has {} frames, shorter than crop_frames {len}",
                    source.name,
                    ex.frames()
                )));
            }
            let start = rng.random_range(0..=ex.frames() - len);
            let crop = ex.crop(start, len);
            let mask = sample_mask(len, rng, cfg.mask_ratio)?;
            let example = build_example(&crop.features, crop.phonemes, crop.nv, crop.emo, mask)?;
            let (cond, _) = apply_condition_dropout(example.cond, cfg.p_drop, rng);
            let sample = draw_flow_sample(&crop.features, &cfg.path, rng);
            Ok(TrainItem { sample, cond })
        })
        .collect()
}

/// Progress record emitted after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Run `cfg.steps` updates. `on_step` sees every step and may stop the
/// run by returning an error.
pub fn train<F>(
    model: &mut Model,
    sources: &[Source],
    ratios: &[f64],
    cfg: &TrainConfig,
    rng: &mut FlowRng,
    mut on_step: F,
) -> Result<()>
where
    F: FnMut(&Model, StepLog) -> Result<()>,
{
    if sources.len() != ratios.len() {
        return Err(Error::Config(format!(
            "{} sources but {} mixing ratios",
            sources.len(),
            ratios.len()
        )));
    }
    let mixer = Mixer::new(ratios)?;
    let schedule = cfg.schedule();
    let mut opt = Adam::new(model.params()).with_clip_norm(cfg.clip_norm);
    for step in 1..=cfg.steps {
        let batch = sample_batch(sources, &mixer, cfg, rng)?;
        let loss = train_step(model, &mut opt, &schedule, &batch, cfg.loss_scope)?;
        on_step(
            model,
            StepLog {
                step,
                loss,
                lr: schedule.at(step),
            },
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn mixer_validates_and_balances() {
        assert!(Mixer::new(&[0.5, 0.4]).is_err());
        assert!(Mixer::new(&[]).is_err());
        let m = Mixer::new(&[0.5, 0.5]).unwrap();
        let mut rng = seeded(1);
        let n = 10_000;
        let first = (0..n).filter(|_| m.pick(&mut rng) == 0).count();
        let frac = first as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.03, "{frac}");
    }

    #[test]
    fn batches_are_rectangular() {
        let mut rng = seeded(2);
        let src = oracle_source("s", SynthKind::Ramp, 4, 40, 8, 16, &mut rng).unwrap();
        let cfg = TrainConfig {
            crop_frames: 16,
            batch_frames: 64,
            ..Default::default()
        };
        let mixer = Mixer::new(&[1.0]).unwrap();
        let batch = sample_batch(&[src], &mixer, &cfg, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        for it in &batch {
            assert_eq!(it.sample.x_t.dim(), (8, 16));
            it.cond.validate().unwrap();
        }
    }
}
