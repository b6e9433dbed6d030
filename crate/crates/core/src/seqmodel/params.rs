use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::FlowRng;
use crate::seqmodel::ModelConfig;
use crate::Matrix;

/// Indices of one transformer block's tensors inside [`Parameters`].
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockSlots {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where each tensor lives; fixed by the config.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub phn_embed: usize,
    pub in_w: usize,
    pub in_b: usize,
    pub t1_w: usize,
    pub t1_b: usize,
    pub t2_w: usize,
    pub t2_b: usize,
    pub blocks: Vec<BlockSlots>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Zero,
    One,
    /// Normal with std `1/sqrt(fan_in)`.
    FanIn,
    Embedding,
}

struct Spec {
    name: String,
    shape: (usize, usize),
    init: Init,
}

fn specs(cfg: &ModelConfig) -> (Vec<Spec>, Layout) {
    let mut out: Vec<Spec> = Vec::new();
    let mut push = |name: String, shape: (usize, usize), init: Init| {
        out.push(Spec { name, shape, init });
        out.len() - 1
    };
    let d = cfg.d_model;
    let phn_embed = push(
        "phoneme_embedding".into(),
        (cfg.n_phonemes, cfg.d_phn),
        Init::Embedding,
    );
    let in_w = push("input.weight".into(), (cfg.input_width(), d), Init::FanIn);
    let in_b = push("input.bias".into(), (1, d), Init::Zero);
    let t1_w = push("time.0.weight".into(), (d, d), Init::FanIn);
    let t1_b = push("time.0.bias".into(), (1, d), Init::Zero);
    let t2_w = push("time.1.weight".into(), (d, d), Init::FanIn);
    let t2_b = push("time.1.bias".into(), (1, d), Init::Zero);
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        blocks.push(BlockSlots {
            ln1_g: push(p("attn_norm.gain"), (1, d), Init::One),
            ln1_b: push(p("attn_norm.bias"), (1, d), Init::Zero),
            wq: push(p("attn.query.weight"), (d, d), Init::FanIn),
            bq: push(p("attn.query.bias"), (1, d), Init::Zero),
            wk: push(p("attn.key.weight"), (d, d), Init::FanIn),
            bk: push(p("attn.key.bias"), (1, d), Init::Zero),
            wv: push(p("attn.value.weight"), (d, d), Init::FanIn),
            bv: push(p("attn.value.bias"), (1, d), Init::Zero),
            wo: push(p("attn.output.weight"), (d, d), Init::FanIn),
            bo: push(p("attn.output.bias"), (1, d), Init::Zero),
            ln2_g: push(p("ffn_norm.gain"), (1, d), Init::One),
            ln2_b: push(p("ffn_norm.bias"), (1, d), Init::Zero),
            w1: push(p("ffn.up.weight"), (d, cfg.d_ffn), Init::FanIn),
            b1: push(p("ffn.up.bias"), (1, cfg.d_ffn), Init::Zero),
            w2: push(p("ffn.down.weight"), (cfg.d_ffn, d), Init::FanIn),
            b2: push(p("ffn.down.bias"), (1, d), Init::Zero),
        });
    }
    let lnf_g = push("final_norm.gain".into(), (1, d), Init::One);
    let lnf_b = push("final_norm.bias".into(), (1, d), Init::Zero);
    let out_w = push("output.weight".into(), (d, cfg.feature_dim), Init::FanIn);
    let out_b = push("output.bias".into(), (1, cfg.feature_dim), Init::Zero);
    let layout = Layout {
        phn_embed,
        in_w,
        in_b,
        t1_w,
        t1_b,
        t2_w,
        t2_b,
        blocks,
        lnf_g,
        lnf_b,
        out_w,
        out_b,
    };
    (out, layout)
}

pub(crate) fn layout(cfg: &ModelConfig) -> Layout {
    specs(cfg).1
}

/// Named parameter tensors in a fixed order. Biases and norm gains are
/// stored as `1×n` matrices.
///
/// Values are kept representable in `f32` (initialization and optimizer
/// updates round to single precision) so checkpoints round-trip exactly;
/// arithmetic runs in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl Parameters {
    pub fn init(cfg: &ModelConfig, rng: &mut FlowRng) -> Result<Self> {
        cfg.validate()?;
        let (specs, _) = specs(cfg);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in specs {
            let m = match spec.init {
                Init::Zero => Matrix::zeros(spec.shape),
                Init::One => Matrix::ones(spec.shape),
                Init::FanIn | Init::Embedding => {
                    let std = match spec.init {
                        Init::FanIn => 1.0 / (spec.shape.0 as f64).sqrt(),
                        _ => 0.5,
                    };
                    let normal = Normal::new(0.0, std).expect("finite std");
                    Matrix::from_shape_simple_fn(spec.shape, || round_f32(normal.sample(&mut *rng)))
                }
            };
            names.push(spec.name);
            tensors.push(m);
        }
        Ok(Self { names, tensors })
    }

    /// Same names and shapes, all zeros. Used for gradient accumulators.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Matrix::zeros(t.dim()))
                .collect(),
        }
    }

    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Matrix>) -> Self {
        Self { names, tensors }
    }

    /// Check that names and shapes agree with `cfg`.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let (specs, _) = specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} tensors for this config, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(self.iter()) {
            if spec.name != name {
                return Err(Error::Config(format!(
                    "tensor '{name}' found where '{}' was expected",
                    spec.name
                )));
            }
            if spec.shape != t.dim() {
                return Err(Error::Config(format!(
                    "tensor '{name}' is {}x{}, config wants {}x{}",
                    t.nrows(),
                    t.ncols(),
                    spec.shape.0,
                    spec.shape.1
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, idx: usize) -> &Matrix {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.tensors[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn accumulate(&mut self, other: &Parameters) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}
