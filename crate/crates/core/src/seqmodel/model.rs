//! Forward and hand-written backward pass of the vector-field network.
//!
//! ```text
//! [x_t; context; E(phonemes); nv; emo] ─ W_in ─(+ time emb, + positions)─┐
//!   ┌──────────────────────────────────────────────────────────────────────┘
//!   └─ L × { h += Attn(LN(h)); h += FFN(LN(h)) } ─ LN ─ W_out ─> v  (F per frame)
//! ```
//!
//! A batch is `B` sequences of equal length `T`, stacked into `B·T` rows so
//! every frame-wise op is one matrix product. Attention runs per sequence
//! and head.

use ndarray::{s, Array1, Axis};

use crate::error::{Error, Result};
use crate::seqmodel::params::{layout, BlockSlots, Layout};
use crate::seqmodel::{ConditionBundle, ModelConfig, Parameters, EMO_DIM, NV_DIM};
use crate::Matrix;

const LN_EPS: f64 = 1e-5;
const TIME_SCALE: f64 = 1000.0;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// One sequence to evaluate: the state `x_t` (`F×T`), time, and conditions.
#[derive(Debug, Clone, Copy)]
pub struct FieldInput<'a> {
    pub x_t: &'a Matrix,
    pub t: f64,
    pub cond: &'a ConditionBundle,
}

/// The parametric field `v_t(x; θ)`.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Parameters,
    layout: Layout,
}

/// Activations recorded by a forward pass for the matching backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    cache: Option<Cache>,
}

impl Tape {
    pub fn is_recorded(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear(&mut self) {
        self.cache = None;
    }
}

#[derive(Debug)]
struct NormCache {
    xhat: Matrix,
    inv_std: Array1<f64>,
}

#[derive(Debug)]
struct BlockCache {
    ln1: NormCache,
    a: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    o: Matrix,
    ln2: NormCache,
    c: Matrix,
    z: Matrix,
    g: Matrix,
}

#[derive(Debug)]
struct Cache {
    batch: usize,
    frames: usize,
    tokens: Vec<Option<u32>>,
    x_in: Matrix,
    time_feat: Matrix,
    time_pre: Matrix,
    time_hidden: Matrix,
    blocks: Vec<BlockCache>,
    lnf: NormCache,
    hf: Matrix,
}

impl Model {
    pub fn new(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        let layout = layout(&config);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn into_params(self) -> Parameters {
        self.params
    }

    fn p(&self, idx: usize) -> &Matrix {
        self.params.tensor(idx)
    }

    /// Frame-wise phoneme embedding, `d_phn × T`.
    pub fn embed_phonemes(&self, tokens: &[u32]) -> Result<Matrix> {
        let table = self.p(self.layout.phn_embed);
        let mut out = Matrix::zeros((self.config.d_phn, tokens.len()));
        for (j, &tok) in tokens.iter().enumerate() {
            let row = self.lookup(tok)?;
            out.column_mut(j).assign(&table.row(row));
        }
        Ok(out)
    }

    fn lookup(&self, tok: u32) -> Result<usize> {
        let idx = tok as usize;
        if idx >= self.config.n_phonemes {
            return Err(Error::Lookup(format!(
                "phoneme id {tok} outside vocabulary of {}",
                self.config.n_phonemes
            )));
        }
        Ok(idx)
    }

    /// Zero the output projection so the field is identically zero.
    pub fn zero_output_projection(&mut self) {
        let (w, b) = (self.layout.out_w, self.layout.out_b);
        self.params.tensor_mut(w).fill(0.0);
        self.params.tensor_mut(b).fill(0.0);
    }

    fn check_inputs(&self, inputs: &[FieldInput<'_>]) -> Result<usize> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Domain("empty batch".into()))?;
        let frames = first.x_t.ncols();
        let f = self.config.feature_dim;
        for (i, inp) in inputs.iter().enumerate() {
            if inp.x_t.dim() != (f, frames) {
                return Err(Error::Shape(format!(
                    "batch item {i}: state is {}x{}, expected {f}x{frames}",
                    inp.x_t.nrows(),
                    inp.x_t.ncols()
                )));
            }
            if inp.cond.context.dim() != (f, frames) {
                return Err(Error::Shape(format!(
                    "batch item {i}: context is {}x{}, expected {f}x{frames}",
                    inp.cond.context.nrows(),
                    inp.cond.context.ncols()
                )));
            }
            inp.cond.validate()?;
            if !inp.t.is_finite() {
                return Err(Error::Numeric(format!("batch item {i}: non-finite t")));
            }
            let streams = [
                ("state", inp.x_t),
                ("context", &inp.cond.context),
                ("nv", &inp.cond.nv),
                ("emo", &inp.cond.emo),
            ];
            for (name, m) in streams {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "batch item {i}: non-finite value in {name}"
                    )));
                }
            }
        }
        Ok(frames)
    }

    /// Evaluate the field for every sequence in `inputs`. When `tape` is
    /// given, activations are recorded for [`Model::backward`].
    pub fn forward(
        &self,
        inputs: &[FieldInput<'_>],
        tape: Option<&mut Tape>,
    ) -> Result<Vec<Matrix>> {
        let frames = self.check_inputs(inputs)?;
        let cfg = &self.config;
        let lay = &self.layout;
        let (f, d) = (cfg.feature_dim, cfg.d_model);
        let batch = inputs.len();
        let n = batch * frames;

        let phn_off = 2 * f;
        let nv_off = phn_off + cfg.d_phn;
        let emo_off = nv_off + NV_DIM;
        let table = self.p(lay.phn_embed);
        let mut x_in = Matrix::zeros((n, cfg.input_width()));
        let mut tokens = Vec::with_capacity(n);
        for (bi, inp) in inputs.iter().enumerate() {
            let c = inp.cond;
            for tau in 0..frames {
                let r = bi * frames + tau;
                let mut row = x_in.row_mut(r);
                row.slice_mut(s![0..f]).assign(&inp.x_t.column(tau));
                row.slice_mut(s![f..2 * f]).assign(&c.context.column(tau));
                let tok = match &c.phonemes {
                    Some(p) => {
                        let idx = self.lookup(p[tau])?;
                        row.slice_mut(s![phn_off..nv_off]).assign(&table.row(idx));
                        Some(p[tau])
                    }
                    None => None,
                };
                tokens.push(tok);
                row.slice_mut(s![nv_off..emo_off]).assign(&c.nv.column(tau));
                row.slice_mut(s![emo_off..emo_off + EMO_DIM])
                    .assign(&c.emo.column(tau));
            }
        }

        let mut time_feat = Matrix::zeros((batch, d));
        for (bi, inp) in inputs.iter().enumerate() {
            time_feat
                .row_mut(bi)
                .assign(&sinusoid(inp.t * TIME_SCALE, d));
        }
        let time_pre = affine(&time_feat, self.p(lay.t1_w), self.p(lay.t1_b));
        let time_hidden = time_pre.mapv(silu);
        let temb = affine(&time_hidden, self.p(lay.t2_w), self.p(lay.t2_b));

        let mut h = affine(&x_in, self.p(lay.in_w), self.p(lay.in_b));
        let pos = cfg.positional_encoding.then(|| positions(frames, d));
        for bi in 0..batch {
            let mut rows = h.slice_mut(s![bi * frames..(bi + 1) * frames, ..]);
            rows += &temb.row(bi);
            if let Some(pos) = &pos {
                rows += pos;
            }
        }

        let record = tape.is_some();
        let mut block_caches = Vec::new();
        for slots in &lay.blocks {
            let (next, cache) = self.block_forward(slots, h, batch, frames)?;
            h = next;
            if record {
                block_caches.push(cache);
            }
        }

        let (hf, lnf) = layer_norm(&h, self.p(lay.lnf_g), self.p(lay.lnf_b));
        let out = affine(&hf, self.p(lay.out_w), self.p(lay.out_b));
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "network produced a non-finite output".into(),
            ));
        }
        let result = (0..batch)
            .map(|bi| {
                out.slice(s![bi * frames..(bi + 1) * frames, ..])
                    .t()
                    .to_owned()
            })
            .collect();

        if let Some(tape) = tape {
            tape.cache = Some(Cache {
                batch,
                frames,
                tokens,
                x_in,
                time_feat,
                time_pre,
                time_hidden,
                blocks: block_caches,
                lnf,
                hf,
            });
        }
        Ok(result)
    }

    fn block_forward(
        &self,
        sl: &BlockSlots,
        h: Matrix,
        batch: usize,
        frames: usize,
    ) -> Result<(Matrix, BlockCache)> {
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let (a, ln1) = layer_norm(&h, self.p(sl.ln1_g), self.p(sl.ln1_b));
        let q = affine(&a, self.p(sl.wq), self.p(sl.bq));
        let k = affine(&a, self.p(sl.wk), self.p(sl.bk));
        let v = affine(&a, self.p(sl.wv), self.p(sl.bv));
        let mut o = Matrix::zeros(q.dim());
        let mut probs = Vec::with_capacity(batch * cfg.n_heads);
        for bi in 0..batch {
            let rows = bi * frames..(bi + 1) * frames;
            for hd in 0..cfg.n_heads {
                let cols = hd * dh..(hd + 1) * dh;
                let qs = q.slice(s![rows.clone(), cols.clone()]);
                let ks = k.slice(s![rows.clone(), cols.clone()]);
                let vs = v.slice(s![rows.clone(), cols.clone()]);
                let mut p = qs.dot(&ks.t());
                p.mapv_inplace(|x| x * scale);
                softmax_rows(&mut p);
                o.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vs));
                probs.push(p);
            }
        }
        let attn = affine(&o, self.p(sl.wo), self.p(sl.bo));
        let h1 = h + &attn;

        let (c, ln2) = layer_norm(&h1, self.p(sl.ln2_g), self.p(sl.ln2_b));
        let z = affine(&c, self.p(sl.w1), self.p(sl.b1));
        let g = z.mapv(gelu);
        let ffn = affine(&g, self.p(sl.w2), self.p(sl.b2));
        let h2 = h1 + &ffn;
        Ok((
            h2,
            BlockCache {
                ln1,
                a,
                q,
                k,
                v,
                probs,
                o,
                ln2,
                c,
                z,
                g,
            },
        ))
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient for each output (`F×T` per sequence).
    pub fn backward(&self, tape: &Tape, output_grads: &[Matrix]) -> Result<Parameters> {
        let cache = tape
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a recorded forward".into()))?;
        let cfg = &self.config;
        let lay = &self.layout;
        let (f, d) = (cfg.feature_dim, cfg.d_model);
        let (batch, frames) = (cache.batch, cache.frames);
        if output_grads.len() != batch {
            return Err(Error::Shape(format!(
                "{} output gradients for a batch of {batch}",
                output_grads.len()
            )));
        }
        let mut dout = Matrix::zeros((batch * frames, f));
        for (bi, g) in output_grads.iter().enumerate() {
            if g.dim() != (f, frames) {
                return Err(Error::Shape(format!(
                    "output gradient {bi} is {}x{}, expected {f}x{frames}",
                    g.nrows(),
                    g.ncols()
                )));
            }
            dout.slice_mut(s![bi * frames..(bi + 1) * frames, ..])
                .assign(&g.t());
        }

        let mut grads = self.params.zeros_like();
        let dhf = affine_backward(
            &mut grads,
            lay.out_w,
            lay.out_b,
            &cache.hf,
            self.p(lay.out_w),
            &dout,
        );
        let mut dh = norm_backward(
            &mut grads,
            lay.lnf_g,
            lay.lnf_b,
            &cache.lnf,
            self.p(lay.lnf_g),
            &dhf,
        );

        for (sl, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            dh = self.block_backward(&mut grads, sl, bc, dh, batch, frames);
        }

        // dh is now the gradient at the input projection output.
        let mut dtemb = Matrix::zeros((batch, d));
        for bi in 0..batch {
            dtemb.row_mut(bi).assign(
                &dh.slice(s![bi * frames..(bi + 1) * frames, ..])
                    .sum_axis(Axis(0)),
            );
        }
        let dx_in = affine_backward(
            &mut grads,
            lay.in_w,
            lay.in_b,
            &cache.x_in,
            self.p(lay.in_w),
            &dh,
        );
        let phn_off = 2 * f;
        {
            let de = grads.tensor_mut(lay.phn_embed);
            for (r, tok) in cache.tokens.iter().enumerate() {
                if let Some(tok) = tok {
                    let mut row = de.row_mut(*tok as usize);
                    row += &dx_in.slice(s![r, phn_off..phn_off + cfg.d_phn]);
                }
            }
        }

        let dhidden = affine_backward(
            &mut grads,
            lay.t2_w,
            lay.t2_b,
            &cache.time_hidden,
            self.p(lay.t2_w),
            &dtemb,
        );
        let mut dpre = dhidden;
        dpre.zip_mut_with(&cache.time_pre, |g, &x| *g *= silu_grad(x));
        affine_backward(
            &mut grads,
            lay.t1_w,
            lay.t1_b,
            &cache.time_feat,
            self.p(lay.t1_w),
            &dpre,
        );
        Ok(grads)
    }

    fn block_backward(
        &self,
        grads: &mut Parameters,
        sl: &BlockSlots,
        bc: &BlockCache,
        dh2: Matrix,
        batch: usize,
        frames: usize,
    ) -> Matrix {
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        // Feed-forward branch.
        let mut dz = affine_backward(grads, sl.w2, sl.b2, &bc.g, self.p(sl.w2), &dh2);
        dz.zip_mut_with(&bc.z, |g, &x| *g *= gelu_grad(x));
        let dc = affine_backward(grads, sl.w1, sl.b1, &bc.c, self.p(sl.w1), &dz);
        let dh1 = dh2 + &norm_backward(grads, sl.ln2_g, sl.ln2_b, &bc.ln2, self.p(sl.ln2_g), &dc);

        // Attention branch.
        let d_o = affine_backward(grads, sl.wo, sl.bo, &bc.o, self.p(sl.wo), &dh1);
        let mut dq = Matrix::zeros(bc.q.dim());
        let mut dk = Matrix::zeros(bc.k.dim());
        let mut dv = Matrix::zeros(bc.v.dim());
        for bi in 0..batch {
            let rows = bi * frames..(bi + 1) * frames;
            for hd in 0..cfg.n_heads {
                let cols = hd * dh..(hd + 1) * dh;
                let p = &bc.probs[bi * cfg.n_heads + hd];
                let dos = d_o.slice(s![rows.clone(), cols.clone()]);
                let vs = bc.v.slice(s![rows.clone(), cols.clone()]);
                let qs = bc.q.slice(s![rows.clone(), cols.clone()]);
                let ks = bc.k.slice(s![rows.clone(), cols.clone()]);
                let dp = dos.dot(&vs.t());
                dv.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&p.t().dot(&dos));
                let mut ds = dp;
                for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let inner: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                    drow.zip_mut_with(&prow, |g, &pv| *g = pv * (*g - inner) * scale);
                }
                dq.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&ds.dot(&ks));
                dk.slice_mut(s![rows.clone(), cols])
                    .assign(&ds.t().dot(&qs));
            }
        }
        let mut da = affine_backward(grads, sl.wq, sl.bq, &bc.a, self.p(sl.wq), &dq);
        da += &affine_backward(grads, sl.wk, sl.bk, &bc.a, self.p(sl.wk), &dk);
        da += &affine_backward(grads, sl.wv, sl.bv, &bc.a, self.p(sl.wv), &dv);
        dh1 + &norm_backward(grads, sl.ln1_g, sl.ln1_b, &bc.ln1, self.p(sl.ln1_g), &da)
    }
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut y = x.dot(w);
    y += &b.row(0);
    y
}

/// Accumulates weight and bias gradients; returns the input gradient.
fn affine_backward(
    grads: &mut Parameters,
    w_idx: usize,
    b_idx: usize,
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
) -> Matrix {
    *grads.tensor_mut(w_idx) += &x.t().dot(dy);
    let mut db = grads.tensor_mut(b_idx).row_mut(0);
    db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        *istd = 1.0 / (var + LN_EPS).sqrt();
        let s = *istd;
        row.mapv_inplace(|v| (v - mean) * s);
    }
    let mut y = &xhat * &gain.row(0);
    y += &bias.row(0);
    (y, NormCache { xhat, inv_std })
}

fn norm_backward(
    grads: &mut Parameters,
    g_idx: usize,
    b_idx: usize,
    cache: &NormCache,
    gain: &Matrix,
    dy: &Matrix,
) -> Matrix {
    {
        let mut dg = grads.tensor_mut(g_idx).row_mut(0);
        dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut db = grads.tensor_mut(b_idx).row_mut(0);
        db += &dy.sum_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let mut dx = dy * &gain.row(0);
    for ((mut row, xh), istd) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        row.zip_mut_with(&xh, |g, &x| *g = istd * (*g - mean_g - x * mean_gx));
    }
    dx
}

fn softmax_rows(m: &mut Matrix) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn sinusoid(x: f64, d: usize) -> Array1<f64> {
    let half = d / 2;
    let mut out = Array1::zeros(d);
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        out[i] = (x * freq).sin();
        out[half + i] = (x * freq).cos();
    }
    out
}

fn positions(frames: usize, d: usize) -> Matrix {
    let mut pos = Matrix::zeros((frames, d));
    for tau in 0..frames {
        pos.row_mut(tau).assign(&sinusoid(tau as f64, d));
    }
    pos
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
