//! Inference: prompt assembly by time-axis concatenation, guided ODE
//! integration from noise, and extraction of the generated region.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fm_core::{conditional_vector_field, PathConfig};
use crate::infill::TemporalMask;
use crate::rng::{standard_normal, FlowRng};
use crate::seqmodel::{ConditionBundle, FieldInput, Model, EMO_DIM, NV_DIM};
use crate::Matrix;

/// Anything that maps `(x_t, t, conditions)` to a velocity. Each element of
/// `inputs` counts as one function evaluation.
pub trait VectorField: Sync {
    fn eval(&self, inputs: &[FieldInput<'_>]) -> Result<Vec<Matrix>>;
}

impl VectorField for Model {
    fn eval(&self, inputs: &[FieldInput<'_>]) -> Result<Vec<Matrix>> {
        self.forward(inputs, None)
    }
}

/// The closed-form conditional field toward a fixed `x1`, ignoring the
/// conditions. Integrating it reproduces `x1 + σ_min·x0`.
#[derive(Debug, Clone)]
pub struct ConditionalPathField {
    pub x1: Matrix,
    pub path: PathConfig,
}

impl VectorField for ConditionalPathField {
    fn eval(&self, inputs: &[FieldInput<'_>]) -> Result<Vec<Matrix>> {
        inputs
            .iter()
            .map(|inp| conditional_vector_field(inp.x_t, &self.x1, inp.t, &self.path))
            .collect()
    }
}

/// Resample each row of `src` (`D×L`) to `target_len` columns by linear
/// interpolation, mapping column 0 to 0 and `L−1` to `T−1`. A single
/// target column takes the first source column.
pub fn interpolate_stream(src: &Matrix, target_len: usize) -> Result<Matrix> {
    let len = src.ncols();
    if len == 0 {
        return Err(Error::Domain("cannot interpolate an empty stream".into()));
    }
    if target_len == 0 {
        return Err(Error::Domain(
            "interpolation target length must be positive".into(),
        ));
    }
    if len == target_len {
        return Ok(src.clone());
    }
    let mut out = Matrix::zeros((src.nrows(), target_len));
    for j in 0..target_len {
        let (i0, frac) = if target_len == 1 || len == 1 {
            (0, 0.0)
        } else {
            let num = (j * (len - 1)) as f64;
            let pos = num / (target_len - 1) as f64;
            let i0 = (pos.floor() as usize).min(len - 1);
            (i0, pos - i0 as f64)
        };
        let i1 = (i0 + 1).min(len - 1);
        for r in 0..src.nrows() {
            let a = src[(r, i0)];
            let b = src[(r, i1)];
            out[(r, j)] = if frac == 0.0 { a } else { a + frac * (b - a) };
        }
    }
    Ok(out)
}

/// Streams of the speaker prompt, all `T_spk` frames long.
#[derive(Debug, Clone)]
pub struct SpeakerPrompt {
    pub features: Matrix,
    pub phonemes: Vec<u32>,
    pub nv: Matrix,
    pub emo: Matrix,
}

/// Speaker prompt followed by the region to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptAssembly {
    pub features: Matrix,
    pub phonemes: Vec<u32>,
    pub nv: Matrix,
    pub emo: Matrix,
    /// `[start, end)` frames to generate.
    pub generated_region: (usize, usize),
}

impl PromptAssembly {
    pub fn total_frames(&self) -> usize {
        self.features.ncols()
    }

    /// Conditioning bundle: the speaker features are visible context, the
    /// generated region is masked.
    pub fn bundle(&self) -> ConditionBundle {
        let (start, end) = self.generated_region;
        ConditionBundle {
            phonemes: Some(self.phonemes.clone()),
            nv: self.nv.clone(),
            emo: self.emo.clone(),
            context: self.features.clone(),
            mask: TemporalMask::span(self.total_frames(), start, end),
        }
    }
}

fn concat_time(a: &Matrix, b: &Matrix) -> Matrix {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).expect("row counts checked")
}

/// Concatenate speaker and text streams along time. NV and emotion prompts
/// are interpolated to the text length when their lengths differ.
pub fn assemble_prompt(
    spk: &SpeakerPrompt,
    text_phonemes: &[u32],
    nv_prompt: &Matrix,
    emo_prompt: &Matrix,
) -> Result<PromptAssembly> {
    let t_spk = spk.features.ncols();
    let t_text = text_phonemes.len();
    if t_text == 0 {
        return Err(Error::Domain("text prompt is empty".into()));
    }
    if spk.phonemes.len() != t_spk {
        return Err(Error::Shape(format!(
            "speaker phonemes have {} frames, features {t_spk}",
            spk.phonemes.len()
        )));
    }
    if spk.nv.dim() != (NV_DIM, t_spk) {
        return Err(shape_err("speaker nv", (NV_DIM, t_spk), spk.nv.dim()));
    }
    if spk.emo.dim() != (EMO_DIM, t_spk) {
        return Err(shape_err("speaker emo", (EMO_DIM, t_spk), spk.emo.dim()));
    }
    if nv_prompt.nrows() != NV_DIM {
        return Err(Error::Shape(format!(
            "nv prompt has {} rows, expected {NV_DIM}",
            nv_prompt.nrows()
        )));
    }
    if emo_prompt.nrows() != EMO_DIM {
        return Err(Error::Shape(format!(
            "emo prompt has {} rows, expected {EMO_DIM}",
            emo_prompt.nrows()
        )));
    }
    let nv_text = interpolate_stream(nv_prompt, t_text)?;
    let emo_text = interpolate_stream(emo_prompt, t_text)?;
    let zeros = Matrix::zeros((spk.features.nrows(), t_text));
    let mut phonemes = spk.phonemes.clone();
    phonemes.extend_from_slice(text_phonemes);
    Ok(PromptAssembly {
        features: concat_time(&spk.features, &zeros),
        phonemes,
        nv: concat_time(&spk.nv, &nv_text),
        emo: concat_time(&spk.emo, &emo_text),
        generated_region: (t_spk, t_spk + t_text),
    })
}

/// Classifier-free guidance: `v_u + (1 + w)·(v_c − v_u)`.
pub fn guided_field(v_cond: &Matrix, v_uncond: &Matrix, strength: f64) -> Result<Matrix> {
    if v_cond.dim() != v_uncond.dim() {
        return Err(shape_err(
            "unconditional field",
            v_cond.dim(),
            v_uncond.dim(),
        ));
    }
    if strength == 0.0 {
        return Ok(v_cond.clone());
    }
    let mut out = v_cond - v_uncond;
    out.zip_mut_with(v_uncond, |d, &u| *d = u + (1.0 + strength) * *d);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Euler,
    Midpoint,
}

impl std::str::FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Self::Euler),
            "midpoint" => Ok(Self::Midpoint),
            other => Err(Error::Config(format!("unknown solver '{other}'"))),
        }
    }
}

/// Sampling settings. `nfe` is the number of ODE steps; with guidance each
/// step evaluates the network twice, and midpoint doubles it again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub strength: f64,
    pub nfe: usize,
    pub solver: Solver,
    /// Overwrite the known frames with their context after every step
    /// instead of only at the end.
    pub clamp_each_step: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            strength: 1.0,
            nfe: 32,
            solver: Solver::Euler,
            clamp_each_step: false,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nfe == 0 {
            return Err(Error::Config("nfe must be at least 1".into()));
        }
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::Config(format!(
                "guidance strength must be finite and >= 0, got {}",
                self.strength
            )));
        }
        Ok(())
    }
}

fn velocities(
    field: &dyn VectorField,
    xs: &[Matrix],
    t: f64,
    conds: &[ConditionBundle],
    unconds: &[ConditionBundle],
    strength: f64,
) -> Result<Vec<Matrix>> {
    let mut inputs: Vec<FieldInput<'_>> = xs
        .iter()
        .zip(conds)
        .map(|(x, cond)| FieldInput { x_t: x, t, cond })
        .collect();
    if strength == 0.0 {
        return field.eval(&inputs);
    }
    inputs.extend(
        xs.iter()
            .zip(unconds)
            .map(|(x, cond)| FieldInput { x_t: x, t, cond }),
    );
    let out = field.eval(&inputs)?;
    let (c, u) = out.split_at(xs.len());
    c.iter()
        .zip(u)
        .map(|(c, u)| guided_field(c, u, strength))
        .collect()
}

fn clamp_known(x: &mut Matrix, cond: &ConditionBundle) {
    for (j, on) in cond.mask.bits().iter().enumerate() {
        if !*on {
            x.column_mut(j).assign(&cond.context.column(j));
        }
    }
}

/// Integrate from `x0` at `t = 0` to `t = 1` and return the full `F×T`
/// state. Frames outside `cond.mask` are overwritten with `cond.context`.
pub fn integrate_from(
    field: &dyn VectorField,
    cond: &ConditionBundle,
    cfg: &GuidanceConfig,
    x0: Matrix,
) -> Result<Matrix> {
    let mut out = integrate_many(field, std::slice::from_ref(cond), cfg, vec![x0])?;
    Ok(out.remove(0))
}

/// [`integrate_from`] for several independent sequences of equal length,
/// evaluated together at each step.
pub fn integrate_many(
    field: &dyn VectorField,
    conds: &[ConditionBundle],
    cfg: &GuidanceConfig,
    x0: Vec<Matrix>,
) -> Result<Vec<Matrix>> {
    cfg.validate()?;
    if conds.len() != x0.len() {
        return Err(Error::Shape(format!(
            "{} condition bundles for {} initial states",
            conds.len(),
            x0.len()
        )));
    }
    for (c, x) in conds.iter().zip(&x0) {
        c.validate()?;
        if x.dim() != c.context.dim() {
            return Err(shape_err("initial state", c.context.dim(), x.dim()));
        }
    }
    let unconds: Vec<ConditionBundle> = conds.iter().map(ConditionBundle::zeroed).collect();
    let dt = 1.0 / cfg.nfe as f64;
    let mut xs = x0;
    for step in 0..cfg.nfe {
        let t = step as f64 * dt;
        let vs = match cfg.solver {
            Solver::Euler => velocities(field, &xs, t, conds, &unconds, cfg.strength)?,
            Solver::Midpoint => {
                let v0 = velocities(field, &xs, t, conds, &unconds, cfg.strength)?;
                let mids: Vec<Matrix> = xs
                    .iter()
                    .zip(&v0)
                    .map(|(x, v)| {
                        let mut m = x.clone();
                        m.scaled_add(0.5 * dt, v);
                        m
                    })
                    .collect();
                velocities(field, &mids, t + 0.5 * dt, conds, &unconds, cfg.strength)?
            }
        };
        for ((x, v), cond) in xs.iter_mut().zip(&vs).zip(conds) {
            x.scaled_add(dt, v);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite state after integration step {step}"
                )));
            }
            if cfg.clamp_each_step {
                clamp_known(x, cond);
            }
        }
    }
    for (x, cond) in xs.iter_mut().zip(conds) {
        clamp_known(x, cond);
    }
    Ok(xs)
}

/// Draw `x0 ~ N(0, I)` over the whole assembly, integrate, and return
/// the full state (speaker region included).
pub fn integrate_full(
    field: &dyn VectorField,
    prompt: &PromptAssembly,
    cfg: &GuidanceConfig,
    rng: &mut FlowRng,
) -> Result<Matrix> {
    let x0 = standard_normal(prompt.features.nrows(), prompt.total_frames(), rng);
    integrate_from(field, &prompt.bundle(), cfg, x0)
}

/// Generate the text region of `prompt`, `F × T_text`.
pub fn integrate(
    field: &dyn VectorField,
    prompt: &PromptAssembly,
    cfg: &GuidanceConfig,
    rng: &mut FlowRng,
) -> Result<Matrix> {
    let full = integrate_full(field, prompt, cfg, rng)?;
    let (start, end) = prompt.generated_region;
    Ok(full.slice(ndarray::s![.., start..end]).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<F> {
        inner: F,
        calls: AtomicUsize,
    }

    impl<F: VectorField> VectorField for Counting<F> {
        fn eval(&self, inputs: &[FieldInput<'_>]) -> Result<Vec<Matrix>> {
            self.calls.fetch_add(inputs.len(), Ordering::SeqCst);
            self.inner.eval(inputs)
        }
    }

    /// Exact marginal OT field for data `N(mu, diag(var))`, per row.
    struct GaussianField {
        mu: Vec<f64>,
        var: Vec<f64>,
        sigma_min: f64,
    }

    impl VectorField for GaussianField {
        fn eval(&self, inputs: &[FieldInput<'_>]) -> Result<Vec<Matrix>> {
            Ok(inputs
                .iter()
                .map(|inp| {
                    let t = inp.t;
                    let k = 1.0 - self.sigma_min;
                    let s = 1.0 - k * t;
                    let mut out = inp.x_t.clone();
                    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
                        let vt = t * t * self.var[r] + s * s;
                        let gain = (t * self.var[r] - k * s) / vt;
                        let mu = self.mu[r];
                        row.mapv_inplace(|x| mu + gain * (x - t * mu));
                    }
                    out
                })
                .collect())
        }
    }

    fn speaker(f: usize, t: usize, seed: u64) -> SpeakerPrompt {
        let mut rng = seeded(seed);
        SpeakerPrompt {
            features: standard_normal(f, t, &mut rng),
            phonemes: vec![1; t],
            nv: Matrix::zeros((NV_DIM, t)),
            emo: Matrix::from_elem((EMO_DIM, t), 0.1),
        }
    }

    #[test]
    fn interpolation_examples() {
        let m = Matrix::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap();
        assert_eq!(
            interpolate_stream(&m, 3).unwrap().row(0).to_vec(),
            vec![0.0, 0.5, 1.0]
        );
        let m = standard_normal(3, 5, &mut seeded(1));
        assert_eq!(interpolate_stream(&m, 5).unwrap(), m);
        let c = Matrix::from_elem((2, 3), 0.37);
        assert!(interpolate_stream(&c, 11)
            .unwrap()
            .iter()
            .all(|v| *v == 0.37));
        assert!(interpolate_stream(&Matrix::zeros((2, 0)), 3).is_err());
        assert!(interpolate_stream(&c, 0).is_err());
    }

    #[test]
    fn interpolation_endpoints_exhaustive() {
        let mut rng = seeded(2);
        for l in 1..=8 {
            let src = standard_normal(3, l, &mut rng);
            for t in 1..=8 {
                let out = interpolate_stream(&src, t).unwrap();
                assert_eq!(out.dim(), (3, t));
                for r in 0..3 {
                    assert_eq!(out[(r, 0)], src[(r, 0)]);
                    if t > 1 {
                        assert_eq!(out[(r, t - 1)], src[(r, l - 1)], "l={l} t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn assembly_layout() {
        let spk = speaker(3, 4, 1);
        let text = vec![2u32; 6];
        let nv = Matrix::from_elem((NV_DIM, 6), 0.25);
        let emo = Matrix::from_shape_vec((2, 2), vec![-0.5, 0.5, 0.0, 0.0]).unwrap();
        let p = assemble_prompt(&spk, &text, &nv, &emo).unwrap();
        assert_eq!(p.total_frames(), 10);
        assert_eq!(p.generated_region, (4, 10));
        assert!(p
            .features
            .slice(ndarray::s![.., 4..])
            .iter()
            .all(|v| *v == 0.0));
        assert_eq!(p.features.slice(ndarray::s![.., ..4]), spk.features);
        assert_eq!(p.nv.slice(ndarray::s![.., 4..]), nv);
        assert_eq!(p.emo[(0, 4)], -0.5);
        assert_eq!(p.emo[(0, 9)], 0.5);
        assert_eq!(p.phonemes.len(), 10);
        assert!(matches!(
            assemble_prompt(&spk, &[], &nv, &emo),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn guided_field_examples() {
        let mut rng = seeded(3);
        let c = standard_normal(2, 3, &mut rng);
        let u = standard_normal(2, 3, &mut rng);
        assert_eq!(guided_field(&c, &u, 0.0).unwrap(), c);
        assert_eq!(guided_field(&c, &c, 1.7).unwrap(), c);
        let z = Matrix::zeros((2, 3));
        let g = guided_field(&c, &z, 1.0).unwrap();
        assert_eq!(g, &c * 2.0);
        assert!(guided_field(&c, &Matrix::zeros((3, 2)), 1.0).is_err());
    }

    #[test]
    fn analytic_field_is_recovered_exactly() {
        let spk = speaker(4, 3, 4);
        let prompt = assemble_prompt(
            &spk,
            &[0; 5],
            &Matrix::zeros((NV_DIM, 5)),
            &Matrix::zeros((EMO_DIM, 5)),
        )
        .unwrap();
        let path = PathConfig::new(0.01).unwrap();
        let x1 = standard_normal(4, 8, &mut seeded(5));
        let field = ConditionalPathField {
            x1: x1.clone(),
            path,
        };
        for nfe in [1, 4, 32] {
            let cfg = GuidanceConfig {
                strength: 0.0,
                nfe,
                ..Default::default()
            };
            let x0 = standard_normal(4, 8, &mut seeded(6));
            let out = integrate(&field, &prompt, &cfg, &mut seeded(6)).unwrap();
            let expected = &x1 + &(&x0 * 0.01);
            let err = (&out - &expected.slice(ndarray::s![.., 3..]))
                .iter()
                .fold(0.0f64, |m, d| m.max(d.abs()));
            assert!(err < 1e-10, "nfe {nfe}: {err}");
        }
    }

    #[test]
    fn guidance_doubles_evaluations() {
        let spk = speaker(2, 2, 7);
        let prompt = assemble_prompt(
            &spk,
            &[0; 3],
            &Matrix::zeros((NV_DIM, 3)),
            &Matrix::zeros((EMO_DIM, 3)),
        )
        .unwrap();
        let field = Counting {
            inner: ConditionalPathField {
                x1: Matrix::zeros((2, 5)),
                path: PathConfig::default(),
            },
            calls: AtomicUsize::new(0),
        };
        integrate(&field, &prompt, &GuidanceConfig::default(), &mut seeded(1)).unwrap();
        assert_eq!(field.calls.load(Ordering::SeqCst), 64);
        field.calls.store(0, Ordering::SeqCst);
        let cfg = GuidanceConfig {
            strength: 0.0,
            ..Default::default()
        };
        integrate(&field, &prompt, &cfg, &mut seeded(1)).unwrap();
        assert_eq!(field.calls.load(Ordering::SeqCst), 32);
    }

    #[test]
    fn speaker_region_preserved_and_deterministic() {
        let spk = speaker(3, 5, 8);
        let prompt = assemble_prompt(
            &spk,
            &[0; 4],
            &Matrix::zeros((NV_DIM, 4)),
            &Matrix::zeros((EMO_DIM, 4)),
        )
        .unwrap();
        let field = ConditionalPathField {
            x1: standard_normal(3, 9, &mut seeded(9)),
            path: PathConfig::default(),
        };
        for clamp_each_step in [false, true] {
            let cfg = GuidanceConfig {
                clamp_each_step,
                ..Default::default()
            };
            let a = integrate_full(&field, &prompt, &cfg, &mut seeded(2)).unwrap();
            let b = integrate_full(&field, &prompt, &cfg, &mut seeded(2)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.slice(ndarray::s![.., ..5]), spk.features);
        }
    }

    #[test]
    fn midpoint_beats_euler_on_gaussian_field() {
        let field = GaussianField {
            mu: vec![1.0, -1.0],
            var: vec![0.25, 1.0],
            sigma_min: 1e-5,
        };
        let frames = 50;
        let cond = ConditionBundle {
            phonemes: None,
            nv: Matrix::zeros((NV_DIM, frames)),
            emo: Matrix::zeros((EMO_DIM, frames)),
            context: Matrix::zeros((2, frames)),
            mask: TemporalMask::ones(frames),
        };
        let x0 = standard_normal(2, frames, &mut seeded(10));
        let run = |solver, nfe| {
            let cfg = GuidanceConfig {
                strength: 0.0,
                nfe,
                solver,
                clamp_each_step: false,
            };
            integrate_from(&field, &cond, &cfg, x0.clone()).unwrap()
        };
        let reference = run(Solver::Euler, 10_000);
        let err = |m: &Matrix| (m - &reference).iter().fold(0.0f64, |a, d| a.max(d.abs()));
        let e_euler = err(&run(Solver::Euler, 16));
        let e_mid = err(&run(Solver::Midpoint, 16));
        assert!(e_mid <= e_euler, "midpoint {e_mid} euler {e_euler}");
    }
}
