//! Closed-form conditional flow matching along the optimal-transport path.
//!
//! For a data point `x1` and a prior draw `x0 ~ N(0, I)` the path is
//! `x_t = t·x1 + (1 − (1 − σ_min)·t)·x0`, and the conditional target field is
//! `u_t(x | x1) = (x1 − (1 − σ_min)·x) / (1 − (1 − σ_min)·t)`.
//! Along the path the field is constant in `t` and equals
//! `x1 − (1 − σ_min)·x0`.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::infill::TemporalMask;
use crate::rng::{standard_normal, FlowRng};
use crate::Matrix;

/// Denominators at or below this are treated as the `t = 1, σ_min = 0`
/// singularity.
pub const SINGULARITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathConfig {
    pub sigma_min: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { sigma_min: 1e-5 }
    }
}

impl PathConfig {
    pub fn new(sigma_min: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&sigma_min) {
            return Err(Error::Domain(format!(
                "sigma_min must lie in [0, 1), got {sigma_min}"
            )));
        }
        Ok(Self { sigma_min })
    }
}

/// One training tuple drawn from the conditional path.
#[derive(Debug, Clone)]
pub struct FlowSample {
    pub x_t: Matrix,
    pub t: f64,
    pub u_target: Matrix,
    pub x0: Matrix,
    pub x1: Matrix,
}

/// Uniform draw on `[0, 1]`.
pub fn sample_time(rng: &mut FlowRng) -> f64 {
    rng.random_range(0.0..=1.0)
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// Mean coefficient and standard deviation of `p_t(x | x1)`.
pub fn path_mean_std(t: f64, cfg: &PathConfig) -> Result<(f64, f64)> {
    check_t(t)?;
    Ok((t, 1.0 - (1.0 - cfg.sigma_min) * t))
}

pub fn sample_conditional_path(
    x1: &Matrix,
    t: f64,
    x0: &Matrix,
    cfg: &PathConfig,
) -> Result<Matrix> {
    if x1.dim() != x0.dim() {
        return Err(shape_err("prior draw", x1.dim(), x0.dim()));
    }
    let (mean, std) = path_mean_std(t, cfg)?;
    let mut out = x0.clone();
    out.zip_mut_with(x1, |x0, &x1| *x0 = mean * x1 + std * *x0);
    Ok(out)
}

pub fn conditional_vector_field(
    x: &Matrix,
    x1: &Matrix,
    t: f64,
    cfg: &PathConfig,
) -> Result<Matrix> {
    if x.dim() != x1.dim() {
        return Err(shape_err("data point", x.dim(), x1.dim()));
    }
    check_t(t)?;
    let shrink = 1.0 - cfg.sigma_min;
    let denom = 1.0 - shrink * t;
    if denom <= SINGULARITY_EPS {
        return Err(Error::Singularity(format!(
            "conditional field denominator {denom:e} at t={t}, sigma_min={}",
            cfg.sigma_min
        )));
    }
    let mut out = x1.clone();
    out.zip_mut_with(x, |x1, &x| *x1 = (*x1 - shrink * x) / denom);
    Ok(out)
}

/// Draw `t` and `x0`, and build the path point and regression target for `x1`.
pub fn draw_flow_sample(x1: &Matrix, cfg: &PathConfig, rng: &mut FlowRng) -> FlowSample {
    let t = sample_time(rng);
    let (rows, cols) = x1.dim();
    let x0 = standard_normal(rows, cols, rng);
    flow_sample_at(x1, t, x0, cfg)
}

/// Build the tuple for a given `t` and prior draw. The target uses the
/// on-path closed form `x1 − (1 − σ_min)·x0`, which is finite at `t = 1`.
pub fn flow_sample_at(x1: &Matrix, t: f64, x0: Matrix, cfg: &PathConfig) -> FlowSample {
    let shrink = 1.0 - cfg.sigma_min;
    let std = 1.0 - shrink * t;
    let mut x_t = x0.clone();
    x_t.zip_mut_with(x1, |v, &d| *v = t * d + std * *v);
    let mut u_target = x1.clone();
    u_target.zip_mut_with(&x0, |v, &n| *v -= shrink * n);
    FlowSample {
        x_t,
        t,
        u_target,
        x0,
        x1: x1.clone(),
    }
}

/// Mean squared error between predicted and target fields.
///
/// With a mask only the masked frames (columns) contribute; without one every
/// element does.
pub fn cfm_loss(v_pred: &Matrix, u_target: &Matrix, mask: Option<&TemporalMask>) -> Result<f64> {
    if v_pred.dim() != u_target.dim() {
        return Err(shape_err("predicted field", u_target.dim(), v_pred.dim()));
    }
    let (rows, cols) = v_pred.dim();
    match mask {
        None => {
            if rows * cols == 0 {
                return Err(Error::Domain("loss over an empty matrix".into()));
            }
            let sum: f64 = v_pred
                .iter()
                .zip(u_target.iter())
                .map(|(v, u)| (v - u) * (v - u))
                .sum();
            Ok(sum / (rows * cols) as f64)
        }
        Some(mask) => {
            if mask.len() != cols {
                return Err(Error::Shape(format!(
                    "mask length {} does not match {cols} frames",
                    mask.len()
                )));
            }
            let active = mask.count_ones();
            if active == 0 || rows == 0 {
                return Err(Error::Domain("loss mask selects no frames".into()));
            }
            let mut sum = 0.0;
            for (j, on) in mask.bits().iter().enumerate() {
                if *on {
                    for i in 0..rows {
                        let d = v_pred[(i, j)] - u_target[(i, j)];
                        sum += d * d;
                    }
                }
            }
            Ok(sum / (active * rows) as f64)
        }
    }
}

/// Gradient of [`cfm_loss`] with respect to `v_pred`.
pub fn cfm_loss_grad(
    v_pred: &Matrix,
    u_target: &Matrix,
    mask: Option<&TemporalMask>,
) -> Result<Matrix> {
    if v_pred.dim() != u_target.dim() {
        return Err(shape_err("predicted field", u_target.dim(), v_pred.dim()));
    }
    let (rows, cols) = v_pred.dim();
    let mut grad = v_pred - u_target;
    match mask {
        None => {
            if rows * cols == 0 {
                return Err(Error::Domain("loss over an empty matrix".into()));
            }
            grad *= 2.0 / (rows * cols) as f64;
        }
        Some(mask) => {
            if mask.len() != cols {
                return Err(Error::Shape(format!(
                    "mask length {} does not match {cols} frames",
                    mask.len()
                )));
            }
            let active = mask.count_ones();
            if active == 0 || rows == 0 {
                return Err(Error::Domain("loss mask selects no frames".into()));
            }
            let scale = 2.0 / (active * rows) as f64;
            for (j, on) in mask.bits().iter().enumerate() {
                let s = if *on { scale } else { 0.0 };
                grad.column_mut(j).mapv_inplace(|g| g * s);
            }
        }
    }
    Ok(grad)
}
