//! Training loss: depth-weighted misfit plus a total-variation penalty.
//!
//! `L = (v + α·s) / (H·W)` with `v = Σ (i + λ)^{β/2} (m̂ − m)²` and
//! `s = Σ |∂ᵢ m̂| + |∂ⱼ m̂|` over adjacent cell pairs.

use serde::{Deserialize, Serialize};

use crate::nn::Tensor4;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: {expected:?} vs {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Smoothness factor α.
    pub alpha: f64,
    /// Depth-weighting exponent β.
    pub beta: f64,
    /// Depth-weighting offset λ.
    pub lambda: f64,
}

/// The four loss variants compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossPreset {
    /// Smoothness and depth weighting.
    SD,
    /// Smoothness only.
    OS,
    /// Depth weighting only.
    OD,
    /// Neither.
    NA,
}

impl LossPreset {
    pub const ALL: [LossPreset; 4] = [Self::SD, Self::OS, Self::OD, Self::NA];

    pub fn config(self) -> LossConfig {
        let (alpha, beta) = match self {
            Self::SD => (0.2, 1.0),
            Self::OS => (0.2, 0.0),
            Self::OD => (0.0, 1.0),
            Self::NA => (0.0, 0.0),
        };
        LossConfig {
            alpha,
            beta,
            lambda: 8.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SD => "SD",
            Self::OS => "OS",
            Self::OD => "OD",
            Self::NA => "NA",
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossPreset::SD.config()
    }
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64, lambda: f64) -> Result<Self, ObjectiveError> {
        let cfg = Self {
            alpha,
            beta,
            lambda,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if !(self.alpha >= 0.0
            && self.lambda >= 0.0
            && self.beta.is_finite()
            && self.alpha.is_finite())
        {
            return Err(ObjectiveError::InvalidConfig(format!("{self:?}")));
        }
        if self.lambda == 0.0 && self.beta < 0.0 {
            return Err(ObjectiveError::InvalidConfig(
                "negative beta with zero lambda".into(),
            ));
        }
        Ok(())
    }

    /// Row weights `(i + λ)^{β/2}` for `rows` rows.
    pub fn row_weights(&self, rows: usize) -> Vec<f64> {
        (0..rows).map(|i| depth_weight(i, self)).collect()
    }

    /// Short hex digest of the three constants, for run manifests.
    pub fn digest(&self) -> String {
        format!(
            "{:016x}{:016x}{:016x}",
            self.alpha.to_bits(),
            self.beta.to_bits(),
            self.lambda.to_bits()
        )
    }
}

/// `(i + λ)^{β/2}`.
pub fn depth_weight(i: usize, cfg: &LossConfig) -> f64 {
    (i as f64 + cfg.lambda).powf(cfg.beta / 2.0)
}

/// `dw` expanded to a full grid; rows are constant.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthWeightMap {
    pub values: Raster,
}

impl DepthWeightMap {
    pub fn new(rows: usize, cols: usize, cfg: &LossConfig) -> Self {
        let w = cfg.row_weights(rows);
        Self {
            values: Raster::from_fn(rows, cols, |i, _| w[i]),
        }
    }
}

fn same_dims(a: &Raster, b: &Raster) -> Result<(), ObjectiveError> {
    if a.dims() != b.dims() {
        return Err(ObjectiveError::DimensionMismatch {
            expected: b.dims(),
            found: a.dims(),
        });
    }
    Ok(())
}

fn value_slice(pred: &[f64], target: &[f64], cols: usize, dw: &[f64]) -> f64 {
    pred.chunks(cols)
        .zip(target.chunks(cols))
        .zip(dw)
        .map(|((p, t), w)| w * p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

fn smooth_slice(m: &[f64], rows: usize, cols: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..rows {
        let r = &m[i * cols..(i + 1) * cols];
        for j in 0..cols.saturating_sub(1) {
            s += (r[j + 1] - r[j]).abs();
        }
        if i + 1 < rows {
            let below = &m[(i + 1) * cols..(i + 2) * cols];
            for j in 0..cols {
                s += (below[j] - r[j]).abs();
            }
        }
    }
    s
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adds `scale · ∂s/∂m` into `grad`, with `sign(0) = 0`.
fn smooth_grad_slice(m: &[f64], rows: usize, cols: usize, scale: f64, grad: &mut [f64]) {
    for i in 0..rows {
        for j in 0..cols {
            let k = i * cols + j;
            if j + 1 < cols {
                let s = scale * sign(m[k + 1] - m[k]);
                grad[k + 1] += s;
                grad[k] -= s;
            }
            if i + 1 < rows {
                let s = scale * sign(m[k + cols] - m[k]);
                grad[k + cols] += s;
                grad[k] -= s;
            }
        }
    }
}

/// `Σ dw(i) (m̂ − m)²`.
pub fn value_term(pred: &Raster, target: &Raster, cfg: &LossConfig) -> Result<f64, ObjectiveError> {
    same_dims(pred, target)?;
    let dw = cfg.row_weights(pred.rows());
    Ok(value_slice(
        pred.as_slice(),
        target.as_slice(),
        pred.cols(),
        &dw,
    ))
}

/// Anisotropic total variation, no wraparound.
pub fn smooth_term(pred: &Raster) -> f64 {
    smooth_slice(pred.as_slice(), pred.rows(), pred.cols())
}

pub fn total_loss(pred: &Raster, target: &Raster, cfg: &LossConfig) -> Result<f64, ObjectiveError> {
    let z = (pred.rows() * pred.cols()) as f64;
    Ok((value_term(pred, target, cfg)? + cfg.alpha * smooth_term(pred)) / z)
}

/// Gradient of [`total_loss`] with respect to `pred`.
pub fn loss_grad(
    pred: &Raster,
    target: &Raster,
    cfg: &LossConfig,
) -> Result<Raster, ObjectiveError> {
    same_dims(pred, target)?;
    let (rows, cols) = pred.dims();
    let z = (rows * cols) as f64;
    let dw = cfg.row_weights(rows);
    let mut g = Raster::from_fn(rows, cols, |i, j| {
        2.0 * dw[i] * (pred.get(i, j) - target.get(i, j)) / z
    });
    if cfg.alpha != 0.0 {
        smooth_grad_slice(pred.as_slice(), rows, cols, cfg.alpha / z, g.as_mut_slice());
    }
    Ok(g)
}

/// Batch-mean loss of `N × 1 × H × W` tensors and its gradient.
pub fn batch_loss(
    pred: &Tensor4,
    target: &Tensor4,
    cfg: &LossConfig,
) -> Result<(f64, Tensor4), ObjectiveError> {
    if pred.shape() != target.shape() || pred.c != 1 {
        return Err(ObjectiveError::DimensionMismatch {
            expected: (target.h, target.w),
            found: (pred.h, pred.w),
        });
    }
    let (rows, cols) = (pred.h, pred.w);
    let z = (rows * cols) as f64;
    let n = pred.n as f64;
    let dw = cfg.row_weights(rows);
    let mut grad = Tensor4::zeros(pred.n, 1, rows, cols);
    let mut total = 0.0;
    for s in 0..pred.n {
        let (p, t) = (pred.channel(s, 0), target.channel(s, 0));
        total += (value_slice(p, t, cols, &dw) + cfg.alpha * smooth_slice(p, rows, cols)) / z;
        let g = grad.channel_mut(s, 0);
        for i in 0..rows {
            let k = 2.0 * dw[i] / (z * n);
            for j in i * cols..(i + 1) * cols {
                g[j] = k * (p[j] - t[j]);
            }
        }
        if cfg.alpha != 0.0 {
            smooth_grad_slice(p, rows, cols, cfg.alpha / (z * n), g);
        }
    }
    Ok((total / n, grad))
}
