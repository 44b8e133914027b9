//! Weighted evaluation metrics.
//!
//! Cell weights are `1 + D/D_max`, where `D` is the Chebyshev distance to the
//! nearest anomalous cell, so cells far from every body count up to twice as
//! much. A model without anomalies gets unit weights.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::trainer::batch_tensors;
use super::TrainError;
use crate::features::{NormalizationSpec, SamplePair};
use crate::model::ResistivityModel;
use crate::nn::{predict, NetworkSpec, Parameters};
use crate::raster::Raster;

/// Name of the weighting rule, echoed into every report.
pub const WEIGHT_RULE: &str = "1 + chebyshev_distance_to_anomaly / max_distance";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no samples")]
    Empty,
    #[error("sample {index}: dimensions differ")]
    DimensionMismatch { index: usize },
    #[error("every sample has a zero-variance prediction or target")]
    ZeroVariance,
    #[error("true value at position {position} is not positive")]
    ZeroTruth { position: usize },
    #[error("profile line outside the raster")]
    LineOutOfRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricWeights {
    pub values: Raster,
}

/// Chebyshev distance transform of `mask` (true = anomalous); `None` where
/// no anomalous cell exists at all.
fn chebyshev_distance(mask: &[bool], rows: usize, cols: usize) -> Option<Vec<usize>> {
    if !mask.iter().any(|&m| m) {
        return None;
    }
    let inf = usize::MAX / 2;
    let mut d: Vec<usize> = mask.iter().map(|&m| if m { 0 } else { inf }).collect();
    for i in 0..rows {
        for j in 0..cols {
            let mut best = d[i * cols + j];
            if i > 0 {
                for dj in [-1isize, 0, 1] {
                    let jj = j as isize + dj;
                    if jj >= 0 && (jj as usize) < cols {
                        best = best.min(d[(i - 1) * cols + jj as usize] + 1);
                    }
                }
            }
            if j > 0 {
                best = best.min(d[i * cols + j - 1] + 1);
            }
            d[i * cols + j] = best;
        }
    }
    for i in (0..rows).rev() {
        for j in (0..cols).rev() {
            let mut best = d[i * cols + j];
            if i + 1 < rows {
                for dj in [-1isize, 0, 1] {
                    let jj = j as isize + dj;
                    if jj >= 0 && (jj as usize) < cols {
                        best = best.min(d[(i + 1) * cols + jj as usize] + 1);
                    }
                }
            }
            if j + 1 < cols {
                best = best.min(d[i * cols + j + 1] + 1);
            }
            d[i * cols + j] = best;
        }
    }
    Some(d)
}

fn weights_from_mask(mask: &[bool], rows: usize, cols: usize) -> MetricWeights {
    let values = match chebyshev_distance(mask, rows, cols) {
        None => Raster::filled(rows, cols, 1.0),
        Some(d) => {
            let dmax = *d.iter().max().expect("non-empty grid");
            let data = d
                .iter()
                .map(|&v| {
                    if dmax == 0 {
                        1.0
                    } else {
                        1.0 + v as f64 / dmax as f64
                    }
                })
                .collect();
            Raster::from_vec(rows, cols, data).expect("mask size")
        }
    };
    MetricWeights { values }
}

pub fn metric_weights(model: &ResistivityModel) -> MetricWeights {
    let (rows, cols) = model.values.dims();
    let mask: Vec<bool> = model
        .values
        .as_slice()
        .iter()
        .map(|&v| v != model.background)
        .collect();
    weights_from_mask(&mask, rows, cols)
}

/// Weights for a stored (normalized) target, whose most frequent value is
/// taken as the background.
pub fn metric_weights_for_target(target: &Raster) -> MetricWeights {
    let bg = target.mode();
    let mask: Vec<bool> = target.as_slice().iter().map(|&v| v != bg).collect();
    weights_from_mask(&mask, target.rows(), target.cols())
}

fn check(
    preds: &[Raster],
    targets: &[Raster],
    weights: &[MetricWeights],
) -> Result<(), MetricError> {
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    if preds.len() != targets.len() || preds.len() != weights.len() {
        return Err(MetricError::DimensionMismatch {
            index: preds.len().min(targets.len()),
        });
    }
    for (index, ((p, t), w)) in preds.iter().zip(targets).zip(weights).enumerate() {
        if p.dims() != t.dims() || p.dims() != w.values.dims() {
            return Err(MetricError::DimensionMismatch { index });
        }
    }
    Ok(())
}

/// Per-sample `‖w∘(m̂ − m)‖²`.
pub fn wmse_per_sample(
    preds: &[Raster],
    targets: &[Raster],
    weights: &[MetricWeights],
) -> Result<Vec<f64>, MetricError> {
    check(preds, targets, weights)?;
    Ok(preds
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((p, t), w)| {
            p.as_slice()
                .iter()
                .zip(t.as_slice())
                .zip(w.values.as_slice())
                .map(|((a, b), c)| (c * (a - b)).powi(2))
                .sum()
        })
        .collect())
}

/// `(1/N) Σ ‖w∘(m̂ − m)‖²`.
pub fn wmse(
    preds: &[Raster],
    targets: &[Raster],
    weights: &[MetricWeights],
) -> Result<f64, MetricError> {
    let per = wmse_per_sample(preds, targets, weights)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrSummary {
    /// Mean over the samples with non-degenerate deviations.
    pub mean: f64,
    /// `None` for excluded samples.
    pub per_sample: Vec<Option<f64>>,
    pub excluded: usize,
}

/// Mean-removed copy; `None` for a constant vector, whose deviation is
/// identically zero even where rounding in the mean would say otherwise.
fn centred(v: &[f64]) -> Option<Vec<f64>> {
    if v.iter().all(|&x| x == v[0]) {
        return None;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    Some(v.iter().map(|x| x - m).collect())
}

/// Cosine similarity of the weighted, mean-removed prediction and target.
pub fn wr(
    preds: &[Raster],
    targets: &[Raster],
    weights: &[MetricWeights],
) -> Result<WrSummary, MetricError> {
    check(preds, targets, weights)?;
    let per_sample: Vec<Option<f64>> = preds
        .iter()
        .zip(targets)
        .zip(weights)
        .map(|((p, t), w)| {
            let (Some(a), Some(b)) = (centred(p.as_slice()), centred(t.as_slice())) else {
                return None;
            };
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for ((x, y), c) in a.iter().zip(&b).zip(w.values.as_slice()) {
                let (x, y) = (c * x, c * y);
                ab += x * y;
                aa += x * x;
                bb += y * y;
            }
            if aa == 0.0 || bb == 0.0 {
                None
            } else {
                Some((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
            }
        })
        .collect();
    let valid: Vec<f64> = per_sample.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(MetricError::ZeroVariance);
    }
    Ok(WrSummary {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        excluded: per_sample.len() - valid.len(),
        per_sample,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileLine {
    Row(usize),
    Column(usize),
}

/// `|pred − truth| / truth` along one row or column of resistivity rasters.
pub fn profile_relative_error(
    pred: &Raster,
    truth: &Raster,
    line: ProfileLine,
) -> Result<Vec<f64>, MetricError> {
    if pred.dims() != truth.dims() {
        return Err(MetricError::DimensionMismatch { index: 0 });
    }
    let (p, t) = match line {
        ProfileLine::Row(i) if i < truth.rows() => (pred.row(i).to_vec(), truth.row(i).to_vec()),
        ProfileLine::Column(j) if j < truth.cols() => (pred.column(j), truth.column(j)),
        _ => return Err(MetricError::LineOutOfRange),
    };
    p.iter()
        .zip(&t)
        .enumerate()
        .map(|(position, (a, b))| {
            if *b > 0.0 {
                Ok((a - b).abs() / b)
            } else {
                Err(MetricError::ZeroTruth { position })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub wmse: f64,
    pub wr: f64,
    pub wr_excluded: usize,
    pub per_sample_wmse: Vec<f64>,
    pub per_sample_wr: Vec<Option<f64>>,
    pub tier_enabled: bool,
    pub weight_rule: String,
    /// Wall clock; not part of any digest.
    pub seconds_per_sample: f64,
}

impl EvalReport {
    /// Deterministic per-sample CSV (no timing).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample,wmse,wr\n");
        for (i, (m, r)) in self
            .per_sample_wmse
            .iter()
            .zip(&self.per_sample_wr)
            .enumerate()
        {
            let r = r.map_or_else(|| "excluded".to_string(), |v| format!("{v:.12e}"));
            s.push_str(&format!("{i},{m:.12e},{r}\n"));
        }
        s.push_str(&format!("mean,{:.12e},{:.12e}\n", self.wmse, self.wr));
        s
    }
}

/// Predictions of an eval-mode network, one raster per sample, in order.
pub fn predictions(
    spec: &NetworkSpec,
    params: &Parameters,
    samples: &[SamplePair],
    tier_enabled: bool,
) -> Result<Vec<Raster>, TrainError> {
    const CHUNK: usize = 8;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let refs: Vec<&SamplePair> = chunk.iter().collect();
        let (x, _) = batch_tensors(&refs, tier_enabled)?;
        let y = predict(spec, params, &x)?;
        for s in 0..y.n {
            out.push(Raster::from_vec(y.h, y.w, y.channel(s, 0).to_vec()).expect("output plane"));
        }
    }
    Ok(out)
}

/// WMSE and WR of the network on `samples`, computed on normalized values.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &Parameters,
    samples: &[SamplePair],
    tier_enabled: bool,
) -> Result<EvalReport, TrainError> {
    let t0 = Instant::now();
    let preds = predictions(spec, params, samples, tier_enabled)?;
    let seconds_per_sample = t0.elapsed().as_secs_f64() / samples.len().max(1) as f64;
    report_for(&preds, samples, tier_enabled, seconds_per_sample)
}

pub(crate) fn report_for(
    preds: &[Raster],
    samples: &[SamplePair],
    tier_enabled: bool,
    seconds_per_sample: f64,
) -> Result<EvalReport, TrainError> {
    let targets: Vec<Raster> = samples.iter().map(|s| s.target.clone()).collect();
    let weights: Vec<MetricWeights> = targets.iter().map(metric_weights_for_target).collect();
    let per_sample_wmse = wmse_per_sample(preds, &targets, &weights)?;
    let w = wr(preds, &targets, &weights)?;
    Ok(EvalReport {
        wmse: per_sample_wmse.iter().sum::<f64>() / per_sample_wmse.len() as f64,
        wr: w.mean,
        wr_excluded: w.excluded,
        per_sample_wmse,
        per_sample_wr: w.per_sample,
        tier_enabled,
        weight_rule: WEIGHT_RULE.into(),
        seconds_per_sample,
    })
}

/// Denormalizes a prediction for profile comparisons.
pub fn to_resistivity(pred: &Raster, spec: &NormalizationSpec) -> Raster {
    spec.denormalize_raster(pred)
}
