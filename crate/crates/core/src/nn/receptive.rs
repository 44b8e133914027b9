//! Exact receptive-field accounting.
//!
//! An output cell is mapped back through every stage as an integer interval
//! of input cells; the reported extent is the widest such interval over all
//! alignment phases of the output cell. The textbook `rf ← rf + (k − 1)·jump`
//! recursion averages over phases and over-counts transposed convolutions,
//! whose outputs each read a single input cell.

use serde::Serialize;

use super::network::{LayerKind, NetworkSpec};

/// A spatial stage: square kernel with a down-sampling (`stride > 1`) or
/// up-sampling (`upsample > 1`) factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RfStage {
    pub kernel: usize,
    pub stride: usize,
    pub upsample: usize,
}

impl RfStage {
    /// Stride-1 "same" convolution.
    pub fn conv(kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            upsample: 1,
        }
    }

    pub fn pool(size: usize) -> Self {
        Self {
            kernel: size,
            stride: size,
            upsample: 1,
        }
    }

    pub fn transposed(size: usize) -> Self {
        Self {
            kernel: size,
            stride: 1,
            upsample: size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RfRow {
    pub layer: usize,
    pub label: String,
    pub rf: usize,
    /// Input cells between adjacent output cells.
    pub jump: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReceptiveFieldReport {
    pub rows: Vec<RfRow>,
    pub final_rf: usize,
}

impl ReceptiveFieldReport {
    /// Plain-text table, one line per spatial layer.
    pub fn table(&self) -> String {
        let mut s = String::from("layer  kind            rf      jump\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{:>5}  {:<12} {:>5} {:>9.4}\n",
                r.layer, r.label, r.rf, r.jump
            ));
        }
        s.push_str(&format!("final receptive field: {}\n", self.final_rf));
        s
    }
}

/// Input interval read by the output interval `[a, b]` of one stage.
fn back(st: RfStage, (a, b): (i64, i64)) -> (i64, i64) {
    let k = st.kernel as i64;
    if st.upsample > 1 {
        let u = st.upsample as i64;
        (
            (a - k + 1).div_euclid(u) + i64::from((a - k + 1).rem_euclid(u) != 0),
            b.div_euclid(u),
        )
    } else if st.stride > 1 {
        let s = st.stride as i64;
        (s * a, s * b + k - 1)
    } else {
        (a - (k - 1) / 2, b + k / 2)
    }
}

/// Widest input footprint of a single output cell after `stages`.
fn exact_extent(stages: &[RfStage]) -> usize {
    let period: i64 = stages.iter().map(|s| s.stride as i64).product();
    (0..period)
        .map(|p| {
            let (a, b) = stages.iter().rev().fold((p, p), |iv, &st| back(st, iv));
            (b - a + 1) as usize
        })
        .max()
        .unwrap_or(1)
}

fn report(stages: &[(usize, String, RfStage)]) -> ReceptiveFieldReport {
    let mut jump = 1.0;
    let plain: Vec<RfStage> = stages.iter().map(|s| s.2).collect();
    let rows: Vec<RfRow> = stages
        .iter()
        .enumerate()
        .map(|(k, (layer, label, st))| {
            jump = jump * st.stride as f64 / st.upsample as f64;
            RfRow {
                layer: *layer,
                label: label.clone(),
                rf: exact_extent(&plain[..=k]),
                jump,
            }
        })
        .collect();
    let final_rf = rows.last().map_or(1, |r| r.rf);
    ReceptiveFieldReport { rows, final_rf }
}

/// Receptive field of a plain chain of stages.
pub fn receptive_field_of(stages: &[RfStage]) -> ReceptiveFieldReport {
    let labelled: Vec<(usize, String, RfStage)> = stages
        .iter()
        .enumerate()
        .map(|(i, &st)| {
            (
                i,
                format!("k{}s{}u{}", st.kernel, st.stride, st.upsample),
                st,
            )
        })
        .collect();
    report(&labelled)
}

/// Walks the main path of a network. Skip and residual branches are not
/// followed; they read subsets of the main-path footprint.
pub fn receptive_field(spec: &NetworkSpec) -> ReceptiveFieldReport {
    let stages: Vec<(usize, String, RfStage)> = spec
        .layers
        .iter()
        .enumerate()
        .filter_map(|(layer, l)| {
            let (st, label) = match l.kind {
                LayerKind::Conv3x3 => (RfStage::conv(3), "conv3x3"),
                LayerKind::MaxPool2x2 => (RfStage::pool(2), "maxpool2x2"),
                LayerKind::TConv2x2 => (RfStage::transposed(2), "tconv2x2"),
                _ => return None,
            };
            Some((layer, label.to_string(), st))
        })
        .collect();
    report(&stages)
}
