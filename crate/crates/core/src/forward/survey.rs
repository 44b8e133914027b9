//! Electrode layouts, Wenner and Wenner–Schlumberger quadrupoles, and the
//! mapping of measurements onto an `H × W` pseudo-section.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::ForwardError;
use crate::model::GridSpec;
use crate::raster::Raster;

/// Equally spaced surface electrodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    /// Surface x-coordinates (m), strictly increasing.
    pub positions: Vec<f64>,
    /// Distance between neighbouring electrodes (m).
    pub spacing: f64,
}

impl ElectrodeLayout {
    pub fn new(first: f64, spacing: f64, count: usize) -> Result<Self, ForwardError> {
        if !(spacing > 0.0) || count < 4 {
            return Err(ForwardError::InvalidLayout(format!(
                "need spacing > 0 and at least 4 electrodes (got {spacing}, {count})"
            )));
        }
        Ok(Self {
            positions: (0..count).map(|i| first + i as f64 * spacing).collect(),
            spacing,
        })
    }

    /// One electrode every `every` model columns, starting at the left edge.
    pub fn every_columns(grid: &GridSpec, every: usize) -> Result<Self, ForwardError> {
        if every == 0 {
            return Err(ForwardError::InvalidLayout(
                "electrode step must be >= 1".into(),
            ));
        }
        let count = grid.width / every + 1;
        Self::new(0.0, every as f64 * grid.cell_size, count)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<(), ForwardError> {
        let extent = grid.width as f64 * grid.cell_size;
        let tol = 1e-9 * self.spacing;
        if self.positions.len() < 4 {
            return Err(ForwardError::InvalidLayout(
                "fewer than 4 electrodes".into(),
            ));
        }
        for w in self.positions.windows(2) {
            if ((w[1] - w[0]) - self.spacing).abs() > tol {
                return Err(ForwardError::InvalidLayout(
                    "positions are not equally spaced".into(),
                ));
            }
        }
        let (lo, hi) = (self.positions[0], *self.positions.last().unwrap());
        if lo < -tol || hi > extent + tol {
            return Err(ForwardError::InvalidLayout(format!(
                "electrodes span [{lo}, {hi}] outside [0, {extent}]"
            )));
        }
        Ok(())
    }

    /// Largest level with at least one quadrupole for `kind`.
    pub fn max_feasible_level(&self, kind: ArrayKind) -> usize {
        let gaps = self.len().saturating_sub(1);
        match kind {
            ArrayKind::Wenner => gaps / 3,
            ArrayKind::WennerSchlumberger => gaps.saturating_sub(1) / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArrayKind {
    Wenner,
    WennerSchlumberger,
}

impl ArrayKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Wenner => "wenner",
            Self::WennerSchlumberger => "wenner-schlumberger",
        }
    }

    /// Electrode index offsets `(A, M, N, B)` of a level-`n` quadrupole.
    pub fn offsets(self, n: usize) -> [usize; 4] {
        match self {
            Self::Wenner => [0, n, 2 * n, 3 * n],
            Self::WennerSchlumberger => [0, n, n + 1, 2 * n + 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub kind: ArrayKind,
    pub max_level: usize,
}

impl ArrayConfig {
    /// The deepest configuration the layout allows, capped at `max_rows` tiers.
    pub fn deepest(kind: ArrayKind, layout: &ElectrodeLayout, max_rows: usize) -> Self {
        Self {
            kind,
            max_level: layout.max_feasible_level(kind).min(max_rows),
        }
    }
}

/// Geometric factor `K` (m) of a level-`n` quadrupole with unit spacing `a`.
///
/// Wenner reads level `n` with electrode separation `n·a`, so `K = 2π n a`;
/// Wenner–Schlumberger has `K = π n (n+1) a`.
pub fn geometric_factor(kind: ArrayKind, a: f64, n: usize) -> f64 {
    let n = n as f64;
    match kind {
        ArrayKind::Wenner => 2.0 * PI * n * a,
        ArrayKind::WennerSchlumberger => PI * n * (n + 1.0) * a,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub a_pos: f64,
    pub b_pos: f64,
    pub m_pos: f64,
    pub n_pos: f64,
    pub level: usize,
    pub geometric_factor: f64,
    /// Transfer resistance ΔV/I (Ω).
    pub delta_v_over_i: f64,
    pub apparent_resistivity: f64,
}

impl Measurement {
    pub fn midpoint(&self) -> f64 {
        (self.a_pos + self.b_pos) / 2.0
    }
}

/// Electrode indices of every quadrupole up to `max_level`, level-major.
pub fn quadrupoles(layout: &ElectrodeLayout, array: &ArrayConfig) -> Vec<(usize, [usize; 4])> {
    let mut out = Vec::new();
    for n in 1..=array.max_level {
        let off = array.kind.offsets(n);
        let span = off[3];
        if span >= layout.len() {
            break;
        }
        for start in 0..layout.len() - span {
            out.push((n, off.map(|o| start + o)));
        }
    }
    out
}

/// Apparent-resistivity section on the model grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub kind: ArrayKind,
    pub max_level: usize,
    /// `H × W` apparent resistivity (Ω·m).
    pub values: Raster,
    /// True where a value lies inside the measured trapezoid.
    pub coverage: Vec<bool>,
    pub measurements: Vec<Measurement>,
}

impl Section {
    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|&&c| c).count()
    }
}

/// Resamples measurements onto the grid.
///
/// Level `n` fills tier row `n − 1`. Within a row, values are interpolated
/// linearly between quadrupole midpoints (cell centers at `(j + ½)·h`);
/// columns beyond the first or last midpoint take the nearest value. Rows
/// below the deepest level copy the deepest row.
pub fn resample(
    grid: &GridSpec,
    kind: ArrayKind,
    max_level: usize,
    measurements: Vec<Measurement>,
) -> Result<Section, ForwardError> {
    let (h, w) = (grid.height, grid.width);
    if measurements.is_empty() {
        return Err(ForwardError::NoFeasibleQuadrupole);
    }
    let mut values = Raster::zeros(h, w);
    let mut coverage = vec![false; h * w];
    let deepest = measurements
        .iter()
        .map(|m| m.level)
        .max()
        .unwrap_or(1)
        .min(h);
    for level in 1..=deepest {
        let mut nodes: Vec<(f64, f64)> = measurements
            .iter()
            .filter(|m| m.level == level)
            .map(|m| (m.midpoint() / grid.cell_size - 0.5, m.apparent_resistivity))
            .collect();
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let row = level - 1;
        let (first, last) = (nodes[0].0, nodes[nodes.len() - 1].0);
        let mut seg = 0;
        for j in 0..w {
            let c = j as f64;
            let v = if c <= first {
                nodes[0].1
            } else if c >= last {
                nodes[nodes.len() - 1].1
            } else {
                while nodes[seg + 1].0 < c {
                    seg += 1;
                }
                let (c0, v0) = nodes[seg];
                let (c1, v1) = nodes[seg + 1];
                v0 + (v1 - v0) * (c - c0) / (c1 - c0)
            };
            values.set(row, j, v);
            coverage[row * w + j] = c >= first && c <= last;
        }
    }
    for row in deepest..h {
        for j in 0..w {
            let v = values.get(deepest - 1, j);
            values.set(row, j, v);
        }
    }
    Ok(Section {
        kind,
        max_level,
        values,
        coverage,
        measurements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `K = 2π / (1/AM − 1/AN − 1/BM + 1/BN)` from superposed half-space potentials.
    fn superposition_k(a: f64, m: f64, n: f64, b: f64) -> f64 {
        let g =
            1.0 / (m - a).abs() - 1.0 / (n - a).abs() - 1.0 / (m - b).abs() + 1.0 / (n - b).abs();
        2.0 * PI / g
    }

    #[test]
    fn wenner_factor_matches_superposition() {
        let k = geometric_factor(ArrayKind::Wenner, 3.0, 1);
        assert!((k - superposition_k(0.0, 3.0, 6.0, 9.0)).abs() < 1e-12);
        assert!((k - 6.0 * PI).abs() < 1e-12);
        for n in 1..6 {
            let off = ArrayKind::Wenner.offsets(n).map(|o| o as f64 * 2.0);
            let want = superposition_k(off[0], off[1], off[2], off[3]);
            assert!((geometric_factor(ArrayKind::Wenner, 2.0, n) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn schlumberger_factor_matches_superposition() {
        let k = geometric_factor(ArrayKind::WennerSchlumberger, 1.0, 2);
        assert!((k - 6.0 * PI).abs() < 1e-12);
        for n in 1..8 {
            let off = ArrayKind::WennerSchlumberger.offsets(n).map(|o| o as f64);
            let want = superposition_k(off[0], off[1], off[2], off[3]);
            assert!((geometric_factor(ArrayKind::WennerSchlumberger, 1.0, n) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn factor_is_linear_in_spacing() {
        for kind in [ArrayKind::Wenner, ArrayKind::WennerSchlumberger] {
            for n in 1..5 {
                let k1 = geometric_factor(kind, 1.0, n);
                assert!((geometric_factor(kind, 2.5, n) - 2.5 * k1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn desk_layout_levels() {
        let layout = ElectrodeLayout::every_columns(&GridSpec::desk(), 4).unwrap();
        assert_eq!(layout.len(), 25);
        assert_eq!(layout.max_feasible_level(ArrayKind::Wenner), 8);
        assert_eq!(layout.max_feasible_level(ArrayKind::WennerSchlumberger), 11);
        layout.validate(&GridSpec::desk()).unwrap();
    }

    #[test]
    fn quadrupole_counts_per_level() {
        let layout = ElectrodeLayout::new(0.0, 1.0, 10).unwrap();
        let w = quadrupoles(
            &layout,
            &ArrayConfig {
                kind: ArrayKind::Wenner,
                max_level: 3,
            },
        );
        // 10 − 3n quadrupoles at level n.
        assert_eq!(w.len(), 7 + 4 + 1);
        let s = quadrupoles(
            &layout,
            &ArrayConfig {
                kind: ArrayKind::WennerSchlumberger,
                max_level: 4,
            },
        );
        assert_eq!(s.len(), 7 + 5 + 3 + 1);
    }

    #[test]
    fn layout_outside_grid_is_rejected() {
        let layout = ElectrodeLayout::new(0.0, 10.0, 12).unwrap();
        assert!(layout.validate(&GridSpec::desk()).is_err());
    }

    fn fake(level: usize, a: f64, span: f64, rho: f64) -> Measurement {
        Measurement {
            a_pos: a,
            b_pos: a + span,
            m_pos: 0.0,
            n_pos: 0.0,
            level,
            geometric_factor: 1.0,
            delta_v_over_i: rho,
            apparent_resistivity: rho,
        }
    }

    #[test]
    fn resampling_interpolates_and_extends() {
        let grid = GridSpec::new(8, 16, 1.0).unwrap();
        // Level 1 midpoints at x = 4.5 and 8.5 m -> columns 4 and 8.
        let ms = vec![
            fake(1, 3.0, 3.0, 100.0),
            fake(1, 7.0, 3.0, 200.0),
            fake(2, 4.0, 6.0, 50.0),
        ];
        let s = resample(&grid, ArrayKind::Wenner, 2, ms).unwrap();
        assert_eq!(s.values.dims(), (8, 16));
        assert_eq!(s.values.get(0, 0), 100.0);
        assert_eq!(s.values.get(0, 4), 100.0);
        assert!((s.values.get(0, 6) - 150.0).abs() < 1e-12);
        assert_eq!(s.values.get(0, 15), 200.0);
        assert!(s.coverage[6] && !s.coverage[3] && !s.coverage[9]);
        // Rows below the deepest level copy it.
        for row in 1..8 {
            assert_eq!(s.values.get(row, 0), 50.0);
        }
        assert!(!s.coverage[2 * 16 + 6]);
    }
}
