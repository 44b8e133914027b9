//! Resistivity-model grids, anomalous bodies and the five synthetic model
//! families.
//!
//! A model is a homogeneous 500 Ω·m half-space with one to three embedded
//! bodies. Rectangular bodies are a single block; declining bodies are a
//! down-right staircase of congruent blocks, each offset from the previous
//! one by its own height (down) and width (right).

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::raster::Raster;
use crate::rng::Rng;

/// Resistivity of the homogeneous host medium (Ω·m).
pub const BACKGROUND_RESISTIVITY: f64 = 500.0;
/// Conductive body values (Ω·m).
pub const LOW_VALUES: [f64; 3] = [10.0, 20.0, 50.0];
/// Resistive body values (Ω·m).
pub const HIGH_VALUES: [f64; 3] = [1000.0, 1500.0, 2000.0];

pub const DEFAULT_MIN_SEPARATION: usize = 3;
pub const DEFAULT_MARGIN: usize = 2;
/// Placement attempts before [`ModelError::Infeasible`].
pub const PLACEMENT_RETRIES: usize = 200;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("anomaly rows {rows:?} cols {cols:?} exceed the {height}x{width} grid")]
    OutOfBounds {
        rows: (usize, usize),
        cols: (usize, usize),
        height: usize,
        width: usize,
    },
    #[error("anomaly overlaps an existing body at cell ({0}, {1})")]
    Overlap(usize, usize),
    #[error("invalid anomaly: {0}")]
    InvalidAnomaly(String),
    #[error("invalid family config: {0}")]
    InvalidConfig(String),
    #[error("no placement satisfies the separation constraint after {0} attempts")]
    Infeasible(usize),
    #[error("non-positive resistivity {value} at cell ({row}, {col})")]
    NonPositive { row: usize, col: usize, value: f64 },
}

/// Uniform square-cell grid. Rows run down (depth), columns run along the line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Cell edge length in meters.
    pub cell_size: f64,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, cell_size: f64) -> Result<Self, ModelError> {
        let g = Self {
            height,
            width,
            cell_size,
        };
        g.validate()?;
        Ok(g)
    }

    /// 32 × 96 cells of 1 m.
    pub fn desk() -> Self {
        Self {
            height: 32,
            width: 96,
            cell_size: 1.0,
        }
    }

    /// 64 × 304 cells of 1 m.
    pub fn paper() -> Self {
        Self {
            height: 64,
            width: 304,
            cell_size: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.height < 8 {
            return Err(ModelError::InvalidGrid(format!(
                "height {} < 8",
                self.height
            )));
        }
        if self.width < 16 {
            return Err(ModelError::InvalidGrid(format!(
                "width {} < 16",
                self.width
            )));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(ModelError::InvalidGrid(format!(
                "cell size {} must be positive",
                self.cell_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistivityModel {
    pub grid: GridSpec,
    /// Resistivity of the host medium; cells differing from it are anomalous.
    pub background: f64,
    pub values: Raster,
}

impl ResistivityModel {
    pub fn homogeneous(grid: GridSpec, rho: f64) -> Self {
        Self {
            grid,
            background: rho,
            values: Raster::filled(grid.height, grid.width, rho),
        }
    }

    /// Wraps a raster; the background is taken as its most frequent value.
    pub fn from_raster(values: Raster, cell_size: f64) -> Result<Self, ModelError> {
        let grid = GridSpec::new(values.rows(), values.cols(), cell_size)?;
        let background = values.mode();
        let m = Self {
            grid,
            background,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.grid.validate()?;
        for i in 0..self.grid.height {
            for j in 0..self.grid.width {
                let v = self.values.get(i, j);
                if !(v > 0.0) || !v.is_finite() {
                    return Err(ModelError::NonPositive {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values.get(row, col)
    }

    pub fn is_anomalous(&self, row: usize, col: usize) -> bool {
        self.values.get(row, col) != self.background
    }

    pub fn anomalous_cell_count(&self) -> usize {
        self.values
            .as_slice()
            .iter()
            .filter(|&&v| v != self.background)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BodyShape {
    Rectangular,
    Declining,
}

/// A block of cells `height_cells × width_cells`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodySize {
    pub height: usize,
    pub width: usize,
}

impl BodySize {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySpec {
    pub shape: BodyShape,
    pub height_cells: usize,
    pub width_cells: usize,
    /// Number of staircase steps; 1 for rectangular bodies.
    pub layers: usize,
    pub value: f64,
    /// (row, col) of the top-left cell.
    pub anchor: (usize, usize),
}

/// Inclusive cell rectangle `(row0, col0, row1, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl CellRect {
    /// Chebyshev distance between the closest cells of two rectangles.
    pub fn chebyshev_distance(&self, other: &CellRect) -> usize {
        let gap = |a0: usize, a1: usize, b0: usize, b1: usize| {
            b0.saturating_sub(a1).max(a0.saturating_sub(b1))
        };
        gap(self.row0, self.row1, other.row0, other.row1)
            .max(gap(self.col0, self.col1, other.col0, other.col1))
    }
}

impl AnomalySpec {
    pub fn rectangular(height: usize, width: usize, value: f64, anchor: (usize, usize)) -> Self {
        Self {
            shape: BodyShape::Rectangular,
            height_cells: height,
            width_cells: width,
            layers: 1,
            value,
            anchor,
        }
    }

    pub fn declining(
        height: usize,
        width: usize,
        layers: usize,
        value: f64,
        anchor: (usize, usize),
    ) -> Self {
        Self {
            shape: BodyShape::Declining,
            height_cells: height,
            width_cells: width,
            layers,
            value,
            anchor,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.height_cells == 0 || self.width_cells == 0 {
            return Err(ModelError::InvalidAnomaly("empty body".into()));
        }
        if !LOW_VALUES.contains(&self.value) && !HIGH_VALUES.contains(&self.value) {
            return Err(ModelError::InvalidAnomaly(format!(
                "value {} is not an allowed anomaly value",
                self.value
            )));
        }
        match self.shape {
            BodyShape::Rectangular if self.layers != 1 => Err(ModelError::InvalidAnomaly(
                "rectangular bodies have exactly one layer".into(),
            )),
            BodyShape::Declining if !(3..=5).contains(&self.layers) => {
                Err(ModelError::InvalidAnomaly(format!(
                    "declining layers {} not in 3..=5",
                    self.layers
                )))
            }
            _ => Ok(()),
        }
    }

    /// Row and column extent of the whole body.
    pub fn extent(&self) -> (usize, usize) {
        (
            self.height_cells * self.layers,
            self.width_cells * self.layers,
        )
    }

    /// The blocks making up the body; may extend past the grid.
    pub fn rects(&self) -> Vec<CellRect> {
        (0..self.layers)
            .map(|step| {
                let row0 = self.anchor.0 + step * self.height_cells;
                let col0 = self.anchor.1 + step * self.width_cells;
                CellRect {
                    row0,
                    col0,
                    row1: row0 + self.height_cells - 1,
                    col1: col0 + self.width_cells - 1,
                }
            })
            .collect()
    }

    /// Minimum Chebyshev distance between any cell of `self` and of `other`.
    pub fn distance_to(&self, other: &AnomalySpec) -> usize {
        let theirs = other.rects();
        self.rects()
            .iter()
            .flat_map(|a| theirs.iter().map(move |b| a.chebyshev_distance(b)))
            .min()
            .unwrap_or(usize::MAX)
    }
}

/// Writes `spec` into a copy of `model`.
pub fn place_anomaly(
    model: &ResistivityModel,
    spec: &AnomalySpec,
) -> Result<ResistivityModel, ModelError> {
    spec.validate()?;
    let (h, w) = (model.grid.height, model.grid.width);
    let rects = spec.rects();
    for r in &rects {
        if r.row1 >= h || r.col1 >= w {
            return Err(ModelError::OutOfBounds {
                rows: (r.row0, r.row1),
                cols: (r.col0, r.col1),
                height: h,
                width: w,
            });
        }
    }
    for r in &rects {
        for i in r.row0..=r.row1 {
            for j in r.col0..=r.col1 {
                if model.is_anomalous(i, j) {
                    return Err(ModelError::Overlap(i, j));
                }
            }
        }
    }
    let mut out = model.clone();
    for r in &rects {
        for i in r.row0..=r.row1 {
            for j in r.col0..=r.col1 {
                out.values.set(i, j, spec.value);
            }
        }
    }
    Ok(out)
}

/// The five model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FamilyType {
    /// Single rectangular body.
    I,
    /// Two rectangular bodies.
    II,
    /// Three rectangular bodies.
    III,
    /// Single declining body.
    IV,
    /// Two declining bodies.
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contrast {
    Low,
    High,
}

impl FamilyType {
    pub const ALL: [FamilyType; 5] = [Self::I, Self::II, Self::III, Self::IV, Self::V];

    pub fn body_count(self) -> usize {
        match self {
            Self::I | Self::IV => 1,
            Self::II | Self::V => 2,
            Self::III => 3,
        }
    }

    pub fn shape(self) -> BodyShape {
        match self {
            Self::IV | Self::V => BodyShape::Declining,
            _ => BodyShape::Rectangular,
        }
    }

    /// The allowed low/high mixes for this family.
    pub fn contrast_mixes(self) -> &'static [&'static [Contrast]] {
        use Contrast::{High as H, Low as L};
        match self {
            Self::I | Self::IV => &[&[L], &[H]],
            Self::II | Self::V => &[&[L, L], &[H, H], &[L, H]],
            Self::III => &[&[L, L, L], &[H, H, H], &[L, H, H], &[L, L, H]],
        }
    }

    /// Body sizes listed for the family. Declining entries are
    /// `height × width` of one staircase step.
    pub fn table_sizes(self) -> Vec<BodySize> {
        let s = BodySize::new;
        match self {
            Self::I => vec![
                s(4, 4),
                s(6, 6),
                s(8, 8),
                s(10, 10),
                s(12, 12),
                s(14, 14),
                s(16, 16),
                s(18, 18),
                s(20, 20),
                s(8, 30),
                s(20, 10),
            ],
            Self::II | Self::III => vec![s(8, 8), s(10, 10), s(8, 30), s(20, 10)],
            Self::IV => vec![s(4, 8), s(5, 10), s(6, 12)],
            Self::V => vec![s(4, 8), s(6, 12)],
        }
    }

    pub fn table_layers(self) -> Vec<usize> {
        match self {
            Self::IV => vec![3, 4, 5],
            Self::V => vec![4, 5],
            _ => vec![1],
        }
    }

    /// Sample count of the full-scale data set.
    pub fn paper_count(self) -> usize {
        match self {
            Self::I => 5236,
            Self::II => 7560,
            Self::III => 7920,
            Self::IV => 6426,
            Self::V => 9072,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::I => 1,
            Self::II => 2,
            Self::III => 3,
            Self::IV => 4,
            Self::V => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code).wrapping_sub(1)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFamilyConfig {
    pub family: FamilyType,
    pub count: usize,
    pub allowed_sizes: Vec<BodySize>,
    /// Step counts for declining bodies; ignored for rectangular ones.
    pub layers: Vec<usize>,
    pub min_separation: usize,
    pub margin: usize,
}

impl ModelFamilyConfig {
    /// The family's listed sizes with default separation and margin.
    pub fn table(family: FamilyType, count: usize) -> Self {
        Self {
            family,
            count,
            allowed_sizes: family.table_sizes(),
            layers: family.table_layers(),
            min_separation: DEFAULT_MIN_SEPARATION,
            margin: DEFAULT_MARGIN,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.allowed_sizes.is_empty() {
            return Err(ModelError::InvalidConfig("allowed_sizes is empty".into()));
        }
        if self.min_separation < 1 {
            return Err(ModelError::InvalidConfig(
                "min_separation must be >= 1".into(),
            ));
        }
        if self
            .allowed_sizes
            .iter()
            .any(|s| s.height == 0 || s.width == 0)
        {
            return Err(ModelError::InvalidConfig("zero body size".into()));
        }
        if self.family.shape() == BodyShape::Declining
            && (self.layers.is_empty() || self.layers.iter().any(|l| !(3..=5).contains(l)))
        {
            return Err(ModelError::InvalidConfig(
                "declining layers must be a nonempty subset of 3..=5".into(),
            ));
        }
        Ok(())
    }

    /// (size, layers) combinations whose full extent fits inside the margins.
    fn feasible_shapes(&self, grid: &GridSpec) -> Vec<(BodySize, usize)> {
        let avail_h = grid.height.saturating_sub(2 * self.margin);
        let avail_w = grid.width.saturating_sub(2 * self.margin);
        let layers: &[usize] = match self.family.shape() {
            BodyShape::Rectangular => &[1],
            BodyShape::Declining => &self.layers,
        };
        let mut out = Vec::new();
        for size in &self.allowed_sizes {
            for &l in layers {
                if size.height * l <= avail_h && size.width * l <= avail_w {
                    out.push((*size, l));
                }
            }
        }
        out
    }
}

/// Draws one model of the configured family.
///
/// Sizes are drawn uniformly from the combinations that fit the grid; anchors
/// are uniform over positions keeping the body `margin` cells from every edge.
pub fn sample_model(
    grid: &GridSpec,
    cfg: &ModelFamilyConfig,
    rng: &mut Rng,
) -> Result<(ResistivityModel, Vec<AnomalySpec>), ModelError> {
    grid.validate()?;
    cfg.validate()?;
    let shapes = cfg.feasible_shapes(grid);
    if shapes.is_empty() {
        return Err(ModelError::Infeasible(0));
    }
    let mixes = cfg.family.contrast_mixes();
    let mut contrasts = mixes[rng.random_range(0..mixes.len())].to_vec();
    contrasts.shuffle(rng);
    let values: Vec<f64> = contrasts
        .iter()
        .map(|c| match c {
            Contrast::Low => LOW_VALUES[rng.random_range(0..LOW_VALUES.len())],
            Contrast::High => HIGH_VALUES[rng.random_range(0..HIGH_VALUES.len())],
        })
        .collect();

    'attempt: for _ in 0..PLACEMENT_RETRIES {
        let mut bodies: Vec<AnomalySpec> = Vec::with_capacity(values.len());
        for &value in &values {
            let (size, layers) = shapes[rng.random_range(0..shapes.len())];
            let (eh, ew) = (size.height * layers, size.width * layers);
            let row_hi = grid.height - cfg.margin - eh;
            let col_hi = grid.width - cfg.margin - ew;
            let anchor = (
                rng.random_range(cfg.margin..=row_hi),
                rng.random_range(cfg.margin..=col_hi),
            );
            let spec = match cfg.family.shape() {
                BodyShape::Rectangular => {
                    AnomalySpec::rectangular(size.height, size.width, value, anchor)
                }
                BodyShape::Declining => {
                    AnomalySpec::declining(size.height, size.width, layers, value, anchor)
                }
            };
            if bodies
                .iter()
                .any(|b| b.distance_to(&spec) < cfg.min_separation)
            {
                continue 'attempt;
            }
            bodies.push(spec);
        }
        let mut model = ResistivityModel::homogeneous(*grid, BACKGROUND_RESISTIVITY);
        for b in &bodies {
            model = place_anomaly(&model, b)?;
        }
        return Ok((model, bodies));
    }
    Err(ModelError::Infeasible(PLACEMENT_RETRIES))
}
