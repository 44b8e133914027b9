//! Network inputs: tier map, log normalization, channel assembly and noise.

pub mod container;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::forward::Section;
use crate::model::{AnomalySpec, FamilyType, ResistivityModel};
use crate::raster::Raster;
use crate::rng::Rng;

pub use container::{read_dataset, write_dataset, ContainerError};

/// Input channel indices.
pub const WENNER: usize = 0;
pub const SCHLUMBERGER: usize = 1;
pub const TIER: usize = 2;
pub const INPUT_CHANNELS: usize = 3;

/// Default noise reference gain in normalized units.
pub const DEFAULT_NOISE_GAIN: f64 = 0.05;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeatureError {
    #[error("value {value} outside normalization range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid normalization bounds [{0}, {1}]")]
    InvalidBounds(f64, f64),
}

/// `t[i][j] = i`, surface row 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TierMap {
    pub values: Raster,
}

impl TierMap {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            values: Raster::from_fn(height, width, |i, _| i as f64),
        }
    }

    pub fn height(&self) -> usize {
        self.values.rows()
    }

    /// Tier numbers divided by `H − 1`; all zero for a single row.
    pub fn scaled(&self) -> Raster {
        let h = self.height();
        if h <= 1 {
            return Raster::zeros(h, self.values.cols());
        }
        self.values.map(|t| t / (h - 1) as f64)
    }
}

/// Log10 map of `[lo, hi]` Ω·m onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub lo: f64,
    pub hi: f64,
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self {
            lo: 10.0,
            hi: 2000.0,
        }
    }
}

impl NormalizationSpec {
    pub fn new(lo: f64, hi: f64) -> Result<Self, FeatureError> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(FeatureError::InvalidBounds(lo, hi));
        }
        Ok(Self { lo, hi })
    }

    pub fn normalize(&self, x: f64) -> Result<f64, FeatureError> {
        if !(x >= self.lo && x <= self.hi) {
            return Err(FeatureError::OutOfRange {
                value: x,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(self.normalize_clamped(x))
    }

    /// Clamps `x` into `[lo, hi]` before mapping.
    pub fn normalize_clamped(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo, self.hi);
        let (l, h) = (self.lo.log10(), self.hi.log10());
        ((x.log10() - l) / (h - l)).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        let (l, h) = (self.lo.log10(), self.hi.log10());
        10f64.powf(l + v * (h - l))
    }

    pub fn normalize_raster(&self, r: &Raster) -> Raster {
        r.map(|x| self.normalize_clamped(x))
    }

    pub fn denormalize_raster(&self, r: &Raster) -> Raster {
        r.map(|v| self.denormalize(v))
    }
}

/// How the tier channel enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TierMode {
    /// `i / (H − 1)`.
    Scaled,
    /// Raw tier numbers `i`.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub family: FamilyType,
    pub seed: u64,
    /// Position in generation order.
    pub index: u64,
    pub anomalies: Vec<AnomalySpec>,
}

/// One input/target pair, values quantized to `f32` precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    /// Normalized Wenner, normalized Wenner–Schlumberger, scaled tier.
    pub input: [Raster; INPUT_CHANNELS],
    /// Normalized resistivity model.
    pub target: Raster,
    pub meta: SampleMeta,
}

impl SamplePair {
    pub fn dims(&self) -> (usize, usize) {
        self.target.dims()
    }
}

fn quantize(r: Raster) -> Raster {
    r.map(|v| v as f32 as f64)
}

/// Stacks the normalized sections and the tier channel in the fixed order
/// [`WENNER`], [`SCHLUMBERGER`], [`TIER`].
pub fn assemble_input(
    wenner: &Section,
    ws: &Section,
    tier: &TierMap,
    spec: &NormalizationSpec,
    mode: TierMode,
) -> Result<[Raster; INPUT_CHANNELS], FeatureError> {
    let dims = tier.values.dims();
    for found in [wenner.values.dims(), ws.values.dims()] {
        if found != dims {
            return Err(FeatureError::DimensionMismatch {
                expected: dims,
                found,
            });
        }
    }
    let tier_channel = match mode {
        TierMode::Scaled => tier.scaled(),
        TierMode::Raw => tier.values.clone(),
    };
    Ok([
        quantize(spec.normalize_raster(&wenner.values)),
        quantize(spec.normalize_raster(&ws.values)),
        quantize(tier_channel),
    ])
}

/// Builds a stored sample from forward-modelled sections and the true model.
pub fn make_sample(
    model: &ResistivityModel,
    wenner: &Section,
    ws: &Section,
    spec: &NormalizationSpec,
    meta: SampleMeta,
) -> Result<SamplePair, FeatureError> {
    let tier = TierMap::new(model.grid.height, model.grid.width);
    let input = assemble_input(wenner, ws, &tier, spec, TierMode::Scaled)?;
    let target = quantize(spec.normalize_raster(&model.values));
    Ok(SamplePair {
        input,
        target,
        meta,
    })
}

/// White Gaussian noise intensity in dBW relative to the normalized signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub level_dbw: f64,
    /// Reference gain γ.
    pub gain: f64,
}

impl NoiseSpec {
    pub fn new(level_dbw: f64) -> Self {
        Self {
            level_dbw,
            gain: DEFAULT_NOISE_GAIN,
        }
    }

    /// `γ · sqrt(10^(dBW/10))`.
    pub fn sigma(&self) -> f64 {
        self.gain * 10f64.powf(self.level_dbw / 10.0).sqrt()
    }
}

/// i.i.d. `N(0, σ²)` field drawn in row-major order.
pub fn noise_field(rows: usize, cols: usize, spec: &NoiseSpec, rng: &mut Rng) -> Raster {
    let sigma = spec.sigma();
    if !(sigma > 0.0) {
        return Raster::zeros(rows, cols);
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    Raster::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Adds `field` to a normalized channel and clamps to `[0, 1]`.
pub fn apply_noise(values: &Raster, field: &Raster) -> Raster {
    let data = values
        .as_slice()
        .iter()
        .zip(field.as_slice())
        .map(|(v, n)| (v + n).clamp(0.0, 1.0))
        .collect();
    Raster::from_vec(values.rows(), values.cols(), data).expect("matching dimensions")
}

pub fn add_noise(values: &Raster, spec: &NoiseSpec, rng: &mut Rng) -> Raster {
    let field = noise_field(values.rows(), values.cols(), spec, rng);
    apply_noise(values, &field)
}

/// Noisy copy of a sample: both data channels get independent noise, the
/// tier channel and target are untouched.
pub fn noisy_sample(sample: &SamplePair, spec: &NoiseSpec, rng: &mut Rng) -> SamplePair {
    let mut out = sample.clone();
    for c in [WENNER, SCHLUMBERGER] {
        out.input[c] = add_noise(&sample.input[c], spec, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn tier_map_rows() {
        let t = TierMap::new(4, 3);
        for i in 0..4 {
            assert_eq!(t.values.row(i), &[i as f64; 3]);
        }
        let flat = TierMap::new(1, 7);
        assert!(flat.values.as_slice().iter().all(|&v| v == 0.0));
        assert!(flat.scaled().as_slice().iter().all(|&v| v == 0.0));
        let t33 = TierMap::new(33, 5);
        assert_eq!(t33.scaled().max(), 1.0);
        assert_eq!(t33.scaled().row(32), &[1.0; 5]);
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let n = NormalizationSpec::default();
        assert_eq!(n.normalize(10.0).unwrap(), 0.0);
        assert_eq!(n.normalize(2000.0).unwrap(), 1.0);
        let want = (500f64.log10() - 1.0) / (2000f64.log10() - 1.0);
        assert!((n.normalize(500.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.7384).abs() < 5e-5);
        assert!((n.denormalize(n.normalize(137.5).unwrap()) - 137.5).abs() < 1e-9);
        assert!(matches!(
            n.normalize(5.0),
            Err(FeatureError::OutOfRange { .. })
        ));
        assert!(NormalizationSpec::new(10.0, 10.0).is_err());
    }

    #[test]
    fn noise_sigma_formula() {
        let (s1, s3) = (NoiseSpec::new(1.0).sigma(), NoiseSpec::new(3.0).sigma());
        assert!((s3 / s1 - 10f64.powf(0.2).sqrt()).abs() < 1e-12);
        assert_eq!(NoiseSpec::new(f64::NEG_INFINITY).sigma(), 0.0);
    }

    #[test]
    fn zero_noise_leaves_channel_unchanged() {
        let x = Raster::from_fn(5, 6, |i, j| (i * 6 + j) as f64 / 30.0);
        let y = add_noise(
            &x,
            &NoiseSpec::new(f64::NEG_INFINITY),
            &mut rng_from_seed(1),
        );
        assert_eq!(x, y);
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let spec = NoiseSpec::new(3.0);
        let f = noise_field(1000, 1000, &spec, &mut rng_from_seed(9));
        let n = f.as_slice().len() as f64;
        let mean = f.as_slice().iter().sum::<f64>() / n;
        let var = f.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = spec.sigma().powi(2);
        assert!((var - want).abs() / want < 0.01, "{var} vs {want}");
    }
}
