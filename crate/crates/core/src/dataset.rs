//! Synthetic dataset generation: sampled models, forward sections, network
//! features, a seeded shuffle and a train/validation/test split.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::{
    self, make_sample, ContainerError, FeatureError, NormalizationSpec, SampleMeta, SamplePair,
};
use crate::forward::{ArrayKind, ForwardConfig, ForwardError, ForwardSolver, WavenumberQuadrature};
use crate::io::write_atomic;
use crate::model::{sample_model, FamilyType, GridSpec, ModelError, ModelFamilyConfig};
use crate::rng::{derive_seed, rng_from_seed, stream};

pub const TRAIN_FILE: &str = "train.ersd";
pub const VALID_FILE: &str = "valid.ersd";
pub const TEST_FILE: &str = "test.ersd";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error("sample {index}: {source}")]
    Model { index: usize, source: ModelError },
    #[error("sample {index}: forward modelling failed: {source}")]
    Forward { index: usize, source: ForwardError },
    #[error("sample {index}: {source}")]
    Feature { index: usize, source: FeatureError },
    #[error(transparent)]
    Solver(#[from] ForwardError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

impl DatasetError {
    /// Generation index of the failing sample, when there is one.
    pub fn sample_index(&self) -> Option<usize> {
        match self {
            Self::Model { index, .. }
            | Self::Forward { index, .. }
            | Self::Feature { index, .. } => Some(*index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: u32,
    pub valid: u32,
    pub test: u32,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 10,
            valid: 1,
            test: 1,
        }
    }
}

impl SplitRatio {
    /// `(train, valid, test)` sizes: validation and test are rounded down
    /// and the remainder goes to training.
    pub fn counts(&self, total: usize) -> Result<(usize, usize, usize), DatasetError> {
        if self.train == 0 || self.valid == 0 || self.test == 0 {
            return Err(DatasetError::Config(format!(
                "split ratios must be positive: {self:?}"
            )));
        }
        let sum = (self.train + self.valid + self.test) as usize;
        let valid = total * self.valid as usize / sum;
        let test = total * self.test as usize / sum;
        Ok((total - valid - test, valid, test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub grid: GridSpec,
    pub families: Vec<ModelFamilyConfig>,
    pub split: SplitRatio,
    pub seed: u64,
    pub normalization: NormalizationSpec,
    pub forward: ForwardConfig,
}

impl DatasetConfig {
    /// `total` samples on the desk grid, spread as evenly as possible over
    /// the five families (earlier families take the remainder).
    pub fn desk(total: usize, seed: u64) -> Self {
        let families = FamilyType::ALL
            .iter()
            .enumerate()
            .map(|(k, &f)| {
                let n = total / 5 + usize::from(k < total % 5);
                ModelFamilyConfig::table(f, n)
            })
            .collect();
        Self {
            grid: GridSpec::desk(),
            families,
            split: SplitRatio::default(),
            seed,
            normalization: NormalizationSpec::default(),
            forward: ForwardConfig::default(),
        }
    }

    /// Full family counts of the `paper` profile.
    pub fn paper(seed: u64) -> Self {
        Self {
            grid: GridSpec::paper(),
            families: FamilyType::ALL
                .iter()
                .map(|&f| ModelFamilyConfig::table(f, f.paper_count()))
                .collect(),
            split: SplitRatio::default(),
            seed,
            normalization: NormalizationSpec::default(),
            forward: ForwardConfig::default(),
        }
    }

    pub fn total(&self) -> usize {
        self.families.iter().map(|f| f.count).sum()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.grid
            .validate()
            .map_err(|e| DatasetError::Config(e.to_string()))?;
        if self.total() == 0 {
            return Err(DatasetError::Config("no samples requested".into()));
        }
        for f in &self.families {
            f.validate()
                .map_err(|e| DatasetError::Config(e.to_string()))?;
        }
        self.split.counts(self.total())?;
        Ok(())
    }

    /// Family of the sample at generation index `index`.
    fn family_of(&self, index: usize) -> &ModelFamilyConfig {
        let mut rest = index;
        for f in &self.families {
            if rest < f.count {
                return f;
            }
            rest -= f.count;
        }
        unreachable!("index {index} beyond total {}", self.total())
    }

    pub fn sample_seed(&self, index: usize) -> u64 {
        derive_seed(derive_seed(self.seed, stream::MODEL), index as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SamplePair>,
    pub valid: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
    pub normalization: NormalizationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub config: DatasetConfig,
    pub family_counts: BTreeMap<FamilyType, usize>,
    /// Generation indices in each split.
    pub splits: SplitIndices,
    pub electrode_positions: Vec<f64>,
    pub wenner_levels: usize,
    pub schlumberger_levels: usize,
    pub quadrature: WavenumberQuadrature,
    /// Container file name to hex SHA-256, filled in when written.
    pub files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Generates every sample in generation order (families in config order).
/// Samples are independent and run in parallel; results are collected by index.
pub fn generate_samples(
    cfg: &DatasetConfig,
    solver: &ForwardSolver,
) -> Result<Vec<SamplePair>, DatasetError> {
    let results: Vec<Result<SamplePair, DatasetError>> = (0..cfg.total())
        .into_par_iter()
        .map(|index| {
            let family = cfg.family_of(index);
            let seed = cfg.sample_seed(index);
            let (model, anomalies) = sample_model(&cfg.grid, family, &mut rng_from_seed(seed))
                .map_err(|source| DatasetError::Model { index, source })?;
            let (wenner, ws) = solver
                .sections(&model)
                .map_err(|source| DatasetError::Forward { index, source })?;
            let meta = SampleMeta {
                family: family.family,
                seed,
                index: index as u64,
                anomalies,
            };
            make_sample(&model, &wenner, &ws, &cfg.normalization, meta)
                .map_err(|source| DatasetError::Feature { index, source })
        })
        .collect();
    results.into_iter().collect()
}

/// Generates, shuffles once with the seed's shuffle stream, and splits.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<(Dataset, DatasetManifest), DatasetError> {
    cfg.validate()?;
    let solver = ForwardSolver::new(cfg.grid, cfg.forward)?;
    let samples = generate_samples(cfg, &solver)?;
    let total = samples.len();
    let (n_train, n_valid, _) = cfg.split.counts(total)?;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, stream::SHUFFLE)));
    let splits = SplitIndices {
        train: order[..n_train].to_vec(),
        valid: order[n_train..n_train + n_valid].to_vec(),
        test: order[n_train + n_valid..].to_vec(),
    };
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let dataset = Dataset {
        train: pick(&splits.train),
        valid: pick(&splits.valid),
        test: pick(&splits.test),
        normalization: cfg.normalization,
    };
    let mut family_counts = BTreeMap::new();
    for f in &cfg.families {
        *family_counts.entry(f.family).or_insert(0) += f.count;
    }
    let manifest = DatasetManifest {
        config: cfg.clone(),
        family_counts,
        splits,
        electrode_positions: solver.layout().positions.clone(),
        wenner_levels: solver.default_array(ArrayKind::Wenner).max_level,
        schlumberger_levels: solver
            .default_array(ArrayKind::WennerSchlumberger)
            .max_level,
        quadrature: solver.quadrature().clone(),
        files: BTreeMap::new(),
    };
    Ok((dataset, manifest))
}

/// Writes one container per split plus `manifest.json` into `dir`; returns
/// the manifest with file digests filled in.
pub fn write_dataset_dir(
    dataset: &Dataset,
    manifest: &DatasetManifest,
    dir: &Path,
) -> Result<DatasetManifest, DatasetError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = manifest.clone();
    manifest.files.clear();
    for (name, pairs) in [
        (TRAIN_FILE, &dataset.train),
        (VALID_FILE, &dataset.valid),
        (TEST_FILE, &dataset.test),
    ] {
        if pairs.is_empty() {
            continue;
        }
        let bytes = features::container::encode(pairs, &dataset.normalization)?;
        write_atomic(&dir.join(name), &bytes)?;
        manifest.files.insert(name.to_string(), sha256_hex(&bytes));
    }
    let json = serde_json::to_vec_pretty(&manifest)?;
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

pub fn load_dataset_dir(dir: &Path) -> Result<(Dataset, DatasetManifest), DatasetError> {
    let manifest: DatasetManifest =
        serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
    let load = |name: &str| -> Result<Vec<SamplePair>, DatasetError> {
        if !manifest.files.contains_key(name) {
            return Ok(Vec::new());
        }
        Ok(features::read_dataset(&dir.join(name))?.0)
    };
    let dataset = Dataset {
        train: load(TRAIN_FILE)?,
        valid: load(VALID_FILE)?,
        test: load(TEST_FILE)?,
        normalization: manifest.config.normalization,
    };
    Ok((dataset, manifest))
}
