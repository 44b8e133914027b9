//! Profile resolution and the TOML override file.
//!
//! An override file has up to three sections; every key is optional and
//! falls back to the base profile's value:
//!
//! ```toml
//! base = "desk"            # built-in profile the overrides apply to
//!
//! [dataset]
//! samples = 300            # spread evenly over the five families
//! seed = 0
//! height = 32              # cells
//! width = 96               # cells
//! cell_size = 1.0          # meters
//! electrode_step = 4       # model columns between electrodes
//! split = [10, 1, 1]       # train : validation : test
//!
//! [network]
//! widths = [16, 32, 64, 128, 256]
//! residual_blocks = 2
//!
//! [train]
//! learning_rate = 0.02
//! momentum = 0.9
//! weight_decay = 0.0001
//! batch_size = 5
//! epochs = 30
//! seed = 0
//! alpha = 0.2              # smoothness factor
//! beta = 1.0               # depth-weighting exponent
//! lambda = 8.0             # depth-weighting offset
//! tier_enabled = true
//! ```
//!
//! The defaults shown are those of the `desk` profile.

use std::path::{Path, PathBuf};

use ersinv::dataset::{DatasetConfig, SplitRatio};
use ersinv::model::GridSpec;
use ersinv::profile::{ProfileName, RunProfile};
use serde::Deserialize;

use crate::error::CliError;

pub const PROFILE_DIR_ENV: &str = "ERSINV_PROFILE_DIR";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub base: Option<String>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub cell_size: Option<f64>,
    pub electrode_step: Option<usize>,
    pub split: Option<[u32; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub widths: Option<Vec<usize>>,
    pub residual_blocks: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub tier_enabled: Option<bool>,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Applies every key that is set. Returns true if anything changed.
    pub fn apply(&self, p: &mut RunProfile) -> bool {
        let before = p.clone();
        let d = &self.dataset;
        if let Some(n) = d.samples {
            p.dataset.families = DatasetConfig::desk(n, 0).families;
        }
        set(&mut p.dataset.seed, d.seed);
        let mut grid: GridSpec = p.dataset.grid;
        set(&mut grid.height, d.height);
        set(&mut grid.width, d.width);
        set(&mut grid.cell_size, d.cell_size);
        p.dataset.grid = grid;
        set(&mut p.dataset.forward.electrode_step, d.electrode_step);
        if let Some([train, valid, test]) = d.split {
            p.dataset.split = SplitRatio { train, valid, test };
        }

        set(&mut p.network.widths, self.network.widths.clone());
        set(&mut p.network.residual_blocks, self.network.residual_blocks);

        let t = &self.train;
        set(&mut p.train.learning_rate, t.learning_rate);
        set(&mut p.train.momentum, t.momentum);
        set(&mut p.train.weight_decay, t.weight_decay);
        set(&mut p.train.batch_size, t.batch_size);
        set(&mut p.train.epochs, t.epochs);
        set(&mut p.train.seed, t.seed);
        set(&mut p.train.loss.alpha, t.alpha);
        set(&mut p.train.loss.beta, t.beta);
        set(&mut p.train.loss.lambda, t.lambda);
        set(&mut p.train.tier_enabled, t.tier_enabled);
        *p != before
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn builtin(name: &str) -> Result<RunProfile, CliError> {
    RunProfile::named(name).ok_or_else(|| CliError::Usage(format!("unknown base profile `{name}`")))
}

/// Path of a named profile file under `dir`.
pub fn profile_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.toml"))
}

/// Built-in profile, or `<ERSINV_PROFILE_DIR>/<name>.toml` applied over its
/// `base` (desk when absent), then the `--config` overrides and the seed.
pub fn resolve(
    name: &str,
    profile_dir: Option<&Path>,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<RunProfile, CliError> {
    let mut profile = match RunProfile::named(name) {
        Some(p) => p,
        None => {
            let dir = profile_dir.ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown profile `{name}` and {PROFILE_DIR_ENV} is not set"
                ))
            })?;
            let path = profile_path(dir, name);
            if !path.is_file() {
                return Err(CliError::Usage(format!(
                    "unknown profile `{name}`: {} not found",
                    path.display()
                )));
            }
            let file = ConfigFile::load(&path)?;
            let mut p = builtin(file.base.as_deref().unwrap_or("desk"))?;
            file.apply(&mut p);
            p.name = ProfileName::Custom;
            p
        }
    };
    if let Some(path) = config {
        let file = ConfigFile::load(path)?;
        if let Some(base) = &file.base {
            profile = builtin(base)?;
            profile.name = ProfileName::Custom;
        }
        if file.apply(&mut profile) {
            profile.name = ProfileName::Custom;
        }
    }
    if let Some(s) = seed {
        profile = profile.with_seed(s);
    }
    profile
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ConfigFile, CliError> {
        ConfigFile::parse(text, Path::new("test.toml"))
    }

    #[test]
    fn empty_file_changes_nothing() {
        let mut p = RunProfile::desk();
        assert!(!parse("").unwrap().apply(&mut p));
        assert_eq!(p, RunProfile::desk());
    }

    #[test]
    fn documented_defaults_are_the_desk_profile() {
        let doc = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let mut p = RunProfile::desk();
        parse(&doc).unwrap().apply(&mut p);
        assert_eq!(p, RunProfile::desk());
    }

    #[test]
    fn overrides_apply() {
        let mut p = RunProfile::desk();
        let f = parse("[dataset]\nsamples = 120\n[train]\nepochs = 3\nbeta = 0.0\n").unwrap();
        assert!(f.apply(&mut p));
        assert_eq!(p.dataset.total(), 120);
        assert_eq!(p.train.epochs, 3);
        assert_eq!(p.train.loss.beta, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            parse("[train]\nepoch = 3\n"),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(parse("[trian]\n"), Err(CliError::Usage(_))));
    }

    #[test]
    fn named_profile_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            profile_path(dir.path(), "tiny"),
            "[dataset]\nsamples = 12\n",
        )
        .unwrap();
        let p = resolve("tiny", Some(dir.path()), None, Some(4)).unwrap();
        assert_eq!(p.name, ProfileName::Custom);
        assert_eq!(p.dataset.total(), 12);
        assert_eq!((p.dataset.seed, p.train.seed), (4, 4));
        assert!(matches!(
            resolve("absent", Some(dir.path()), None, None),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            resolve("absent", None, None, None),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn invalid_override_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[network]\nwidths = []\n").unwrap();
        assert!(matches!(
            resolve("desk", None, Some(&path), None),
            Err(CliError::Usage(_))
        ));
    }
}
