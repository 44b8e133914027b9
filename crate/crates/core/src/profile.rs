//! Named run profiles: grid, survey, network size and training settings
//! bundled under one name.

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetConfig;
use crate::forward::{ArrayKind, ElectrodeLayout};
use crate::nn::network::DESK_WIDTHS;
use crate::nn::NetworkSpec;
use crate::train::{network_for, TrainConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid profile: {0}")]
pub struct ProfileError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileName {
    Paper,
    Desk,
    Custom,
}

impl ProfileName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Paper => "paper",
            Self::Desk => "desk",
            Self::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Channel width of each encoder level; the last one is the bottleneck.
    pub widths: Vec<usize>,
    pub residual_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProfile {
    pub name: ProfileName,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

/// Learning rate of the desk profile. The depth weights multiply the value
/// gradient by 2.8 to 6.2, and with 0.1 a 16-sample overfit on the desk
/// grid stalls or plateaus; 0.02 trains.
pub const DESK_LEARNING_RATE: f64 = 0.02;

impl RunProfile {
    /// 300 models on the 32×96 grid, desk-width network, 30 epochs.
    pub fn desk() -> Self {
        Self {
            name: ProfileName::Desk,
            dataset: DatasetConfig::desk(300, 0),
            network: NetworkConfig {
                widths: DESK_WIDTHS.to_vec(),
                residual_blocks: 2,
            },
            train: TrainConfig {
                learning_rate: DESK_LEARNING_RATE,
                epochs: 30,
                ..TrainConfig::default()
            },
        }
    }

    /// Full family counts on the 64×304 grid with the wide network and the
    /// published optimizer settings.
    pub fn paper() -> Self {
        Self {
            name: ProfileName::Paper,
            dataset: DatasetConfig::paper(0),
            network: NetworkConfig {
                widths: DESK_WIDTHS.iter().map(|w| 4 * w).collect(),
                residual_blocks: 2,
            },
            train: TrainConfig::default(),
        }
    }

    /// Built-in profile by name; `None` for anything but `desk` or `paper`.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    /// Sets every seed (dataset and training) to `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn network_spec(&self) -> Result<NetworkSpec, ProfileError> {
        network_for(
            &self.train,
            &self.network.widths,
            self.network.residual_blocks,
        )
        .map_err(|e| ProfileError(e.to_string()))
    }

    /// Checks the dataset, survey, network and training settings against
    /// each other without running any solve.
    pub fn validate(&self) -> Result<(), ProfileError> {
        let err = |e: &dyn std::fmt::Display| ProfileError(e.to_string());
        self.dataset.validate().map_err(|e| err(&e))?;
        let grid = self.dataset.grid;
        let layout = ElectrodeLayout::every_columns(&grid, self.dataset.forward.electrode_step)
            .map_err(|e| err(&e))?;
        layout.validate(&grid).map_err(|e| err(&e))?;
        for kind in [ArrayKind::Wenner, ArrayKind::WennerSchlumberger] {
            if layout.max_feasible_level(kind) == 0 {
                return Err(ProfileError(format!(
                    "{} electrodes admit no {} quadrupole",
                    layout.len(),
                    kind.name()
                )));
            }
        }
        self.train.validate().map_err(|e| err(&e))?;
        let spec = self.network_spec()?;
        spec.output_dims(grid.height, grid.width)
            .map_err(|e| err(&e))?;
        Ok(())
    }
}
