//! The JSON experiment document shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anomaly::DEFAULT_QUANTILE;
use crate::attacks::{AttackSpec, DefenseSpec};
use crate::error::{Error, Result};
use crate::eval::McdSettings;
use crate::geometry::{FilterSpec, GridSpec};
use crate::scene::dataset::SplitSizes;
use crate::scene::{FamilyName, LidarModel, SceneFamily};
use crate::segnet::{NetConfig, TrainConfig};

/// A preset name or a full family description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilySource {
    Preset(FamilyName),
    Custom(SceneFamily),
}

impl FamilySource {
    pub fn resolve(&self) -> SceneFamily {
        match self {
            FamilySource::Preset(name) => SceneFamily::preset(*name),
            FamilySource::Custom(f) => f.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub family: FamilySource,
    pub lidar: LidarModel,
    pub grid: GridSpec,
    pub filter: FilterSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defense: Option<DefenseSpec>,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub splits: SplitSizes,
    pub mcd: McdSettings,
    pub anomaly_quantile: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: FamilySource::Preset(FamilyName::OutdoorSparse),
            lidar: LidarModel {
                n_beams: 720,
                max_range: 75.0,
                range_noise_sigma: 0.0,
                dropout_prob: 0.0,
                azimuth_offset: std::f64::consts::PI / 720.0,
            },
            grid: GridSpec { extent: 32.0, resolution: 64 },
            filter: FilterSpec::default(),
            attack: None,
            defense: None,
            net: NetConfig { depth: 4, base_channels: 8, dropout_rate: 0.1, resolution: 64 },
            train: TrainConfig::default(),
            splits: SplitSizes { train: 400, val: 50, test: 100 },
            mcd: McdSettings::default(),
            anomaly_quantile: DEFAULT_QUANTILE,
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Missing(format!("config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.family.resolve().validate()?;
        self.lidar.validate()?;
        self.grid.validate()?;
        self.filter.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.attack {
            a.validate()?;
        }
        if let Some(d) = &self.defense {
            d.validate()?;
        }
        if self.net.resolution != self.grid.resolution {
            return Err(Error::config(format!(
                "net resolution {} differs from grid resolution {}",
                self.net.resolution, self.grid.resolution
            )));
        }
        if self.mcd.passes == 0 || !(self.mcd.threshold > 0.0 && self.mcd.threshold < 1.0) {
            return Err(Error::config("mcd needs at least one pass and a threshold in (0, 1)"));
        }
        if !(self.anomaly_quantile > 0.0 && self.anomaly_quantile < 1.0) {
            return Err(Error::config("anomaly_quantile must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Sets the global seed; training and MC dropout reuse it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.mcd.seed = seed;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
