use std::path::Path;

use dtp_core::eval::ParzenConfig;
use dtp_core::model::CvaeConfig;
use dtp_core::scene::SceneSpec;
use dtp_core::trainer::TrainConfig;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::CliError;

/// KL weight of the shipped training preset. The library default is the
/// unweighted objective; at this data scale it leaves most prior samples in
/// regions the decoder never saw during training, so the CLI trains with a
/// heavier penalty and records the value in every checkpoint header.
pub const PRESET_KL_WEIGHT: f64 = 20.0;

/// Model settings the CLI starts from before applying a config file.
pub fn preset_model() -> CvaeConfig {
    CvaeConfig {
        kl_weight: PRESET_KL_WEIGHT,
        ..CvaeConfig::default()
    }
}

/// Everything a run can be configured with. Every section and field is
/// optional in the TOML file; missing values keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub scene: SceneSpec,
    #[serde(deserialize_with = "model_over_preset")]
    pub model: CvaeConfig,
    pub train: TrainConfig,
    pub parzen: ParzenConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            scene: SceneSpec::default(),
            model: preset_model(),
            train: TrainConfig::default(),
            parzen: ParzenConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// A `[model]` table overrides the preset key by key, so a file that sets
/// only the widths still trains with the preset KL weight.
fn model_over_preset<'de, D: Deserializer<'de>>(d: D) -> Result<CvaeConfig, D::Error> {
    let overrides = toml::Table::deserialize(d)?;
    let mut merged = toml::Table::try_from(preset_model()).map_err(D::Error::custom)?;
    merged.extend(overrides);
    CvaeConfig::deserialize(toml::Value::Table(merged)).map_err(D::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// DCT coefficients kept per axis.
    pub k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 200,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Training scenes used as the validation set for bandwidth search.
    pub n_val: usize,
    pub bootstrap_resamples: usize,
    pub min_ed_n_max: usize,
    pub clusters: usize,
    pub top_clusters: usize,
    pub interpolation_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_val: 40,
            bootstrap_resamples: 1000,
            min_ed_n_max: 25,
            clusters: 10,
            top_clusters: 2,
            interpolation_steps: 7,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::data(path, e))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}
