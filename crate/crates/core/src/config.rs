//! The JSON run configuration shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, NoiseLevel, NoiseLevelSpec};
use crate::error::{Error, Result};
use crate::nets::NetConfig;
use crate::train::TrainConfig;

/// Environment variable that overrides `train.seed`.
pub const SEED_ENV: &str = "UGAC_SEED";

/// Noise tiers either by profile name or as an explicit list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// `natural` (default) or `medical`.
    pub profile: Option<String>,
    pub levels: Option<Vec<NoiseLevel>>,
}

impl NoiseSection {
    pub fn resolve(&self) -> Result<NoiseLevelSpec> {
        let spec = match (&self.profile, &self.levels) {
            (Some(_), Some(_)) => {
                return Err(Error::Config {
                    path: "noise".into(),
                    msg: "give either `profile` or `levels`, not both".into(),
                })
            }
            (None, Some(levels)) => NoiseLevelSpec { levels: levels.clone() },
            (Some(p), None) => NoiseLevelSpec::by_profile(p).ok_or_else(|| Error::Config {
                path: "noise.profile".into(),
                msg: format!("unknown profile `{p}` (expected `natural` or `medical`)"),
            })?,
            (None, None) => NoiseLevelSpec::natural(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub noise: NoiseSection,
    /// Default output directory for commands that are not given `--out`.
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses and validates, reporting the JSON path of the offending key.
    pub fn from_json(text: &str, origin: &Path) -> Result<RunConfig> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config {
                path: if path == "." { origin.display().to_string() } else { path },
                msg: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text, path)
    }

    /// Applies the seed override, returning whether it was present.
    pub fn apply_env(&mut self) -> Result<bool> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                self.train.seed = v.trim().parse().map_err(|_| Error::Config {
                    path: SEED_ENV.into(),
                    msg: format!("`{v}` is not an unsigned integer"),
                })?;
                Ok(true)
            }
            Err(_) => Ok(false),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.net.validate()?;
        self.train.validate()?;
        self.noise.resolve()?;
        let factor = 1usize << self.net.depth;
        if !self.dataset.image_size.is_multiple_of(factor) {
            return Err(Error::Config {
                path: "dataset.image_size".into(),
                msg: format!(
                    "{} is not divisible by 2^net.depth = {factor}",
                    self.dataset.image_size
                ),
            });
        }
        if self.dataset.image_size < 11 {
            return Err(Error::Config {
                path: "dataset.image_size".into(),
                msg: "SSIM needs images of at least 11x11".into(),
            });
        }
        Ok(())
    }

    pub fn noise_levels(&self) -> NoiseLevelSpec {
        self.noise.resolve().expect("validated at load")
    }
}
