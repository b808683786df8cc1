//! TOML run configuration. Sections mirror the library modules; unknown
//! keys anywhere are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmaa2c::TrainerConfig;
use crate::env::{ParticleConfig, ParticleEnv};
use crate::error::{Error, Result};
use crate::nn::NetConfig;
use crate::risk::PenaltySpec;

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cmaa2c: TrainerConfig,
    pub risk: PenaltySpec,
    pub environments: ParticleConfig,
    pub tensor_nn: NetConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.cmaa2c.validate()?;
        self.risk.validate()?;
        self.environments.validate()?;
        if self.tensor_nn.hidden.contains(&0) {
            return Err(Error::Config("tensor_nn.hidden widths must be positive".into()));
        }
        let m = ParticleEnv::new(self.environments.clone())?.constraint_dim();
        if self.risk.constraints() != m {
            return Err(Error::Config(format!(
                "risk: {} tolerance entries for {m} constraint channel(s)",
                self.risk.constraints()
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Parses a TOML document into `T`, reporting failures against `path`.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_toml(&text, path)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let config: RunConfig = load_toml(path)?;
    config.validate()?;
    Ok(config)
}
