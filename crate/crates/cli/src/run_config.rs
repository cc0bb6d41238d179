use std::fs;
use std::path::Path;

use msi_core::data::SyntheticSpec;
use msi_core::pipeline::{AuditConfig, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossvalConfig {
    pub folds: usize,
}

impl Default for CrossvalConfig {
    fn default() -> Self {
        Self { folds: 10 }
    }
}

/// Everything a run can be configured with. Missing keys take defaults;
/// unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: SyntheticSpec,
    pub model: ModelConfig,
    pub crossval: CrossvalConfig,
    pub gradcheck: AuditConfig,
}

impl RunConfig {
    /// Parses JSON, naming the offending key path on failure.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("config key `{path}`: {}", e.into_inner()))
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    /// A command-line seed replaces both the data and the model seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.data.seed = s;
            self.model.seed = s;
        }
        self
    }
}
