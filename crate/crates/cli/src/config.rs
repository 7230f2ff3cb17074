use std::path::{Path, PathBuf};

use casement_core::segmentation::DepthBand;
use casement_core::{RetrievalParams, ViewSettings};
use casement_service::ServiceConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "CASEMENT_CONFIG";

/// Settings shared by every subcommand. Every table is optional in the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub retrieval: RetrievalParams,
    /// Resolution of segmentation and pipeline renders.
    pub view: ViewSettings,
    pub band: DepthBand,
    pub service: ServiceConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        let service = ServiceConfig::default();
        Self {
            retrieval: RetrievalParams::default(),
            view: service.view,
            band: DepthBand::default(),
            service,
        }
    }
}

impl CliConfig {
    /// `explicit`, else `$CASEMENT_CONFIG`, else defaults. Service settings then take
    /// `CASEMENT_*` overrides.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, CliError> {
        let path: Option<PathBuf> = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut config = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::new("ConfigError", format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::new("ConfigError", format!("{}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        config
            .service
            .apply_env(|name| std::env::var(name).ok())
            .map_err(|e| CliError::new("ConfigError", e.to_string()))?;
        Ok(config)
    }
}
