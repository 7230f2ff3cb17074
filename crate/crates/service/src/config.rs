use std::path::{Path, PathBuf};

use casement_core::segmentation::{DepthBand, MaskProviderConfig};
use casement_core::ViewSettings;
use serde::{Deserialize, Serialize};

use crate::generator::GeneratorProviderConfig;

pub const ENV_PREFIX: &str = "CASEMENT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Catalog archive loaded at startup; retrieval and preview need it.
    pub catalog: Option<PathBuf>,
    /// Used by `segment` when the request names no provider.
    pub mask_provider: Option<MaskProviderConfig>,
    /// Turns an uploaded facade image into a GLB.
    pub generator_provider: Option<GeneratorProviderConfig>,
    pub max_sessions: usize,
    pub history_depth: usize,
    /// Sessions are written here on shutdown when set.
    pub snapshot_dir: Option<PathBuf>,
    /// Resolution of the default camera set on upload.
    pub view: ViewSettings,
    pub band: DepthBand,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            catalog: None,
            mask_provider: None,
            generator_provider: None,
            max_sessions: 64,
            history_depth: 20,
            snapshot_dir: None,
            view: ViewSettings {
                width: 512,
                height: 512,
                ..ViewSettings::default()
            },
            band: DepthBand::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads `path` when given (defaults otherwise), then applies `CASEMENT_*` overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.display().to_string(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(|name| std::env::var(name).ok())?;
        Ok(config)
    }

    /// Overrides from `CASEMENT_BIND`, `_PORT`, `_CATALOG`, `_MAX_SESSIONS`,
    /// `_HISTORY_DEPTH`, `_SNAPSHOT_DIR`, and `_MASK_PROVIDER` / `_GENERATOR_PROVIDER` (JSON).
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let var = |key: &str| {
            let name = format!("{ENV_PREFIX}{key}");
            get(&name).map(|v| (name, v))
        };
        fn parse<T: std::str::FromStr>(name: String, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::Env {
                name,
                message: e.to_string(),
            })
        }
        fn json<T: serde::de::DeserializeOwned>(name: String, v: &str) -> Result<T, ConfigError> {
            serde_json::from_str(v).map_err(|e| ConfigError::Env {
                name,
                message: e.to_string(),
            })
        }
        if let Some((_, v)) = var("BIND") {
            self.bind = v;
        }
        if let Some((n, v)) = var("PORT") {
            self.port = parse(n, &v)?;
        }
        if let Some((_, v)) = var("CATALOG") {
            self.catalog = Some(v.into());
        }
        if let Some((n, v)) = var("MAX_SESSIONS") {
            self.max_sessions = parse(n, &v)?;
        }
        if let Some((n, v)) = var("HISTORY_DEPTH") {
            self.history_depth = parse(n, &v)?;
        }
        if let Some((_, v)) = var("SNAPSHOT_DIR") {
            self.snapshot_dir = Some(v.into());
        }
        if let Some((n, v)) = var("MASK_PROVIDER") {
            self.mask_provider = Some(json(n, &v)?);
        }
        if let Some((n, v)) = var("GENERATOR_PROVIDER") {
            self.generator_provider = Some(json(n, &v)?);
        }
        Ok(())
    }
}
