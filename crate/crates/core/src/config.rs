//! Pipeline configuration file and gateway construction.
//!
//! ```toml
//! [gateway]
//! mode = "replay_strict"          # live | record | replay_strict | replay_fallthrough
//! cassette = "cassette.ndjson"    # relative to this file
//! endpoint = "https://host/v1/chat/completions"
//! api_key_env = "SDOH_LLM_API_KEY"
//! max_in_flight = 4
//!
//! [annotator]
//! model_tag = "gpt-4o-mini"
//! seed = 0
//!
//! [augmenter]
//! batch_size = 20
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::AnnotateSettings;
use crate::augmenter::AugmenterConfig;
use crate::gateway::{
    Backend, Cassette, CassetteBackend, CassetteMode, Gateway, OpenAiBackend, RetryPolicy, DEFAULT_MAX_IN_FLIGHT,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    Read { path: String, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Record,
    ReplayStrict,
    ReplayFallthrough,
}

fn default_key_env() -> String {
    "SDOH_LLM_API_KEY".into()
}

fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

fn default_timeout() -> u64 {
    60
}

fn default_attempts() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    #[serde(default)]
    pub cassette: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub retry_attempts: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::ReplayStrict,
            cassette: None,
            endpoint: None,
            api_key_env: default_key_env(),
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
            retry_attempts: default_attempts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorConfig {
    pub model_tag: String,
    pub seed: Option<u64>,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            model_tag: "gpt-4o-mini".into(),
            seed: Some(0),
        }
    }
}

impl AnnotatorConfig {
    pub fn settings(&self) -> AnnotateSettings {
        AnnotateSettings {
            model_tag: self.model_tag.clone(),
            temperature: 0.0,
            seed: self.seed,
            run_index: 0,
        }
    }
}

/// Overrides for [`AugmenterConfig`]; unset fields keep their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmenterSection {
    pub threshold: Option<f64>,
    pub max_rounds: Option<usize>,
    pub batch_size: Option<usize>,
    pub model_tag: Option<String>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    /// Path to a meta-prompt template replacing the bundled one.
    pub meta_prompt_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub taxonomy: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub annotator: AnnotatorConfig,
    #[serde(default)]
    pub augmenter: AugmenterSection,
    #[serde(default)]
    pub paths: PathsSection,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    /// Parses and validates; relative paths are taken from the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.gateway.cassette);
        resolve(base, &mut config.augmenter.meta_prompt_file);
        resolve(base, &mut config.paths.taxonomy);
        resolve(base, &mut config.paths.keywords);
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.gateway;
        if g.max_in_flight == 0 {
            return Err(ConfigError::Invalid("gateway.max_in_flight must be positive".into()));
        }
        if g.retry_attempts == 0 {
            return Err(ConfigError::Invalid("gateway.retry_attempts must be positive".into()));
        }
        if g.mode != GatewayMode::Live && g.cassette.is_none() {
            return Err(ConfigError::Invalid(format!("gateway.mode {:?} needs gateway.cassette", g.mode)));
        }
        if matches!(g.mode, GatewayMode::Live | GatewayMode::Record | GatewayMode::ReplayFallthrough)
            && g.endpoint.is_none()
        {
            return Err(ConfigError::Invalid(format!("gateway.mode {:?} needs gateway.endpoint", g.mode)));
        }
        let a = &self.augmenter;
        if let Some(t) = a.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError::Invalid(format!("augmenter.threshold {t} outside [0, 1]")));
            }
        }
        if a.max_rounds == Some(0) || a.batch_size == Some(0) {
            return Err(ConfigError::Invalid("augmenter.max_rounds and batch_size must be positive".into()));
        }
        if let Some(t) = a.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(ConfigError::Invalid(format!("augmenter.temperature {t} outside [0, 2]")));
            }
        }
        Ok(())
    }

    pub fn augmenter_config(&self) -> Result<AugmenterConfig, ConfigError> {
        let mut c = AugmenterConfig::default();
        let a = &self.augmenter;
        if let Some(v) = a.threshold {
            c.threshold = v;
        }
        if let Some(v) = a.max_rounds {
            c.max_rounds = v;
        }
        if let Some(v) = a.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = &a.model_tag {
            c.model_tag = v.clone();
        }
        if let Some(v) = a.temperature {
            c.temperature = v;
        }
        if a.seed.is_some() {
            c.seed = a.seed;
        }
        if let Some(path) = &a.meta_prompt_file {
            c.meta_prompt = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        }
        Ok(c)
    }
}

/// A gateway plus a handle on its cassette layer, when there is one.
pub struct BuiltGateway {
    pub gateway: Arc<Gateway>,
    pub cassette: Option<Arc<CassetteBackend>>,
}

fn live_backend(config: &GatewayConfig) -> Result<Arc<dyn Backend>, ConfigError> {
    let endpoint = config
        .endpoint
        .clone()
        .ok_or_else(|| ConfigError::Invalid("gateway.endpoint missing".into()))?;
    let key = std::env::var(&config.api_key_env).map_err(|_| ConfigError::MissingApiKey(config.api_key_env.clone()))?;
    Ok(Arc::new(OpenAiBackend::new(
        endpoint,
        Some(key),
        Duration::from_secs(config.timeout_secs),
    )))
}

/// Builds the gateway. Every check, including the API key lookup for modes
/// that may go live, happens here before any request is made.
pub fn build_gateway(config: &GatewayConfig) -> Result<BuiltGateway, ConfigError> {
    let retry = RetryPolicy {
        max_attempts: config.retry_attempts,
        ..RetryPolicy::default()
    };
    let wrap = |backend: Arc<dyn Backend>| {
        Arc::new(
            Gateway::from_arc(backend)
                .with_retry(retry)
                .with_max_in_flight(config.max_in_flight),
        )
    };
    if config.mode == GatewayMode::Live {
        return Ok(BuiltGateway {
            gateway: wrap(live_backend(config)?),
            cassette: None,
        });
    }
    let path = config
        .cassette
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("gateway.cassette missing".into()))?;
    let backend = match config.mode {
        GatewayMode::ReplayStrict => {
            let cassette = Cassette::load(path).map_err(|e| ConfigError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            CassetteBackend::new(CassetteMode::ReplayStrict, cassette, None)
        }
        mode => {
            let cassette_mode = if mode == GatewayMode::Record {
                CassetteMode::Record
            } else {
                CassetteMode::ReplayFallthrough
            };
            CassetteBackend::open(path, cassette_mode, Some(live_backend(config)?)).map_err(|e| ConfigError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        }
    };
    let backend = Arc::new(backend);
    Ok(BuiltGateway {
        gateway: wrap(backend.clone()),
        cassette: Some(backend),
    })
}
