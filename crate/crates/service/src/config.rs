use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const CONFIG_ENV: &str = "MEDEDGE_CONFIG";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsyncPolicy {
    /// fsync after every entry, before the response is sent.
    #[default]
    Always,
    /// Leave flushing to the OS.
    Never,
}

/// Service settings. Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub symptom_model: PathBuf,
    #[serde(default)]
    pub skin_model: Option<PathBuf>,
    /// One symptom name per line; the built-in desk list when absent.
    #[serde(default)]
    pub vocabulary: Option<PathBuf>,
    /// One disease name per line; the built-in desk catalog when absent.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    /// `id<TAB>text` lines applied over the catalog.
    #[serde(default)]
    pub treatments: Option<PathBuf>,
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    #[serde(default = "default_log")]
    pub log_path: PathBuf,
    #[serde(default)]
    pub fsync: FsyncPolicy,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache_policy: Option<String>,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_log() -> PathBuf {
    PathBuf::from("diagnoses.jsonl")
}

impl ServiceConfig {
    pub fn new(symptom_model: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            symptom_model: symptom_model.into(),
            skin_model: None,
            vocabulary: None,
            catalog: None,
            treatments: None,
            bind: default_bind(),
            log_path: default_log(),
            fsync: FsyncPolicy::Always,
            static_dir: None,
            cache_policy: None,
        }
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ServiceError> {
        let mut cfg: ServiceConfig = serde_json::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.symptom_model);
        fix(&mut cfg.log_path);
        for p in [&mut cfg.skin_model, &mut cfg.vocabulary, &mut cfg.catalog, &mut cfg.treatments, &mut cfg.static_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::io(path.to_path_buf(), e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Loads from `$MEDEDGE_CONFIG` when set, otherwise from `default`.
    pub fn resolve(default: Option<&Path>) -> Result<Self, ServiceError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) => Self::load(Path::new(&p)),
            None => match default {
                Some(p) => Self::load(p),
                None => Err(ServiceError::Config(format!("no config path given and {CONFIG_ENV} is unset"))),
            },
        }
    }
}
