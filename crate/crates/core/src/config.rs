//! Run configuration file.
//!
//! Relative paths in the file resolve against the file's directory.
//!
//! ```toml
//! workdir = "."                 # where tools and the gateway find images
//!
//! [run]
//! k = 3
//! max_rounds = 12
//!
//! [backend]                     # think backend
//! kind = "scripted"
//! script = "think.json"
//!
//! [vision_backend]              # defaults to [backend]
//! kind = "http"
//! endpoint = "http://localhost:8000/v1/chat/completions"
//! model = "vlm"
//! api_key_env = "VLM_API_KEY"
//!
//! [tools]
//! in_process = true             # built-in desk tools instead of [[servers]]
//!
//! [[servers]]
//! name = "mcp_vision_server"
//! command = "vicot-tool-double"
//! args = ["--desk", "vision"]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::agent::RunConfig;
use crate::desk_tools::{TextDesk, VisionDesk, TEXT_SERVER, VISION_SERVER};
use crate::gateway::{Backend, GatewayError, HttpChat, HttpChatConfig, ScriptedBackend, Templates};
use crate::transport::{InProcessHost, LaunchSpec, ServerPool, ToolHost, TransportError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted {
        script: PathBuf,
        #[serde(default)]
        ms_per_1k_prompt_tokens: Option<f64>,
    },
    Http(HttpChatConfig),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ServerConfig {
    pub name: String,
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub cwd: Option<PathBuf>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default)]
    pub handshake_timeout_ms: Option<u64>,
    #[serde(default)]
    pub call_timeout_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct ToolsConfig {
    #[serde(default)]
    pub in_process: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct TemplatesConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    workdir: Option<PathBuf>,
    #[serde(default)]
    run: RunConfig,
    backend: BackendConfig,
    #[serde(default)]
    vision_backend: Option<BackendConfig>,
    #[serde(default)]
    tools: ToolsConfig,
    #[serde(default)]
    templates: TemplatesConfig,
    #[serde(default)]
    servers: Vec<ServerConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Directory of the config file.
    pub base_dir: PathBuf,
    pub workdir: PathBuf,
    pub run: RunConfig,
    pub backend: BackendConfig,
    pub vision_backend: BackendConfig,
    pub tools: ToolsConfig,
    pub templates_dir: Option<PathBuf>,
    pub servers: Vec<ServerConfig>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base_dir).map_err(|err| match err {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|err| ConfigError::Parse {
            path: PathBuf::new(),
            message: err.to_string(),
        })?;
        raw.run
            .validate()
            .map_err(|err| ConfigError::Invalid(err.to_string()))?;
        if !raw.tools.in_process && raw.servers.is_empty() {
            return Err(ConfigError::Invalid(
                "no tool source: set tools.in_process or add [[servers]]".into(),
            ));
        }
        let resolve = |p: &Path| base_dir.join(p);
        let backend = resolve_backend(raw.backend, base_dir);
        Ok(Self {
            base_dir: base_dir.to_path_buf(),
            workdir: raw
                .workdir
                .as_deref()
                .map(resolve)
                .unwrap_or_else(|| base_dir.to_path_buf()),
            run: raw.run,
            vision_backend: raw
                .vision_backend
                .map(|b| resolve_backend(b, base_dir))
                .unwrap_or_else(|| backend.clone()),
            backend,
            tools: raw.tools,
            templates_dir: raw.templates.dir.as_deref().map(resolve),
            servers: raw.servers,
        })
    }

    pub fn templates(&self) -> Result<Templates, ConfigError> {
        match &self.templates_dir {
            None => Ok(Templates::default()),
            Some(dir) => {
                Templates::load_dir(dir).map_err(|err| ConfigError::Invalid(err.to_string()))
            }
        }
    }

    pub fn think_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        build_backend(&self.backend)
    }

    pub fn vision_backend(&self) -> Result<Box<dyn Backend>, ConfigError> {
        build_backend(&self.vision_backend)
    }

    /// Launch specs for the configured servers; working directories default
    /// to the workdir.
    pub fn launch_specs(&self) -> Vec<LaunchSpec> {
        self.servers
            .iter()
            .map(|server| {
                let mut spec = LaunchSpec::new(server.name.clone(), server.command.clone());
                spec.args = server.args.clone();
                spec.env = server.env.clone();
                spec.cwd = Some(
                    server
                        .cwd
                        .as_deref()
                        .map(|c| self.base_dir.join(c))
                        .unwrap_or_else(|| self.workdir.clone()),
                );
                if let Some(ms) = server.handshake_timeout_ms {
                    spec.handshake_timeout_ms = ms;
                }
                if let Some(ms) = server.call_timeout_ms {
                    spec.call_timeout_ms = ms;
                }
                spec
            })
            .collect()
    }

    /// The in-process desk tools, or spawned servers.
    pub fn tool_host(&self) -> Result<Box<dyn ToolHost>, ConfigError> {
        if self.tools.in_process {
            let host = InProcessHost::new()
                .with_server(
                    VISION_SERVER,
                    Arc::new(VisionDesk::with_root(self.workdir.clone())),
                )
                .with_server(TEXT_SERVER, Arc::new(TextDesk::default()));
            return Ok(Box::new(host));
        }
        Ok(Box::new(ServerPool::spawn_all(&self.launch_specs())?))
    }
}

fn resolve_backend(backend: BackendConfig, base_dir: &Path) -> BackendConfig {
    match backend {
        BackendConfig::Scripted {
            script,
            ms_per_1k_prompt_tokens,
        } => BackendConfig::Scripted {
            script: base_dir.join(script),
            ms_per_1k_prompt_tokens,
        },
        other => other,
    }
}

fn build_backend(config: &BackendConfig) -> Result<Box<dyn Backend>, ConfigError> {
    Ok(match config {
        BackendConfig::Scripted {
            script,
            ms_per_1k_prompt_tokens,
        } => {
            let mut backend = ScriptedBackend::load(script)?;
            if let Some(ms) = ms_per_1k_prompt_tokens {
                backend = backend.with_latency_model(*ms);
            }
            Box::new(backend)
        }
        BackendConfig::Http(http) => Box::new(HttpChat::new(http.clone())),
    })
}
