use std::path::{Path, PathBuf};

use notepilot_core::llm::{LatencyProfile, DEFAULT_TIMEOUT_MS};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Directory holding `sessions/`.
    #[serde(default = "default_root")]
    pub root: PathBuf,
    /// Static token clients present in `hello`.
    pub token: String,
    /// Customized keywords, in display order.
    #[serde(default = "default_customized")]
    pub customized: Vec<String>,
    #[serde(default)]
    pub backend: BackendConfig,
    /// Directory of prompt templates overriding the shipped ones.
    pub prompts_dir: Option<PathBuf>,
    /// Trace streamed into a session on a `play_demo` command.
    pub demo_trace: Option<PathBuf>,
    #[serde(default = "default_dedup_window")]
    pub dedup_window: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Hosted,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Mock => "mock",
            BackendKind::Hosted => "hosted",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    pub model: Option<String>,
    pub endpoint_url: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Mock latencies; the mock sleeps for them in live sessions.
    #[serde(default)]
    pub mock_latency: LatencyProfile,
    #[serde(default)]
    pub mock_jitter_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            model: None,
            endpoint_url: None,
            api_key_env: default_api_key_env(),
            timeout_ms: default_timeout(),
            mock_latency: LatencyProfile::default(),
            mock_jitter_ms: 0,
        }
    }
}

fn default_listen() -> String {
    "127.0.0.1:7878".into()
}

fn default_root() -> PathBuf {
    PathBuf::from("data")
}

fn default_customized() -> Vec<String> {
    ["What", "Why", "How", "?"].map(String::from).to_vec()
}

fn default_api_key_env() -> String {
    "NOTEPILOT_API_KEY".into()
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

fn default_dedup_window() -> usize {
    4096
}

impl ServiceConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let config: ServiceConfig = toml::from_str(text)?;
        if config.backend.kind == BackendKind::Hosted
            && (config.backend.model.is_none() || config.backend.endpoint_url.is_none())
        {
            anyhow::bail!("the hosted backend needs backend.model and backend.endpoint_url");
        }
        Ok(config)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let mut config =
            Self::parse(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut config.root);
        if let Some(p) = config.prompts_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = config.demo_trace.as_mut() {
            fix(p);
        }
        Ok(config)
    }
}
