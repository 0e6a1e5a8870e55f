//! TOML configuration. Secrets never live here: HTTP backends name the
//! environment variable holding their API key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ragent_core::agent::{AgentConfig, Planner, ReflectionMode, Reflector};
use ragent_core::embedding::{EmbedderBackend, HashedTokenEmbedder, HttpEmbedder, DEFAULT_DIMENSION};
use ragent_core::harness::{BenchmarkTask, Components, ScriptedComponents};
use ragent_core::http::HttpEndpoint;
use ragent_core::inter_rag::{HttpSearchBackend, SearchBackend};
use ragent_core::llm::{ChatPlanner, ChatReflector, HttpChatTransport};
use ragent_core::Scenario;
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub agent: AgentOverrides,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Agent settings that were actually given; unset fields fall through.
#[derive(Debug, Default, Clone, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct AgentOverrides {
    #[arg(long)]
    pub local_threshold: Option<f64>,
    #[arg(long)]
    pub memory_threshold: Option<f64>,
    #[arg(long)]
    pub k_apps: Option<usize>,
    #[arg(long)]
    pub k_search: Option<usize>,
    #[arg(long)]
    pub summary_limit: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub max_planner_calls: Option<usize>,
    #[arg(long)]
    pub install_step_cost: Option<usize>,
    #[arg(long, value_parser = parse_reflection)]
    pub reflection: Option<ReflectionMode>,
    #[arg(long)]
    pub history_window: Option<usize>,
}

fn parse_reflection(s: &str) -> Result<ReflectionMode, String> {
    match s {
        "every_action" => Ok(ReflectionMode::EveryAction),
        "no_op_only" => Ok(ReflectionMode::NoOpOnly),
        "off" => Ok(ReflectionMode::Off),
        _ => Err(format!("expected every_action, no_op_only or off, got {s}")),
    }
}

impl AgentOverrides {
    pub fn apply(&self, base: &mut AgentConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f {
                    base.$f = v;
                }
            )*};
        }
        set!(
            local_threshold,
            memory_threshold,
            k_apps,
            k_search,
            summary_limit,
            max_steps,
            max_planner_calls,
            install_step_cost,
            reflection,
            history_window
        );
    }
}

/// Layers: built-in defaults, then `base` (e.g. a pack manifest), then the
/// config file, then flags.
pub fn resolve_agent(base: Option<&AgentConfig>, file: &AgentOverrides, flags: &AgentOverrides) -> Result<AgentConfig> {
    let mut cfg = base.cloned().unwrap_or_default();
    file.apply(&mut cfg);
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hashed {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    Http {
        name: String,
        dimension: usize,
        url: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashed {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn EmbedderBackend>> {
        Ok(match self {
            EmbedderConfig::Hashed { dimension } => {
                if *dimension == 0 {
                    bail!("embedder dimension must be positive");
                }
                Box::new(HashedTokenEmbedder::new(*dimension))
            }
            EmbedderConfig::Http {
                name,
                dimension,
                url,
                api_key_env,
            } => Box::new(HttpEmbedder::new(name.clone(), *dimension, endpoint(url, api_key_env))),
        })
    }
}

fn endpoint(url: &str, key: &Option<String>) -> HttpEndpoint {
    let mut e = HttpEndpoint::new(url);
    e.api_key_env = key.clone();
    e
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlannerConfig {
    #[default]
    Scripted,
    Chat {
        url: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SearchConfig {
    /// Scenario fixtures.
    #[default]
    Fixtures,
    Http {
        url: String,
        #[serde(default)]
        api_key_env: Option<String>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub memory: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Planner/reflector/search built from config.
pub struct ConfiguredComponents {
    pub planner: PlannerConfig,
    pub search: SearchConfig,
}

impl ConfiguredComponents {
    pub fn chat_transport(&self) -> Option<HttpChatTransport> {
        match &self.planner {
            PlannerConfig::Scripted => None,
            PlannerConfig::Chat { url, model, api_key_env } => {
                Some(HttpChatTransport::new(endpoint(url, api_key_env), model.clone()))
            }
        }
    }
}

impl Components for ConfiguredComponents {
    fn planner(&self, task: &BenchmarkTask) -> Box<dyn Planner> {
        match self.chat_transport() {
            None => ScriptedComponents.planner(task),
            Some(t) => Box::new(ChatPlanner::new(t)),
        }
    }

    fn reflector(&self, task: &BenchmarkTask) -> Box<dyn Reflector> {
        match self.chat_transport() {
            None => ScriptedComponents.reflector(task),
            Some(t) => Box::new(ChatReflector::new(t)),
        }
    }

    fn search(&self, scenario: &Scenario) -> Box<dyn SearchBackend> {
        match &self.search {
            SearchConfig::Fixtures => Box::new(scenario.fixture_backend()),
            SearchConfig::Http { url, api_key_env } => Box::new(HttpSearchBackend::new(endpoint(url, api_key_env))),
        }
    }
}
