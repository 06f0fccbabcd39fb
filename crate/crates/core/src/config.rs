//! TOML run configuration and construction of the backend clients it names.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::PromptAssets;
use crate::backends::remote::{
    Endpoint, RemoteChat, RemoteDetector, RemoteEditor, RemoteEmbedder, RemoteGenerator,
};
use crate::backends::{BackendError, SceneState};
use crate::boxmodel::parse_object_list;
use crate::corpus::Corpus;
use crate::embedding::{Embedder, HashedNgramEmbedder};
use crate::evaluate::EvalConfig;
use crate::fixtures::SimStack;
use crate::pipeline::{Clients, PipelineConfig};

pub const DEFAULT_API_KEY_ENV: &str = "POETRY2IMAGE_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Sim,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    /// Name used to group runs in comparison reports.
    pub label: Option<String>,
    pub corpus: Option<PathBuf>,
    pub assets_dir: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub backends: BackendsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub kind: BackendKind,
    /// Environment variable holding the bearer token for remote services.
    pub api_key_env: String,
    pub sim: SimConfig,
    pub remote: Option<RemoteConfig>,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Sim,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            sim: SimConfig::default(),
            remote: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// JSONL file of [`SceneFixture`] lines.
    pub scenes: Option<PathBuf>,
    pub seed: u64,
    pub miss_probability: f64,
    pub label_miss: BTreeMap<String, f64>,
    pub fallback_elements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub chat: Endpoint,
    pub generate: Endpoint,
    pub detect: Endpoint,
    pub edit: Endpoint,
    /// Without an embedding service the hashed n-gram embedding is used.
    #[serde(default)]
    pub embed: Option<Endpoint>,
    #[serde(default = "default_size")]
    pub image_size: u32,
}

fn default_size() -> u32 {
    1024
}

/// Initial scene the simulated generator returns for one corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFixture {
    pub record_id: String,
    /// Object list in the canonical text form.
    pub objects: String,
    #[serde(default)]
    pub style_tag: String,
}

impl AppConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: AppConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve_relative(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes file paths inside the config relative to the config's directory.
    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.assets_dir);
        fix(&mut self.backends.sim.scenes);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline.validate().map_err(ConfigError::Invalid)?;
        self.eval
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let sim = &self.backends.sim;
        let probs = std::iter::once(&sim.miss_probability).chain(sim.label_miss.values());
        for p in probs {
            if !(0.0..=1.0).contains(p) {
                return Err(ConfigError::Invalid(format!(
                    "miss probability {p} outside [0, 1]"
                )));
            }
        }
        if self.backends.kind == BackendKind::Remote && self.backends.remote.is_none() {
            return Err(ConfigError::Invalid(
                "remote backend selected but [backends.remote] is missing".into(),
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| match self.backends.kind {
                BackendKind::Sim => "sim".into(),
                BackendKind::Remote => "remote".into(),
            })
    }
}

pub fn load_scene_fixtures(path: impl AsRef<Path>) -> Result<Vec<SceneFixture>, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ConfigError::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Builds the clients named by `cfg`. For the simulated backend every
/// corpus record is known to the chat hooks; scenes come from the fixture
/// file when one is configured.
pub fn build_clients(
    cfg: &AppConfig,
    corpus: &Corpus,
    assets: &PromptAssets,
) -> Result<Clients, ConfigError> {
    match cfg.backends.kind {
        BackendKind::Sim => build_sim(cfg, corpus, assets),
        BackendKind::Remote => build_remote(cfg),
    }
}

/// The embedding provider alone, for rescoring stored runs.
pub fn build_embedder(cfg: &AppConfig) -> Result<Arc<dyn Embedder>, ConfigError> {
    match (&cfg.backends.kind, &cfg.backends.remote) {
        (BackendKind::Remote, Some(RemoteConfig { embed: Some(e), .. })) => {
            let mut e = e.clone();
            e.api_key = api_key(cfg);
            Ok(Arc::new(RemoteEmbedder::new(e)?))
        }
        _ => Ok(Arc::new(HashedNgramEmbedder)),
    }
}

fn api_key(cfg: &AppConfig) -> Option<String> {
    std::env::var(&cfg.backends.api_key_env)
        .ok()
        .filter(|k| !k.is_empty())
}

fn build_sim(
    cfg: &AppConfig,
    corpus: &Corpus,
    assets: &PromptAssets,
) -> Result<Clients, ConfigError> {
    let sim = &cfg.backends.sim;
    let mut scenes = Vec::new();
    if let Some(path) = &sim.scenes {
        for fx in load_scene_fixtures(path)? {
            let record = corpus.get(&fx.record_id).ok_or_else(|| {
                ConfigError::Invalid(format!("scene fixture for unknown record {}", fx.record_id))
            })?;
            let objects = parse_object_list(&fx.objects).map_err(|e| {
                ConfigError::Invalid(format!("scene fixture {}: {e}", fx.record_id))
            })?;
            scenes.push((
                record.clone(),
                SceneState {
                    objects,
                    style_tag: fx.style_tag,
                },
            ));
        }
    }
    let stack = SimStack {
        records: corpus.records().to_vec(),
        scenes,
        seed: sim.seed,
        default_miss: sim.miss_probability,
        label_miss: sim
            .label_miss
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
        fallback_elements: sim.fallback_elements.clone(),
        suggest: cfg.pipeline.suggest_config(),
    };
    Ok(stack.clients(assets))
}

fn build_remote(cfg: &AppConfig) -> Result<Clients, ConfigError> {
    let remote = cfg.backends.remote.as_ref().ok_or_else(|| {
        ConfigError::Invalid("remote backend selected but [backends.remote] is missing".into())
    })?;
    let key = api_key(cfg);
    let with_key = |e: &Endpoint| Endpoint {
        api_key: key.clone(),
        ..e.clone()
    };
    let embedder: Arc<dyn Embedder> = match &remote.embed {
        Some(e) => Arc::new(RemoteEmbedder::new(with_key(e))?),
        None => Arc::new(HashedNgramEmbedder),
    };
    Ok(Clients {
        chat: Arc::new(RemoteChat::new(with_key(&remote.chat))?),
        generator: Arc::new(RemoteGenerator::new(
            with_key(&remote.generate),
            remote.image_size,
        )?),
        detector: Arc::new(RemoteDetector::new(
            with_key(&remote.detect),
            cfg.pipeline.detection_threshold,
        )?),
        editor: Arc::new(RemoteEditor::new(with_key(&remote.edit))?),
        embedder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg: AppConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.pipeline, PipelineConfig::default());
        assert_eq!(cfg.backends.api_key_env, DEFAULT_API_KEY_ENV);
        assert_eq!(cfg.backends.kind, BackendKind::Sim);
        assert_eq!(cfg.label(), "sim");
    }

    #[test]
    fn parses_sections_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            r#"
label = "baseline"
corpus = "poems.jsonl"
[pipeline]
max_rounds = 5
suggester_mode = "llm"
[eval]
alpha = 2.0
[backends.sim]
scenes = "scenes.jsonl"
label_miss = { moon = 1.0 }
"#,
        )
        .unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.pipeline.max_rounds, 5);
        assert_eq!(cfg.eval.alpha, 2.0);
        assert_eq!(cfg.corpus.unwrap(), dir.path().join("poems.jsonl"));
        assert_eq!(
            cfg.backends.sim.scenes.unwrap(),
            dir.path().join("scenes.jsonl")
        );
        assert_eq!(cfg.backends.sim.label_miss["moon"], 1.0);
    }

    #[test]
    fn rejects_bad_values() {
        let cfg: AppConfig = toml::from_str("[pipeline]\nmax_rounds = 0").unwrap();
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
        let cfg: AppConfig = toml::from_str("[backends.sim]\nmiss_probability = 1.5").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: AppConfig = toml::from_str("[backends]\nkind = \"remote\"").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn malformed_toml_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "[pipeline\n").unwrap();
        assert!(matches!(
            AppConfig::load(&path),
            Err(ConfigError::Parse { .. })
        ));
    }
}
