//! Run configuration, loaded from TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file. API keys are never read from the file, only from the environment
//! variable it names.

use std::fs;
use std::path::{Path, PathBuf};

use policyflow::agents::{AgentConfig, AgentModels};
use policyflow::analyser::RiskWeights;
use policyflow::knowledge::{RetrievalPolicy, ValidationOptions, DEFAULT_EMBEDDING_DIM};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    #[default]
    Mock,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProvider {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: EmbeddingProvider,
    pub dim: usize,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Local,
            dim: DEFAULT_EMBEDDING_DIM,
            base_url: None,
            model: None,
            api_key_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    pub org_name: String,
    /// Defaults to the file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl InputSpec {
    pub fn policy_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "policy".to_string())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    /// Fixture directory for the mock backend.
    pub fixtures: Option<PathBuf>,
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub models: AgentModels,
    pub temperature: f64,
    pub top_p: f64,
    pub max_in_flight: usize,
    /// Segment worker threads; 0 lets rayon decide.
    pub threads: usize,
    pub retrieval: RetrievalPolicy,
    pub weights: RiskWeights,
    pub embedding: EmbeddingConfig,
    /// Directory of typology JSON files; the shipped typologies when unset.
    pub kb_dir: Option<PathBuf>,
    /// Prebuilt index from `kb build`; skips embedding the typologies.
    pub kb_index: Option<PathBuf>,
    pub allow_social_media_purpose: bool,
    pub prompts_dir: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub inputs: Vec<InputSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        Self {
            backend: BackendKind::Mock,
            fixtures: None,
            base_url: "https://api.groq.com/openai/v1".to_string(),
            api_key_env: "GROQ_API_KEY".to_string(),
            models: agent.models,
            temperature: agent.temperature,
            top_p: agent.top_p,
            max_in_flight: 4,
            threads: 0,
            retrieval: agent.retrieval,
            weights: RiskWeights::default(),
            embedding: EmbeddingConfig::default(),
            kb_dir: None,
            kb_index: None,
            allow_social_media_purpose: false,
            prompts_dir: None,
            synonyms: None,
            cache_dir: None,
            output_dir: PathBuf::from("out"),
            inputs: Vec::new(),
        }
    }
}

const SECRET_KEYS: &[&str] = &["api_key", "apikey", "key", "token", "secret"];

fn find_secret(table: &toml::Table, prefix: &str) -> Option<String> {
    table.iter().find_map(|(k, v)| {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if SECRET_KEYS.contains(&k.to_lowercase().as_str()) {
            return Some(path);
        }
        v.as_table().and_then(|t| find_secret(t, &path))
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(key) = find_secret(&table, "") {
            return Err(CliError::Config(format!(
                "`{key}` looks like a credential; set api_key_env and export the key instead"
            )));
        }
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.fixtures,
            &mut self.kb_dir,
            &mut self.kb_index,
            &mut self.prompts_dir,
            &mut self.synonyms,
            &mut self.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
        for input in &mut self.inputs {
            fix(&mut input.path);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        match self.backend {
            BackendKind::Mock if self.fixtures.is_none() => {
                return bad("the mock backend requires `fixtures`".into())
            }
            BackendKind::Live if std::env::var_os(&self.api_key_env).is_none() => {
                return bad(format!(
                    "the live backend requires the environment variable {} to be set",
                    self.api_key_env
                ))
            }
            _ => {}
        }
        if self.embedding.provider == EmbeddingProvider::Remote
            && (self.embedding.base_url.is_none() || self.embedding.model.is_none())
        {
            return bad("remote embeddings need embedding.base_url and embedding.model".into());
        }
        if self.embedding.dim == 0 {
            return bad("embedding.dim must be positive".into());
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        RetrievalPolicy::new(self.retrieval.threshold, self.retrieval.max_contexts)
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.weights
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.inputs.is_empty() {
            return bad("no inputs configured".into());
        }
        let mut ids: Vec<String> = self.inputs.iter().map(InputSpec::policy_id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate policy id `{}`", w[0]));
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            models: self.models.clone(),
            temperature: self.temperature,
            top_p: self.top_p,
            retrieval: self.retrieval,
            threads: self.threads,
        }
    }

    pub fn validation_options(&self) -> ValidationOptions {
        ValidationOptions {
            allow_social_media_purpose: self.allow_social_media_purpose,
        }
    }

    /// SHA-256 over the canonical JSON form of every field.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }
}
