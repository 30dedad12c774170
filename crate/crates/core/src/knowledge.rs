//! Knowledge typologies and similarity retrieval over them.
//!
//! Four typologies ship with the crate (`kb/*.json`): data categories,
//! data consumer types, processing purposes and processing methods. Each
//! node is embedded from its rendering `"name. description. examples"` and
//! queries are matched by cosine similarity with a linear scan.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATA_CATEGORIES: [&str; 16] = [
    "Demographics",
    "Contact",
    "Finance",
    "Health",
    "Location",
    "Personal Identity Identifier",
    "Online Identifier",
    "Device Information",
    "Biometric Information",
    "User Online Activities",
    "User Profile",
    "Criminal Records/Court Judgements",
    "Generic Personal Information",
    "Survey data",
    "Other",
    "Unspecified",
];

pub const CONSUMER_TYPES: [&str; 2] = ["First Party", "Third Party"];

pub const PURPOSES: [&str; 10] = [
    "Basic Service or Feature",
    "Additional Service or Feature",
    "Advertising",
    "Marketing",
    "Analytics or Research",
    "Personalisation or Customisation",
    "Operational Integrity and Security",
    "Legal requirement",
    "Merger/Acquisition",
    "Unspecified",
];

/// Optional extra purpose node accepted when enabled in [`ValidationOptions`].
pub const SOCIAL_MEDIA_PURPOSE: &str = "Social Media Integration";

pub const METHODS: [&str; 3] = ["Active", "Passive", "Unspecified"];

pub const DEFAULT_EMBEDDING_DIM: usize = 256;

const SHIPPED_DATA: &str = include_str!("../kb/data_category.json");
const SHIPPED_CONSUMER: &str = include_str!("../kb/consumer_type.json");
const SHIPPED_PURPOSE: &str = include_str!("../kb/purpose.json");
const SHIPPED_METHOD: &str = include_str!("../kb/method.json");

#[derive(Debug, Error)]
pub enum KbError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown typology kind `{0}`")]
    UnknownKind(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("index has no entries")]
    EmptyIndex,
    #[error("no index loaded for typology `{0}`")]
    MissingTypology(TypologyKind),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypologyKind {
    DataCategory,
    ConsumerType,
    Purpose,
    Method,
}

impl TypologyKind {
    pub const ALL: [TypologyKind; 4] = [
        TypologyKind::DataCategory,
        TypologyKind::ConsumerType,
        TypologyKind::Purpose,
        TypologyKind::Method,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TypologyKind::DataCategory => "data_category",
            TypologyKind::ConsumerType => "consumer_type",
            TypologyKind::Purpose => "purpose",
            TypologyKind::Method => "method",
        }
    }

    /// The node names a typology of this kind must contain, in shipped order.
    pub fn required_names(self) -> &'static [&'static str] {
        match self {
            TypologyKind::DataCategory => &DATA_CATEGORIES,
            TypologyKind::ConsumerType => &CONSUMER_TYPES,
            TypologyKind::Purpose => &PURPOSES,
            TypologyKind::Method => &METHODS,
        }
    }

    /// Label used for a node when rendered into a classification prompt.
    pub fn context_label(self) -> &'static str {
        match self {
            TypologyKind::DataCategory => "Data category",
            TypologyKind::ConsumerType => "Data consumer type",
            TypologyKind::Purpose => "Data processing purpose",
            TypologyKind::Method => "Data processing method",
        }
    }

    fn shipped_json(self) -> &'static str {
        match self {
            TypologyKind::DataCategory => SHIPPED_DATA,
            TypologyKind::ConsumerType => SHIPPED_CONSUMER,
            TypologyKind::Purpose => SHIPPED_PURPOSE,
            TypologyKind::Method => SHIPPED_METHOD,
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.as_str())
    }
}

impl fmt::Display for TypologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TypologyKind {
    type Err = KbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TypologyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| KbError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeNode {
    pub name: String,
    pub description: String,
    pub examples: Vec<String>,
}

impl KnowledgeNode {
    /// Text that is embedded for this node.
    pub fn rendering(&self) -> String {
        format!(
            "{}. {}. {}",
            self.name,
            self.description,
            self.examples.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KnowledgeTypology {
    pub kind: TypologyKind,
    pub root: String,
    pub nodes: Vec<KnowledgeNode>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOptions {
    /// Accept "Social Media Integration" as an eleventh purpose node.
    pub allow_social_media_purpose: bool,
}

// Raw shape; `kind` stays a string so unknown kinds get their own error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTypology {
    kind: String,
    root: String,
    nodes: Vec<KnowledgeNode>,
}

impl KnowledgeTypology {
    pub fn parse(json: &str, opts: ValidationOptions) -> Result<Self, KbError> {
        let raw: RawTypology =
            serde_json::from_str(json).map_err(|e| KbError::SchemaViolation(e.to_string()))?;
        let typology = KnowledgeTypology {
            kind: raw.kind.parse()?,
            root: raw.root,
            nodes: raw.nodes,
        };
        typology.validate(opts)?;
        Ok(typology)
    }

    /// The typology bundled with the crate.
    pub fn shipped(kind: TypologyKind) -> Self {
        Self::parse(kind.shipped_json(), ValidationOptions::default())
            .expect("shipped typologies validate")
    }

    pub fn validate(&self, opts: ValidationOptions) -> Result<(), KbError> {
        if self.root.trim().is_empty() {
            return Err(KbError::SchemaViolation("empty root".into()));
        }
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if node.name.trim().is_empty() {
                return Err(KbError::SchemaViolation("node with empty name".into()));
            }
            if !seen.insert(node.name.as_str()) {
                return Err(KbError::SchemaViolation(format!(
                    "duplicate node name `{}`",
                    node.name
                )));
            }
            let exempt = node.name == "Other" || node.name == "Unspecified";
            if !exempt && node.description.trim().is_empty() {
                return Err(KbError::SchemaViolation(format!(
                    "node `{}` has an empty description",
                    node.name
                )));
            }
        }
        let mut expected: BTreeSet<&str> = self.kind.required_names().iter().copied().collect();
        if self.kind == TypologyKind::Purpose
            && opts.allow_social_media_purpose
            && seen.contains(SOCIAL_MEDIA_PURPOSE)
        {
            expected.insert(SOCIAL_MEDIA_PURPOSE);
        }
        if seen != expected {
            let missing: Vec<_> = expected.difference(&seen).collect();
            let extra: Vec<_> = seen.difference(&expected).collect();
            return Err(KbError::SchemaViolation(format!(
                "{} typology node names differ from the required set (missing {:?}, unexpected {:?})",
                self.kind, missing, extra
            )));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }
}

pub fn load_typology(path: &Path, opts: ValidationOptions) -> Result<KnowledgeTypology, KbError> {
    let text = std::fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    KnowledgeTypology::parse(&text, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, KbError> {
        if values.is_empty() {
            return Err(KbError::SchemaViolation("zero-dimensional embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KbError::SchemaViolation("non-finite embedding value".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub trait Embedder: Send + Sync {
    /// Stable identifier, recorded in saved indices.
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, KbError>;
}

/// L2-normalised hashed bag of lowercase word tokens.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    dim: usize,
}

impl HashedBagOfWords {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self::new(DEFAULT_EMBEDDING_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for HashedBagOfWords {
    fn name(&self) -> String {
        format!("hashed-bow-{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, KbError> {
        if text.trim().is_empty() {
            return Err(KbError::EmptyText);
        }
        let mut values = vec![0.0; self.dim];
        for token in word_tokens(text) {
            values[(fnv1a(token.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingVector { values })
    }
}

/// Embeddings from an OpenAI-compatible `/embeddings` endpoint.
pub struct RemoteEmbedder {
    base_url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    /// `api_key_env` names the environment variable holding the key.
    pub fn new(base_url: &str, model: &str, api_key_env: &str, dim: usize) -> Result<Self, KbError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| KbError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: std::env::var(api_key_env).ok(),
            dim,
            client,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn name(&self) -> String {
        format!("remote:{}", self.model)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, KbError> {
        if text.trim().is_empty() {
            return Err(KbError::EmptyText);
        }
        let mut req = self
            .client
            .post(format!("{}/embeddings", self.base_url))
            .json(&serde_json::json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| KbError::ProviderUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(KbError::ProviderUnavailable(format!("HTTP {}", resp.status())));
        }
        let body: serde_json::Value = resp
            .json()
            .map_err(|e| KbError::ProviderUnavailable(e.to_string()))?;
        let values: Vec<f64> = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| KbError::ProviderUnavailable("response lacks data[0].embedding".into()))?
            .iter()
            .filter_map(|v| v.as_f64())
            .collect();
        if values.len() != self.dim {
            return Err(KbError::DimensionMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        EmbeddingVector::new(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalPolicy {
    pub threshold: f64,
    pub max_contexts: usize,
}

impl Default for RetrievalPolicy {
    fn default() -> Self {
        Self {
            threshold: 0.6,
            max_contexts: 2,
        }
    }
}

impl RetrievalPolicy {
    pub fn new(threshold: f64, max_contexts: usize) -> Result<Self, KbError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(KbError::SchemaViolation(format!(
                "retrieval threshold {threshold} outside [0, 1]"
            )));
        }
        if max_contexts == 0 {
            return Err(KbError::SchemaViolation("max_contexts must be positive".into()));
        }
        Ok(Self {
            threshold,
            max_contexts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedContext {
    pub node: KnowledgeNode,
    pub score: f64,
    pub typology_kind: TypologyKind,
}

/// Embedded nodes of one typology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeIndex {
    pub kind: TypologyKind,
    pub root: String,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    #[serde(flatten)]
    node: KnowledgeNode,
    embedding: EmbeddingVector,
}

impl KnowledgeIndex {
    pub fn build(typology: &KnowledgeTypology, embedder: &dyn Embedder) -> Result<Self, KbError> {
        let entries = typology
            .nodes
            .iter()
            .map(|node| {
                Ok(IndexEntry {
                    embedding: embedder.embed(&node.rendering())?,
                    node: node.clone(),
                })
            })
            .collect::<Result<Vec<_>, KbError>>()?;
        Ok(Self {
            kind: typology.kind,
            root: typology.root.clone(),
            entries,
        })
    }

    /// Index over pre-computed embeddings.
    pub fn from_embedded(
        kind: TypologyKind,
        entries: Vec<(KnowledgeNode, EmbeddingVector)>,
    ) -> Result<Self, KbError> {
        if let Some(first) = entries.first() {
            let dim = first.1.dim();
            if let Some(bad) = entries.iter().find(|e| e.1.dim() != dim) {
                return Err(KbError::DimensionMismatch {
                    expected: dim,
                    got: bad.1.dim(),
                });
            }
        }
        Ok(Self {
            kind,
            root: String::new(),
            entries: entries
                .into_iter()
                .map(|(node, embedding)| IndexEntry { node, embedding })
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.node.name.clone()).collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.embedding.dim())
    }

    /// Every node with its similarity to `query`, unsorted.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<(&KnowledgeNode, f64)>, KbError> {
        if let Some(dim) = self.dim() {
            if dim != query.dim() {
                return Err(KbError::DimensionMismatch {
                    expected: dim,
                    got: query.dim(),
                });
            }
        }
        Ok(self
            .entries
            .iter()
            .map(|e| (&e.node, cosine_similarity(query, &e.embedding)))
            .collect())
    }

    pub fn retrieve_vector(
        &self,
        query: &EmbeddingVector,
        policy: RetrievalPolicy,
    ) -> Result<Vec<RetrievedContext>, KbError> {
        if self.entries.is_empty() {
            return Err(KbError::EmptyIndex);
        }
        let scored = self.scores(query)?;
        Ok(select_contexts(scored, policy)
            .into_iter()
            .map(|(node, score)| RetrievedContext {
                node: node.clone(),
                score,
                typology_kind: self.kind,
            })
            .collect())
    }

    pub fn retrieve(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        policy: RetrievalPolicy,
    ) -> Result<Vec<RetrievedContext>, KbError> {
        if self.entries.is_empty() {
            return Err(KbError::EmptyIndex);
        }
        self.retrieve_vector(&embedder.embed(query)?, policy)
    }
}

/// Applies the context selection rule to scored nodes.
///
/// Nodes scoring strictly above the threshold are ranked (score descending,
/// then name). One match is returned alone, several are capped at
/// `max_contexts`, and with no match the single best node is returned.
pub fn select_contexts<T: AsRef<KnowledgeNode>>(
    mut scored: Vec<(T, f64)>,
    policy: RetrievalPolicy,
) -> Vec<(T, f64)> {
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| a.0.as_ref().name.cmp(&b.0.as_ref().name))
    });
    let above = scored.iter().filter(|(_, s)| *s > policy.threshold).count();
    let keep = match above {
        0 => 1,
        n => n.min(policy.max_contexts),
    };
    scored.truncate(keep);
    scored
}

impl AsRef<KnowledgeNode> for KnowledgeNode {
    fn as_ref(&self) -> &KnowledgeNode {
        self
    }
}

/// The four embedded typologies plus the embedder used for queries.
#[derive(Clone)]
pub struct KnowledgeBase {
    embedder: Arc<dyn Embedder>,
    indices: BTreeMap<TypologyKind, KnowledgeIndex>,
}

#[derive(Serialize, Deserialize)]
struct SavedKnowledgeBase {
    embedder: String,
    dim: usize,
    indices: Vec<KnowledgeIndex>,
}

impl KnowledgeBase {
    pub fn from_typologies(
        typologies: &[KnowledgeTypology],
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, KbError> {
        let mut indices = BTreeMap::new();
        for t in typologies {
            indices.insert(t.kind, KnowledgeIndex::build(t, embedder.as_ref())?);
        }
        Ok(Self { embedder, indices })
    }

    pub fn shipped(embedder: Arc<dyn Embedder>) -> Result<Self, KbError> {
        let typologies: Vec<_> = TypologyKind::ALL
            .into_iter()
            .map(KnowledgeTypology::shipped)
            .collect();
        Self::from_typologies(&typologies, embedder)
    }

    /// Loads `<kind>.json` for all four kinds from `dir`.
    pub fn load_dir(
        dir: &Path,
        embedder: Arc<dyn Embedder>,
        opts: ValidationOptions,
    ) -> Result<Self, KbError> {
        let typologies = load_typology_dir(dir, opts)?;
        Self::from_typologies(&typologies, embedder)
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn index(&self, kind: TypologyKind) -> Result<&KnowledgeIndex, KbError> {
        self.indices.get(&kind).ok_or(KbError::MissingTypology(kind))
    }

    pub fn labels(&self, kind: TypologyKind) -> Result<Vec<String>, KbError> {
        Ok(self.index(kind)?.labels())
    }

    pub fn retrieve(
        &self,
        kind: TypologyKind,
        query: &str,
        policy: RetrievalPolicy,
    ) -> Result<Vec<RetrievedContext>, KbError> {
        self.index(kind)?
            .retrieve(self.embedder.as_ref(), query, policy)
    }

    /// Serialises all embedded indices as JSON.
    pub fn to_json(&self) -> String {
        let saved = SavedKnowledgeBase {
            embedder: self.embedder.name(),
            dim: self.embedder.dim(),
            indices: self.indices.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&saved).expect("index serialises")
    }

    /// Restores indices written by [`KnowledgeBase::to_json`]; the embedder must match.
    pub fn from_json(json: &str, embedder: Arc<dyn Embedder>) -> Result<Self, KbError> {
        let saved: SavedKnowledgeBase =
            serde_json::from_str(json).map_err(|e| KbError::SchemaViolation(e.to_string()))?;
        if saved.embedder != embedder.name() || saved.dim != embedder.dim() {
            return Err(KbError::SchemaViolation(format!(
                "index built with `{}` (dim {}), not `{}`",
                saved.embedder,
                saved.dim,
                embedder.name()
            )));
        }
        let indices = saved.indices.into_iter().map(|i| (i.kind, i)).collect();
        Ok(Self { embedder, indices })
    }
}

pub fn load_typology_dir(
    dir: &Path,
    opts: ValidationOptions,
) -> Result<Vec<KnowledgeTypology>, KbError> {
    TypologyKind::ALL
        .into_iter()
        .map(|kind| {
            let t = load_typology(&dir.join(kind.file_name()), opts)?;
            if t.kind != kind {
                return Err(KbError::SchemaViolation(format!(
                    "{} declares kind `{}`",
                    kind.file_name(),
                    t.kind
                )));
            }
            Ok(t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str) -> KnowledgeNode {
        KnowledgeNode {
            name: name.into(),
            description: format!("{name} description"),
            examples: vec![],
        }
    }

    /// Query `e0` against nodes `s*e0 + sqrt(1-s^2)*e_{i+1}` has cosine exactly `s`.
    fn synthetic(scores: &[(&str, f64)]) -> (KnowledgeIndex, EmbeddingVector) {
        let dim = scores.len() + 1;
        let entries = scores
            .iter()
            .enumerate()
            .map(|(i, (name, s))| {
                let mut v = vec![0.0; dim];
                v[0] = *s;
                v[i + 1] = (1.0 - s * s).sqrt();
                (node(name), EmbeddingVector::new(v).unwrap())
            })
            .collect();
        let mut q = vec![0.0; dim];
        q[0] = 1.0;
        (
            KnowledgeIndex::from_embedded(TypologyKind::Purpose, entries).unwrap(),
            EmbeddingVector::new(q).unwrap(),
        )
    }

    fn names(ctx: &[RetrievedContext]) -> Vec<&str> {
        ctx.iter().map(|c| c.node.name.as_str()).collect()
    }

    #[test]
    fn two_above_threshold_returns_both() {
        let (idx, q) = synthetic(&[("A", 0.9), ("B", 0.7), ("C", 0.3)]);
        let got = idx.retrieve_vector(&q, RetrievalPolicy::default()).unwrap();
        assert_eq!(names(&got), ["A", "B"]);
        assert!((got[0].score - 0.9).abs() < 1e-12);
    }

    #[test]
    fn none_above_threshold_returns_best() {
        let (idx, q) = synthetic(&[("A", 0.5), ("B", 0.4)]);
        let got = idx.retrieve_vector(&q, RetrievalPolicy::default()).unwrap();
        assert_eq!(names(&got), ["A"]);
    }

    #[test]
    fn single_above_threshold_used_alone() {
        let (idx, q) = synthetic(&[("A", 0.65), ("B", 0.1)]);
        let got = idx.retrieve_vector(&q, RetrievalPolicy::default()).unwrap();
        assert_eq!(names(&got), ["A"]);
    }

    #[test]
    fn threshold_is_strict() {
        let (idx, q) = synthetic(&[("A", 0.6), ("B", 0.6), ("C", 0.2)]);
        let got = idx.retrieve_vector(&q, RetrievalPolicy::default()).unwrap();
        assert_eq!(names(&got), ["A"]);
    }

    #[test]
    fn ties_break_by_name() {
        let (idx, q) = synthetic(&[("Zeta", 0.8), ("Alpha", 0.8), ("Mid", 0.8)]);
        let got = idx.retrieve_vector(&q, RetrievalPolicy::default()).unwrap();
        assert_eq!(names(&got), ["Alpha", "Mid"]);
    }

    #[test]
    fn empty_index_errors() {
        let idx = KnowledgeIndex::from_embedded(TypologyKind::Method, vec![]).unwrap();
        let q = EmbeddingVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            idx.retrieve_vector(&q, RetrievalPolicy::default()),
            Err(KbError::EmptyIndex)
        ));
    }

    #[test]
    fn embedding_is_deterministic_and_self_similar() {
        let e = HashedBagOfWords::default();
        let a = e.embed("We collect your GPS location").unwrap();
        let b = e.embed("We collect your GPS location").unwrap();
        assert_eq!(a, b);
        assert!((cosine_similarity(&a, &b) - 1.0).abs() < 1e-12);
        assert_eq!(a.dim(), 256);
    }

    #[test]
    fn related_phrases_score_higher() {
        let e = HashedBagOfWords::default();
        let base = e.embed("location data").unwrap();
        let near = cosine_similarity(&base, &e.embed("location data history").unwrap());
        let far = cosine_similarity(&base, &e.embed("payment card number").unwrap());
        assert!(near > far, "{near} <= {far}");
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(
            HashedBagOfWords::default().embed("   "),
            Err(KbError::EmptyText)
        ));
    }

    #[test]
    fn shipped_typologies_match_vocabularies() {
        for kind in TypologyKind::ALL {
            let t = KnowledgeTypology::shipped(kind);
            assert_eq!(t.labels(), kind.required_names());
        }
    }

    #[test]
    fn duplicate_node_rejected() {
        let json = r#"{"kind":"method","root":"m","nodes":[
            {"name":"Active","description":"a","examples":[]},
            {"name":"Active","description":"a","examples":[]},
            {"name":"Unspecified","description":"","examples":[]}]}"#;
        let err = KnowledgeTypology::parse(json, ValidationOptions::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn unknown_kind_and_missing_field() {
        let json = r#"{"kind":"colour","root":"c","nodes":[]}"#;
        assert!(matches!(
            KnowledgeTypology::parse(json, ValidationOptions::default()),
            Err(KbError::UnknownKind(_))
        ));
        let json = r#"{"kind":"method","nodes":[]}"#;
        assert!(matches!(
            KnowledgeTypology::parse(json, ValidationOptions::default()),
            Err(KbError::SchemaViolation(_))
        ));
    }

    #[test]
    fn missing_description_rejected() {
        let json = r#"{"kind":"method","root":"m","nodes":[
            {"name":"Active","description":"","examples":[]},
            {"name":"Passive","description":"p","examples":[]},
            {"name":"Unspecified","description":"","examples":[]}]}"#;
        assert!(KnowledgeTypology::parse(json, ValidationOptions::default()).is_err());
    }

    #[test]
    fn social_media_purpose_needs_flag() {
        let mut t = KnowledgeTypology::shipped(TypologyKind::Purpose);
        t.nodes.push(KnowledgeNode {
            name: SOCIAL_MEDIA_PURPOSE.into(),
            description: "Sharing data to integrate with social networks.".into(),
            examples: vec!["social login".into()],
        });
        assert!(t.validate(ValidationOptions::default()).is_err());
        assert!(t
            .validate(ValidationOptions {
                allow_social_media_purpose: true
            })
            .is_ok());
    }

    #[test]
    fn retrieved_scores_equal_cosine() {
        let e = HashedBagOfWords::default();
        let t = KnowledgeTypology::shipped(TypologyKind::DataCategory);
        let idx = KnowledgeIndex::build(&t, &e).unwrap();
        let q = "GPS information";
        for ctx in idx.retrieve(&e, q, RetrievalPolicy::default()).unwrap() {
            let direct = cosine_similarity(
                &e.embed(q).unwrap(),
                &e.embed(&ctx.node.rendering()).unwrap(),
            );
            assert!((ctx.score - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn knowledge_base_json_roundtrip() {
        let e: Arc<dyn Embedder> = Arc::new(HashedBagOfWords::default());
        let kb = KnowledgeBase::shipped(e.clone()).unwrap();
        let back = KnowledgeBase::from_json(&kb.to_json(), e).unwrap();
        for kind in TypologyKind::ALL {
            assert_eq!(kb.index(kind).unwrap(), back.index(kind).unwrap());
        }
        let other: Arc<dyn Embedder> = Arc::new(HashedBagOfWords::new(64));
        assert!(KnowledgeBase::from_json(&kb.to_json(), other).is_err());
    }
}
