//! End-to-end analysis of a policy corpus.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use policyflow::agents::{records_to_ndjson, Agents, PromptSet, SegmentReport, SegmentStatus};
use policyflow::gateway::{Backend, Gateway, LiveBackend, MockBackend, ResponseCache};
use policyflow::graph::{build_graph, export, ExportFormat};
use policyflow::knowledge::{
    Embedder, HashedBagOfWords, KnowledgeBase, RemoteEmbedder, TypologyKind,
};
use policyflow::parser::{dedup_records, parse_records, EntityLexicon, EntityNormalizer, SynonymTable};
use policyflow::report::{
    build_corpus_report, build_policy_report, corpus_report_csv, corpus_report_text,
    policy_report_csv, PolicyReport, SCHEMA_VERSION,
};
use policyflow::segmenter::PolicyDocument;
use serde::{Deserialize, Serialize};

use crate::config::{BackendKind, EmbeddingConfig, EmbeddingProvider, InputSpec, RunConfig};
use crate::{read_input, sha256_hex, write_atomic, CliError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub segments: usize,
    pub irrelevant_segments: usize,
    pub processed_segments: usize,
    pub failed_segments: usize,
    pub flow_records: usize,
    pub parsed_flows: usize,
}

impl Counts {
    fn from_statuses(statuses: &[SegmentReport]) -> Self {
        let mut c = Counts {
            segments: statuses.len(),
            ..Counts::default()
        };
        for s in statuses {
            match s.status {
                SegmentStatus::Irrelevant => c.irrelevant_segments += 1,
                SegmentStatus::Processed { .. } => c.processed_segments += 1,
                SegmentStatus::Failed { .. } => c.failed_segments += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub backend: String,
    pub policy_id: String,
    pub org_name: String,
    pub input: InputDigest,
    pub counts: Counts,
    pub segments: Vec<SegmentReport>,
    /// SHA-256 of every artifact written for this policy.
    pub artifacts: BTreeMap<String, String>,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub backend: String,
    pub policies: Vec<PolicyManifest>,
    pub artifacts: BTreeMap<String, String>,
    pub elapsed_ms: u128,
}

pub const POLICY_ARTIFACTS: [&str; 6] = [
    "flows.jsonl",
    "graph.json",
    "graph.dot",
    "graph.html",
    "report.json",
    "report.csv",
];

pub const CORPUS_ARTIFACTS: [&str; 3] = ["report.json", "report.csv", "report.txt"];

pub fn make_embedder(cfg: &EmbeddingConfig) -> Result<Arc<dyn Embedder>, CliError> {
    Ok(match cfg.provider {
        EmbeddingProvider::Local => Arc::new(HashedBagOfWords::new(cfg.dim)),
        EmbeddingProvider::Remote => {
            let (Some(url), Some(model)) = (&cfg.base_url, &cfg.model) else {
                return Err(CliError::Config(
                    "remote embeddings need embedding.base_url and embedding.model".into(),
                ));
            };
            let env = cfg.api_key_env.as_deref().unwrap_or("EMBEDDING_API_KEY");
            Arc::new(RemoteEmbedder::new(url, model, env, cfg.dim)?)
        }
    })
}

fn make_knowledge_base(cfg: &RunConfig) -> Result<KnowledgeBase, CliError> {
    let embedder = make_embedder(&cfg.embedding)?;
    let opts = cfg.validation_options();
    if let Some(index) = &cfg.kb_index {
        let text = read_input(index)?;
        return Ok(KnowledgeBase::from_json(&text, embedder)?);
    }
    Ok(match &cfg.kb_dir {
        Some(dir) => KnowledgeBase::load_dir(dir, embedder, opts)?,
        None => KnowledgeBase::shipped(embedder)?,
    })
}

fn make_gateway(cfg: &RunConfig) -> Result<Gateway, CliError> {
    let backend: Box<dyn Backend> = match cfg.backend {
        BackendKind::Mock => {
            let dir = cfg
                .fixtures
                .as_ref()
                .ok_or_else(|| CliError::Config("the mock backend requires `fixtures`".into()))?;
            Box::new(MockBackend::from_dir(dir)?)
        }
        BackendKind::Live => Box::new(LiveBackend::from_env(&cfg.base_url, &cfg.api_key_env)?),
    };
    let mut gateway = Gateway::new(backend).with_max_in_flight(cfg.max_in_flight);
    if let Some(dir) = &cfg.cache_dir {
        gateway = gateway.with_cache(ResponseCache::open(dir)?);
    }
    Ok(gateway)
}

fn write_artifacts(
    dir: &Path,
    files: Vec<(&str, Vec<u8>)>,
) -> Result<BTreeMap<String, String>, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    let mut digests = BTreeMap::new();
    for (name, bytes) in files {
        write_atomic(&dir.join(name), &bytes)?;
        digests.insert(name.to_string(), sha256_hex(&bytes));
    }
    Ok(digests)
}

fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serialises");
    bytes.push(b'\n');
    bytes
}

pub struct AnalyzeOutcome {
    pub manifest: RunManifest,
    pub reports: Vec<PolicyReport>,
    pub output_dir: PathBuf,
}

struct Context {
    agents: Agents,
    normalizer: EntityNormalizer,
    categories: Vec<String>,
    config_hash: String,
    backend: String,
}

fn analyze_policy(
    ctx: &Context,
    input: &InputSpec,
    output_dir: &Path,
) -> Result<(PolicyReport, PolicyManifest), CliError> {
    let started = Instant::now();
    let id = input.policy_id();
    let html = read_input(&input.path)?;
    let digest = InputDigest {
        path: input.path.display().to_string(),
        sha256: sha256_hex(html.as_bytes()),
        bytes: html.len(),
    };
    log::info!("{id}: analysing {}", digest.path);
    let doc = PolicyDocument::new(&id, &input.org_name, html);
    let out = ctx.agents.run_pipeline(&doc)?;
    let lexicon = EntityLexicon::for_org(&input.org_name);
    let parsed = dedup_records(parse_records(&out.records, &ctx.normalizer, &lexicon));
    let graph = build_graph(&id, &parsed);
    let report = build_policy_report(&id, &input.org_name, &parsed, &graph, &ctx.categories);

    let mut counts = Counts::from_statuses(&out.statuses);
    counts.flow_records = out.records.len();
    counts.parsed_flows = parsed.len();
    if counts.failed_segments > 0 {
        log::warn!("{id}: {} segment(s) failed", counts.failed_segments);
    }

    let dir = output_dir.join(&id);
    let artifacts = write_artifacts(
        &dir,
        vec![
            ("flows.jsonl", records_to_ndjson(&out.records).into_bytes()),
            ("graph.json", export(&graph, ExportFormat::Json)),
            ("graph.dot", export(&graph, ExportFormat::Dot)),
            ("graph.html", export(&graph, ExportFormat::Html)),
            ("report.json", to_json_bytes(&report)),
            ("report.csv", policy_report_csv(&report)?.into_bytes()),
        ],
    )?;
    let manifest = PolicyManifest {
        schema_version: SCHEMA_VERSION,
        config_hash: ctx.config_hash.clone(),
        backend: ctx.backend.clone(),
        policy_id: id,
        org_name: input.org_name.clone(),
        input: digest,
        counts,
        segments: out.statuses,
        artifacts,
        elapsed_ms: started.elapsed().as_millis(),
    };
    write_atomic(&dir.join("manifest.json"), &to_json_bytes(&manifest))?;
    Ok((report, manifest))
}

/// Runs every configured input and writes per-policy and corpus artifacts.
pub fn analyze(cfg: &RunConfig) -> Result<AnalyzeOutcome, CliError> {
    let started = Instant::now();
    cfg.validate()?;
    let kb = make_knowledge_base(cfg)?;
    let categories = kb.labels(TypologyKind::DataCategory)?;
    let gateway = make_gateway(cfg)?;
    let backend = gateway.backend_name().to_string();
    let mut agents = Agents::new(Arc::new(gateway), Arc::new(kb), cfg.agent_config());
    if let Some(dir) = &cfg.prompts_dir {
        agents = agents.with_prompts(PromptSet::load_dir(dir)?);
    }
    let normalizer = match &cfg.synonyms {
        Some(path) => EntityNormalizer::new(SynonymTable::load(path)?),
        None => EntityNormalizer::shipped(),
    };
    let ctx = Context {
        agents,
        normalizer,
        categories,
        config_hash: cfg.hash(),
        backend,
    };

    let mut reports = Vec::new();
    let mut manifests = Vec::new();
    for input in &cfg.inputs {
        let (report, manifest) = analyze_policy(&ctx, input, &cfg.output_dir)?;
        reports.push(report);
        manifests.push(manifest);
    }

    let corpus = build_corpus_report(reports.clone(), &cfg.weights)?;
    let artifacts = write_artifacts(
        &cfg.output_dir,
        vec![
            ("report.json", to_json_bytes(&corpus)),
            ("report.csv", corpus_report_csv(&corpus)?.into_bytes()),
            ("report.txt", corpus_report_text(&corpus).into_bytes()),
        ],
    )?;
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: ctx.config_hash,
        backend: ctx.backend,
        policies: manifests,
        artifacts,
        elapsed_ms: started.elapsed().as_millis(),
    };
    write_atomic(&cfg.output_dir.join("manifest.json"), &to_json_bytes(&manifest))?;
    Ok(AnalyzeOutcome {
        manifest,
        reports,
        output_dir: cfg.output_dir.clone(),
    })
}
