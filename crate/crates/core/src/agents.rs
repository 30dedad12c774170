//! LLM agents: screening, flow extraction and the four RAG classifiers.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    parse_flow_output, parse_label_output, strip_code_fences, ChatRequest, Gateway, GatewayError,
    RawFlowTuple,
};
use crate::knowledge::{
    KbError, KnowledgeBase, RetrievalPolicy, RetrievedContext, TypologyKind,
};
use crate::segmenter::{neighbors, segment_html, PolicyDocument, Segment, SegmentError};

/// Label used when the data receiver's consumer type cannot be decided.
pub const UNDEFINED_CONSUMER: &str = "Undefined";
const OTHER: &str = "Other";
const UNSPECIFIED: &str = "Unspecified";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("segment {0} has no text")]
    EmptySegment(usize),
    #[error("flow in segment {0} has an empty data type")]
    EmptyDataType(usize),
    #[error("template error: {0}")]
    Template(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Knowledge(#[from] KbError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Screening,
    Flow,
    DataCategory,
    ConsumerType,
    Purpose,
    Method,
}

impl AgentKind {
    pub const ALL: [AgentKind; 6] = [
        AgentKind::Screening,
        AgentKind::Flow,
        AgentKind::DataCategory,
        AgentKind::ConsumerType,
        AgentKind::Purpose,
        AgentKind::Method,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Screening => "screening",
            AgentKind::Flow => "flow",
            AgentKind::DataCategory => "data_category",
            AgentKind::ConsumerType => "consumer_type",
            AgentKind::Purpose => "purpose",
            AgentKind::Method => "method",
        }
    }

    fn shipped_template(self) -> &'static str {
        match self {
            AgentKind::Screening => include_str!("../prompts/screening.txt"),
            AgentKind::Flow => include_str!("../prompts/flow.txt"),
            AgentKind::DataCategory => include_str!("../prompts/data_category.txt"),
            AgentKind::ConsumerType => include_str!("../prompts/consumer_type.txt"),
            AgentKind::Purpose => include_str!("../prompts/purpose.txt"),
            AgentKind::Method => include_str!("../prompts/method.txt"),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AgentError::Template(format!("unknown agent `{s}`")))
    }
}

/// Values substituted into a template's placeholders.
#[derive(Debug, Clone, Default)]
pub struct PromptValues<'a> {
    pub text_segment: &'a str,
    pub input_data_type: &'a str,
    pub data_flow: &'a str,
    pub contexts: &'a str,
    pub prev: &'a str,
    pub next: &'a str,
}

/// System rules plus a user skeleton with `{PLACEHOLDER}` slots.
///
/// Template files hold a `[system]` section followed by a `[user]` section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub agent: AgentKind,
    pub system_rules: String,
    pub user_skeleton: String,
}

impl PromptTemplate {
    pub fn parse(agent: AgentKind, text: &str) -> Result<Self, AgentError> {
        let rest = text
            .trim_start()
            .strip_prefix("[system]")
            .ok_or_else(|| AgentError::Template(format!("{agent}: missing [system] section")))?;
        let (system, user) = rest
            .split_once("\n[user]")
            .ok_or_else(|| AgentError::Template(format!("{agent}: missing [user] section")))?;
        let template = Self {
            agent,
            system_rules: system.trim().to_string(),
            user_skeleton: user.trim().to_string(),
        };
        if template.system_rules.is_empty() || template.user_skeleton.is_empty() {
            return Err(AgentError::Template(format!("{agent}: empty section")));
        }
        Ok(template)
    }

    pub fn shipped(agent: AgentKind) -> Self {
        Self::parse(agent, agent.shipped_template()).expect("shipped template is well formed")
    }

    /// Reads `<dir>/<agent>.txt`.
    pub fn load(dir: &Path, agent: AgentKind) -> Result<Self, AgentError> {
        let path = dir.join(format!("{agent}.txt"));
        let text = fs::read_to_string(&path)
            .map_err(|e| AgentError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(agent, &text)
    }

    /// Returns `(system, user)` message contents.
    pub fn render(&self, values: &PromptValues<'_>) -> (String, String) {
        let user = [
            ("{TEXT_SEGMENT}", values.text_segment),
            ("{INPUT_DATA_TYPE}", values.input_data_type),
            ("{DATA_FLOW}", values.data_flow),
            ("{CONTEXTS}", values.contexts),
            ("{PREV}", values.prev),
            ("{NEXT}", values.next),
        ]
        .iter()
        .fold(self.user_skeleton.clone(), |acc, (slot, v)| acc.replace(slot, v));
        (self.system_rules.clone(), user.trim_end().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: Vec<PromptTemplate>,
}

impl PromptSet {
    pub fn shipped() -> Self {
        Self {
            templates: AgentKind::ALL.into_iter().map(PromptTemplate::shipped).collect(),
        }
    }

    /// Loads templates from `dir`, falling back to the shipped ones for missing files.
    pub fn load_dir(dir: &Path) -> Result<Self, AgentError> {
        let templates = AgentKind::ALL
            .into_iter()
            .map(|agent| {
                if dir.join(format!("{agent}.txt")).exists() {
                    PromptTemplate::load(dir, agent)
                } else {
                    Ok(PromptTemplate::shipped(agent))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { templates })
    }

    pub fn get(&self, agent: AgentKind) -> &PromptTemplate {
        self.templates
            .iter()
            .find(|t| t.agent == agent)
            .expect("every agent has a template")
    }
}

/// One extracted transfer; `None` endpoints are unknown parties.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataFlow {
    pub sender: Option<String>,
    pub data_type: String,
    pub receiver: Option<String>,
    pub segment_index: usize,
}

impl DataFlow {
    /// `sender → data type → receiver`, with `unknown` for missing parties.
    pub fn rendering(&self) -> String {
        format!(
            "{} → {} → {}",
            self.sender.as_deref().unwrap_or("unknown"),
            self.data_type,
            self.receiver.as_deref().unwrap_or("unknown")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub data_category: Vec<TraceEntry>,
    pub consumer_type: Vec<TraceEntry>,
    pub purpose: Vec<TraceEntry>,
    pub method: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub flow: DataFlow,
    pub data_category: String,
    pub consumer_type: String,
    pub purpose: String,
    pub method: String,
    pub retrieval_trace: RetrievalTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    pub trace: Vec<TraceEntry>,
    /// True when the model's answer was replaced by the repair label.
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SegmentStatus {
    Irrelevant,
    Processed { flows: usize },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub index: usize,
    #[serde(flatten)]
    pub status: SegmentStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub segments: Vec<Segment>,
    pub records: Vec<FlowRecord>,
    pub statuses: Vec<SegmentReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentModels {
    pub screening: String,
    pub flow: String,
    pub data_category: String,
    pub consumer_type: String,
    pub purpose: String,
    pub method: String,
}

impl Default for AgentModels {
    fn default() -> Self {
        let large = "llama-3.3-70b-versatile".to_string();
        let small = "llama-3.1-8b-instant".to_string();
        Self {
            screening: large.clone(),
            flow: large,
            data_category: "llama3-70b-8192".to_string(),
            consumer_type: small.clone(),
            purpose: small.clone(),
            method: small,
        }
    }
}

impl AgentModels {
    pub fn get(&self, agent: AgentKind) -> &str {
        match agent {
            AgentKind::Screening => &self.screening,
            AgentKind::Flow => &self.flow,
            AgentKind::DataCategory => &self.data_category,
            AgentKind::ConsumerType => &self.consumer_type,
            AgentKind::Purpose => &self.purpose,
            AgentKind::Method => &self.method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub models: AgentModels,
    pub temperature: f64,
    pub top_p: f64,
    pub retrieval: RetrievalPolicy,
    /// Worker threads for segment processing; 0 uses the rayon default.
    pub threads: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            models: AgentModels::default(),
            temperature: 0.5,
            top_p: 0.5,
            retrieval: RetrievalPolicy::default(),
            threads: 0,
        }
    }
}

/// Expands raw tuples into single-sender, single-type, single-receiver flows.
///
/// Empty sender or receiver lists contribute one unknown endpoint.
pub fn expand_raw_tuples(raw: &[RawFlowTuple], segment_index: usize) -> Vec<DataFlow> {
    fn endpoints(list: &[String]) -> Vec<Option<String>> {
        if list.is_empty() {
            vec![None]
        } else {
            list.iter().cloned().map(Some).collect()
        }
    }
    let mut flows = Vec::new();
    for tuple in raw {
        let receivers = endpoints(&tuple.receivers);
        for sender in endpoints(&tuple.senders) {
            for data_type in &tuple.data_types {
                for receiver in &receivers {
                    flows.push(DataFlow {
                        sender: sender.clone(),
                        data_type: data_type.clone(),
                        receiver: receiver.clone(),
                        segment_index,
                    });
                }
            }
        }
    }
    flows
}

/// Renders retrieved nodes as `CONTEXT:` blocks for a classification prompt.
pub fn render_contexts(contexts: &[RetrievedContext]) -> String {
    contexts
        .iter()
        .map(|c| {
            let (name, description, examples) = match c.typology_kind {
                TypologyKind::DataCategory => {
                    ("Data category", "Data description", "Example data types")
                }
                kind => (kind.context_label(), "Description", "Examples"),
            };
            format!(
                "CONTEXT:\n    {name}: {}\n    {description}: {}\n    {examples}: {}",
                c.node.name,
                c.node.description,
                c.node.examples.join(", ")
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn is_yes(answer: &str) -> Option<bool> {
    let t = strip_code_fences(answer)
        .trim_matches(|c: char| c.is_whitespace() || c == '"' || c == '\'' || c == '.');
    if t.eq_ignore_ascii_case("yes") {
        Some(true)
    } else if t.eq_ignore_ascii_case("no") {
        Some(false)
    } else {
        None
    }
}

fn trace_of(contexts: &[RetrievedContext]) -> Vec<TraceEntry> {
    contexts
        .iter()
        .map(|c| TraceEntry {
            node: c.node.name.clone(),
            score: c.score,
        })
        .collect()
}

/// Runs the six agents against one gateway and knowledge base.
pub struct Agents {
    gateway: Arc<Gateway>,
    kb: Arc<KnowledgeBase>,
    prompts: PromptSet,
    config: AgentConfig,
}

impl Agents {
    pub fn new(gateway: Arc<Gateway>, kb: Arc<KnowledgeBase>, config: AgentConfig) -> Self {
        Self {
            gateway,
            kb,
            prompts: PromptSet::shipped(),
            config,
        }
    }

    pub fn with_prompts(mut self, prompts: PromptSet) -> Self {
        self.prompts = prompts;
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    fn ask(&self, agent: AgentKind, values: &PromptValues<'_>) -> Result<String, AgentError> {
        let (system, user) = self.prompts.get(agent).render(values);
        let req = ChatRequest::new(system, user, self.config.models.get(agent))
            .with_sampling(self.config.temperature, self.config.top_p);
        Ok(self.gateway.complete(&req)?.text)
    }

    pub fn screen(&self, segment: &Segment) -> Result<bool, AgentError> {
        if segment.text.trim().is_empty() {
            return Err(AgentError::EmptySegment(segment.index));
        }
        let answer = self.ask(
            AgentKind::Screening,
            &PromptValues {
                text_segment: &segment.text,
                ..Default::default()
            },
        )?;
        Ok(is_yes(&answer).unwrap_or_else(|| {
            log::warn!(
                "segment {}: screening answer {:?} is neither YES nor NO",
                segment.index,
                answer
            );
            false
        }))
    }

    /// Extracts flows; a malformed answer surfaces as a gateway parse failure.
    pub fn extract_flows(&self, segment: &Segment) -> Result<Vec<DataFlow>, AgentError> {
        if segment.text.trim().is_empty() {
            return Err(AgentError::EmptySegment(segment.index));
        }
        let answer = self.ask(
            AgentKind::Flow,
            &PromptValues {
                text_segment: &segment.text,
                ..Default::default()
            },
        )?;
        let raw = parse_flow_output(&answer)?;
        Ok(expand_raw_tuples(&raw, segment.index))
    }

    #[allow(clippy::too_many_arguments)]
    fn classify(
        &self,
        agent: AgentKind,
        kind: TypologyKind,
        query: &str,
        policy: RetrievalPolicy,
        values: PromptValues<'_>,
        extra_labels: &[&str],
        repair: &str,
    ) -> Result<Classification, AgentError> {
        let contexts = self.kb.retrieve(kind, query, policy)?;
        let rendered = render_contexts(&contexts);
        let answer = self.ask(
            agent,
            &PromptValues {
                contexts: &rendered,
                ..values
            },
        )?;
        let mut allowed = self.kb.labels(kind)?;
        allowed.extend(extra_labels.iter().map(|s| s.to_string()));
        let (label, repaired) = match parse_label_output(&answer, &allowed) {
            Ok(label) => (label, false),
            Err(e @ (GatewayError::LabelOutOfVocabulary { .. } | GatewayError::ParseFailure(_))) => {
                log::warn!("{agent}: {e}; using `{repair}`");
                (repair.to_string(), true)
            }
            Err(e) => return Err(e.into()),
        };
        Ok(Classification {
            label,
            trace: trace_of(&contexts),
            repaired,
        })
    }

    /// Queries the data-category typology with the data type alone.
    pub fn classify_data_category(
        &self,
        flow: &DataFlow,
        segment: &Segment,
    ) -> Result<Classification, AgentError> {
        if flow.data_type.trim().is_empty() {
            return Err(AgentError::EmptyDataType(flow.segment_index));
        }
        self.classify(
            AgentKind::DataCategory,
            TypologyKind::DataCategory,
            &flow.data_type,
            self.config.retrieval,
            PromptValues {
                text_segment: &segment.text,
                input_data_type: &flow.data_type,
                ..Default::default()
            },
            &[],
            OTHER,
        )
    }

    pub fn classify_consumer_type(
        &self,
        flow: &DataFlow,
        segment: &Segment,
    ) -> Result<Classification, AgentError> {
        let rendering = flow.rendering();
        self.classify(
            AgentKind::ConsumerType,
            TypologyKind::ConsumerType,
            &format!("{rendering}\n{}", segment.text),
            self.config.retrieval,
            PromptValues {
                text_segment: &segment.text,
                input_data_type: &flow.data_type,
                data_flow: &rendering,
                ..Default::default()
            },
            &[UNDEFINED_CONSUMER],
            UNDEFINED_CONSUMER,
        )
    }

    pub fn classify_purpose(
        &self,
        flow: &DataFlow,
        segment: &Segment,
    ) -> Result<Classification, AgentError> {
        let rendering = flow.rendering();
        self.classify(
            AgentKind::Purpose,
            TypologyKind::Purpose,
            &format!("{rendering}\n{}", segment.text),
            self.config.retrieval,
            PromptValues {
                text_segment: &segment.text,
                input_data_type: &flow.data_type,
                data_flow: &rendering,
                ..Default::default()
            },
            &[],
            UNSPECIFIED,
        )
    }

    /// Uses the neighbouring segments and only the best-scoring context.
    pub fn classify_method(
        &self,
        flow: &DataFlow,
        segment: &Segment,
        prev: Option<&Segment>,
        next: Option<&Segment>,
    ) -> Result<Classification, AgentError> {
        let rendering = flow.rendering();
        let prev = prev.map_or("", |s| s.text.as_str());
        let next = next.map_or("", |s| s.text.as_str());
        let query = [rendering.as_str(), prev, segment.text.as_str(), next]
            .iter()
            .filter(|s| !s.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join("\n");
        let policy = RetrievalPolicy {
            max_contexts: 1,
            ..self.config.retrieval
        };
        self.classify(
            AgentKind::Method,
            TypologyKind::Method,
            &query,
            policy,
            PromptValues {
                text_segment: &segment.text,
                input_data_type: &flow.data_type,
                data_flow: &rendering,
                prev,
                next,
                ..Default::default()
            },
            &[],
            UNSPECIFIED,
        )
    }

    pub fn annotate(
        &self,
        flow: DataFlow,
        segments: &[Segment],
        position: usize,
    ) -> Result<FlowRecord, AgentError> {
        let segment = &segments[position];
        let (prev, next) = neighbors(segments, position)?;
        let data = self.classify_data_category(&flow, segment)?;
        let consumer = self.classify_consumer_type(&flow, segment)?;
        let purpose = self.classify_purpose(&flow, segment)?;
        let method = self.classify_method(&flow, segment, prev, next)?;
        Ok(FlowRecord {
            flow,
            data_category: data.label,
            consumer_type: consumer.label,
            purpose: purpose.label,
            method: method.label,
            retrieval_trace: RetrievalTrace {
                data_category: data.trace,
                consumer_type: consumer.trace,
                purpose: purpose.trace,
                method: method.trace,
            },
        })
    }

    fn process_segment(
        &self,
        segments: &[Segment],
        position: usize,
    ) -> Result<(SegmentStatus, Vec<FlowRecord>), AgentError> {
        let segment = &segments[position];
        if !self.screen(segment)? {
            return Ok((SegmentStatus::Irrelevant, Vec::new()));
        }
        let records = self
            .extract_flows(segment)?
            .into_iter()
            .map(|flow| self.annotate(flow, segments, position))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((
            SegmentStatus::Processed {
                flows: records.len(),
            },
            records,
        ))
    }

    /// Segments a document and runs every agent over it.
    ///
    /// Failures inside a segment are logged and recorded in the statuses;
    /// the output order follows segment order whatever the thread count.
    pub fn run_pipeline(&self, doc: &PolicyDocument) -> Result<PipelineOutput, AgentError> {
        let segments = segment_html(doc)?;
        let work = || -> Vec<(SegmentStatus, Vec<FlowRecord>)> {
            (0..segments.len())
                .into_par_iter()
                .map(|pos| {
                    self.process_segment(&segments, pos).unwrap_or_else(|e| {
                        log::warn!("{}: segment {} skipped: {e}", doc.id, segments[pos].index);
                        (SegmentStatus::Failed { error: e.to_string() }, Vec::new())
                    })
                })
                .collect()
        };
        let results = if self.config.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.threads)
                .build()
                .map_err(|e| AgentError::Template(format!("thread pool: {e}")))?
                .install(work)
        } else {
            work()
        };
        let mut records = Vec::new();
        let mut statuses = Vec::with_capacity(segments.len());
        for (segment, (status, recs)) in segments.iter().zip(results) {
            statuses.push(SegmentReport {
                index: segment.index,
                status,
            });
            records.extend(recs);
        }
        Ok(PipelineOutput {
            segments,
            records,
            statuses,
        })
    }
}

/// Writes records as newline-delimited JSON.
pub fn records_to_ndjson(records: &[FlowRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
        .collect()
}

pub fn records_from_ndjson(text: &str) -> Result<Vec<FlowRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockManifest, MockRule};
    use crate::knowledge::HashedBagOfWords;
    use crate::segmenter::SegmentKind;

    fn seg(index: usize, text: &str) -> Segment {
        Segment {
            index,
            kind: SegmentKind::Paragraph,
            text: text.to_string(),
            raw_lines: vec![text.to_string()],
        }
    }

    fn rule(system: &str, user: &[&str], response: &str) -> MockRule {
        MockRule {
            system_contains: Some(system.to_string()),
            user_contains: user.iter().map(|s| s.to_string()).collect(),
            response: response.to_string(),
        }
    }

    const SCREEN: &str = "screen privacy policy text";
    const FLOW: &str = "to extract data flows";
    const DATA: &str = "categorising the INPUT DATA TYPE";
    const CONSUMER: &str = "data consumer type of the data_receiver";
    const PURPOSE: &str = "data processing purpose of the DATA FLOW";
    const METHOD: &str = "how the personal data in the DATA FLOW";

    fn agents(rules: Vec<MockRule>) -> Agents {
        let gateway = Gateway::new(Box::new(MockBackend::new(MockManifest { rules })));
        let kb = KnowledgeBase::shipped(Arc::new(HashedBagOfWords::default())).unwrap();
        Agents::new(Arc::new(gateway), Arc::new(kb), AgentConfig::default())
    }

    #[test]
    fn shipped_templates_render_non_empty() {
        let prompts = PromptSet::shipped();
        for agent in AgentKind::ALL {
            let (system, user) = prompts.get(agent).render(&PromptValues {
                text_segment: "We collect your name.",
                ..Default::default()
            });
            assert!(!system.is_empty() && !user.is_empty(), "{agent}");
            assert!(user.contains("We collect your name."), "{agent}");
            assert!(!user.contains("{TEXT_SEGMENT}"), "{agent}");
        }
    }

    #[test]
    fn template_requires_sections() {
        assert!(PromptTemplate::parse(AgentKind::Flow, "no sections").is_err());
        assert!(PromptTemplate::parse(AgentKind::Flow, "[system]\nrules only").is_err());
        let t = PromptTemplate::parse(AgentKind::Flow, "[system]\nR\n[user]\nT: {TEXT_SEGMENT}").unwrap();
        assert_eq!(t.render(&PromptValues { text_segment: "x", ..Default::default() }).1, "T: x");
    }

    #[test]
    fn screening_verdicts() {
        let a = agents(vec![
            rule(SCREEN, &["Contact us"], "NO"),
            rule(SCREEN, &["VIN"], "yes"),
            rule(SCREEN, &["weird"], "Maybe?"),
        ]);
        assert!(!a.screen(&seg(0, "*Contact us")).unwrap());
        assert!(a.screen(&seg(1, "We share your VIN with Panasonic.")).unwrap());
        assert!(!a.screen(&seg(2, "weird")).unwrap());
        assert!(matches!(a.screen(&seg(3, "  ")), Err(AgentError::EmptySegment(3))));
    }

    #[test]
    fn extraction_expands_cartesian_product() {
        let a = agents(vec![
            rule(
                FLOW,
                &["Google"],
                r#"{"Output":[{"data_sender":"you","data_type":["name","email address"],"data_receiver":["we","Google"]}]}"#,
            ),
            rule(
                FLOW,
                &["collect"],
                r#"{"Output":[{"data_sender":"you","data_type":["name","VIN"],"data_receiver":[]}]}"#,
            ),
            rule(FLOW, &["weather"], "None"),
        ]);
        let flows = a.extract_flows(&seg(4, "You give us and Google data.")).unwrap();
        assert_eq!(flows.len(), 4);
        assert!(flows.iter().all(|f| f.segment_index == 4));
        let flows = a.extract_flows(&seg(5, "We collect it.")).unwrap();
        assert_eq!(flows.len(), 2);
        assert!(flows.iter().all(|f| f.receiver.is_none() && f.sender.as_deref() == Some("you")));
        assert!(a.extract_flows(&seg(6, "The weather is nice.")).unwrap().is_empty());
    }

    #[test]
    fn classifiers_use_fixture_labels_and_repairs() {
        let a = agents(vec![
            rule(DATA, &["GPS information"], r#"{"Output":[{"DataCategory":"Location","DataType":"GPS information","InputText":"x"}]}"#),
            rule(DATA, &["personal data"], r#"{"Output":[{"DataCategory":"Generic Personal Information"}]}"#),
            rule(CONSUMER, &["→ we"], r#"{"Output":[{"DataConsumerType":"First Party"}]}"#),
            rule(CONSUMER, &["→ Google"], r#"{"Output":[{"DataConsumerType":"Third Party"}]}"#),
            rule(CONSUMER, &[], "garbage"),
            rule(PURPOSE, &["targeted ads"], r#"{"Output":[{"DataProcessingPurpose":"Advertising"}]}"#),
            rule(PURPOSE, &["court order"], r#"{"Output":[{"DataProcessingPurpose":"Legal requirement"}]}"#),
            rule(PURPOSE, &[], "None"),
            rule(METHOD, &["automatically"], r#"{"Output":[{"DataProcessingMethod":"Passive"}]}"#),
            rule(METHOD, &["creating an account"], r#"{"Output":[{"DataProcessingMethod":"Active"}]}"#),
        ]);
        let flow = |s: &str, t: &str, r: &str| DataFlow {
            sender: Some(s.into()),
            data_type: t.into(),
            receiver: Some(r.into()),
            segment_index: 0,
        };
        let s = seg(0, "text");
        assert_eq!(a.classify_data_category(&flow("you", "GPS information", "we"), &s).unwrap().label, "Location");
        assert_eq!(a.classify_data_category(&flow("you", "personal data", "we"), &s).unwrap().label, "Generic Personal Information");
        assert!(matches!(
            a.classify_data_category(&flow("you", " ", "we"), &s),
            Err(AgentError::EmptyDataType(0))
        ));

        assert_eq!(a.classify_consumer_type(&flow("you", "email address", "we"), &s).unwrap().label, "First Party");
        assert_eq!(a.classify_consumer_type(&flow("we", "location data", "Google"), &s).unwrap().label, "Third Party");
        let repaired = a.classify_consumer_type(&flow("we", "x", "them"), &s).unwrap();
        assert_eq!((repaired.label.as_str(), repaired.repaired), ("Undefined", true));

        let f = flow("you", "cookie", "we");
        assert_eq!(a.classify_purpose(&f, &seg(0, "to show you targeted ads")).unwrap().label, "Advertising");
        assert_eq!(a.classify_purpose(&f, &seg(0, "we hold it")).unwrap().label, "Unspecified");
        assert_eq!(a.classify_purpose(&f, &seg(0, "required by a court order")).unwrap().label, "Legal requirement");

        let first = seg(0, "information you provide when creating an account");
        let m = a.classify_method(&f, &first, None, None).unwrap();
        assert_eq!(m.label, "Active");
        assert_eq!(m.trace.len(), 1);
        let auto = seg(1, "we automatically collect your IP address");
        assert_eq!(a.classify_method(&f, &auto, Some(&first), None).unwrap().label, "Passive");
    }

    #[test]
    fn traces_are_non_increasing() {
        let a = agents(vec![rule(DATA, &[], "None")]);
        let f = DataFlow {
            sender: None,
            data_type: "GPS location data".into(),
            receiver: None,
            segment_index: 0,
        };
        let c = a.classify_data_category(&f, &seg(0, "x")).unwrap();
        assert_eq!(c.label, "Unspecified");
        assert!(c.trace.windows(2).all(|w| w[0].score >= w[1].score));
    }

    fn pipeline_rules() -> Vec<MockRule> {
        vec![
            rule(SCREEN, &["share"], "YES"),
            rule(SCREEN, &["broken"], "YES"),
            rule(SCREEN, &[], "NO"),
            rule(
                FLOW,
                &["share"],
                r#"{"Output":[{"data_sender":"you","data_type":["name","email address"],"data_receiver":["we","Google"]}]}"#,
            ),
            rule(FLOW, &["broken"], "{not json"),
            rule(DATA, &[], r#"{"Output":[{"DataCategory":"Contact"}]}"#),
            rule(CONSUMER, &[], r#"{"Output":[{"DataConsumerType":"First Party"}]}"#),
            rule(PURPOSE, &[], r#"{"Output":[{"DataProcessingPurpose":"Marketing"}]}"#),
            rule(METHOD, &[], r#"{"Output":[{"DataProcessingMethod":"Active"}]}"#),
        ]
    }

    #[test]
    fn pipeline_end_to_end_with_mock() {
        let doc = PolicyDocument::new(
            "p",
            "Acme",
            "<p>Contact us</p><p>You share your name and email address with us and Google.</p><p>broken text</p>",
        );
        let a = agents(pipeline_rules());
        let out = a.run_pipeline(&doc).unwrap();
        assert_eq!(out.records.len(), 4);
        assert!(out.records.iter().all(|r| r.data_category == "Contact"
            && r.consumer_type == "First Party"
            && r.purpose == "Marketing"
            && r.method == "Active"));
        assert_eq!(out.statuses[0].status, SegmentStatus::Irrelevant);
        assert_eq!(out.statuses[1].status, SegmentStatus::Processed { flows: 4 });
        assert!(matches!(out.statuses[2].status, SegmentStatus::Failed { .. }));
    }

    #[test]
    fn pipeline_is_deterministic_across_thread_counts() {
        let html: String = (0..12)
            .map(|i| format!("<p>Segment {i}: we share data number {i}.</p>"))
            .collect();
        let doc = PolicyDocument::new("p", "Acme", html);
        let run = |threads| {
            let mut a = agents(pipeline_rules());
            a.config.threads = threads;
            records_to_ndjson(&a.run_pipeline(&doc).unwrap().records)
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(1));
        assert_eq!(records_from_ndjson(&one).unwrap().len(), 48);
    }

    #[test]
    fn irrelevant_document_yields_nothing() {
        let doc = PolicyDocument::new("p", "Acme", "<p>Contact us</p><h2>Cookies</h2>");
        let out = agents(pipeline_rules()).run_pipeline(&doc).unwrap();
        assert!(out.records.is_empty());
    }

    #[test]
    fn empty_document_is_fatal() {
        let doc = PolicyDocument::new("p", "Acme", "<html><head><title>t</title></head></html>");
        assert!(matches!(
            agents(vec![]).run_pipeline(&doc),
            Err(AgentError::Segment(SegmentError::EmptyDocument(_)))
        ));
    }

    proptest::proptest! {
        #[test]
        fn expansion_is_cartesian_and_unique(
            raw in proptest::collection::vec(
                (
                    proptest::collection::btree_set("[a-z]{1,6}", 0..4),
                    proptest::collection::btree_set("[a-z]{1,6}", 0..4),
                    proptest::collection::btree_set("[a-z]{1,6}", 0..4),
                ),
                0..4,
            ),
            index in 0usize..50,
        ) {
            use proptest::prelude::*;
            let raw: Vec<RawFlowTuple> = raw
                .into_iter()
                .map(|(s, d, r)| RawFlowTuple {
                    senders: s.into_iter().collect(),
                    data_types: d.into_iter().collect(),
                    receivers: r.into_iter().collect(),
                })
                .collect();
            let flows = expand_raw_tuples(&raw, index);
            let expected: usize = raw
                .iter()
                .map(|t| t.senders.len().max(1) * t.data_types.len() * t.receivers.len().max(1))
                .sum();
            prop_assert_eq!(flows.len(), expected);
            prop_assert!(flows.iter().all(|f| f.segment_index == index));
            for (i, t) in raw.iter().enumerate() {
                let start: usize = raw[..i]
                    .iter()
                    .map(|t| t.senders.len().max(1) * t.data_types.len() * t.receivers.len().max(1))
                    .sum();
                let n = t.senders.len().max(1) * t.data_types.len() * t.receivers.len().max(1);
                let block: std::collections::BTreeSet<_> = flows[start..start + n]
                    .iter()
                    .map(|f| (f.sender.clone(), f.data_type.clone(), f.receiver.clone()))
                    .collect();
                prop_assert_eq!(block.len(), n);
                for f in &flows[start..start + n] {
                    prop_assert_eq!(f.sender.is_none(), t.senders.is_empty());
                    prop_assert_eq!(f.receiver.is_none(), t.receivers.is_empty());
                }
            }
        }
    }
}
