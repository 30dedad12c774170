//! Machine-readable and tabular reports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyser::{
    category_distribution, category_purpose_matrix, compute_flow_stats, compute_risk_scores,
    corpus_maxima, network_summary, AnalyserError, CategoryPurposeMatrix, CorpusMaxima, FlowStats,
    NetworkSummary, RiskScores, RiskWeights,
};
use crate::graph::{centrality, top_k, DataFlowGraph, Metric};
use crate::parser::{FlowCase, ParsedFlow};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOP_K: usize = 10;

/// How the centrality numbers in a report were computed.
pub const CENTRALITY_CONVENTION: &str = "directed graph, parallel purpose edges collapsed; \
degree = (in + out) / (M - 1); closeness over incoming distances with Wasserman-Faust scaling; \
betweenness normalised by 1 / ((M - 1)(M - 2))";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report schema mismatch: expected version {expected}, found {found}")]
    SchemaMismatch { expected: u32, found: u32 },
    #[error("need at least two reports to compare, got {0}")]
    NeedAtLeastTwo(usize),
    #[error("cannot parse report: {0}")]
    Parse(String),
    #[error(transparent)]
    Analyser(#[from] AnalyserError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNode {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub schema_version: u32,
    pub policy_id: String,
    pub org_name: String,
    pub centrality_convention: String,
    pub network: NetworkSummary,
    pub top_centrality: BTreeMap<Metric, Vec<RankedNode>>,
    pub flow_stats: FlowStats,
    pub category_distribution: BTreeMap<String, usize>,
    pub category_purpose: CategoryPurposeMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub schema_version: u32,
    pub centrality_convention: String,
    pub weights: RiskWeights,
    pub maxima: CorpusMaxima,
    pub risk_scores: Vec<RiskScores>,
    pub category_purpose: CategoryPurposeMatrix,
    pub policies: Vec<PolicyReport>,
}

pub fn build_policy_report(
    policy_id: &str,
    org_name: &str,
    flows: &[ParsedFlow],
    graph: &DataFlowGraph,
    categories: &[String],
) -> PolicyReport {
    let top_centrality = Metric::ALL
        .into_iter()
        .map(|m| {
            let ranked = top_k(&centrality(graph, m), TOP_K)
                .expect("TOP_K is positive")
                .into_iter()
                .map(|(id, score)| RankedNode { id, score })
                .collect();
            (m, ranked)
        })
        .collect();
    PolicyReport {
        schema_version: SCHEMA_VERSION,
        policy_id: policy_id.to_string(),
        org_name: org_name.to_string(),
        centrality_convention: CENTRALITY_CONVENTION.to_string(),
        network: network_summary(graph),
        top_centrality,
        flow_stats: compute_flow_stats(policy_id, flows),
        category_distribution: category_distribution(flows, categories),
        category_purpose: category_purpose_matrix(flows),
    }
}

fn merge_matrices<'a>(ms: impl IntoIterator<Item = &'a CategoryPurposeMatrix>) -> CategoryPurposeMatrix {
    let mut out = CategoryPurposeMatrix::default();
    for m in ms {
        for (cat, row) in &m.cells {
            for (purpose, n) in row {
                *out.cells
                    .entry(cat.clone())
                    .or_default()
                    .entry(purpose.clone())
                    .or_default() += n;
            }
        }
    }
    out
}

pub fn build_corpus_report(
    policies: Vec<PolicyReport>,
    weights: &RiskWeights,
) -> Result<CorpusReport, ReportError> {
    let stats: Vec<FlowStats> = policies.iter().map(|p| p.flow_stats.clone()).collect();
    let risk_scores = compute_risk_scores(&stats, weights)?;
    Ok(CorpusReport {
        schema_version: SCHEMA_VERSION,
        centrality_convention: CENTRALITY_CONVENTION.to_string(),
        weights: *weights,
        maxima: corpus_maxima(&stats),
        risk_scores,
        category_purpose: merge_matrices(policies.iter().map(|p| &p.category_purpose)),
        policies,
    })
}

fn check_version(found: u32) -> Result<(), ReportError> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(ReportError::SchemaMismatch {
            expected: SCHEMA_VERSION,
            found,
        })
    }
}

fn version_of(json: &str) -> Result<u32, ReportError> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| ReportError::Parse(e.to_string()))?;
    value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .map(|v| v as u32)
        .ok_or_else(|| ReportError::Parse("missing schema_version".into()))
}

/// Parses a per-policy report, rejecting other schema versions.
pub fn parse_policy_report(json: &str) -> Result<PolicyReport, ReportError> {
    check_version(version_of(json)?)?;
    serde_json::from_str(json).map_err(|e| ReportError::Parse(e.to_string()))
}

pub fn parse_corpus_report(json: &str) -> Result<CorpusReport, ReportError> {
    check_version(version_of(json)?)?;
    serde_json::from_str(json).map_err(|e| ReportError::Parse(e.to_string()))
}

/// Either report kind, told apart by the presence of `risk_scores`.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyReport {
    Policy(Box<PolicyReport>),
    Corpus(Box<CorpusReport>),
}

pub fn parse_any_report(json: &str) -> Result<AnyReport, ReportError> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| ReportError::Parse(e.to_string()))?;
    if value.get("risk_scores").is_some() {
        Ok(AnyReport::Corpus(Box::new(parse_corpus_report(json)?)))
    } else {
        Ok(AnyReport::Policy(Box::new(parse_policy_report(json)?)))
    }
}

fn round2(x: f64) -> String {
    format!("{x:.2}")
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn policy_rows(r: &PolicyReport) -> Vec<Vec<String>> {
    let row = |a: &str, b: &str, c: &str, v: String| {
        vec![a.to_string(), b.to_string(), c.to_string(), v]
    };
    let n = r.network;
    let mut rows = vec![
        row("network", "edges", "", n.edges.to_string()),
        row("network", "first_party_nodes", "", n.first_party_nodes.to_string()),
        row("network", "third_party_nodes", "", n.third_party_nodes.to_string()),
        row("network", "user_party_nodes", "", n.user_party_nodes.to_string()),
        row("network", "unknown_nodes", "", n.unknown_nodes.to_string()),
        row("network", "data_type_nodes", "", n.data_type_nodes.to_string()),
        row("flow_stats", "total_flows", "", r.flow_stats.total_flows.to_string()),
    ];
    for case in FlowCase::ALL {
        rows.push(row("flow_stats", case.as_str(), "", round2(r.flow_stats.get(case))));
    }
    for (metric, ranked) in &r.top_centrality {
        for (i, node) in ranked.iter().enumerate() {
            rows.push(row(
                &format!("top_{}", metric.as_str()),
                &(i + 1).to_string(),
                &node.id,
                format!("{:.4}", node.score),
            ));
        }
    }
    for (cat, count) in &r.category_distribution {
        rows.push(row("category_distribution", cat, "", count.to_string()));
    }
    for (cat, purposes) in &r.category_purpose.cells {
        for (purpose, count) in purposes {
            rows.push(row("category_purpose", cat, purpose, count.to_string()));
        }
    }
    rows
}

/// Long-format CSV: section, key, subkey, value.
pub fn policy_report_csv(r: &PolicyReport) -> Result<String, ReportError> {
    let mut rows = vec![vec!["section".into(), "key".into(), "subkey".into(), "value".into()]];
    rows.extend(policy_rows(r));
    csv_string(rows)
}

/// One row per policy: flow stats, risk scores and category counts.
pub fn comparison_rows(
    policies: &[PolicyReport],
    scores: &[RiskScores],
) -> Vec<Vec<String>> {
    let categories: BTreeSet<&String> = policies
        .iter()
        .flat_map(|p| p.category_distribution.keys())
        .collect();
    let mut header: Vec<String> = vec!["policy_id".into(), "total_flows".into()];
    header.extend(FlowCase::ALL.iter().map(|c| c.as_str().to_string()));
    header.extend(
        ["first_party_score", "third_party_score", "overall_score"]
            .iter()
            .map(|s| s.to_string()),
    );
    header.extend(categories.iter().map(|c| format!("category:{c}")));
    let mut rows = vec![header];
    for (p, s) in policies.iter().zip(scores) {
        let mut row = vec![p.policy_id.clone(), p.flow_stats.total_flows.to_string()];
        row.extend(FlowCase::ALL.iter().map(|c| round2(p.flow_stats.get(*c))));
        row.extend([s.first_party_score, s.third_party_score, s.overall_score].map(round2));
        row.extend(
            categories
                .iter()
                .map(|c| p.category_distribution.get(*c).copied().unwrap_or(0).to_string()),
        );
        rows.push(row);
    }
    rows
}

pub fn corpus_report_csv(r: &CorpusReport) -> Result<String, ReportError> {
    csv_string(comparison_rows(&r.policies, &r.risk_scores))
}

/// Merges at least two per-policy reports into one comparison CSV.
pub fn compare_reports(
    reports: &[PolicyReport],
    weights: &RiskWeights,
) -> Result<String, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::NeedAtLeastTwo(reports.len()));
    }
    for r in reports {
        check_version(r.schema_version)?;
    }
    let stats: Vec<FlowStats> = reports.iter().map(|p| p.flow_stats.clone()).collect();
    let scores = compute_risk_scores(&stats, weights)?;
    csv_string(comparison_rows(reports, &scores))
}

fn text_table(rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..rows.iter().map(Vec::len).max().unwrap_or(0))
        .map(|i| {
            rows.iter()
                .filter_map(|r| r.get(i))
                .map(|c| c.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
            out.push('\n');
        }
    }
    out
}

pub fn policy_report_text(r: &PolicyReport) -> String {
    let mut out = format!("Policy {} ({})\n\n", r.policy_id, r.org_name);
    let n = r.network;
    out.push_str(&text_table(&[
        vec!["edges".into(), "first".into(), "third".into(), "user".into(), "unknown".into(), "data types".into()],
        vec![
            n.edges.to_string(),
            n.first_party_nodes.to_string(),
            n.third_party_nodes.to_string(),
            n.user_party_nodes.to_string(),
            n.unknown_nodes.to_string(),
            n.data_type_nodes.to_string(),
        ],
    ]));
    out.push('\n');
    let mut stats = vec![vec!["flow case".to_string(), "frequency".to_string()]];
    stats.push(vec!["total flows".into(), r.flow_stats.total_flows.to_string()]);
    stats.extend(
        FlowCase::ALL
            .iter()
            .map(|c| vec![c.as_str().to_string(), round2(r.flow_stats.get(*c))]),
    );
    out.push_str(&text_table(&stats));
    for (metric, ranked) in &r.top_centrality {
        out.push('\n');
        let mut rows = vec![vec!["rank".to_string(), format!("{} node", metric.as_str()), "score".into()]];
        rows.extend(
            ranked
                .iter()
                .enumerate()
                .map(|(i, n)| vec![(i + 1).to_string(), n.id.clone(), format!("{:.4}", n.score)]),
        );
        out.push_str(&text_table(&rows));
    }
    out.push('\n');
    let mut cats = vec![vec!["data category".to_string(), "data types".to_string()]];
    cats.extend(
        r.category_distribution
            .iter()
            .map(|(c, n)| vec![c.clone(), n.to_string()]),
    );
    out.push_str(&text_table(&cats));
    out
}

pub fn corpus_report_text(r: &CorpusReport) -> String {
    let mut out = String::from("Risk scores\n\n");
    let mut rows = vec![vec![
        "policy".to_string(),
        "first party".into(),
        "third party".into(),
        "overall".into(),
    ]];
    rows.extend(r.risk_scores.iter().map(|s| {
        vec![
            s.policy_id.clone(),
            round2(s.first_party_score),
            round2(s.third_party_score),
            round2(s.overall_score),
        ]
    }));
    out.push_str(&text_table(&rows));
    out.push_str("\nCategory x purpose\n\n");
    let purposes = r.category_purpose.purposes();
    let mut matrix = vec![std::iter::once("category".to_string())
        .chain(purposes.iter().cloned())
        .collect::<Vec<_>>()];
    for (cat, row) in &r.category_purpose.cells {
        matrix.push(
            std::iter::once(cat.clone())
                .chain(purposes.iter().map(|p| row.get(p).copied().unwrap_or(0).to_string()))
                .collect(),
        );
    }
    out.push_str(&text_table(&matrix));
    for p in &r.policies {
        out.push('\n');
        out.push_str(&policy_report_text(p));
    }
    out
}
