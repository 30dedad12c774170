//! Directed party/data-type graph, centralities and exports.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::PURPOSES;
use crate::parser::{ParsedFlow, PartyAttribute};

/// Node id used for unknown senders and receivers.
pub const UNKNOWN_NODE: &str = "unknown";
const DATA_SUFFIX: &str = " (data)";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unsupported export format `{0}`")]
    UnsupportedFormat(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Party,
    DataType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub role: NodeRole,
    pub attribute: Option<PartyAttribute>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub purpose: String,
    pub segments: BTreeSet<usize>,
}

/// Nodes sorted by id; edges sorted by (from, to, purpose).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFlowGraph {
    pub policy_id: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

fn party_id(entity: &Option<String>) -> String {
    entity.clone().unwrap_or_else(|| UNKNOWN_NODE.to_string())
}

pub fn build_graph(policy_id: &str, flows: &[ParsedFlow]) -> DataFlowGraph {
    let mut parties: BTreeMap<String, PartyAttribute> = BTreeMap::new();
    for f in flows {
        for (entity, attr) in [(&f.sender, f.sender_party), (&f.receiver, f.receiver_party)] {
            let id = party_id(entity);
            // A party literally named "unknown" shares the placeholder node.
            let attr = if id == UNKNOWN_NODE { PartyAttribute::Unknown } else { attr };
            parties.entry(id).or_insert(attr);
        }
    }
    let data_id = |t: &str| {
        if parties.contains_key(t) {
            format!("{t}{DATA_SUFFIX}")
        } else {
            t.to_string()
        }
    };
    let mut data_nodes = BTreeSet::new();
    let mut edges: BTreeMap<(String, String, String), BTreeSet<usize>> = BTreeMap::new();
    for f in flows {
        let dt = data_id(&f.data_type);
        data_nodes.insert(dt.clone());
        for (from, to) in [
            (party_id(&f.sender), dt.clone()),
            (dt.clone(), party_id(&f.receiver)),
        ] {
            edges
                .entry((from, to, f.purpose.clone()))
                .or_default()
                .extend(f.provenance.iter().copied());
        }
    }
    let mut nodes: Vec<Node> = parties
        .into_iter()
        .map(|(id, attr)| Node {
            id,
            role: NodeRole::Party,
            attribute: Some(attr),
        })
        .chain(data_nodes.into_iter().map(|id| Node {
            id,
            role: NodeRole::DataType,
            attribute: None,
        }))
        .collect();
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    DataFlowGraph {
        policy_id: policy_id.to_string(),
        nodes,
        edges: edges
            .into_iter()
            .map(|((from, to, purpose), segments)| Edge {
                from,
                to,
                purpose,
                segments,
            })
            .collect(),
    }
}

impl DataFlowGraph {
    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes
            .binary_search_by(|n| n.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    /// Checks id uniqueness, edge endpoints and role alternation.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut roles = BTreeMap::new();
        for n in &self.nodes {
            if roles.insert(n.id.as_str(), n.role).is_some() {
                return Err(GraphError::InvalidGraph(format!("duplicate node `{}`", n.id)));
            }
            if (n.role == NodeRole::Party) != n.attribute.is_some() {
                return Err(GraphError::InvalidGraph(format!(
                    "node `{}` has the wrong attribute for its role",
                    n.id
                )));
            }
        }
        for e in &self.edges {
            let (Some(a), Some(b)) = (roles.get(e.from.as_str()), roles.get(e.to.as_str())) else {
                return Err(GraphError::InvalidGraph(format!(
                    "edge {} -> {} has a dangling endpoint",
                    e.from, e.to
                )));
            };
            if a == b {
                return Err(GraphError::InvalidGraph(format!(
                    "edge {} -> {} joins two nodes of the same role",
                    e.from, e.to
                )));
            }
        }
        Ok(())
    }

    /// Distinct (from, to) pairs as node indices, ignoring purposes.
    pub fn arcs(&self) -> BTreeSet<(usize, usize)> {
        let index: BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        self.edges
            .iter()
            .filter_map(|e| Some((*index.get(e.from.as_str())?, *index.get(e.to.as_str())?)))
            .collect()
    }

    fn adjacency(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let n = self.nodes.len();
        let mut out = vec![Vec::new(); n];
        let mut inc = vec![Vec::new(); n];
        for (a, b) in self.arcs() {
            out[a].push(b);
            inc[b].push(a);
        }
        (out, inc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialises")
    }

    pub fn from_json(json: &str) -> Result<Self, GraphError> {
        let g: Self =
            serde_json::from_str(json).map_err(|e| GraphError::InvalidGraph(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Degree,
    Closeness,
    Betweenness,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Degree, Metric::Closeness, Metric::Betweenness];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Degree => "degree",
            Metric::Closeness => "closeness",
            Metric::Betweenness => "betweenness",
        }
    }
}

pub type Scores = BTreeMap<String, f64>;

fn zeros(g: &DataFlowGraph) -> Scores {
    g.nodes.iter().map(|n| (n.id.clone(), 0.0)).collect()
}

fn named(g: &DataFlowGraph, values: Vec<f64>) -> Scores {
    g.nodes.iter().map(|n| n.id.clone()).zip(values).collect()
}

/// (in + out) / (M - 1) over collapsed arcs.
pub fn degree_centrality(g: &DataFlowGraph) -> Scores {
    let m = g.nodes.len();
    if m < 2 {
        return zeros(g);
    }
    let mut deg = vec![0usize; m];
    for (a, b) in g.arcs() {
        deg[a] += 1;
        deg[b] += 1;
    }
    named(g, deg.into_iter().map(|d| d as f64 / (m - 1) as f64).collect())
}

fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes have a distance");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Closeness over incoming distances with Wasserman-Faust scaling.
///
/// For a node reached from `r` others with total distance `d`, the score is
/// `(r / d) * (r / (M - 1))`; nodes nobody reaches score 0.
pub fn closeness_centrality(g: &DataFlowGraph) -> Scores {
    let m = g.nodes.len();
    if m < 2 {
        return zeros(g);
    }
    let (_, inc) = g.adjacency();
    let values = (0..m)
        .map(|u| {
            let dist = bfs(&inc, u);
            let reached = dist.iter().flatten().filter(|&&d| d > 0).count() as f64;
            let total: usize = dist.iter().flatten().sum();
            if total == 0 {
                0.0
            } else {
                (reached / total as f64) * (reached / (m - 1) as f64)
            }
        })
        .collect();
    named(g, values)
}

/// Brandes betweenness normalised by 1 / ((M - 1)(M - 2)).
pub fn betweenness_centrality(g: &DataFlowGraph) -> Scores {
    let m = g.nodes.len();
    if m < 3 {
        return zeros(g);
    }
    let (out, _) = g.adjacency();
    let mut bc = vec![0.0f64; m];
    for s in 0..m {
        let mut stack = Vec::with_capacity(m);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut sigma = vec![0.0f64; m];
        let mut dist: Vec<Option<usize>> = vec![None; m];
        sigma[s] = 1.0;
        dist[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            let dv = dist[v].expect("queued nodes have a distance");
            for &w in &out[v] {
                if dist[w].is_none() {
                    dist[w] = Some(dv + 1);
                    queue.push_back(w);
                }
                if dist[w] == Some(dv + 1) {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0f64; m];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                bc[w] += delta[w];
            }
        }
    }
    let scale = 1.0 / ((m - 1) * (m - 2)) as f64;
    named(g, bc.into_iter().map(|b| b * scale).collect())
}

pub fn centrality(g: &DataFlowGraph, metric: Metric) -> Scores {
    match metric {
        Metric::Degree => degree_centrality(g),
        Metric::Closeness => closeness_centrality(g),
        Metric::Betweenness => betweenness_centrality(g),
    }
}

/// Highest scores first; equal scores in id order.
pub fn top_k(scores: &Scores, k: usize) -> Result<Vec<(String, f64)>, GraphError> {
    if k == 0 {
        return Err(GraphError::InvalidK);
    }
    let mut ranked: Vec<(String, f64)> = scores.iter().map(|(id, s)| (id.clone(), *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Json,
    Dot,
    Html,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Json => "json",
            ExportFormat::Dot => "dot",
            ExportFormat::Html => "html",
        }
    }
}

impl FromStr for ExportFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ExportFormat::Json),
            "dot" | "gv" => Ok(ExportFormat::Dot),
            "html" => Ok(ExportFormat::Html),
            _ => Err(GraphError::UnsupportedFormat(s.to_string())),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

pub fn export(g: &DataFlowGraph, format: ExportFormat) -> Vec<u8> {
    match format {
        ExportFormat::Json => g.to_json().into_bytes(),
        ExportFormat::Dot => to_dot(g).into_bytes(),
        ExportFormat::Html => to_html(g).into_bytes(),
    }
}

/// Fill colour and font colour for a node.
pub fn node_colors(node: &Node) -> (&'static str, &'static str) {
    match (node.role, node.attribute) {
        (NodeRole::DataType, _) => ("lightblue", "black"),
        (_, Some(PartyAttribute::FirstParty)) => ("palegreen", "black"),
        (_, Some(PartyAttribute::ThirdParty)) => ("pink", "black"),
        (_, Some(PartyAttribute::UserParty)) => ("lightyellow", "black"),
        _ => ("darkblue", "white"),
    }
}

const PURPOSE_PALETTE: [&str; 11] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#1f78b4",
    "#b2182b", "#666666", "#6a3d9a",
];

pub fn purpose_color(purpose: &str) -> &'static str {
    PURPOSES
        .iter()
        .chain(std::iter::once(&crate::knowledge::SOCIAL_MEDIA_PURPOSE))
        .position(|p| p.eq_ignore_ascii_case(purpose))
        .map_or("#999999", |i| PURPOSE_PALETTE[i])
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn to_dot(g: &DataFlowGraph) -> String {
    let mut out = format!("digraph {} {{\n", dot_quote(&g.policy_id));
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [style=filled, fontname=\"Helvetica\"];\n");
    out.push_str("  edge [fontname=\"Helvetica\", fontsize=9];\n");
    for n in &g.nodes {
        let (fill, font) = node_colors(n);
        let shape = match n.role {
            NodeRole::DataType => "box",
            NodeRole::Party => "ellipse",
        };
        out.push_str(&format!(
            "  {} [shape={shape}, fillcolor=\"{fill}\", fontcolor=\"{font}\"];\n",
            dot_quote(&n.id)
        ));
    }
    for e in &g.edges {
        out.push_str(&format!(
            "  {} -> {} [color=\"{}\", label={}];\n",
            dot_quote(&e.from),
            dot_quote(&e.to),
            purpose_color(&e.purpose),
            dot_quote(&e.purpose)
        ));
    }
    out.push_str("}\n");
    out
}

const HTML_VIEWER: &str = r##"<script>
(function () {
  const g = JSON.parse(document.getElementById("graph-data").textContent);
  const fills = {first_party: "palegreen", third_party: "pink", user_party: "lightyellow", unknown: "darkblue"};
  const canvas = document.getElementById("view");
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height;
  const idx = new Map(g.nodes.map((n, i) => [n.id, i]));
  const pos = g.nodes.map((n, i) => ({
    x: W / 2 + 200 * Math.cos(2 * Math.PI * i / g.nodes.length),
    y: H / 2 + 200 * Math.sin(2 * Math.PI * i / g.nodes.length),
    vx: 0, vy: 0
  }));
  const links = g.edges.map(e => [idx.get(e.from), idx.get(e.to)]);
  function step() {
    for (let i = 0; i < pos.length; i++) {
      for (let j = i + 1; j < pos.length; j++) {
        const dx = pos[i].x - pos[j].x, dy = pos[i].y - pos[j].y;
        const d2 = Math.max(dx * dx + dy * dy, 1), f = 800 / d2;
        pos[i].vx += f * dx; pos[i].vy += f * dy;
        pos[j].vx -= f * dx; pos[j].vy -= f * dy;
      }
    }
    for (const [a, b] of links) {
      const dx = pos[b].x - pos[a].x, dy = pos[b].y - pos[a].y;
      pos[a].vx += 0.01 * dx; pos[a].vy += 0.01 * dy;
      pos[b].vx -= 0.01 * dx; pos[b].vy -= 0.01 * dy;
    }
    for (const p of pos) {
      p.vx += 0.005 * (W / 2 - p.x); p.vy += 0.005 * (H / 2 - p.y);
      p.x += p.vx; p.y += p.vy; p.vx *= 0.6; p.vy *= 0.6;
    }
  }
  function draw() {
    ctx.clearRect(0, 0, W, H);
    ctx.strokeStyle = "#bbb";
    for (const [a, b] of links) {
      ctx.beginPath(); ctx.moveTo(pos[a].x, pos[a].y); ctx.lineTo(pos[b].x, pos[b].y); ctx.stroke();
    }
    g.nodes.forEach((n, i) => {
      ctx.fillStyle = n.role === "data_type" ? "lightblue" : fills[n.attribute];
      ctx.beginPath(); ctx.arc(pos[i].x, pos[i].y, 6, 0, 2 * Math.PI); ctx.fill();
      ctx.fillStyle = "#222"; ctx.fillText(n.id, pos[i].x + 8, pos[i].y + 3);
    });
  }
  let ticks = 0;
  (function loop() { step(); draw(); if (++ticks < 300) requestAnimationFrame(loop); })();
})();
</script>"##;

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained page embedding the JSON export and a small force layout.
pub fn to_html(g: &DataFlowGraph) -> String {
    let payload = g.to_json().replace("</", "<\\/");
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n</head>\n<body>\n<h1>{title}</h1>\n<canvas id=\"view\" width=\"1000\" height=\"700\"></canvas>\n<script type=\"application/json\" id=\"graph-data\">\n{payload}\n</script>\n{HTML_VIEWER}\n</body>\n</html>\n",
        title = html_escape(&g.policy_id),
    )
}
