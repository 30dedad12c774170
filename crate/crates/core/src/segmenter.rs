//! HTML privacy policy segmentation.
//!
//! A policy page is reduced to an ordered list of self-contained text
//! segments in four passes:
//!
//! 1. `head`, `footer`, `style` and `script` subtrees are dropped.
//! 2. Top-level `p`, `h1`-`h5`, `li`, `ul` and `ol` elements (outside any
//!    list or table) become paragraph, heading (`*` prefix) and bullet
//!    (`- ` prefix) lines. Anchor text is dropped from paragraphs and list
//!    items containing anchors are skipped entirely.
//! 3. Every data row of a table becomes a `_table_` segment carrying the
//!    header row on its first line.
//! 4. Runs of bullet lines are merged into the heading or paragraph right
//!    before them.

use std::fmt;

use ego_tree::NodeRef;
use scraper::{Html, Node};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker prepended to every table row segment.
pub const TABLE_MARKER: &str = "_table_";

const DROPPED_TAGS: &[&str] = &["head", "footer", "style", "script"];
const HEADING_TAGS: &[&str] = &["h1", "h2", "h3", "h4", "h5"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegmentError {
    #[error("document `{0}` produced no segments")]
    EmptyDocument(String),
    #[error("document `{0}` cannot be tokenized as HTML")]
    MalformedHtml(String),
    #[error("segment index {index} out of range for {len} segments")]
    IndexOutOfRange { index: usize, len: usize },
}

/// A single privacy policy page.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub id: String,
    /// The organisation owning the policy; drives first-party attribution.
    pub org_name: String,
    pub html: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_uri: Option<String>,
}

impl PolicyDocument {
    pub fn new(id: impl Into<String>, org_name: impl Into<String>, html: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            org_name: org_name.into(),
            html: html.into(),
            source_uri: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Heading,
    Paragraph,
    BulletGroup,
    TableRow,
}

impl SegmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SegmentKind::Heading => "heading",
            SegmentKind::Paragraph => "paragraph",
            SegmentKind::BulletGroup => "bullet_group",
            SegmentKind::TableRow => "table_row",
        }
    }
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub kind: SegmentKind,
    pub text: String,
    pub raw_lines: Vec<String>,
}

impl Segment {
    fn from_lines(index: usize, kind: SegmentKind, raw_lines: Vec<String>) -> Self {
        Self {
            index,
            kind,
            text: raw_lines.join("\n"),
            raw_lines,
        }
    }
}

/// Lines produced by pass II and III before bullet merging.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Line {
    Heading(String),
    Paragraph(String),
    Bullet(String),
    TableRow { header: String, row: String },
}

/// Splits an HTML policy into ordered segments.
pub fn segment_html(doc: &PolicyDocument) -> Result<Vec<Segment>, SegmentError> {
    if doc.html.contains('\0') {
        return Err(SegmentError::MalformedHtml(doc.id.clone()));
    }
    let html = Html::parse_document(&doc.html);
    let mut lines = Vec::new();
    walk(html.tree.root(), &mut lines);
    let segments = merge_bullets(lines);
    if segments.is_empty() {
        return Err(SegmentError::EmptyDocument(doc.id.clone()));
    }
    Ok(segments)
}

/// Returns the segments immediately before and after `index`.
pub fn neighbors(
    segments: &[Segment],
    index: usize,
) -> Result<(Option<&Segment>, Option<&Segment>), SegmentError> {
    if index >= segments.len() {
        return Err(SegmentError::IndexOutOfRange {
            index,
            len: segments.len(),
        });
    }
    let prev = index.checked_sub(1).map(|i| &segments[i]);
    Ok((prev, segments.get(index + 1)))
}

/// Flattens a (possibly nested) `ul`/`ol` fragment into one line per leaf item.
///
/// Nested items are prefixed with their parent's own text joined by `": "`.
/// Items containing anchors are skipped.
pub fn flatten_nested_list(fragment: &str) -> Vec<String> {
    let html = Html::parse_fragment(fragment);
    let mut out = Vec::new();
    for node in html.tree.root().descendants() {
        if let Some(tag) = tag_name(node) {
            if (tag == "ul" || tag == "ol") && !has_ancestor(node, &["ul", "ol"]) {
                out.extend(flatten_list(node));
            }
        }
    }
    out
}

/// Renders segments back into minimal HTML that segments to the same lines.
pub fn segments_to_html(segments: &[Segment]) -> String {
    let mut out = String::from("<html><body>\n");
    for seg in segments {
        match seg.kind {
            SegmentKind::TableRow => {
                let mut lines = seg.raw_lines.iter();
                let header = lines
                    .next()
                    .map(|h| h.strip_prefix(TABLE_MARKER).unwrap_or(h))
                    .unwrap_or_default();
                let row = lines.next().map(String::as_str).unwrap_or_default();
                out.push_str("<table><tr>");
                for cell in header.split('|') {
                    out.push_str(&format!("<th>{}</th>", escape(cell)));
                }
                out.push_str("</tr><tr>");
                for cell in row.split('|') {
                    out.push_str(&format!("<td>{}</td>", escape(cell)));
                }
                out.push_str("</tr></table>\n");
            }
            _ => {
                let mut in_list = false;
                for line in &seg.raw_lines {
                    if let Some(item) = line.strip_prefix("- ") {
                        if !in_list {
                            out.push_str("<ul>");
                            in_list = true;
                        }
                        out.push_str(&format!("<li>{}</li>", escape(item)));
                        continue;
                    }
                    if in_list {
                        out.push_str("</ul>\n");
                        in_list = false;
                    }
                    match line.strip_prefix('*') {
                        Some(h) if seg.kind != SegmentKind::Paragraph => {
                            out.push_str(&format!("<h2>{}</h2>\n", escape(h)))
                        }
                        _ => out.push_str(&format!("<p>{}</p>\n", escape(line))),
                    }
                }
                if in_list {
                    out.push_str("</ul>\n");
                }
            }
        }
    }
    out.push_str("</body></html>\n");
    out
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn walk(node: NodeRef<'_, Node>, lines: &mut Vec<Line>) {
    for child in node.children() {
        let Some(tag) = tag_name(child) else {
            continue;
        };
        if DROPPED_TAGS.contains(&tag) {
            continue;
        }
        match tag {
            "table" => {
                lines.extend(table_rows(child));
                continue;
            }
            "p" => {
                let text = collapse(&text_of(child, &["a"]));
                if !text.is_empty() {
                    lines.push(Line::Paragraph(text));
                }
            }
            t if HEADING_TAGS.contains(&t) => {
                let text = collapse(&text_of(child, &[]));
                if !text.is_empty() {
                    lines.push(Line::Heading(format!("*{text}")));
                }
            }
            "li" => {
                lines.extend(list_item(child).into_iter().map(Line::Bullet));
                continue;
            }
            "ul" | "ol" => {
                lines.extend(
                    element_children(child)
                        .filter(|c| tag_name(*c) == Some("li"))
                        .flat_map(list_item)
                        .map(Line::Bullet),
                );
                continue;
            }
            _ => {}
        }
        walk(child, lines);
    }
}

/// Bullet lines for one top-level list item, or nothing if it holds an anchor.
fn list_item(li: NodeRef<'_, Node>) -> Vec<String> {
    if contains_tag(li, "a") {
        return Vec::new();
    }
    let lines = if contains_list(li) {
        flatten_item(li)
    } else {
        let text = collapse(&text_of(li, &[]));
        if text.is_empty() {
            Vec::new()
        } else {
            vec![text]
        }
    };
    lines.into_iter().map(|l| format!("- {l}")).collect()
}

fn flatten_list(list: NodeRef<'_, Node>) -> Vec<String> {
    element_children(list)
        .filter(|c| tag_name(*c) == Some("li") && !contains_tag(*c, "a"))
        .flat_map(flatten_item)
        .collect()
}

fn flatten_item(li: NodeRef<'_, Node>) -> Vec<String> {
    let own = collapse(&text_of(li, &["ul", "ol"]));
    let nested: Vec<String> = li
        .descendants()
        .filter(|d| {
            matches!(tag_name(*d), Some("ul") | Some("ol"))
                && nearest_ancestor(*d, &["li"]).map(|a| a.id()) == Some(li.id())
        })
        .flat_map(flatten_list)
        .collect();
    if nested.is_empty() {
        return if own.is_empty() { Vec::new() } else { vec![own] };
    }
    if own.is_empty() {
        return nested;
    }
    nested.into_iter().map(|c| format!("{own}: {c}")).collect()
}

fn table_rows(table: NodeRef<'_, Node>) -> Vec<Line> {
    let rows: Vec<NodeRef<'_, Node>> = table
        .descendants()
        .filter(|d| {
            tag_name(*d) == Some("tr")
                && nearest_ancestor(*d, &["table"]).map(|t| t.id()) == Some(table.id())
        })
        .collect();
    let Some(header_pos) = rows
        .iter()
        .position(|r| element_children(*r).any(|c| tag_name(c) == Some("th")))
        .or(if rows.is_empty() { None } else { Some(0) })
    else {
        return Vec::new();
    };
    let header = row_cells(rows[header_pos]).join("|");
    rows.iter()
        .enumerate()
        .filter(|(i, _)| *i != header_pos)
        .map(|(_, r)| row_cells(*r))
        .filter(|cells| cells.iter().any(|c| !c.is_empty()))
        .map(|cells| Line::TableRow {
            header: header.clone(),
            row: cells.join("|"),
        })
        .collect()
}

fn row_cells(row: NodeRef<'_, Node>) -> Vec<String> {
    element_children(row)
        .filter(|c| matches!(tag_name(*c), Some("td") | Some("th")))
        .map(|c| collapse(&text_of(c, &[])).replace('|', "/"))
        .collect()
}

fn merge_bullets(lines: Vec<Line>) -> Vec<Segment> {
    let mut segments: Vec<Segment> = Vec::new();
    // Whether the last pushed segment may still absorb bullet lines.
    let mut open = false;
    for line in lines {
        match line {
            Line::Bullet(text) => {
                match segments.last_mut() {
                    Some(last) if open => {
                        last.raw_lines.push(text);
                        last.text = last.raw_lines.join("\n");
                        last.kind = SegmentKind::BulletGroup;
                    }
                    _ => {
                        let idx = segments.len();
                        segments.push(Segment::from_lines(
                            idx,
                            SegmentKind::BulletGroup,
                            vec![text],
                        ));
                    }
                }
                open = true;
            }
            Line::Heading(text) | Line::Paragraph(text) if text.is_empty() => {}
            Line::Heading(text) => {
                let idx = segments.len();
                segments.push(Segment::from_lines(idx, SegmentKind::Heading, vec![text]));
                open = true;
            }
            Line::Paragraph(text) => {
                let idx = segments.len();
                segments.push(Segment::from_lines(
                    idx,
                    SegmentKind::Paragraph,
                    vec![text],
                ));
                open = true;
            }
            Line::TableRow { header, row } => {
                let idx = segments.len();
                segments.push(Segment::from_lines(
                    idx,
                    SegmentKind::TableRow,
                    vec![format!("{TABLE_MARKER}{header}"), row],
                ));
                open = false;
            }
        }
    }
    segments
}

fn tag_name<'a>(node: NodeRef<'a, Node>) -> Option<&'a str> {
    node.value().as_element().map(|e| e.name())
}

fn element_children<'a>(node: NodeRef<'a, Node>) -> impl Iterator<Item = NodeRef<'a, Node>> {
    node.children().filter(|c| c.value().is_element())
}

fn has_ancestor(node: NodeRef<'_, Node>, tags: &[&str]) -> bool {
    nearest_ancestor(node, tags).is_some()
}

fn nearest_ancestor<'a>(node: NodeRef<'a, Node>, tags: &[&str]) -> Option<NodeRef<'a, Node>> {
    node.ancestors()
        .find(|a| tag_name(*a).is_some_and(|t| tags.contains(&t)))
}

fn contains_tag(node: NodeRef<'_, Node>, tag: &str) -> bool {
    node.descendants().skip(1).any(|d| tag_name(d) == Some(tag))
}

fn contains_list(node: NodeRef<'_, Node>) -> bool {
    node.descendants()
        .skip(1)
        .any(|d| matches!(tag_name(d), Some("ul") | Some("ol")))
}

/// Concatenated text of `node`, skipping subtrees rooted at any of `skip`.
fn text_of(node: NodeRef<'_, Node>, skip: &[&str]) -> String {
    let mut out = String::new();
    collect_text(node, skip, &mut out);
    out
}

fn collect_text(node: NodeRef<'_, Node>, skip: &[&str], out: &mut String) {
    for child in node.children() {
        match child.value() {
            Node::Text(t) => out.push_str(t),
            Node::Element(e) => {
                let name = e.name();
                if skip.contains(&name) || DROPPED_TAGS.contains(&name) {
                    continue;
                }
                if name == "br" {
                    out.push(' ');
                    continue;
                }
                collect_text(child, skip, out);
            }
            _ => {}
        }
    }
}

fn collapse(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(html: &str) -> Result<Vec<Segment>, SegmentError> {
        segment_html(&PolicyDocument::new("t", "Acme", html))
    }

    fn texts(html: &str) -> Vec<String> {
        seg(html).unwrap().into_iter().map(|s| s.text).collect()
    }

    #[test]
    fn scripts_and_styles_only_is_empty() {
        let err = seg("<script>x()</script><style>a{}</style>").unwrap_err();
        assert_eq!(err, SegmentError::EmptyDocument("t".into()));
    }

    #[test]
    fn heading_gets_star() {
        let s = seg("<h2>Data we collect</h2>").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].kind, SegmentKind::Heading);
        assert_eq!(s[0].text, "*Data we collect");
    }

    #[test]
    fn h6_is_not_a_heading() {
        assert!(seg("<h6>tiny</h6>").is_err());
    }

    #[test]
    fn paragraph_merges_with_bullets() {
        let s = seg("<p>We collect:</p><ul><li>name</li><li>email address</li></ul>").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].kind, SegmentKind::BulletGroup);
        assert_eq!(s[0].text, "We collect:\n- name\n- email address");
    }

    #[test]
    fn table_rows_repeat_header() {
        let html = "<table><tr><th>Data</th><th>Recipient</th></tr>\
            <tr><td>VIN</td><td>Panasonic</td></tr>\
            <tr><td>GPS information</td><td>Panasonic</td></tr></table>";
        let s = seg(html).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| x.kind == SegmentKind::TableRow));
        assert_eq!(s[0].text, "_table_Data|Recipient\nVIN|Panasonic");
        assert_eq!(s[1].text, "_table_Data|Recipient\nGPS information|Panasonic");
    }

    #[test]
    fn headerless_table_uses_first_row() {
        let html = "<table><tr><td>Data</td><td>Use</td></tr><tr><td>IP</td><td>security</td></tr></table>";
        assert_eq!(texts(html), vec!["_table_Data|Use\nIP|security"]);
    }

    #[test]
    fn single_row_table_has_no_data_rows() {
        assert!(seg("<table><tr><th>a</th></tr></table>").is_err());
    }

    #[test]
    fn anchor_text_removed_from_paragraph() {
        assert_eq!(
            texts("<p>See <a href='x'>our cookie page</a> for details.</p>"),
            vec!["See for details."]
        );
    }

    #[test]
    fn anchored_list_item_skipped() {
        assert_eq!(
            texts("<p>Links:</p><ul><li><a href='/'>Home</a></li><li>name</li></ul>"),
            vec!["Links:\n- name"]
        );
    }

    #[test]
    fn paragraph_inside_table_or_list_not_duplicated() {
        let html = "<ul><li><p>inner</p></li></ul><table><tr><th>h</th></tr><tr><td><p>cell</p></td></tr></table>";
        assert_eq!(texts(html), vec!["- inner", "_table_h\ncell"]);
    }

    #[test]
    fn orphan_bullets_form_own_group() {
        let s = seg("<ul><li>a</li><li>b</li></ul>").unwrap();
        assert_eq!(s[0].kind, SegmentKind::BulletGroup);
        assert_eq!(s[0].text, "- a\n- b");
    }

    #[test]
    fn bullets_after_table_do_not_join_table() {
        let html = "<table><tr><th>h</th></tr><tr><td>v</td></tr></table><ul><li>x</li></ul>";
        assert_eq!(texts(html), vec!["_table_h\nv", "- x"]);
    }

    #[test]
    fn nested_list_flattens_with_parent_prefix() {
        let html = "<h3>Contact</h3><ul><li>contact<ul><li>phone</li><li>email</li></ul></li><li>name</li></ul>";
        assert_eq!(
            texts(html),
            vec!["*Contact\n- contact: phone\n- contact: email\n- name"]
        );
    }

    #[test]
    fn flatten_examples() {
        assert_eq!(flatten_nested_list("<ul><li>a</li></ul>"), vec!["a"]);
        assert_eq!(
            flatten_nested_list("<ul><li>contact<ul><li>phone</li><li>email</li></ul></li></ul>"),
            vec!["contact: phone", "contact: email"]
        );
        assert!(flatten_nested_list("<ul></ul>").is_empty());
        assert_eq!(
            flatten_nested_list("<ol><li>a<ol><li>b<ul><li>c</li></ul></li></ol></li></ol>"),
            vec!["a: b: c"]
        );
    }

    #[test]
    fn whitespace_collapses() {
        assert_eq!(texts("<p>  We\n   collect\tdata  </p>"), vec!["We collect data"]);
    }

    #[test]
    fn head_and_footer_dropped() {
        let html = "<html><head><title>T</title></head><body><p>body</p><footer><p>foot</p></footer></body></html>";
        assert_eq!(texts(html), vec!["body"]);
    }

    #[test]
    fn document_order_preserved_across_tables() {
        let html = "<p>one</p><table><tr><th>h</th></tr><tr><td>r</td></tr></table><p>two</p>";
        let s = seg(html).unwrap();
        assert_eq!(
            s.iter().map(|x| x.text.as_str()).collect::<Vec<_>>(),
            vec!["one", "_table_h\nr", "two"]
        );
        assert!(s.iter().enumerate().all(|(i, x)| x.index == i));
    }

    #[test]
    fn neighbors_at_boundaries() {
        let s = seg("<p>a</p><p>b</p><p>c</p>").unwrap();
        let (p, n) = neighbors(&s, 0).unwrap();
        assert!(p.is_none());
        assert_eq!(n.unwrap().text, "b");
        let (p, n) = neighbors(&s, 1).unwrap();
        assert_eq!((p.unwrap().text.as_str(), n.unwrap().text.as_str()), ("a", "c"));
        let (p, n) = neighbors(&s, 2).unwrap();
        assert_eq!(p.unwrap().text, "b");
        assert!(n.is_none());
        assert_eq!(
            neighbors(&s, 3).unwrap_err(),
            SegmentError::IndexOutOfRange { index: 3, len: 3 }
        );
    }

    #[test]
    fn nul_bytes_are_malformed() {
        assert!(matches!(seg("<p>a\0</p>"), Err(SegmentError::MalformedHtml(_))));
    }

    #[test]
    fn render_roundtrip_keeps_lines() {
        let html = "<h2>Intro</h2><p>We collect:</p><ul><li>a &amp; b</li></ul>\
            <table><tr><th>x</th><th>y</th></tr><tr><td>1</td><td>2</td></tr></table><p>*odd</p>";
        let first = seg(html).unwrap();
        let second = seg(&segments_to_html(&first)).unwrap();
        let lines = |v: &[Segment]| v.iter().map(|s| s.text.clone()).collect::<Vec<_>>();
        assert_eq!(lines(&first), lines(&second));
    }
}
