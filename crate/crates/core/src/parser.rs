//! Entity normalisation, party attribution and flow-case classification.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::FlowRecord;

const SHIPPED_SYNONYMS: &str = include_str!("../data/synonyms.json");

#[derive(Debug, Error)]
pub enum ParserError {
    #[error("invalid synonym table: {0}")]
    InvalidSynonyms(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Plurals that the suffix rules get wrong.
const IRREGULAR: &[(&str, &str)] = &[
    ("cookies", "cookie"),
    ("people", "person"),
    ("children", "child"),
    ("men", "man"),
    ("women", "woman"),
    ("analyses", "analysis"),
    ("criteria", "criterion"),
    ("indices", "index"),
    ("vehicles", "vehicle"),
    ("movies", "movie"),
    ("cookies", "cookie"),
    ("calories", "calorie"),
    ("zombies", "zombie"),
    ("devices", "device"),
    ("services", "service"),
    ("preferences", "preference"),
    ("licences", "licence"),
    ("licenses", "license"),
    ("purchases", "purchase"),
    ("responses", "response"),
    ("databases", "database"),
    ("websites", "website"),
    ("images", "image"),
    ("messages", "message"),
    ("languages", "language"),
    ("addresses", "address"),
    ("caches", "cache"),
    ("avatars", "avatar"),
];

/// Words ending in `s` that are not plurals.
const INVARIANT: &[&str] = &[
    "analytics",
    "always",
    "bonus",
    "business",
    "campus",
    "canvas",
    "census",
    "chassis",
    "diagnostics",
    "gas",
    "gps",
    "ios",
    "lens",
    "logistics",
    "means",
    "news",
    "physics",
    "series",
    "sms",
    "species",
    "statistics",
    "status",
    "telematics",
    "this",
    "whereabouts",
];

fn singularize_once(word: &str) -> String {
    if let Some((_, single)) = IRREGULAR.iter().find(|(plural, _)| *plural == word) {
        return single.to_string();
    }
    let n = word.chars().count();
    if n <= 3 || INVARIANT.contains(&word) || !word.is_char_boundary(word.len() - 1) {
        return word.to_string();
    }
    if n > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if word.ends_with("sses") {
        return word[..word.len() - 2].to_string();
    }
    if ["ches", "shes", "xes", "zzes"].iter().any(|s| word.ends_with(s)) {
        return word[..word.len() - 2].to_string();
    }
    if ["ss", "us", "is", "'s", "’s"].iter().any(|s| word.ends_with(s)) {
        return word.to_string();
    }
    match word.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => word.to_string(),
    }
}

/// Singular form of one lowercase word, applied until stable.
pub fn singularize(word: &str) -> String {
    let mut current = word.to_string();
    for _ in 0..8 {
        let next = singularize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Case folding, whitespace cleanup and singular final token.
fn surface_form(text: &str) -> String {
    let trimmed = text.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '?' | '"' | '(' | ')' | '[' | ']')
    });
    let mut tokens: Vec<String> = trimmed
        .split_whitespace()
        .map(|t| t.to_lowercase())
        .collect();
    if let Some(last) = tokens.last_mut() {
        *last = singularize(last);
    }
    tokens.join(" ")
}

/// Maps whole-entity aliases to a canonical spelling.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymTable {
    aliases: BTreeMap<String, String>,
}

impl SynonymTable {
    /// Parses `{"canonical": ["alias", ...]}`.
    ///
    /// Canonical names must already be in normal form and may not be
    /// aliases themselves, so normalisation stays idempotent.
    pub fn from_json(json: &str) -> Result<Self, ParserError> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(json).map_err(|e| ParserError::InvalidSynonyms(e.to_string()))?;
        let mut aliases = BTreeMap::new();
        for (canonical, list) in &raw {
            if surface_form(canonical) != *canonical {
                return Err(ParserError::InvalidSynonyms(format!(
                    "canonical `{canonical}` is not normalised"
                )));
            }
            for alias in list {
                let key = surface_form(alias);
                if key.is_empty() || key == *canonical {
                    continue;
                }
                if let Some(prev) = aliases.insert(key.clone(), canonical.clone()) {
                    if prev != *canonical {
                        return Err(ParserError::InvalidSynonyms(format!(
                            "alias `{key}` maps to both `{prev}` and `{canonical}`"
                        )));
                    }
                }
            }
        }
        if let Some(c) = raw.keys().find(|c| aliases.contains_key(*c)) {
            return Err(ParserError::InvalidSynonyms(format!(
                "canonical `{c}` is also an alias"
            )));
        }
        Ok(Self { aliases })
    }

    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_SYNONYMS).expect("shipped synonym table is valid")
    }

    pub fn load(path: &Path) -> Result<Self, ParserError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParserError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn canonical<'a>(&'a self, form: &'a str) -> &'a str {
        self.aliases.get(form).map_or(form, String::as_str)
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }
}

/// Normalises entity strings against a synonym table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityNormalizer {
    synonyms: SynonymTable,
}

impl EntityNormalizer {
    pub fn new(synonyms: SynonymTable) -> Self {
        Self { synonyms }
    }

    pub fn shipped() -> Self {
        Self::new(SynonymTable::shipped())
    }

    pub fn normalize(&self, text: &str) -> String {
        let form = surface_form(text);
        self.synonyms.canonical(&form).to_string()
    }
}

/// [`EntityNormalizer::normalize`] with the shipped synonym table.
pub fn normalize_entity(text: &str) -> String {
    static SHIPPED: OnceLock<EntityNormalizer> = OnceLock::new();
    SHIPPED.get_or_init(EntityNormalizer::shipped).normalize(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyAttribute {
    FirstParty,
    ThirdParty,
    UserParty,
    Unknown,
}

impl PartyAttribute {
    pub const ALL: [PartyAttribute; 4] = [
        PartyAttribute::UserParty,
        PartyAttribute::FirstParty,
        PartyAttribute::ThirdParty,
        PartyAttribute::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PartyAttribute::FirstParty => "first_party",
            PartyAttribute::ThirdParty => "third_party",
            PartyAttribute::UserParty => "user_party",
            PartyAttribute::Unknown => "unknown",
        }
    }
}

impl fmt::Display for PartyAttribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowCase {
    UserToFirst,
    FirstToFirst,
    ThirdToFirst,
    UserToThird,
    FirstToThird,
    ThirdToThird,
    Incomplete,
}

impl FlowCase {
    pub const ALL: [FlowCase; 7] = [
        FlowCase::UserToFirst,
        FlowCase::FirstToFirst,
        FlowCase::ThirdToFirst,
        FlowCase::UserToThird,
        FlowCase::FirstToThird,
        FlowCase::ThirdToThird,
        FlowCase::Incomplete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlowCase::UserToFirst => "user_to_first",
            FlowCase::FirstToFirst => "first_to_first",
            FlowCase::ThirdToFirst => "third_to_first",
            FlowCase::UserToThird => "user_to_third",
            FlowCase::FirstToThird => "first_to_third",
            FlowCase::ThirdToThird => "third_to_third",
            FlowCase::Incomplete => "incomplete",
        }
    }
}

impl fmt::Display for FlowCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Keywords used to attribute flow endpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityLexicon {
    pub first_party_keywords: BTreeSet<String>,
    pub user_party_keywords: BTreeSet<String>,
    pub org_name: Option<String>,
}

impl Default for EntityLexicon {
    fn default() -> Self {
        let set = |words: &[&str]| words.iter().map(|w| w.to_string()).collect();
        Self {
            first_party_keywords: set(&["we", "us", "app", "website"]),
            user_party_keywords: set(&["you", "user", "customer"]),
            org_name: None,
        }
    }
}

impl EntityLexicon {
    pub fn for_org(org_name: &str) -> Self {
        let org = org_name.trim().to_lowercase();
        Self {
            org_name: (!org.is_empty()).then_some(org),
            ..Self::default()
        }
    }

    fn matches_org(&self, token: &str) -> bool {
        self.org_name.as_deref().is_some_and(|org| {
            org.split_whitespace()
                .next()
                .is_some_and(|key| token.contains(key))
        })
    }
}

const POSSESSIVES: &[&str] = &["my", "our", "your", "their", "its", "his", "her"];

const STOPWORDS: &[&str] = &[
    "a", "all", "an", "and", "any", "certain", "her", "his", "its", "my", "of", "or", "other",
    "our", "some", "such", "that", "the", "their", "these", "this", "those", "your",
];

fn strip_possessive_suffix(token: &str) -> Option<&str> {
    token
        .strip_suffix("'s")
        .or_else(|| token.strip_suffix("’s"))
        .or_else(|| token.strip_suffix("s'"))
}

/// Head noun and possessive modifier of a normalised entity.
pub fn root_and_possessive(entity: &str) -> (String, Option<String>) {
    let tokens: Vec<&str> = entity.split_whitespace().collect();
    let root = tokens
        .iter()
        .rev()
        .find(|t| !STOPWORDS.contains(t))
        .or(tokens.last())
        .map(|t| strip_possessive_suffix(t).unwrap_or(t).to_string())
        .unwrap_or_default();
    let possessive = tokens
        .first()
        .filter(|t| POSSESSIVES.contains(t))
        .map(|t| t.to_string())
        .or_else(|| {
            tokens[..tokens.len().saturating_sub(1)]
                .iter()
                .find_map(|t| strip_possessive_suffix(t).map(str::to_string))
        });
    (root, possessive)
}

/// Attributes one endpoint; `None` is an unknown party.
pub fn attribute_party(entity: Option<&str>, lexicon: &EntityLexicon) -> PartyAttribute {
    let Some(entity) = entity.filter(|e| !e.trim().is_empty()) else {
        return PartyAttribute::Unknown;
    };
    let (root, possessive) = root_and_possessive(entity);
    if lexicon.user_party_keywords.contains(&root) {
        return PartyAttribute::UserParty;
    }
    let root_is_first =
        lexicon.first_party_keywords.contains(&root) || lexicon.matches_org(&root);
    let possessive_ok = match possessive.as_deref() {
        None => true,
        Some(p) => {
            p == "our" || lexicon.first_party_keywords.contains(p) || lexicon.matches_org(p)
        }
    };
    if root_is_first && possessive_ok {
        PartyAttribute::FirstParty
    } else {
        PartyAttribute::ThirdParty
    }
}

/// Maps an attributed (sender, receiver) pair to its flow case.
///
/// Receivers never carry the user attribute in the case table, so a user
/// receiver is treated like any other outside party.
pub fn classify_flow_case(sender: PartyAttribute, receiver: PartyAttribute) -> FlowCase {
    use PartyAttribute::*;
    match (sender, receiver) {
        (Unknown, _) | (_, Unknown) | (UserParty, UserParty) => FlowCase::Incomplete,
        (UserParty, FirstParty) => FlowCase::UserToFirst,
        (FirstParty, FirstParty) => FlowCase::FirstToFirst,
        (ThirdParty, FirstParty) => FlowCase::ThirdToFirst,
        (UserParty, ThirdParty) => FlowCase::UserToThird,
        (FirstParty, ThirdParty | UserParty) => FlowCase::FirstToThird,
        (ThirdParty, ThirdParty | UserParty) => FlowCase::ThirdToThird,
    }
}

/// A flow record after normalisation and attribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedFlow {
    pub sender: Option<String>,
    pub data_type: String,
    pub receiver: Option<String>,
    pub sender_party: PartyAttribute,
    pub receiver_party: PartyAttribute,
    pub case: FlowCase,
    pub data_category: String,
    /// The consumer-type agent's label, kept for diagnostics only.
    pub consumer_type: String,
    pub purpose: String,
    pub method: String,
    pub segment_index: usize,
    pub provenance: BTreeSet<usize>,
}

pub fn parse_record(
    record: &FlowRecord,
    normalizer: &EntityNormalizer,
    lexicon: &EntityLexicon,
) -> ParsedFlow {
    let norm = |e: &Option<String>| {
        e.as_deref()
            .map(|s| normalizer.normalize(s))
            .filter(|s| !s.is_empty())
    };
    let sender = norm(&record.flow.sender);
    let receiver = norm(&record.flow.receiver);
    let sender_party = attribute_party(sender.as_deref(), lexicon);
    let receiver_party = attribute_party(receiver.as_deref(), lexicon);
    let case = classify_flow_case(sender_party, receiver_party);
    if sender_party == PartyAttribute::UserParty && receiver_party == PartyAttribute::UserParty {
        log::info!(
            "segment {}: user-to-user flow classified incomplete",
            record.flow.segment_index
        );
    }
    ParsedFlow {
        sender,
        data_type: normalizer.normalize(&record.flow.data_type),
        receiver,
        sender_party,
        receiver_party,
        case,
        data_category: record.data_category.clone(),
        consumer_type: record.consumer_type.clone(),
        purpose: record.purpose.clone(),
        method: record.method.clone(),
        segment_index: record.flow.segment_index,
        provenance: BTreeSet::from([record.flow.segment_index]),
    }
}

pub fn parse_records(
    records: &[FlowRecord],
    normalizer: &EntityNormalizer,
    lexicon: &EntityLexicon,
) -> Vec<ParsedFlow> {
    records
        .iter()
        .map(|r| parse_record(r, normalizer, lexicon))
        .collect()
}

type DedupKey = (Option<String>, String, Option<String>, String, String, String);

fn dedup_key(f: &ParsedFlow) -> DedupKey {
    (
        f.sender.clone(),
        f.data_type.clone(),
        f.receiver.clone(),
        f.data_category.clone(),
        f.purpose.clone(),
        f.method.clone(),
    )
}

/// Merges records whose normalised flow and labels agree.
///
/// The survivor keeps the lowest segment index and the union of
/// provenance; output order follows first occurrence.
pub fn dedup_records(records: Vec<ParsedFlow>) -> Vec<ParsedFlow> {
    let mut slots: HashMap<DedupKey, usize> = HashMap::new();
    let mut out: Vec<ParsedFlow> = Vec::new();
    for record in records {
        match slots.get(&dedup_key(&record)) {
            Some(&i) => {
                let kept = &mut out[i];
                kept.provenance.extend(record.provenance.iter().copied());
                if record.segment_index < kept.segment_index {
                    let provenance = std::mem::take(&mut kept.provenance);
                    *kept = ParsedFlow {
                        provenance,
                        ..record
                    };
                }
            }
            None => {
                slots.insert(dedup_key(&record), out.len());
                out.push(record);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{DataFlow, RetrievalTrace};
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_entity("customers"), "customer");
        assert_eq!(normalize_entity("Cookies"), "cookie");
        assert_eq!(normalize_entity("third parties"), "third party");
        assert_eq!(normalize_entity("We"), "we");
        assert_eq!(normalize_entity("we"), "we");
        assert_eq!(
            normalize_entity("vehicle identification number"),
            normalize_entity("VIN")
        );
        assert_eq!(normalize_entity("Vehicle Identification Numbers"), "vin");
        assert_eq!(normalize_entity("  IP   addresses "), "ip address");
        assert_eq!(normalize_entity("Cookies"), "cookie");
        assert_eq!(normalize_entity("third-party companies"), "third-party company");
        assert_eq!(normalize_entity("us"), "us");
        assert_eq!(normalize_entity("analytics"), "analytics");
        assert_eq!(normalize_entity("business"), "business");
        assert_eq!(normalize_entity("boxes"), "box");
    }

    #[test]
    fn synonym_table_validation() {
        assert!(SynonymTable::from_json(r#"{"vins": ["x"]}"#).is_err());
        assert!(SynonymTable::from_json(r#"{"a": ["x"], "b": ["x"]}"#).is_err());
        assert!(SynonymTable::from_json(r#"{"a": ["b"], "b": ["c"]}"#).is_err());
        assert!(SynonymTable::from_json("[]").is_err());
        let t = SynonymTable::from_json(r#"{"vin": ["Vehicle Identification Numbers"]}"#).unwrap();
        assert_eq!(t.canonical("vehicle identification number"), "vin");
        assert!(!SynonymTable::shipped().is_empty());
    }

    #[test]
    fn attribution_examples() {
        let honda = EntityLexicon::for_org("Honda");
        assert_eq!(attribute_party(Some("our website"), &honda), PartyAttribute::FirstParty);
        assert_eq!(attribute_party(Some("you"), &honda), PartyAttribute::UserParty);
        assert_eq!(attribute_party(Some("panasonic"), &honda), PartyAttribute::ThirdParty);
        assert_eq!(attribute_party(None, &honda), PartyAttribute::Unknown);
        assert_eq!(attribute_party(Some("honda"), &honda), PartyAttribute::FirstParty);
        assert_eq!(attribute_party(Some("american honda"), &honda), PartyAttribute::FirstParty);
        assert_eq!(attribute_party(Some("honda's app"), &honda), PartyAttribute::FirstParty);
        assert_eq!(attribute_party(Some("their website"), &honda), PartyAttribute::ThirdParty);
        assert_eq!(attribute_party(Some("the customer"), &honda), PartyAttribute::UserParty);
        assert_eq!(
            attribute_party(Some("your car's display audio"), &honda),
            PartyAttribute::ThirdParty
        );
    }

    #[test]
    fn root_and_possessive_extraction() {
        assert_eq!(
            root_and_possessive("our service provider"),
            ("provider".to_string(), Some("our".to_string()))
        );
        assert_eq!(
            root_and_possessive("honda's partner"),
            ("partner".to_string(), Some("honda".to_string()))
        );
        assert_eq!(root_and_possessive("we"), ("we".to_string(), None));
    }

    #[test]
    fn org_name_matches_root_only() {
        let lex = EntityLexicon::for_org("Renault");
        assert_eq!(attribute_party(Some("renault"), &lex), PartyAttribute::FirstParty);
        assert_eq!(attribute_party(Some("renault group"), &lex), PartyAttribute::ThirdParty);
        assert_eq!(attribute_party(Some("renault's partner"), &lex), PartyAttribute::ThirdParty);
        assert_eq!(attribute_party(Some("your car's display audio"), &lex), PartyAttribute::ThirdParty);
    }

    #[test]
    fn flow_case_examples() {
        use PartyAttribute::*;
        assert_eq!(classify_flow_case(UserParty, FirstParty), FlowCase::UserToFirst);
        assert_eq!(classify_flow_case(Unknown, ThirdParty), FlowCase::Incomplete);
        assert_eq!(classify_flow_case(FirstParty, ThirdParty), FlowCase::FirstToThird);
        assert_eq!(classify_flow_case(UserParty, UserParty), FlowCase::Incomplete);
        assert_eq!(classify_flow_case(Unknown, Unknown), FlowCase::Incomplete);
    }

    fn record(sender: &str, data_type: &str, receiver: &str, purpose: &str, seg: usize) -> FlowRecord {
        FlowRecord {
            flow: DataFlow {
                sender: Some(sender.into()),
                data_type: data_type.into(),
                receiver: Some(receiver.into()),
                segment_index: seg,
            },
            data_category: "Contact".into(),
            consumer_type: "First Party".into(),
            purpose: purpose.into(),
            method: "Active".into(),
            retrieval_trace: RetrievalTrace::default(),
        }
    }

    fn parse(records: &[FlowRecord]) -> Vec<ParsedFlow> {
        parse_records(records, &EntityNormalizer::shipped(), &EntityLexicon::for_org("Acme"))
    }

    #[test]
    fn dedup_examples() {
        let merged = dedup_records(parse(&[
            record("customers", "email", "we", "Marketing", 5),
            record("customer", "email address", "we", "Marketing", 2),
        ]));
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].segment_index, 2);
        assert_eq!(merged[0].provenance, BTreeSet::from([2, 5]));
        assert_eq!(merged[0].case, FlowCase::UserToFirst);

        let kept = dedup_records(parse(&[
            record("you", "name", "we", "Marketing", 0),
            record("you", "name", "we", "Advertising", 0),
        ]));
        assert_eq!(kept.len(), 2);
        assert!(dedup_records(Vec::new()).is_empty());
    }

    #[test]
    fn missing_endpoints_are_unknown() {
        let mut r = record("you", "name", "we", "Marketing", 0);
        r.flow.receiver = None;
        let p = &parse(&[r])[0];
        assert_eq!(p.receiver_party, PartyAttribute::Unknown);
        assert_eq!(p.case, FlowCase::Incomplete);
    }

    fn entity() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![
                "[A-Za-z]{1,10}",
                Just("Cookies".to_string()),
                Just("VIN".to_string()),
                Just("addresses".to_string()),
                Just("companies".to_string()),
                Just("Vehicle Identification Numbers".to_string()),
                Just("our".to_string()),
                Just("honda's".to_string()),
                Just("  ".to_string()),
            ],
            0..5,
        )
        .prop_map(|v| v.join(" "))
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(text in entity()) {
            let once = normalize_entity(&text);
            prop_assert_eq!(normalize_entity(&once), once);
        }

        #[test]
        fn singularize_is_idempotent(word in "[a-z']{0,12}") {
            let once = singularize(&word);
            prop_assert_eq!(singularize(&once), once);
        }

        #[test]
        fn attribution_is_total_and_consistent(text in entity()) {
            let lex = EntityLexicon::for_org("Honda");
            let norm = normalize_entity(&text);
            let a = attribute_party(Some(&norm), &lex);
            prop_assert_eq!(a, attribute_party(Some(&norm), &lex));
            prop_assert_eq!(a == PartyAttribute::Unknown, norm.is_empty());
        }

        #[test]
        fn incomplete_iff_unknown_endpoint(s in 0usize..4, r in 0usize..4) {
            let (s, r) = (PartyAttribute::ALL[s], PartyAttribute::ALL[r]);
            let case = classify_flow_case(s, r);
            let user_pair = s == PartyAttribute::UserParty && r == PartyAttribute::UserParty;
            let unknown = s == PartyAttribute::Unknown || r == PartyAttribute::Unknown;
            prop_assert_eq!(case == FlowCase::Incomplete, unknown || user_pair);
        }

        #[test]
        fn dedup_only_drops_exact_duplicates(picks in prop::collection::vec((0usize..3, 0usize..3, 0usize..2, 0usize..6), 0..20)) {
            let senders = ["you", "customers", "Google"];
            let receivers = ["we", "partners", "Acme"];
            let purposes = ["Marketing", "Advertising"];
            let records: Vec<FlowRecord> = picks
                .iter()
                .map(|&(s, r, p, seg)| record(senders[s], "name", receivers[r], purposes[p], seg))
                .collect();
            let parsed = parse(&records);
            let deduped = dedup_records(parsed.clone());
            let distinct: BTreeSet<_> = parsed.iter().map(dedup_key).collect();
            prop_assert_eq!(deduped.len(), distinct.len());
            let count_cases = |v: &[ParsedFlow]| {
                let mut m: BTreeMap<FlowCase, usize> = BTreeMap::new();
                let mut seen = BTreeSet::new();
                for f in v {
                    if seen.insert(dedup_key(f)) {
                        *m.entry(f.case).or_default() += 1;
                    }
                }
                m
            };
            prop_assert_eq!(count_cases(&parsed), count_cases(&deduped));
        }
    }
}
