//! Flow-case statistics, risk scores and category summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DataFlowGraph, NodeRole};
use crate::parser::{normalize_entity, FlowCase, ParsedFlow, PartyAttribute};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyserError {
    #[error("risk scores need at least one policy")]
    EmptyCorpus,
    #[error("invalid risk weights: {0}")]
    InvalidWeights(String),
}

/// Relative frequency of each flow case within one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub policy_id: String,
    pub total_flows: usize,
    pub freq: BTreeMap<FlowCase, f64>,
    /// Set when the policy has no flows at all.
    pub zero_flows: bool,
}

impl FlowStats {
    pub fn from_cases(policy_id: &str, cases: impl IntoIterator<Item = FlowCase>) -> Self {
        let mut counts: BTreeMap<FlowCase, usize> =
            FlowCase::ALL.iter().map(|c| (*c, 0)).collect();
        let mut total = 0;
        for c in cases {
            *counts.entry(c).or_default() += 1;
            total += 1;
        }
        let freq = counts
            .into_iter()
            .map(|(c, n)| (c, if total == 0 { 0.0 } else { n as f64 / total as f64 }))
            .collect();
        Self {
            policy_id: policy_id.to_string(),
            total_flows: total,
            freq,
            zero_flows: total == 0,
        }
    }

    /// Builds stats from already-computed frequencies; missing cases are 0.
    pub fn from_frequencies(
        policy_id: &str,
        total_flows: usize,
        given: impl IntoIterator<Item = (FlowCase, f64)>,
    ) -> Self {
        let mut freq: BTreeMap<FlowCase, f64> =
            FlowCase::ALL.iter().map(|c| (*c, 0.0)).collect();
        freq.extend(given);
        let zero_flows = total_flows == 0 && freq.values().all(|v| *v == 0.0);
        Self {
            policy_id: policy_id.to_string(),
            total_flows,
            freq,
            zero_flows,
        }
    }

    pub fn get(&self, case: FlowCase) -> f64 {
        self.freq.get(&case).copied().unwrap_or(0.0)
    }

    pub fn first_party_total(&self) -> f64 {
        self.get(FlowCase::UserToFirst) + self.get(FlowCase::FirstToFirst) + self.get(FlowCase::ThirdToFirst)
    }

    pub fn third_party_total(&self) -> f64 {
        self.get(FlowCase::UserToThird) + self.get(FlowCase::FirstToThird) + self.get(FlowCase::ThirdToThird)
    }

    fn first_family(&self) -> [f64; 3] {
        [
            self.get(FlowCase::UserToFirst),
            self.get(FlowCase::FirstToFirst),
            self.get(FlowCase::ThirdToFirst),
        ]
    }

    fn third_family(&self) -> [f64; 3] {
        [
            self.get(FlowCase::UserToThird),
            self.get(FlowCase::FirstToThird),
            self.get(FlowCase::ThirdToThird),
        ]
    }

    fn overall(&self) -> [f64; 3] {
        [
            self.first_party_total(),
            self.third_party_total(),
            self.get(FlowCase::Incomplete),
        ]
    }
}

pub fn compute_flow_stats(policy_id: &str, flows: &[ParsedFlow]) -> FlowStats {
    FlowStats::from_cases(policy_id, flows.iter().map(|f| f.case))
}

/// Weights by sender side: user, first party, third party.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyWeights {
    pub from_user: f64,
    pub from_first: f64,
    pub from_third: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallWeights {
    pub first_total: f64,
    pub third_total: f64,
    pub incomplete: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskWeights {
    pub first_family: FamilyWeights,
    pub third_family: FamilyWeights,
    pub overall: OverallWeights,
}

impl Default for RiskWeights {
    fn default() -> Self {
        let family = FamilyWeights {
            from_user: 1.0,
            from_first: 1.5,
            from_third: 2.25,
        };
        Self {
            first_family: family,
            third_family: family,
            overall: OverallWeights {
                first_total: 1.0,
                third_total: 1.5,
                incomplete: 2.25,
            },
        }
    }
}

impl RiskWeights {
    fn arrays(&self) -> [[f64; 3]; 3] {
        let f = |w: FamilyWeights| [w.from_user, w.from_first, w.from_third];
        [
            f(self.first_family),
            f(self.third_family),
            [self.overall.first_total, self.overall.third_total, self.overall.incomplete],
        ]
    }

    pub fn validate(&self) -> Result<(), AnalyserError> {
        if self.arrays().iter().flatten().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(AnalyserError::InvalidWeights("every weight must be positive and finite".into()))
        }
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let f = |w: FamilyWeights| FamilyWeights {
            from_user: w.from_user * c,
            from_first: w.from_first * c,
            from_third: w.from_third * c,
        };
        Self {
            first_family: f(self.first_family),
            third_family: f(self.third_family),
            overall: OverallWeights {
                first_total: self.overall.first_total * c,
                third_total: self.overall.third_total * c,
                incomplete: self.overall.incomplete * c,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScores {
    pub policy_id: String,
    pub first_party_score: f64,
    pub third_party_score: f64,
    pub overall_score: f64,
}

/// Per-component maxima over the policies that have flows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMaxima {
    pub first_family: [f64; 3],
    pub third_family: [f64; 3],
    pub overall: [f64; 3],
}

pub fn corpus_maxima(stats: &[FlowStats]) -> CorpusMaxima {
    let max_of = |pick: fn(&FlowStats) -> [f64; 3]| {
        stats
            .iter()
            .filter(|s| !s.zero_flows)
            .fold([0.0f64; 3], |acc, s| {
                let x = pick(s);
                [acc[0].max(x[0]), acc[1].max(x[1]), acc[2].max(x[2])]
            })
    };
    CorpusMaxima {
        first_family: max_of(FlowStats::first_family),
        third_family: max_of(FlowStats::third_family),
        overall: max_of(FlowStats::overall),
    }
}

fn weighted(w: &[f64; 3], x: &[f64; 3]) -> f64 {
    w[0] * x[0] + w[1] * x[1] + w[2] * x[2]
}

fn normalised(w: &[f64; 3], x: &[f64; 3], max: &[f64; 3]) -> f64 {
    let den = weighted(w, max);
    if den == 0.0 {
        0.0
    } else {
        weighted(w, x) / den
    }
}

/// Weighted frequencies divided by the weighted corpus maxima.
pub fn compute_risk_scores(
    stats: &[FlowStats],
    weights: &RiskWeights,
) -> Result<Vec<RiskScores>, AnalyserError> {
    if stats.is_empty() {
        return Err(AnalyserError::EmptyCorpus);
    }
    weights.validate()?;
    let max = corpus_maxima(stats);
    let [wf, wt, wo] = weights.arrays();
    Ok(stats
        .iter()
        .map(|s| RiskScores {
            policy_id: s.policy_id.clone(),
            first_party_score: normalised(&wf, &s.first_family(), &max.first_family),
            third_party_score: normalised(&wt, &s.third_family(), &max.third_family),
            overall_score: normalised(&wo, &s.overall(), &max.overall),
        })
        .collect())
}

/// Distinct data types per data category; every vocabulary label is present.
pub fn category_distribution(
    flows: &[ParsedFlow],
    vocabulary: &[String],
) -> BTreeMap<String, usize> {
    let mut types: BTreeMap<String, std::collections::BTreeSet<String>> = vocabulary
        .iter()
        .map(|c| (c.clone(), Default::default()))
        .collect();
    for f in flows {
        types
            .entry(f.data_category.clone())
            .or_default()
            .insert(normalize_entity(&f.data_type));
    }
    types.into_iter().map(|(c, t)| (c, t.len())).collect()
}

/// Record counts per (data category, purpose) pair.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryPurposeMatrix {
    pub cells: BTreeMap<String, BTreeMap<String, usize>>,
}

impl CategoryPurposeMatrix {
    pub fn get(&self, category: &str, purpose: &str) -> usize {
        self.cells
            .get(category)
            .and_then(|row| row.get(purpose))
            .copied()
            .unwrap_or(0)
    }

    pub fn row_sums(&self) -> BTreeMap<String, usize> {
        self.cells
            .iter()
            .map(|(c, row)| (c.clone(), row.values().sum()))
            .collect()
    }

    pub fn purposes(&self) -> Vec<String> {
        let mut all: Vec<String> = self
            .cells
            .values()
            .flat_map(|row| row.keys().cloned())
            .collect();
        all.sort();
        all.dedup();
        all
    }
}

pub fn category_purpose_matrix<'a>(
    flows: impl IntoIterator<Item = &'a ParsedFlow>,
) -> CategoryPurposeMatrix {
    let mut m = CategoryPurposeMatrix::default();
    for f in flows {
        *m.cells
            .entry(f.data_category.clone())
            .or_default()
            .entry(f.purpose.clone())
            .or_default() += 1;
    }
    m
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub edges: usize,
    pub first_party_nodes: usize,
    pub third_party_nodes: usize,
    pub user_party_nodes: usize,
    pub unknown_nodes: usize,
    pub data_type_nodes: usize,
}

pub fn network_summary(g: &DataFlowGraph) -> NetworkSummary {
    let mut s = NetworkSummary {
        edges: g.edges.len(),
        ..Default::default()
    };
    for n in &g.nodes {
        match (n.role, n.attribute) {
            (NodeRole::DataType, _) => s.data_type_nodes += 1,
            (_, Some(PartyAttribute::FirstParty)) => s.first_party_nodes += 1,
            (_, Some(PartyAttribute::ThirdParty)) => s.third_party_nodes += 1,
            (_, Some(PartyAttribute::UserParty)) => s.user_party_nodes += 1,
            _ => s.unknown_nodes += 1,
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use proptest::prelude::*;
    use std::collections::BTreeSet;
    use FlowCase::*;

    fn stats(id: &str, f: [f64; 7]) -> FlowStats {
        FlowStats::from_frequencies(id, 100, FlowCase::ALL.into_iter().zip(f))
    }

    fn flow(category: &str, data_type: &str, purpose: &str, case: FlowCase) -> ParsedFlow {
        ParsedFlow {
            sender: Some("you".into()),
            data_type: data_type.into(),
            receiver: Some("we".into()),
            sender_party: PartyAttribute::UserParty,
            receiver_party: PartyAttribute::FirstParty,
            case,
            data_category: category.into(),
            consumer_type: "First Party".into(),
            purpose: purpose.into(),
            method: "Active".into(),
            segment_index: 0,
            provenance: BTreeSet::from([0]),
        }
    }

    #[test]
    fn uniform_split() {
        let s = FlowStats::from_cases("p", [UserToFirst, UserToFirst, UserToThird, UserToThird]);
        assert_eq!(s.get(UserToFirst), 0.5);
        assert_eq!(s.get(UserToThird), 0.5);
        assert!(!s.zero_flows);
    }

    #[test]
    fn empty_policy_is_zero_flows() {
        let s = FlowStats::from_cases("p", []);
        assert!(s.zero_flows);
        assert!(s.freq.values().all(|v| *v == 0.0));
    }

    #[test]
    fn risk_anchor_examples() {
        // First family of one policy against corpus maxima (0.50, 0.25, 0.13).
        let corpus = [
            stats("a", [0.38, 0.01, 0.13, 0.0, 0.0, 0.0, 0.0]),
            stats("b", [0.50, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ];
        let s = compute_risk_scores(&corpus, &RiskWeights::default()).unwrap();
        let expected = (0.38 + 0.015 + 0.2925) / (0.50 + 0.375 + 0.2925);
        assert!((s[0].first_party_score - expected).abs() < 1e-12);
        assert_eq!((s[0].first_party_score * 100.0).round() / 100.0, 0.59);

        let corpus = [
            stats("a", [0.0, 0.0, 0.0, 0.11, 0.36, 0.20, 0.0]),
            stats("b", [0.0, 0.0, 0.0, 0.76, 0.54, 0.0, 0.0]),
        ];
        let s = compute_risk_scores(&corpus, &RiskWeights::default()).unwrap();
        assert!((s[0].third_party_score - 1.10 / 2.02).abs() < 1e-12);
    }

    #[test]
    fn single_policy_scores_one() {
        let s = compute_risk_scores(
            &[stats("a", [0.2, 0.1, 0.1, 0.2, 0.1, 0.1, 0.2])],
            &RiskWeights::default(),
        )
        .unwrap();
        assert_eq!(
            (s[0].first_party_score, s[0].third_party_score, s[0].overall_score),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn risk_errors_and_zero_denominators() {
        assert_eq!(
            compute_risk_scores(&[], &RiskWeights::default()),
            Err(AnalyserError::EmptyCorpus)
        );
        let bad = RiskWeights::default().scaled(-1.0);
        assert!(matches!(
            compute_risk_scores(&[stats("a", [0.0; 7])], &bad),
            Err(AnalyserError::InvalidWeights(_))
        ));
        let s = compute_risk_scores(
            &[stats("a", [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5]), FlowStats::from_cases("z", [])],
            &RiskWeights::default(),
        )
        .unwrap();
        assert_eq!(s[0].third_party_score, 0.0);
        assert_eq!(s[1].overall_score, 0.0);
    }

    #[test]
    fn category_distribution_collapses_case() {
        let vocab = vec!["Other".to_string(), "Location".to_string()];
        let d = category_distribution(
            &[flow("Other", "vin", "x", UserToFirst), flow("Other", "VIN", "y", UserToFirst)],
            &vocab,
        );
        assert_eq!(d["Other"], 1);
        assert_eq!(d["Location"], 0);
        assert!(category_distribution(&[], &vocab).values().all(|v| *v == 0));
    }

    #[test]
    fn matrix_examples() {
        let m = category_purpose_matrix(&[flow("Location", "gps", "Advertising", UserToFirst)]);
        assert_eq!(m.get("Location", "Advertising"), 1);
        assert_eq!(m.cells.values().map(|r| r.len()).sum::<usize>(), 1);
    }

    #[test]
    fn network_summary_examples() {
        let g = build_graph("p", &[flow("Contact", "email address", "x", UserToFirst)]);
        assert_eq!(
            network_summary(&g),
            NetworkSummary {
                edges: 2,
                first_party_nodes: 1,
                third_party_nodes: 0,
                user_party_nodes: 1,
                unknown_nodes: 0,
                data_type_nodes: 1,
            }
        );
        assert_eq!(network_summary(&build_graph("p", &[])), NetworkSummary::default());
    }

    fn freq_row() -> impl Strategy<Value = [f64; 7]> {
        prop::array::uniform7(0.0f64..1.0)
    }

    proptest! {
        #[test]
        fn weight_scaling_invariance(rows in prop::collection::vec(freq_row(), 1..10), c in 1e-3f64..1e3) {
            let corpus: Vec<_> = rows.iter().enumerate().map(|(i, r)| stats(&format!("p{i}"), *r)).collect();
            let w = RiskWeights::default();
            let a = compute_risk_scores(&corpus, &w).unwrap();
            let b = compute_risk_scores(&corpus, &w.scaled(c)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.first_party_score - y.first_party_score).abs() < 1e-12);
                prop_assert!((x.third_party_score - y.third_party_score).abs() < 1e-12);
                prop_assert!((x.overall_score - y.overall_score).abs() < 1e-12);
            }
        }

        #[test]
        fn scores_in_unit_interval_and_max_hits_one(rows in prop::collection::vec(freq_row(), 1..10)) {
            let corpus: Vec<_> = rows.iter().enumerate().map(|(i, r)| stats(&format!("p{i}"), *r)).collect();
            let scores = compute_risk_scores(&corpus, &RiskWeights::default()).unwrap();
            let max = corpus_maxima(&corpus);
            for (s, st) in scores.iter().zip(&corpus) {
                for v in [s.first_party_score, s.third_party_score, s.overall_score] {
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
                }
                if st.first_family() == max.first_family {
                    prop_assert_eq!(s.first_party_score, 1.0);
                }
            }
        }

        #[test]
        fn stats_sum_to_one_and_ignore_order(mut cases in prop::collection::vec(0usize..7, 1..40), seed in any::<u64>()) {
            let as_cases = |v: &[usize]| v.iter().map(|i| FlowCase::ALL[*i]).collect::<Vec<_>>();
            let a = FlowStats::from_cases("p", as_cases(&cases));
            prop_assert!((a.freq.values().sum::<f64>() - 1.0).abs() < 1e-9);
            let k = (seed as usize) % cases.len();
            cases.rotate_left(k);
            cases.reverse();
            prop_assert_eq!(a, FlowStats::from_cases("p", as_cases(&cases)));
        }

        #[test]
        fn matrix_is_order_independent(picks in prop::collection::vec((0usize..3, 0usize..3), 0..30)) {
            let cats = ["Location", "Contact", "Other"];
            let purposes = ["Advertising", "Marketing", "Unspecified"];
            let mut flows: Vec<_> = picks.iter().map(|&(c, p)| flow(cats[c], "t", purposes[p], UserToFirst)).collect();
            let m = category_purpose_matrix(&flows);
            let mut per_cat: BTreeMap<String, usize> = BTreeMap::new();
            for f in &flows {
                *per_cat.entry(f.data_category.clone()).or_default() += 1;
            }
            prop_assert_eq!(m.row_sums(), per_cat);
            flows.reverse();
            prop_assert_eq!(category_purpose_matrix(&flows), m);
        }
    }
}
