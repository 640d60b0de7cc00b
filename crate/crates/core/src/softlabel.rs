//! Dynamic soft labels and example-block rendering.
//!
//! A soft label mixes the example's gold label with the auxiliary model's
//! top-`k2` predictions. Non-gold predicted labels receive `alpha * p`; the
//! gold label receives the remaining mass, so the weights form a distribution.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, SampleRecord};
use crate::retrieval::ScoredNeighbor;

#[derive(Debug, Error, PartialEq)]
pub enum SoftLabelError {
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("k2 must be at least 1")]
    InvalidK2,
    #[error("record {0:?} has an empty probability map")]
    EmptyProbabilities(String),
    #[error("neighbor {0:?} is not in the train corpus")]
    DanglingId(String),
    #[error("cannot parse label string {0:?}")]
    BadLabelString(String),
}

/// How the gold label's weight is derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightRule {
    /// Gold weight is one minus the mass handed to the other predicted labels.
    #[default]
    Normalized,
    /// Gold weight is `1 - alpha * sum(p over all top-k2 labels)`, gold
    /// included. Does not sum to one when the gold label is among the top-k2.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    Soft,
    /// Gold label only; used when dynamic soft labels are ablated.
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel {
    /// Sorted by descending weight, gold first on ties.
    pub entries: Vec<(String, f64)>,
    pub alpha: f64,
    pub k2: usize,
}

impl SoftLabel {
    pub fn weight(&self, label: &str) -> Option<f64> {
        self.entries.iter().find(|(l, _)| l == label).map(|(_, w)| *w)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }

    /// `label (0.90), other (0.10)`.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(l, w)| format!("{l} ({w:.2})"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleBlock {
    pub source_id: String,
    pub text: String,
    pub label_string: String,
}

/// Labels ranked by the record's probabilities; ties keep `labels` order.
pub(crate) fn rank_labels<'a>(probs: impl Fn(&str) -> f64, labels: &'a [String]) -> Vec<(&'a str, f64)> {
    let mut ranked: Vec<(usize, &str, f64)> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (i, l.as_str(), probs(l)))
        .collect();
    ranked.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(_, l, p)| (l, p)).collect()
}

pub fn soft_label_distribution(
    record: &SampleRecord,
    labels: &[String],
    alpha: f64,
    k2: usize,
) -> Result<SoftLabel, SoftLabelError> {
    soft_label_with_rule(record, labels, alpha, k2, WeightRule::Normalized)
}

pub fn soft_label_with_rule(
    record: &SampleRecord,
    labels: &[String],
    alpha: f64,
    k2: usize,
    rule: WeightRule,
) -> Result<SoftLabel, SoftLabelError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SoftLabelError::AlphaOutOfRange(alpha));
    }
    if k2 == 0 {
        return Err(SoftLabelError::InvalidK2);
    }
    if record.emotion_probs.is_empty() {
        return Err(SoftLabelError::EmptyProbabilities(record.id.clone()));
    }
    let gold = record.gold_label.as_str();
    let top: Vec<(&str, f64)> = rank_labels(|l| record.prob(l), labels)
        .into_iter()
        .take(k2)
        .collect();

    let mut others: Vec<(String, f64)> = top
        .iter()
        .filter(|(l, p)| *l != gold && *p > 0.0)
        .map(|(l, p)| (l.to_string(), alpha * p))
        .filter(|(_, w)| *w > 0.0)
        .collect();
    let gold_weight = match rule {
        WeightRule::Normalized => 1.0 - others.iter().map(|(_, w)| w).sum::<f64>(),
        WeightRule::Literal => 1.0 - alpha * top.iter().map(|(_, p)| p).sum::<f64>(),
    };

    // Stable sort: equal-weight predictions keep their probability rank.
    others.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut entries = Vec::with_capacity(others.len() + 1);
    let split = others.partition_point(|(_, w)| *w > gold_weight);
    entries.extend_from_slice(&others[..split]);
    entries.push((gold.to_string(), gold_weight));
    entries.extend_from_slice(&others[split..]);

    Ok(SoftLabel { entries, alpha, k2 })
}

/// Parses a rendered label string back into `(label, weight)` pairs. A bare
/// label (hard mode) parses as weight 1.
pub fn parse_label_string(s: &str) -> Result<Vec<(String, f64)>, SoftLabelError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(SoftLabelError::BadLabelString(s.to_string()));
    }
    if !s.ends_with(')') {
        return Ok(vec![(s.to_string(), 1.0)]);
    }
    s.split("), ")
        .map(|item| {
            let item = item.strip_suffix(')').unwrap_or(item);
            let (label, weight) = item
                .rsplit_once(" (")
                .ok_or_else(|| SoftLabelError::BadLabelString(s.to_string()))?;
            let weight: f64 = weight
                .parse()
                .map_err(|_| SoftLabelError::BadLabelString(s.to_string()))?;
            Ok((label.to_string(), weight))
        })
        .collect()
}

/// One example block per neighbor, in rank order.
pub fn assemble_examples(
    neighbors: &[ScoredNeighbor],
    train: &Corpus,
    alpha: f64,
    k2: usize,
    mode: LabelMode,
) -> Result<Vec<ExampleBlock>, SoftLabelError> {
    let index: HashMap<&str, usize> = train.index();
    let mut ordered: Vec<&ScoredNeighbor> = neighbors.iter().collect();
    ordered.sort_by_key(|n| n.rank);
    ordered
        .into_iter()
        .map(|n| {
            let r = index
                .get(n.record_id.as_str())
                .map(|&i| &train.records()[i])
                .ok_or_else(|| SoftLabelError::DanglingId(n.record_id.clone()))?;
            let label_string = match mode {
                LabelMode::Hard => r.gold_label.clone(),
                LabelMode::Soft => soft_label_distribution(r, train.label_set(), alpha, k2)?.render(),
            };
            Ok(ExampleBlock {
                source_id: r.id.clone(),
                text: r.text.clone(),
                label_string,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use approx::assert_abs_diff_eq;

    fn record(gold: &str, probs: &[(&str, f64)]) -> SampleRecord {
        SampleRecord {
            id: format!("id-{gold}"),
            text: format!("a {gold} text"),
            gold_label: gold.into(),
            emotion_probs: probs.iter().map(|(l, p)| (l.to_string(), *p)).collect(),
            emotion_vector: vec![1.0],
            semantic_vector: None,
        }
    }

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn alpha_zero_is_hard_label() {
        let r = record("sad", &[("joyful", 0.5), ("sad", 0.3), ("angry", 0.2)]);
        let sl = soft_label_distribution(&r, &labels(&["joyful", "sad", "angry"]), 0.0, 3).unwrap();
        assert_eq!(sl.entries, vec![("sad".to_string(), 1.0)]);
    }

    #[test]
    fn gold_inside_top_k2() {
        let r = record("sad", &[("joyful", 0.5), ("sad", 0.3), ("angry", 0.2)]);
        let sl = soft_label_distribution(&r, &labels(&["joyful", "sad", "angry"]), 0.2, 2).unwrap();
        assert_eq!(sl.entries.len(), 2);
        assert_eq!(sl.entries[0].0, "sad");
        assert_abs_diff_eq!(sl.entries[0].1, 0.9, epsilon = 1e-12);
        assert_eq!(sl.entries[1].0, "joyful");
        assert_abs_diff_eq!(sl.entries[1].1, 0.1, epsilon = 1e-12);
        assert_eq!(sl.render(), "sad (0.90), joyful (0.10)");
    }

    #[test]
    fn gold_outside_top_k2_is_appended() {
        let r = record("proud", &[("joyful", 0.6), ("sad", 0.4), ("proud", 0.0)]);
        let sl = soft_label_distribution(&r, &labels(&["joyful", "sad", "proud"]), 0.2, 2).unwrap();
        let got: Vec<(&str, f64)> = sl.entries.iter().map(|(l, w)| (l.as_str(), *w)).collect();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].0, "proud");
        assert_abs_diff_eq!(got[0].1, 0.8, epsilon = 1e-12);
        assert_eq!(got[1].0, "joyful");
        assert_abs_diff_eq!(got[1].1, 0.12, epsilon = 1e-12);
        assert_eq!(got[2].0, "sad");
        assert_abs_diff_eq!(got[2].1, 0.08, epsilon = 1e-12);
        assert_eq!(sl.render(), "proud (0.80), joyful (0.12), sad (0.08)");
    }

    #[test]
    fn literal_rule_matches_unnormalized_formula() {
        let r = record("sad", &[("joyful", 0.5), ("sad", 0.3), ("angry", 0.2)]);
        let sl = soft_label_with_rule(&r, &labels(&["joyful", "sad", "angry"]), 0.2, 2, WeightRule::Literal)
            .unwrap();
        // 1 - 0.2 * (0.5 + 0.3)
        assert_abs_diff_eq!(sl.weight("sad").unwrap(), 0.84, epsilon = 1e-12);
        assert_abs_diff_eq!(sl.total(), 0.94, epsilon = 1e-12);
    }

    #[test]
    fn heavy_alpha_can_put_prediction_first() {
        let r = record("sad", &[("joyful", 0.9), ("sad", 0.1)]);
        let sl = soft_label_distribution(&r, &labels(&["joyful", "sad"]), 1.0, 2).unwrap();
        assert_eq!(sl.entries[0].0, "joyful");
        assert_abs_diff_eq!(sl.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_weight_puts_gold_first() {
        let r = record("sad", &[("joyful", 1.0)]);
        let sl = soft_label_distribution(&r, &labels(&["joyful", "sad"]), 0.5, 1).unwrap();
        assert_eq!(sl.render(), "sad (0.50), joyful (0.50)");
    }

    #[test]
    fn errors() {
        let r = record("sad", &[("sad", 1.0)]);
        let ls = labels(&["sad"]);
        assert_eq!(
            soft_label_distribution(&r, &ls, 1.5, 1),
            Err(SoftLabelError::AlphaOutOfRange(1.5))
        );
        assert_eq!(soft_label_distribution(&r, &ls, 0.2, 0), Err(SoftLabelError::InvalidK2));
        let empty = record("sad", &[]);
        assert!(matches!(
            soft_label_distribution(&empty, &ls, 0.2, 1),
            Err(SoftLabelError::EmptyProbabilities(_))
        ));
    }

    #[test]
    fn label_string_parsing() {
        assert_eq!(
            parse_label_string("sad (0.90), joyful (0.10)").unwrap(),
            vec![("sad".to_string(), 0.9), ("joyful".to_string(), 0.1)]
        );
        assert_eq!(parse_label_string("sad").unwrap(), vec![("sad".to_string(), 1.0)]);
        assert!(parse_label_string("sad (x)").is_err());
    }

    fn train() -> Corpus {
        let recs = vec![
            SampleRecord { id: "a".into(), ..record("sad", &[("joyful", 0.5), ("sad", 0.3), ("angry", 0.2)]) },
            SampleRecord { id: "b".into(), ..record("joyful", &[("joyful", 1.0)]) },
            SampleRecord { id: "c".into(), ..record("angry", &[("angry", 0.6), ("sad", 0.4)]) },
            SampleRecord { id: "d".into(), ..record("sad", &[("sad", 1.0)]) },
            SampleRecord { id: "e".into(), ..record("joyful", &[("sad", 1.0)]) },
        ];
        Corpus::new(Split::Train, labels(&["joyful", "sad", "angry"]), recs).unwrap()
    }

    fn neighbors(ids: &[&str]) -> Vec<ScoredNeighbor> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| ScoredNeighbor { record_id: id.to_string(), score: 1.0 - i as f64 * 0.1, rank: i + 1 })
            .collect()
    }

    #[test]
    fn assemble_hard_and_soft() {
        let t = train();
        let hard = assemble_examples(&neighbors(&["a"]), &t, 0.2, 2, LabelMode::Hard).unwrap();
        assert_eq!(hard[0].label_string, "sad");
        let soft = assemble_examples(&neighbors(&["a"]), &t, 0.2, 2, LabelMode::Soft).unwrap();
        assert_eq!(soft[0].label_string, "sad (0.90), joyful (0.10)");
        assert_eq!(soft[0].text, "a sad text");
    }

    #[test]
    fn assemble_preserves_rank_order() {
        let t = train();
        let mut ns = neighbors(&["e", "c", "a", "d", "b"]);
        ns.reverse();
        let blocks = assemble_examples(&ns, &t, 0.2, 2, LabelMode::Soft).unwrap();
        let ids: Vec<_> = blocks.iter().map(|b| b.source_id.as_str()).collect();
        assert_eq!(ids, ["e", "c", "a", "d", "b"]);
    }

    #[test]
    fn assemble_dangling_id() {
        let err = assemble_examples(&neighbors(&["zzz"]), &train(), 0.2, 2, LabelMode::Soft).unwrap_err();
        assert_eq!(err, SoftLabelError::DanglingId("zzz".into()));
    }

    #[test]
    fn hard_mode_ignores_probabilities() {
        let t = train();
        let mut recs = t.records().to_vec();
        for r in &mut recs {
            r.emotion_probs = [("angry".to_string(), 1.0)].into_iter().collect();
        }
        let t2 = Corpus::new(Split::Train, t.label_set().to_vec(), recs).unwrap();
        let ns = neighbors(&["a", "b", "c"]);
        assert_eq!(
            assemble_examples(&ns, &t, 0.2, 2, LabelMode::Hard).unwrap(),
            assemble_examples(&ns, &t2, 0.2, 2, LabelMode::Hard).unwrap()
        );
    }
}
