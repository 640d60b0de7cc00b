use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences.
    pub support: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub total: usize,
    pub correct: usize,
    pub unparsed: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Label-set order. Recall doubles as per-emotion accuracy.
    pub per_label: Vec<LabelMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `records` pairs each gold label with the parsed prediction, `None` when
/// the response could not be parsed. Unparsed records are wrong and count as
/// a prediction of no label. Macro-F1 averages over every label in `labels`.
pub fn compute_metrics(records: &[(String, Option<String>)], labels: &[String]) -> Result<Metrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    if labels.is_empty() {
        return Err(EvalError::Config("label set is empty".into()));
    }
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let k = labels.len();
    let (mut tp, mut gold_n, mut pred_n) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    let (mut correct, mut unparsed) = (0, 0);
    for (gold, pred) in records {
        let g = *index
            .get(gold.as_str())
            .ok_or_else(|| EvalError::UnknownGold(gold.clone()))?;
        gold_n[g] += 1;
        match pred.as_deref().and_then(|p| index.get(p).copied()) {
            Some(p) => {
                pred_n[p] += 1;
                if p == g {
                    tp[g] += 1;
                    correct += 1;
                }
            }
            None if pred.is_none() => unparsed += 1,
            None => {}
        }
    }
    let per_label: Vec<LabelMetrics> = (0..k)
        .map(|i| {
            let precision = ratio(tp[i], pred_n[i]);
            let recall = ratio(tp[i], gold_n[i]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            LabelMetrics {
                label: labels[i].clone(),
                precision,
                recall,
                f1,
                support: gold_n[i],
                predicted: pred_n[i],
            }
        })
        .collect();
    let macro_f1 = per_label.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(Metrics {
        total: records.len(),
        correct,
        unparsed,
        accuracy: ratio(correct, records.len()),
        macro_f1,
        per_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn recs(pairs: &[(&str, Option<&str>)]) -> Vec<(String, Option<String>)> {
        pairs
            .iter()
            .map(|(g, p)| (g.to_string(), p.map(str::to_string)))
            .collect()
    }

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_classifier() {
        let m = compute_metrics(&recs(&[("a", Some("a")), ("b", Some("b"))]), &labels(&["a", "b"])).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn four_record_confusion() {
        let m = compute_metrics(
            &recs(&[("a", Some("a")), ("a", Some("b")), ("b", Some("b")), ("b", Some("b"))]),
            &labels(&["a", "b"]),
        )
        .unwrap();
        // a: P = 1, R = 1/2. b: P = 2/3, R = 1.
        assert_eq!(m.accuracy, 0.75);
        assert_abs_diff_eq!(m.per_label[0].f1, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.per_label[1].f1, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(m.macro_f1, (2.0 / 3.0 + 0.8) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn absent_label_pulls_macro_down() {
        let m = compute_metrics(&recs(&[("a", Some("a"))]), &labels(&["a", "c"])).unwrap();
        assert_eq!(m.per_label[1].f1, 0.0);
        assert_eq!(m.macro_f1, 0.5);
    }

    #[test]
    fn unparsed_is_wrong_and_predicts_nothing() {
        let m = compute_metrics(&recs(&[("a", None), ("a", Some("a"))]), &labels(&["a", "b"])).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.unparsed, 1);
        assert_eq!(m.per_label[0].precision, 1.0);
        assert_eq!(m.per_label[0].recall, 0.5);
        assert_eq!(m.per_label[1].predicted, 0);
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&[], &labels(&["a"])), Err(EvalError::EmptyRecords)));
        assert!(matches!(
            compute_metrics(&recs(&[("z", None)]), &labels(&["a"])),
            Err(EvalError::UnknownGold(_))
        ));
    }

    proptest! {
        #[test]
        fn order_invariant_and_bounded(
            raw in prop::collection::vec((0usize..4, prop::option::of(0usize..4)), 1..60),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let ls = labels(&["a", "b", "c", "d"]);
            let r: Vec<(String, Option<String>)> = raw
                .iter()
                .map(|(g, p)| (ls[*g].clone(), p.map(|i| ls[i].clone())))
                .collect();
            let mut shuffled = r.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = compute_metrics(&r, &ls).unwrap();
            let b = compute_metrics(&shuffled, &ls).unwrap();
            prop_assert_eq!(a.macro_f1.to_bits(), b.macro_f1.to_bits());
            prop_assert!((0.0..=1.0).contains(&a.accuracy));
            prop_assert!((0.0..=1.0).contains(&a.macro_f1));
        }
    }
}
