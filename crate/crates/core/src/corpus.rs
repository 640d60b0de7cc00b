//! Sample records, corpora, JSONL ingestion and label-space alignment.
//!
//! Records carry the auxiliary emotion model's outputs (a probability
//! distribution and an emotion vector) precomputed by an external extraction
//! step; nothing in this crate runs the auxiliary model itself.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of a record's emotion probabilities.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record, line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate id {id:?}, line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("probability sum violation, line {line}: sum is {sum}")]
    ProbabilitySum { line: usize, sum: f64 },
    #[error("probability out of range, line {line}: {label:?} has {value}")]
    ProbabilityRange {
        line: usize,
        label: String,
        value: f64,
    },
    #[error("vector length mismatch, line {line}: {field} has length {actual}, expected {expected}")]
    VectorLength {
        line: usize,
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unknown gold label {label:?}, line {line}")]
    UnknownLabel { line: usize, label: String },
    #[error("empty corpus")]
    Empty,
    #[error("label intersection is empty")]
    EmptyIntersection,
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train|test)")),
        }
    }
}

/// One utterance or flattened dialogue with its gold label and auxiliary-model outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub text: String,
    pub gold_label: String,
    pub emotion_probs: BTreeMap<String, f64>,
    pub emotion_vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_vector: Option<Vec<f64>>,
}

impl SampleRecord {
    /// Probability of `label`, zero when the auxiliary model did not score it.
    pub fn prob(&self, label: &str) -> f64 {
        self.emotion_probs.get(label).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    split: Split,
    label_set: Vec<String>,
    d_emo: usize,
    records: Vec<SampleRecord>,
}

impl Corpus {
    /// Validates `records` against `label_set`, inferring `d_emo` from the first record.
    pub fn new(
        split: Split,
        label_set: Vec<String>,
        records: Vec<SampleRecord>,
    ) -> Result<Self, CorpusError> {
        check_label_set(&label_set)?;
        let first = records.first().ok_or(CorpusError::Empty)?;
        let d_emo = first.emotion_vector.len();
        let semantic_dim = records
            .iter()
            .find_map(|r| r.semantic_vector.as_ref().map(Vec::len));
        let labels: HashSet<&str> = label_set.iter().map(String::as_str).collect();
        let mut ids = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            validate_record(r, i + 1, d_emo, semantic_dim, Some(&labels))?;
            if !ids.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: r.id.clone(),
                });
            }
        }
        Ok(Self {
            split,
            label_set,
            d_emo,
            records,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn d_emo(&self) -> usize {
        self.d_emo
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Id → position map for repeated lookups.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect()
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_label_set(labels: &[String]) -> Result<(), CorpusError> {
    if labels.is_empty() {
        return Err(CorpusError::InvalidLabelSet("no labels".into()));
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(CorpusError::InvalidLabelSet(format!("duplicate label {l:?}")));
        }
    }
    Ok(())
}

fn validate_record(
    r: &SampleRecord,
    line: usize,
    d_emo: usize,
    semantic_dim: Option<usize>,
    labels: Option<&HashSet<&str>>,
) -> Result<(), CorpusError> {
    if r.emotion_vector.is_empty() {
        return Err(CorpusError::Malformed {
            line,
            message: "emotion_vector is empty".into(),
        });
    }
    if r.emotion_vector.len() != d_emo {
        return Err(CorpusError::VectorLength {
            line,
            field: "emotion_vector",
            expected: d_emo,
            actual: r.emotion_vector.len(),
        });
    }
    if r.emotion_vector.iter().any(|v| !v.is_finite()) {
        return Err(CorpusError::Malformed {
            line,
            message: "emotion_vector has non-finite entries".into(),
        });
    }
    if let (Some(sv), Some(dim)) = (&r.semantic_vector, semantic_dim) {
        if sv.len() != dim {
            return Err(CorpusError::VectorLength {
                line,
                field: "semantic_vector",
                expected: dim,
                actual: sv.len(),
            });
        }
    }
    for (label, &p) in &r.emotion_probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(CorpusError::ProbabilityRange {
                line,
                label: label.clone(),
                value: p,
            });
        }
    }
    let sum: f64 = r.emotion_probs.values().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(CorpusError::ProbabilitySum { line, sum });
    }
    if let Some(labels) = labels {
        if !labels.contains(r.gold_label.as_str()) {
            return Err(CorpusError::UnknownLabel {
                line,
                label: r.gold_label.clone(),
            });
        }
    }
    Ok(())
}

/// Reads one record per line.
///
/// When `expected_labels` is `None` the label set is the gold labels in order
/// of first appearance. Blank lines are skipped; reported line numbers are
/// physical, 1-based.
pub fn ingest_jsonl(
    path: impl AsRef<Path>,
    split: Split,
    expected_labels: Option<&[String]>,
) -> Result<Corpus, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut d_emo = None;
    let mut semantic_dim = None;
    let expected: Option<HashSet<&str>> =
        expected_labels.map(|ls| ls.iter().map(String::as_str).collect());
    if let Some(ls) = expected_labels {
        check_label_set(ls)?;
    }

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        let dim = *d_emo.get_or_insert(record.emotion_vector.len());
        if semantic_dim.is_none() {
            semantic_dim = record.semantic_vector.as_ref().map(Vec::len);
        }
        validate_record(&record, line_no, dim, semantic_dim, expected.as_ref())?;
        if !ids.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }

    let label_set = match expected_labels {
        Some(ls) => ls.to_vec(),
        None => {
            let mut seen = HashSet::new();
            records
                .iter()
                .filter(|r| seen.insert(r.gold_label.clone()))
                .map(|r| r.gold_label.clone())
                .collect()
        }
    };
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(Corpus {
        split,
        label_set,
        d_emo: d_emo.expect("non-empty corpus"),
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignOptions {
    /// Restrict each record's probabilities to the shared labels and rescale
    /// them to sum to one. When false, probabilities are left untouched.
    pub renormalize: bool,
    /// Renames auxiliary-model labels into the corpus vocabulary
    /// (e.g. `"anger" -> "angry"`) before intersecting.
    pub aliases: BTreeMap<String, String>,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            renormalize: true,
            aliases: BTreeMap::new(),
        }
    }
}

pub fn align_labels(corpus: &Corpus, aux_labels: &[String]) -> Result<Corpus, CorpusError> {
    align_labels_with(corpus, aux_labels, &AlignOptions::default())
}

/// Restricts `corpus` to the labels it shares with the auxiliary model.
///
/// The new label set keeps the corpus order. Records whose gold label is not
/// shared are dropped. Probability mass on dropped labels is discarded and the
/// remainder rescaled; a record whose entire mass was dropped gets a uniform
/// distribution over the shared labels.
pub fn align_labels_with(
    corpus: &Corpus,
    aux_labels: &[String],
    opts: &AlignOptions,
) -> Result<Corpus, CorpusError> {
    if aux_labels.is_empty() {
        return Err(CorpusError::InvalidLabelSet("auxiliary label list is empty".into()));
    }
    let rename = |l: &str| -> String { opts.aliases.get(l).cloned().unwrap_or_else(|| l.to_string()) };
    let aux: HashSet<String> = aux_labels.iter().map(|l| rename(l)).collect();
    let label_set: Vec<String> = corpus
        .label_set
        .iter()
        .filter(|l| aux.contains(*l))
        .cloned()
        .collect();
    if label_set.is_empty() {
        return Err(CorpusError::EmptyIntersection);
    }
    let keep: HashSet<&str> = label_set.iter().map(String::as_str).collect();

    let records = corpus
        .records
        .iter()
        .filter(|r| keep.contains(r.gold_label.as_str()))
        .map(|r| {
            let mut renamed: BTreeMap<String, f64> = BTreeMap::new();
            for (l, &p) in &r.emotion_probs {
                *renamed.entry(rename(l)).or_insert(0.0) += p;
            }
            let emotion_probs = if !opts.renormalize {
                renamed
            } else if renamed.keys().all(|l| keep.contains(l.as_str())) {
                renamed
            } else {
                let restricted: BTreeMap<String, f64> = renamed
                    .into_iter()
                    .filter(|(l, _)| keep.contains(l.as_str()))
                    .collect();
                let mass: f64 = restricted.values().sum();
                if mass > 0.0 {
                    restricted.into_iter().map(|(l, p)| (l, p / mass)).collect()
                } else {
                    let u = 1.0 / label_set.len() as f64;
                    label_set.iter().map(|l| (l.clone(), u)).collect()
                }
            };
            SampleRecord {
                emotion_probs,
                ..r.clone()
            }
        })
        .collect::<Vec<_>>();

    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(Corpus {
        split: corpus.split,
        label_set,
        d_emo: corpus.d_emo,
        records,
    })
}
