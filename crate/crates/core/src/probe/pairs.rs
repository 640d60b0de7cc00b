use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::corpus::Corpus;
use crate::decision::OUTPUT_FORMAT_LINE;
use crate::tensor::{read_tensor, write_tensor_file, Tensor};

/// Probe prompt asking the model to read `text` from the angle of `emotion`.
pub fn render_probe_prompt(emotion: &str, text: &str) -> String {
    format!(
        "From the perspective of the emotion {emotion}, infer the dialogue.\n\
         Dialogue Context: {text}.\n\
         {OUTPUT_FORMAT_LINE}"
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub sample_id: String,
    pub label: String,
    pub negative_label: String,
    pub positive_text: String,
    pub negative_text: String,
}

/// `m` samples of `label`, each paired with a prompt naming a random other
/// label. Samples are drawn without replacement and kept in corpus order.
pub fn build_prompt_pairs(
    corpus: &Corpus,
    label: &str,
    m: usize,
    seed: u64,
) -> Result<Vec<PromptPair>, ProbeError> {
    if !corpus.label_set().iter().any(|l| l == label) {
        return Err(ProbeError::UnknownLabel(label.to_string()));
    }
    let others: Vec<&String> = corpus.label_set().iter().filter(|l| *l != label).collect();
    if others.is_empty() {
        return Err(ProbeError::InvalidParameter(
            "need at least two labels to draw negatives".into(),
        ));
    }
    if m == 0 {
        return Err(ProbeError::InvalidParameter("M must be positive".into()));
    }
    let pool: Vec<usize> = corpus
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.gold_label == label)
        .map(|(i, _)| i)
        .collect();
    if pool.len() < m {
        return Err(ProbeError::InsufficientSamples {
            label: label.to_string(),
            needed: m,
            available: pool.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = pool;
    chosen.shuffle(&mut rng);
    chosen.truncate(m);
    chosen.sort_unstable();

    Ok(chosen
        .into_iter()
        .map(|i| {
            let r = &corpus.records()[i];
            let neg = (*others.choose(&mut rng).expect("non-empty")).clone();
            PromptPair {
                sample_id: r.id.clone(),
                label: label.to_string(),
                positive_text: render_probe_prompt(label, &r.text),
                negative_text: render_probe_prompt(&neg, &r.text),
                negative_label: neg,
            }
        })
        .collect())
}

pub fn write_pairs_jsonl(path: impl AsRef<Path>, pairs: &[PromptPair]) -> Result<(), ProbeError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for p in pairs {
        let line = serde_json::to_string(p).map_err(|e| ProbeError::Format(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pairs_jsonl(path: impl AsRef<Path>) -> Result<Vec<PromptPair>, ProbeError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(
            serde_json::from_str(&line)
                .map_err(|e| ProbeError::Format(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(pairs)
}

/// Per-layer hidden states of one prompt pair at one generation step.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenTrace {
    pub pair_id: String,
    pub timestep_tag: String,
    positive: Vec<Vec<f64>>,
    negative: Vec<Vec<f64>>,
}

impl HiddenTrace {
    pub fn new(
        pair_id: impl Into<String>,
        timestep_tag: impl Into<String>,
        positive: Vec<Vec<f64>>,
        negative: Vec<Vec<f64>>,
    ) -> Result<Self, ProbeError> {
        let layers = positive.len();
        if layers == 0 || negative.len() != layers {
            return Err(ProbeError::Shape(format!(
                "positive has {} layers, negative {}",
                layers,
                negative.len()
            )));
        }
        let d = positive[0].len();
        if d == 0 {
            return Err(ProbeError::Shape("zero-width layer".into()));
        }
        for row in positive.iter().chain(&negative) {
            if row.len() != d {
                return Err(ProbeError::Shape(format!("layer width {} vs {}", row.len(), d)));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(ProbeError::NonFinite);
            }
        }
        Ok(Self {
            pair_id: pair_id.into(),
            timestep_tag: timestep_tag.into(),
            positive,
            negative,
        })
    }

    pub fn layers(&self) -> usize {
        self.positive.len()
    }

    pub fn dim(&self) -> usize {
        self.positive[0].len()
    }

    pub fn positive(&self) -> &[Vec<f64>] {
        &self.positive
    }

    pub fn negative(&self) -> &[Vec<f64>] {
        &self.negative
    }

    /// Positive minus negative, per layer.
    pub fn difference(&self) -> Vec<Vec<f64>> {
        self.positive
            .iter()
            .zip(&self.negative)
            .map(|(p, n)| p.iter().zip(n).map(|(a, b)| a - b).collect())
            .collect()
    }

    /// `[2, L, d]` tensor, positive first. The two names carry the pair id
    /// and the timestep tag.
    pub fn to_tensor(&self) -> Result<Tensor, ProbeError> {
        let values = self
            .positive
            .iter()
            .chain(&self.negative)
            .flat_map(|r| r.iter().map(|&x| x as f32))
            .collect();
        Ok(Tensor::new(vec![2, self.layers(), self.dim()], values)?
            .with_names(vec![self.pair_id.clone(), self.timestep_tag.clone()]))
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, ProbeError> {
        if t.shape.len() != 3 || t.shape[0] != 2 {
            return Err(ProbeError::Shape(format!("trace must be [2, L, d], got {:?}", t.shape)));
        }
        let (pair_id, tag) = match t.names.as_deref() {
            Some([id, tag]) => (id.clone(), tag.clone()),
            _ => (String::new(), String::new()),
        };
        let mut rows = t.rows();
        let negative = rows.split_off(t.shape[1]);
        Self::new(pair_id, tag, rows, negative)
    }
}

pub fn write_trace(path: impl AsRef<Path>, trace: &HiddenTrace) -> Result<(), ProbeError> {
    Ok(write_tensor_file(path, &trace.to_tensor()?)?)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<HiddenTrace, ProbeError> {
    HiddenTrace::from_tensor(&read_tensor(path)?)
}
