use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LlmError, PrototypeSimConfig, Provider};
use crate::decision::{Mode, PromptBundle};
use crate::retrieval::dot;
use crate::softlabel::parse_label_string;
use crate::tensor::{read_tensor, Tensor};

/// One prototype vector and prior per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    labels: Vec<String>,
    vectors: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl PrototypeBank {
    pub fn new(labels: Vec<String>, vectors: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self, LlmError> {
        if labels.is_empty() || labels.len() != vectors.len() || labels.len() != bias.len() {
            return Err(LlmError::Config(format!(
                "bank needs one vector and bias per label ({} labels, {} vectors, {} biases)",
                labels.len(),
                vectors.len(),
                bias.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(LlmError::Config(format!("duplicate bank label {l:?}")));
            }
        }
        let d = vectors[0].len();
        for (l, v) in labels.iter().zip(&vectors) {
            if v.len() != d {
                return Err(LlmError::DimensionMismatch { query: v.len(), bank: d });
            }
            if v.iter().any(|x| !x.is_finite()) || v.iter().all(|&x| x == 0.0) {
                return Err(LlmError::Config(format!("prototype for {l:?} is zero or non-finite")));
            }
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(LlmError::NonFinite);
        }
        Ok(Self { labels, vectors, bias })
    }

    pub fn unbiased(labels: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, LlmError> {
        let n = labels.len();
        Self::new(labels, vectors, vec![0.0; n])
    }

    /// Rows of a `[labels, d]` tensor, labels taken from the row names.
    pub fn from_tensor(t: &Tensor) -> Result<Self, LlmError> {
        let names = t
            .names
            .clone()
            .ok_or_else(|| LlmError::Config("bank tensor has no row names".into()))?;
        if t.shape.len() != 2 || names.len() != t.shape[0] {
            return Err(LlmError::Config(format!(
                "bank tensor must be [labels, d] with one name per row, got shape {:?}",
                t.shape
            )));
        }
        Self::unbiased(names, t.rows())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Self::from_tensor(&read_tensor(path)?)
    }

    pub fn to_tensor(&self) -> Result<Tensor, LlmError> {
        Ok(Tensor::from_rows(&self.vectors)?.with_names(self.labels.clone()))
    }

    /// Overrides biases for the named labels; unnamed labels keep theirs.
    pub fn with_biases(mut self, biases: &BTreeMap<String, f64>) -> Result<Self, LlmError> {
        for (l, b) in biases {
            let i = self.position(l).ok_or_else(|| LlmError::UnknownLabel(l.clone()))?;
            if !b.is_finite() {
                return Err(LlmError::NonFinite);
            }
            self.bias[i] = *b;
        }
        Ok(self)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn vector(&self, label: &str) -> Option<&[f64]> {
        self.position(label).map(|i| self.vectors[i].as_slice())
    }

    /// `dot(query, prototype) + bias` for every label, bank order.
    pub fn scores(&self, query: &[f64]) -> Result<Vec<f64>, LlmError> {
        if query.len() != self.dim() {
            return Err(LlmError::DimensionMismatch {
                query: query.len(),
                bank: self.dim(),
            });
        }
        let s: Vec<f64> = self
            .vectors
            .iter()
            .zip(&self.bias)
            .map(|(v, b)| dot(query, v) + b)
            .collect();
        if s.iter().any(|x| !x.is_finite()) {
            return Err(LlmError::NonFinite);
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: String,
    /// Bank order; disallowed labels are exactly zero.
    pub probabilities: Vec<f64>,
}

/// Softmax over `allowed` of `(dot + bias) / temperature`. Ties go to the
/// label earliest in bank order.
pub fn prototype_decision(
    query_vec: &[f64],
    bank: &PrototypeBank,
    allowed: &[String],
    temperature: f64,
) -> Result<Decision, LlmError> {
    if allowed.is_empty() {
        return Err(LlmError::EmptyAllowed);
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(LlmError::Config(format!("temperature must be positive, got {temperature}")));
    }
    let scores = bank.scores(query_vec)?;
    let mut mask = vec![false; bank.labels.len()];
    for l in allowed {
        let i = bank.position(l).ok_or_else(|| LlmError::UnknownLabel(l.clone()))?;
        mask[i] = true;
    }
    decide_masked(bank, &scores, &mask, temperature)
}

fn decide_masked(
    bank: &PrototypeBank,
    scores: &[f64],
    mask: &[bool],
    temperature: f64,
) -> Result<Decision, LlmError> {
    let mut best: Option<usize> = None;
    for i in (0..scores.len()).filter(|&i| mask[i]) {
        if best.is_none_or(|b| scores[i] > scores[b]) {
            best = Some(i);
        }
    }
    let best = best.ok_or(LlmError::EmptyAllowed)?;
    let top = scores[best];
    let mut probabilities: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(s, &m)| if m { ((s - top) / temperature).exp() } else { 0.0 })
        .collect();
    let z: f64 = probabilities.iter().sum();
    if !z.is_finite() || z <= 0.0 {
        return Err(LlmError::NonFinite);
    }
    probabilities.iter_mut().for_each(|p| *p /= z);
    Ok(Decision {
        label: bank.labels[best].clone(),
        probabilities,
    })
}

/// The simulated model's reading of raw text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl Lexicon {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, v: Vec<f64>) -> Result<(), LlmError> {
        if v.len() != self.dim {
            return Err(LlmError::DimensionMismatch {
                query: v.len(),
                bank: self.dim,
            });
        }
        self.entries.insert(text.into(), v);
        Ok(())
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, LlmError> {
        let names = t
            .names
            .as_ref()
            .ok_or_else(|| LlmError::Config("lexicon tensor has no row names".into()))?;
        if t.shape.len() != 2 || names.len() != t.shape[0] {
            return Err(LlmError::Config(format!("lexicon tensor must be [texts, d], got {:?}", t.shape)));
        }
        let mut lex = Self::new(t.shape[1]);
        for (n, row) in names.iter().zip(t.rows()) {
            lex.insert(n.clone(), row)?;
        }
        Ok(lex)
    }

    /// Rows sorted by text so the file is reproducible.
    pub fn to_tensor(&self) -> Result<Tensor, LlmError> {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let rows: Vec<Vec<f64>> = keys.iter().map(|k| self.entries[*k].clone()).collect();
        if rows.is_empty() {
            return Err(LlmError::Config("cannot serialize an empty lexicon".into()));
        }
        Ok(Tensor::from_rows(&rows)?.with_names(keys.into_iter().cloned().collect()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Unknown text reads as the zero vector.
    pub fn perceive(&self, text: &str) -> Vec<f64> {
        self.entries
            .get(text)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dim])
    }
}

/// Mock model deciding by prototype similarity.
///
/// Its internal state for a prompt is the perceived query plus
/// `example_weight` times the mean label signal of the in-context examples,
/// where an example labelled `{(c, w)}` contributes `sum w * prototype_c`.
/// On a two-stage prompt it answers from the primary candidates unless a
/// secondary one wins by more than `fallback_margin`.
#[derive(Debug, Clone)]
pub struct PrototypeSim {
    bank: PrototypeBank,
    lexicon: Lexicon,
    temperature: f64,
    example_weight: f64,
    fallback_margin: Option<f64>,
}

impl PrototypeSim {
    pub fn new(bank: PrototypeBank, lexicon: Lexicon, temperature: f64) -> Result<Self, LlmError> {
        if lexicon.dim() != bank.dim() {
            return Err(LlmError::DimensionMismatch {
                query: lexicon.dim(),
                bank: bank.dim(),
            });
        }
        if !(temperature > 0.0) {
            return Err(LlmError::Config("temperature must be positive".into()));
        }
        Ok(Self {
            bank,
            lexicon,
            temperature,
            example_weight: 1.0,
            fallback_margin: None,
        })
    }

    pub fn with_example_weight(mut self, w: f64) -> Self {
        self.example_weight = w;
        self
    }

    pub fn with_fallback_margin(mut self, m: Option<f64>) -> Self {
        self.fallback_margin = m;
        self
    }

    pub fn load(cfg: &PrototypeSimConfig) -> Result<Self, LlmError> {
        let bank = PrototypeBank::load(&cfg.bank)?.with_biases(&cfg.biases)?;
        let lexicon = match &cfg.lexicon {
            Some(p) => Lexicon::from_tensor(&read_tensor(p)?)?,
            None => Lexicon::new(bank.dim()),
        };
        Ok(Self::new(bank, lexicon, cfg.temperature)?
            .with_example_weight(cfg.example_weight)
            .with_fallback_margin(cfg.fallback_margin))
    }

    pub fn bank(&self) -> &PrototypeBank {
        &self.bank
    }

    /// Internal state the decision is made from.
    pub fn represent(&self, prompt: &PromptBundle) -> Result<Vec<f64>, LlmError> {
        let mut rep = self.lexicon.perceive(&prompt.query);
        if prompt.examples.is_empty() || self.example_weight == 0.0 {
            return Ok(rep);
        }
        let scale = self.example_weight / prompt.examples.len() as f64;
        for ex in &prompt.examples {
            let pairs = parse_label_string(&ex.label_string)
                .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
            for (label, w) in pairs {
                let v = self
                    .bank
                    .vector(&label)
                    .ok_or_else(|| LlmError::UnknownLabel(label.clone()))?;
                rep.iter_mut().zip(v).for_each(|(r, p)| *r += scale * w * p);
            }
        }
        Ok(rep)
    }

    pub fn decide(&self, prompt: &PromptBundle) -> Result<Decision, LlmError> {
        let rep = self.represent(prompt)?;
        let scores = self.bank.scores(&rep)?;
        let mask_of = |labels: &[String]| -> Result<Vec<bool>, LlmError> {
            let mut m = vec![false; self.bank.labels.len()];
            for l in labels {
                let i = self
                    .bank
                    .position(l)
                    .ok_or_else(|| LlmError::UnknownLabel(l.clone()))?;
                m[i] = true;
            }
            Ok(m)
        };
        let two_stage = prompt.mode == Mode::Eicl
            && prompt.split.as_ref().is_some_and(|s| !s.secondary.is_empty());
        if !two_stage {
            return decide_masked(&self.bank, &scores, &mask_of(&prompt.expected_labels)?, self.temperature);
        }
        let split = prompt.split.as_ref().expect("checked above");
        let primary = mask_of(&split.primary)?;
        if let Some(margin) = self.fallback_margin {
            let secondary = mask_of(&split.secondary)?;
            let best = |m: &[bool]| {
                scores
                    .iter()
                    .zip(m)
                    .filter(|(_, &k)| k)
                    .map(|(s, _)| *s)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            if best(&secondary) > best(&primary) + margin {
                let all: Vec<bool> = primary.iter().zip(&secondary).map(|(a, b)| *a || *b).collect();
                return decide_masked(&self.bank, &scores, &all, self.temperature);
            }
        }
        decide_masked(&self.bank, &scores, &primary, self.temperature)
    }
}

impl Provider for PrototypeSim {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        Ok(format!("Emotion: {}", self.decide(prompt)?.label))
    }
}
