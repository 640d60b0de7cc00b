//! Candidate division, prompt construction and response parsing.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SampleRecord;
use crate::hash::Fnv1a;
use crate::softlabel::{rank_labels, ExampleBlock};

/// The last line of every prompt; responses are parsed against it.
pub const OUTPUT_FORMAT_LINE: &str = "Output Format: 'Emotion: [the inferred emotion]'";

const DEFAULT_ZSHOT: &str = include_str!("../templates/zshot.txt");
const DEFAULT_ICL: &str = include_str!("../templates/icl.txt");
const DEFAULT_EICL: &str = include_str!("../templates/eicl.txt");

const PLACEHOLDERS: [&str; 5] = [
    "query",
    "examples",
    "primary_labels",
    "secondary_labels",
    "all_labels",
];

#[derive(Debug, Error, PartialEq)]
pub enum DecisionError {
    #[error("k3 must be at least 1")]
    InvalidK3,
    #[error("{0}")]
    ModeMismatch(String),
    #[error("template {name}: {message}")]
    Template { name: String, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseError {
    #[error("response has no `Emotion:` line")]
    NoEmotionLine,
    #[error("{0:?} does not name a known label")]
    UnknownLabel(String),
    #[error("{0:?} matches several labels: {1:?}")]
    AmbiguousLabel(String, Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Zshot,
    Icl,
    Eicl,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Zshot => "zshot",
            Mode::Icl => "icl",
            Mode::Eicl => "eicl",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zshot" => Ok(Mode::Zshot),
            "icl" => Ok(Mode::Icl),
            "eicl" => Ok(Mode::Eicl),
            other => Err(format!("unknown mode {other:?} (expected zshot|icl|eicl)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSplit {
    pub primary: Vec<String>,
    pub secondary: Vec<String>,
    pub k3: usize,
}

/// Top-`k3` labels of the query's auxiliary distribution become primary
/// candidates (ties by `labels` order); the rest stay secondary in `labels`
/// order.
pub fn split_candidates(
    query: &SampleRecord,
    labels: &[String],
    k3: usize,
) -> Result<CandidateSplit, DecisionError> {
    if k3 == 0 {
        return Err(DecisionError::InvalidK3);
    }
    let primary: Vec<String> = rank_labels(|l| query.prob(l), labels)
        .into_iter()
        .take(k3)
        .map(|(l, _)| l.to_string())
        .collect();
    let secondary = labels
        .iter()
        .filter(|l| !primary.contains(l))
        .cloned()
        .collect();
    Ok(CandidateSplit {
        primary,
        secondary,
        k3,
    })
}

/// How the secondary candidate list is spelled out in two-stage prompts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecondaryStyle {
    #[default]
    Enumerate,
    /// "the remaining emotions"
    Remaining,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub zshot: String,
    pub icl: String,
    pub eicl: String,
    pub secondary_style: SecondaryStyle,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            zshot: DEFAULT_ZSHOT.trim_end().to_string(),
            icl: DEFAULT_ICL.trim_end().to_string(),
            eicl: DEFAULT_EICL.trim_end().to_string(),
            secondary_style: SecondaryStyle::default(),
        }
    }
}

impl PromptTemplates {
    /// Loads `zshot.txt`, `icl.txt` and `eicl.txt` from `dir`, falling back to
    /// the built-in text for any file that is absent.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, DecisionError> {
        let dir = dir.as_ref();
        let mut t = Self::default();
        for (name, slot) in [
            ("zshot.txt", &mut t.zshot),
            ("icl.txt", &mut t.icl),
            ("eicl.txt", &mut t.eicl),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(&path)
                    .map_err(|e| DecisionError::Template {
                        name: name.into(),
                        message: e.to_string(),
                    })?
                    .trim_end()
                    .to_string();
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        for (name, text) in [("zshot", &self.zshot), ("icl", &self.icl), ("eicl", &self.eicl)] {
            for key in placeholders(text) {
                if !PLACEHOLDERS.contains(&key) {
                    return Err(DecisionError::Template {
                        name: name.into(),
                        message: format!("unknown placeholder {{{{{key}}}}}"),
                    });
                }
            }
            if !text.contains("{{query}}") {
                return Err(DecisionError::Template {
                    name: name.into(),
                    message: "missing {{query}}".into(),
                });
            }
        }
        Ok(())
    }

    /// Fingerprint of all template text, recorded in run reports.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for t in [&self.zshot, &self.icl, &self.eicl] {
            h.update(t.as_bytes()).update(&[0]);
        }
        h.update(match self.secondary_style {
            SecondaryStyle::Enumerate => b"enumerate",
            SecondaryStyle::Remaining => b"remaining",
        });
        h.finish()
    }
}

fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                out.push(&after[..end]);
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out
}

fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub mode: Mode,
    pub text: String,
    pub expected_labels: Vec<String>,
    pub split: Option<CandidateSplit>,
    pub query: String,
    pub examples: Vec<ExampleBlock>,
}

pub fn render_examples(examples: &[ExampleBlock]) -> String {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            format!(
                "Example {}\nDialogue Context: {}\nEmotion: {}",
                i + 1,
                ex.text,
                ex.label_string
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Instantiates the template for `mode`.
///
/// A two-stage split whose secondary list is empty (k3 covers every label)
/// falls back to the single-list example template.
pub fn build_prompt(
    query_text: &str,
    labels: &[String],
    examples: &[ExampleBlock],
    split: Option<&CandidateSplit>,
    mode: Mode,
    templates: &PromptTemplates,
) -> Result<PromptBundle, DecisionError> {
    match (mode, examples.is_empty(), split) {
        (Mode::Zshot, false, _) => {
            return Err(DecisionError::ModeMismatch("zshot prompts take no examples".into()))
        }
        (Mode::Zshot | Mode::Icl, _, Some(_)) => {
            return Err(DecisionError::ModeMismatch(format!(
                "candidate split only valid for eicl, not {mode}"
            )))
        }
        (Mode::Icl | Mode::Eicl, true, _) => {
            return Err(DecisionError::ModeMismatch(format!("{mode} requires at least one example")))
        }
        (Mode::Eicl, _, None) => {
            return Err(DecisionError::ModeMismatch("eicl requires a candidate split".into()))
        }
        _ => {}
    }

    let all = labels.join(", ");
    let rendered = render_examples(examples);
    let text = match (mode, split) {
        (Mode::Zshot, _) => fill(&templates.zshot, &[("all_labels", &all), ("query", query_text)]),
        (Mode::Eicl, Some(s)) if !s.secondary.is_empty() => {
            let secondary = match templates.secondary_style {
                SecondaryStyle::Enumerate => s.secondary.join(", "),
                SecondaryStyle::Remaining => "the remaining emotions".to_string(),
            };
            fill(
                &templates.eicl,
                &[
                    ("primary_labels", &s.primary.join(", ")),
                    ("secondary_labels", &secondary),
                    ("all_labels", &all),
                    ("examples", &rendered),
                    ("query", query_text),
                ],
            )
        }
        _ => fill(
            &templates.icl,
            &[("all_labels", &all), ("examples", &rendered), ("query", query_text)],
        ),
    };

    Ok(PromptBundle {
        mode,
        text,
        expected_labels: labels.to_vec(),
        split: split.cloned(),
        query: query_text.to_string(),
        examples: examples.to_vec(),
    })
}

/// Accepts decorated responses (`Sure! Emotion:  Joyful.`) when lenient;
/// strict mode wants a line starting with `Emotion:` and an exact label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    #[default]
    Lenient,
    Strict,
}

pub fn parse_emotion_response(raw: &str, labels: &[String]) -> Result<String, ParseError> {
    parse_emotion_response_with(raw, labels, Strictness::Lenient)
}

pub fn parse_emotion_response_with(
    raw: &str,
    labels: &[String],
    strictness: Strictness,
) -> Result<String, ParseError> {
    let value = raw
        .lines()
        .find_map(|line| emotion_value(line, strictness))
        .ok_or(ParseError::NoEmotionLine)?;
    let x = normalize(value);
    if let Some(l) = labels.iter().find(|l| normalize(l) == x) {
        return Ok(l.clone());
    }
    if strictness == Strictness::Strict || x.is_empty() {
        return Err(ParseError::UnknownLabel(x));
    }
    let hits: Vec<String> = labels
        .iter()
        .filter(|l| {
            let l = normalize(l);
            !l.is_empty() && (contains_word(&x, &l) || l.contains(&x))
        })
        .cloned()
        .collect();
    match hits.len() {
        0 => Err(ParseError::UnknownLabel(x)),
        1 => Ok(hits.into_iter().next().expect("one hit")),
        _ => Err(ParseError::AmbiguousLabel(x, hits)),
    }
}

/// Text after the first `emotion <ws>* :` marker on the line.
fn emotion_value(line: &str, strictness: Strictness) -> Option<&str> {
    let lower = line.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find("emotion") {
        let start = from + pos;
        let after = &lower[start + "emotion".len()..];
        let trimmed = after.trim_start();
        if let Some(rest) = trimmed.strip_prefix(':') {
            if strictness == Strictness::Strict && !lower[..start].trim().is_empty() {
                return None;
            }
            let offset = lower.len() - rest.len();
            return Some(&line[offset..]);
        }
        from = start + "emotion".len();
    }
    None
}

fn normalize(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_punctuation() && c != '-' && c != '_' {
                ' '
            } else {
                c.to_ascii_lowercase()
            }
        })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn contains_word(haystack: &str, needle: &str) -> bool {
    haystack
        .match_indices(needle)
        .any(|(i, _)| {
            let before = haystack[..i].chars().next_back();
            let after = haystack[i + needle.len()..].chars().next();
            before.is_none_or(|c| c == ' ') && after.is_none_or(|c| c == ' ')
        })
}
