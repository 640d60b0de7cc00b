//! Browser bindings. Every function takes and returns a JSON string.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use eicl::corpus::SampleRecord;
use eicl::probe::{
    category_similarity_matrix, extract_category_representation, rank_probability_curve, synth_decisions,
    synth_generate, synth_queries, CategoryRepresentation, SimilarityScale, SynthConfig, SynthWorld,
};
use eicl::retrieval::{dot, norm};
use eicl::softlabel::soft_label_distribution;

#[derive(Deserialize)]
struct SoftLabelIn {
    gold: String,
    probs: BTreeMap<String, f64>,
    /// Label order for tie-breaking; defaults to the keys of `probs`.
    #[serde(default)]
    labels: Vec<String>,
    alpha: f64,
    k2: usize,
}

#[derive(Serialize)]
struct SoftLabelOut {
    entries: Vec<(String, f64)>,
    rendered: String,
}

#[derive(Deserialize)]
#[serde(default)]
struct SynthIn {
    labels: usize,
    layers: usize,
    dim: usize,
    per_label: usize,
    sigma: f64,
    seed: u64,
    queries: usize,
    query_sigma: Option<f64>,
    temperature: f64,
    minmax: bool,
}

impl Default for SynthIn {
    fn default() -> Self {
        Self {
            labels: 6,
            layers: 4,
            dim: 32,
            per_label: 30,
            sigma: 0.1,
            seed: 7,
            queries: 300,
            query_sigma: None,
            temperature: 0.1,
            minmax: false,
        }
    }
}

#[derive(Serialize)]
struct HeatmapOut {
    labels: Vec<String>,
    matrix: Vec<Vec<f64>>,
    /// Per label, the worst cosine between a recovered and a planted layer direction.
    recovery: Vec<f64>,
}

#[derive(Serialize)]
struct CurveOut {
    mean_probability: Vec<f64>,
    spearman: Option<f64>,
    queries: usize,
}

fn parse<'a, T: Deserialize<'a>>(input: &'a str) -> Result<T, String> {
    serde_json::from_str(input).map_err(|e| format!("bad input: {e}"))
}

fn emit(value: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn world(p: &SynthIn) -> Result<(SynthWorld, Vec<CategoryRepresentation>), String> {
    if p.labels * p.per_label * p.layers * p.dim > 4_000_000 {
        return Err("world too large for the browser demo".into());
    }
    let w = synth_generate(&SynthConfig::new(p.labels, p.layers, p.dim, p.per_label, p.sigma, p.seed))
        .map_err(|e| e.to_string())?;
    let reps = w
        .traces
        .iter()
        .zip(&w.labels)
        .map(|(t, l)| extract_category_representation(l, t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok((w, reps))
}

pub fn soft_label_json(input: &str) -> Result<String, String> {
    let p: SoftLabelIn = parse(input)?;
    let labels = if p.labels.is_empty() {
        p.probs.keys().cloned().collect()
    } else {
        p.labels
    };
    let record = SampleRecord {
        id: "demo".into(),
        text: String::new(),
        gold_label: p.gold,
        emotion_probs: p.probs,
        emotion_vector: vec![1.0],
        semantic_vector: None,
    };
    let s = soft_label_distribution(&record, &labels, p.alpha, p.k2).map_err(|e| e.to_string())?;
    emit(&SoftLabelOut {
        rendered: s.render(),
        entries: s.entries,
    })
}

pub fn heatmap_json(input: &str) -> Result<String, String> {
    let p: SynthIn = parse(input)?;
    let (w, reps) = world(&p)?;
    let scale = if p.minmax {
        SimilarityScale::MinMax
    } else {
        SimilarityScale::Affine
    };
    let matrix = category_similarity_matrix(&reps, scale).map_err(|e| e.to_string())?;
    let recovery = reps
        .iter()
        .zip(&w.directions)
        .map(|(r, dirs)| {
            r.per_layer
                .iter()
                .zip(dirs)
                .map(|(h, g)| dot(h, g) / (norm(h) * norm(g)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    emit(&HeatmapOut {
        labels: w.labels,
        matrix,
        recovery,
    })
}

pub fn rank_curve_json(input: &str) -> Result<String, String> {
    let p: SynthIn = parse(input)?;
    if p.queries == 0 || p.queries > 20_000 {
        return Err("queries must be between 1 and 20000".into());
    }
    let (w, reps) = world(&p)?;
    let qs = synth_queries(&w, p.queries, p.query_sigma.unwrap_or(p.sigma), p.seed.wrapping_add(1))
        .map_err(|e| e.to_string())?;
    let probe = synth_decisions(&w.bank, &qs, p.temperature).map_err(|e| e.to_string())?;
    let c = rank_probability_curve(&probe, &reps).map_err(|e| e.to_string())?;
    emit(&CurveOut {
        mean_probability: c.mean_probability,
        spearman: c.spearman,
        queries: c.queries,
    })
}

/// `{gold, probs, labels?, alpha, k2}` to `{entries, rendered}`.
#[wasm_bindgen]
pub fn soft_label(input: &str) -> Result<String, JsValue> {
    soft_label_json(input).map_err(|e| JsValue::from_str(&e))
}

/// Synthetic world parameters to `{labels, matrix, recovery}`.
#[wasm_bindgen]
pub fn heatmap(input: &str) -> Result<String, JsValue> {
    heatmap_json(input).map_err(|e| JsValue::from_str(&e))
}

/// Synthetic world and query parameters to `{mean_probability, spearman, queries}`.
#[wasm_bindgen]
pub fn rank_curve(input: &str) -> Result<String, JsValue> {
    rank_curve_json(input).map_err(|e| JsValue::from_str(&e))
}
