//! Exact top-k example retrieval by cosine similarity.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, SampleRecord};

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("vector length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("record {0:?} has no {1} vector")]
    MissingVector(String, VectorField),
    #[error("train corpus is empty")]
    EmptyCorpus,
    #[error("k1 must be at least 1")]
    InvalidK,
}

/// Which stored vector drives similarity: emotion vectors for emotion-similar
/// retrieval, semantic vectors for the conventional baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorField {
    Emotion,
    Semantic,
}

impl std::fmt::Display for VectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VectorField::Emotion => "emotion",
            VectorField::Semantic => "semantic",
        })
    }
}

impl VectorField {
    pub fn of<'a>(&self, r: &'a SampleRecord) -> Option<&'a [f64]> {
        match self {
            VectorField::Emotion => Some(&r.emotion_vector),
            VectorField::Semantic => r.semantic_vector.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNeighbor {
    pub record_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::LengthMismatch(u.len(), v.len()));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// The `k1` train records most similar to `query`, best first.
///
/// Ties keep corpus order. Returns `min(k1, n)` neighbors.
pub fn top_k_similar(
    query: &SampleRecord,
    train: &Corpus,
    k1: usize,
    field: VectorField,
) -> Result<Vec<ScoredNeighbor>, RetrievalError> {
    if k1 == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if train.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let q = field
        .of(query)
        .ok_or_else(|| RetrievalError::MissingVector(query.id.clone(), field))?;
    let qn = norm(q);
    if qn == 0.0 {
        return Err(RetrievalError::ZeroNorm);
    }

    let mut scored = Vec::with_capacity(train.len());
    for (pos, r) in train.records().iter().enumerate() {
        let v = field
            .of(r)
            .ok_or_else(|| RetrievalError::MissingVector(r.id.clone(), field))?;
        if v.len() != q.len() {
            return Err(RetrievalError::LengthMismatch(q.len(), v.len()));
        }
        let vn = norm(v);
        if vn == 0.0 {
            return Err(RetrievalError::ZeroNorm);
        }
        scored.push((pos, (dot(q, v) / (qn * vn)).clamp(-1.0, 1.0)));
    }

    let by_rank = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
    };
    let k = k1.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_rank);
        scored.truncate(k);
    }
    scored.sort_by(by_rank);

    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (pos, score))| ScoredNeighbor {
            record_id: train.records()[pos].id.clone(),
            score,
            rank: i + 1,
        })
        .collect())
}
