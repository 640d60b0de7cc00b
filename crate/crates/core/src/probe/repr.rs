use serde::{Deserialize, Serialize};

use super::pca::pca_first_component;
use super::{HiddenTrace, ProbeError};
use crate::retrieval::{dot, norm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRepresentation {
    pub label: String,
    /// One unit vector per layer.
    pub per_layer: Vec<Vec<f64>>,
    pub layer_mean: Vec<f64>,
    pub sample_count: usize,
}

impl CategoryRepresentation {
    pub fn layers(&self) -> usize {
        self.per_layer.len()
    }

    pub fn dim(&self) -> usize {
        self.layer_mean.len()
    }
}

/// Per layer, the first principal component of the positive-minus-negative
/// differences; `layer_mean` averages the unit per-layer components.
pub fn extract_category_representation(
    label: &str,
    traces: &[HiddenTrace],
) -> Result<CategoryRepresentation, ProbeError> {
    if traces.len() < 2 {
        return Err(ProbeError::TooFewRows(traces.len()));
    }
    let (layers, d) = (traces[0].layers(), traces[0].dim());
    if let Some(t) = traces.iter().find(|t| t.layers() != layers || t.dim() != d) {
        return Err(ProbeError::Shape(format!(
            "trace {:?} is [{}, {}], expected [{layers}, {d}]",
            t.pair_id,
            t.layers(),
            t.dim()
        )));
    }
    let diffs: Vec<Vec<Vec<f64>>> = traces.iter().map(HiddenTrace::difference).collect();
    let mut per_layer = Vec::with_capacity(layers);
    for l in 0..layers {
        let rows: Vec<Vec<f64>> = diffs.iter().map(|t| t[l].clone()).collect();
        let h = pca_first_component(&rows).map_err(|e| match e {
            ProbeError::RankZero => ProbeError::RankZeroLayer(l),
            other => other,
        })?;
        per_layer.push(h);
    }
    let layer_mean = mean_rows(&per_layer);
    Ok(CategoryRepresentation {
        label: label.to_string(),
        per_layer,
        layer_mean,
        sample_count: traces.len(),
    })
}

pub(crate) fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows.first().map_or(0, Vec::len)];
    for r in rows {
        m.iter_mut().zip(r).for_each(|(a, x)| *a += x);
    }
    m.iter_mut().for_each(|a| *a /= rows.len() as f64);
    m
}

/// How cosines are mapped into `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityScale {
    /// `(cos + 1) / 2`.
    #[default]
    Affine,
    /// Min-max over the whole matrix.
    MinMax,
}

/// Pairwise cosine of the layer means, mapped into `[0, 1]`.
pub fn category_similarity_matrix(
    reps: &[CategoryRepresentation],
    scale: SimilarityScale,
) -> Result<Vec<Vec<f64>>, ProbeError> {
    let Some(first) = reps.first() else {
        return Ok(Vec::new());
    };
    let d = first.dim();
    let mut unit = Vec::with_capacity(reps.len());
    for r in reps {
        if r.dim() != d {
            return Err(ProbeError::Shape(format!("rep {:?} has dim {}, expected {d}", r.label, r.dim())));
        }
        let n = norm(&r.layer_mean);
        if n == 0.0 || !n.is_finite() {
            return Err(ProbeError::ZeroNorm(r.label.clone()));
        }
        unit.push(r.layer_mean.iter().map(|x| x / n).collect::<Vec<_>>());
    }
    let k = reps.len();
    let mut cos = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let c = dot(&unit[i], &unit[j]).clamp(-1.0, 1.0);
            cos[i][j] = c;
            cos[j][i] = c;
        }
    }
    Ok(match scale {
        SimilarityScale::Affine => cos
            .into_iter()
            .map(|row| row.into_iter().map(|c| (c + 1.0) / 2.0).collect())
            .collect(),
        SimilarityScale::MinMax => {
            let flat = cos.iter().flatten();
            let lo = flat.clone().copied().fold(f64::INFINITY, f64::min);
            let hi = flat.copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            cos.into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|c| if span > 0.0 { (c - lo) / span } else { 1.0 })
                        .collect()
                })
                .collect()
        }
    })
}

/// Mean over layers of `query[l] . rep.per_layer[l]`.
pub fn probe_score(query: &[Vec<f64>], rep: &CategoryRepresentation) -> Result<f64, ProbeError> {
    if query.len() != rep.layers() || query.iter().any(|q| q.len() != rep.dim()) {
        return Err(ProbeError::Shape(format!(
            "query is not [{}, {}]",
            rep.layers(),
            rep.dim()
        )));
    }
    let total: f64 = query.iter().zip(&rep.per_layer).map(|(q, h)| dot(q, h)).sum();
    Ok(total / query.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCurve {
    /// Mean decision probability of the label at each similarity rank, best first.
    pub mean_probability: Vec<f64>,
    /// Against rank position; `None` when the curve is flat.
    pub spearman: Option<f64>,
    pub queries: usize,
}

/// A query's per-layer hidden states and the decision distribution over the
/// labels of `reps`, in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeQuery {
    pub trace: Vec<Vec<f64>>,
    pub probabilities: Vec<f64>,
}

pub fn rank_probability_curve(
    queries: &[ProbeQuery],
    reps: &[CategoryRepresentation],
) -> Result<RankCurve, ProbeError> {
    if reps.is_empty() {
        return Err(ProbeError::InvalidParameter("no representations".into()));
    }
    if queries.is_empty() {
        return Err(ProbeError::InvalidParameter("no queries".into()));
    }
    let k = reps.len();
    let mut acc = vec![0.0; k];
    for (qi, q) in queries.iter().enumerate() {
        if q.probabilities.len() != k {
            return Err(ProbeError::InconsistentLabels(format!(
                "query {qi} has {} probabilities for {k} labels",
                q.probabilities.len()
            )));
        }
        let sum: f64 = q.probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || q.probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ProbeError::InvalidProbabilities(format!("query {qi} sums to {sum}")));
        }
        let scores = reps
            .iter()
            .map(|r| probe_score(&q.trace, r))
            .collect::<Result<Vec<_>, _>>()?;
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for (rank, &label) in order.iter().enumerate() {
            acc[rank] += q.probabilities[label];
        }
    }
    let mean_probability: Vec<f64> = acc.iter().map(|a| a / queries.len() as f64).collect();
    let positions: Vec<f64> = (1..=k).map(|r| r as f64).collect();
    Ok(RankCurve {
        spearman: spearman(&positions, &mean_probability),
        mean_probability,
        queries: queries.len(),
    })
}

/// Ranks with ties sharing their average rank, 1-based.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks. `None` if either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
