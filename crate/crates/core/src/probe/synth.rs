//! Seeded synthetic hidden states with planted emotion directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::repr::{mean_rows, ProbeQuery};
use super::{HiddenTrace, ProbeError};
use crate::llm::{prototype_decision, PrototypeBank};
use crate::retrieval::{dot, norm};

pub const TIMESTEP_TAG: &str = "emotion_colon";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub layers: usize,
    pub dim: usize,
    pub per_label: usize,
    pub sigma: f64,
    pub seed: u64,
    /// Relative size of the per-layer perturbation around each label's base direction.
    pub layer_drift: f64,
    /// Range of the per-sample emotion intensity.
    pub intensity: (f64, f64),
    /// Scale of the shared context that differencing removes.
    pub context_scale: f64,
}

impl SynthConfig {
    pub fn new(num_labels: usize, layers: usize, dim: usize, per_label: usize, sigma: f64, seed: u64) -> Self {
        Self {
            num_labels,
            layers,
            dim,
            per_label,
            sigma,
            seed,
            layer_drift: 0.2,
            intensity: (0.2, 3.0),
            context_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.num_labels == 0 || self.layers == 0 || self.dim == 0 || self.per_label == 0 {
            return Err(ProbeError::InvalidParameter(
                "labels, layers, dim and per-label count must be positive".into(),
            ));
        }
        if self.dim < self.num_labels {
            return Err(ProbeError::DimTooSmall {
                dim: self.dim,
                labels: self.num_labels,
            });
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(ProbeError::InvalidParameter(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        let (lo, hi) = self.intensity;
        if !(lo > 0.0 && hi >= lo) {
            return Err(ProbeError::InvalidParameter("intensity range must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub labels: Vec<String>,
    /// `[label][layer]` unit directions.
    pub directions: Vec<Vec<Vec<f64>>>,
    /// `[label]` traces, `per_label` each.
    pub traces: Vec<Vec<HiddenTrace>>,
    pub bank: PrototypeBank,
}

impl SynthWorld {
    /// Mean over layers of the planted directions for one label.
    pub fn planted_mean(&self, label: usize) -> Vec<f64> {
        mean_rows(&self.directions[label])
    }
}

pub fn synth_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("emotion_{i:02}")).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Gram-Schmidt on Gaussian draws; `n <= d`.
pub fn orthonormal_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = gaussian(rng, d);
        for b in &out {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if norm(&v) > 1e-6 {
            out.push(normalize(v));
        }
    }
    out
}

/// Positive trace: context + a * g + noise; negative: context + noise.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthWorld, ProbeError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, layers, d) = (cfg.num_labels, cfg.layers, cfg.dim);
    let base = orthonormal_set(&mut rng, k, d);
    let directions: Vec<Vec<Vec<f64>>> = base
        .iter()
        .map(|b| {
            (0..layers)
                .map(|_| {
                    let r = normalize(gaussian(&mut rng, d));
                    normalize(b.iter().zip(&r).map(|(x, y)| x + cfg.layer_drift * y).collect())
                })
                .collect()
        })
        .collect();

    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| ProbeError::InvalidParameter(e.to_string()))?;
    let labels = synth_labels(k);
    let mut traces = Vec::with_capacity(k);
    for (c, dirs) in directions.iter().enumerate() {
        let mut per = Vec::with_capacity(cfg.per_label);
        for j in 0..cfg.per_label {
            let a = rng.random_range(cfg.intensity.0..=cfg.intensity.1);
            let mut pos = Vec::with_capacity(layers);
            let mut neg = Vec::with_capacity(layers);
            for g in dirs {
                let ctx: Vec<f64> = gaussian(&mut rng, d).into_iter().map(|x| x * cfg.context_scale).collect();
                pos.push(
                    ctx.iter()
                        .zip(g)
                        .map(|(x, gi)| x + a * gi + noise.sample(&mut rng))
                        .collect(),
                );
                neg.push(ctx.iter().map(|x| x + noise.sample(&mut rng)).collect());
            }
            per.push(HiddenTrace::new(format!("{}-{j:04}", labels[c]), TIMESTEP_TAG, pos, neg)?);
        }
        traces.push(per);
    }

    let bank = PrototypeBank::unbiased(labels.clone(), directions.iter().map(|d| mean_rows(d)).collect())?;
    Ok(SynthWorld {
        config: cfg.clone(),
        labels,
        directions,
        traces,
        bank,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthQuery {
    pub label: usize,
    pub trace: Vec<Vec<f64>>,
}

/// Queries `a * g_{c,l} + noise` with labels drawn uniformly.
pub fn synth_queries(world: &SynthWorld, n: usize, sigma: f64, seed: u64) -> Result<Vec<SynthQuery>, ProbeError> {
    let noise = Normal::new(0.0, sigma).map_err(|e| ProbeError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = world.config.intensity;
    Ok((0..n)
        .map(|_| {
            let c = rng.random_range(0..world.labels.len());
            let a = rng.random_range(lo..=hi);
            let trace = world.directions[c]
                .iter()
                .map(|g| g.iter().map(|x| a * x + noise.sample(&mut rng)).collect())
                .collect();
            SynthQuery { label: c, trace }
        })
        .collect())
}

/// Prototype-similarity decisions for each query, made from the mean of its layers.
pub fn synth_decisions(
    bank: &PrototypeBank,
    queries: &[SynthQuery],
    temperature: f64,
) -> Result<Vec<ProbeQuery>, ProbeError> {
    queries
        .iter()
        .map(|q| {
            let d = prototype_decision(&mean_rows(&q.trace), bank, bank.labels(), temperature)?;
            Ok(ProbeQuery {
                trace: q.trace.clone(),
                probabilities: d.probabilities,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::{category_similarity_matrix, extract_category_representation, rank_probability_curve, SimilarityScale};

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (norm(a) * norm(b))
    }

    #[test]
    fn noiseless_recovery_is_exact() {
        let w = synth_generate(&SynthConfig::new(3, 2, 8, 5, 0.0, 1)).unwrap();
        for (c, traces) in w.traces.iter().enumerate() {
            let r = extract_category_representation(&w.labels[c], traces).unwrap();
            for (h, g) in r.per_layer.iter().zip(&w.directions[c]) {
                assert!((cos(h, g) - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_world() {
        let cfg = SynthConfig::new(4, 3, 16, 6, 0.2, 99);
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.directions, c.directions);
    }

    #[test]
    fn dim_must_cover_labels() {
        assert!(matches!(
            synth_generate(&SynthConfig::new(10, 2, 8, 5, 0.1, 0)),
            Err(ProbeError::DimTooSmall { dim: 8, labels: 10 })
        ));
        assert!(synth_generate(&SynthConfig::new(2, 0, 8, 5, 0.1, 0)).is_err());
    }

    #[test]
    fn orthogonal_plants_have_small_mean_cosine() {
        let w = synth_generate(&SynthConfig::new(2, 4, 64, 50, 0.1, 3)).unwrap();
        let reps: Vec<_> = (0..2)
            .map(|c| extract_category_representation(&w.labels[c], &w.traces[c]).unwrap())
            .collect();
        assert!(cos(&reps[0].layer_mean, &reps[1].layer_mean).abs() <= 0.1);
    }

    #[test]
    fn planted_near_pair_orders_similarity() {
        // Two labels sharing most of their direction sit above an orthogonal one.
        let mut w = synth_generate(&SynthConfig::new(3, 2, 16, 30, 0.0, 4)).unwrap();
        let (b0, b2) = (w.directions[0].clone(), w.directions[2].clone());
        w.directions[1] = b0
            .iter()
            .zip(&b2)
            .map(|(a, o)| normalize(a.iter().zip(o).map(|(x, y)| 0.9 * x + 0.436 * y).collect()))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reps: Vec<_> = (0..3)
            .map(|c| {
                let traces: Vec<HiddenTrace> = (0..10)
                    .map(|j| {
                        let a = rng.random_range(0.5..2.0);
                        let pos = w.directions[c].iter().map(|g| g.iter().map(|x| a * x).collect()).collect();
                        HiddenTrace::new(format!("{j}"), TIMESTEP_TAG, pos, vec![vec![0.0; 16]; 2]).unwrap()
                    })
                    .collect();
                extract_category_representation(&w.labels[c], &traces).unwrap()
            })
            .collect();
        let m = category_similarity_matrix(&reps, SimilarityScale::Affine).unwrap();
        assert!(m[0][1] > m[1][2]);
        assert!(m[1][2] > m[0][2]);
    }

    #[test]
    fn curve_decreases_on_small_world() {
        let w = synth_generate(&SynthConfig::new(5, 2, 16, 30, 0.1, 8)).unwrap();
        let reps: Vec<_> = (0..5)
            .map(|c| extract_category_representation(&w.labels[c], &w.traces[c]).unwrap())
            .collect();
        let qs = synth_queries(&w, 200, 0.1, 9).unwrap();
        let probe = synth_decisions(&w.bank, &qs, 0.2).unwrap();
        let curve = rank_probability_curve(&probe, &reps).unwrap();
        assert!(curve.mean_probability.windows(2).all(|p| p[0] >= p[1]));
        assert!(curve.spearman.unwrap() < -0.9);
    }
}
