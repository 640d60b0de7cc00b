//! Seeded synthetic benchmark for comparing prompting methods without a
//! real model or dataset.
//!
//! Every sample has a dominant emotion plus a weaker secondary one. Three
//! noisy views of that state are generated: the simulated model's reading of
//! the text, an auxiliary classifier's vector and probabilities, and a
//! semantic vector dominated by topic. Labels come in confusable pairs, some
//! training labels are swapped for their partner, and the simulated model
//! carries label priors that pull it toward a few emotions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SampleRecord, Split};
use crate::llm::{Lexicon, PrototypeBank, PrototypeSim, PrototypeSimConfig};
use crate::probe::orthonormal_set;
use crate::retrieval::norm;
use crate::tensor::write_tensor_file;

/// Ten emotions as five confusable pairs; index `i ^ 1` is the partner of `i`.
pub const BENCH_LABELS: [&str; 10] = [
    "afraid",
    "terrified",
    "joyful",
    "content",
    "sad",
    "devastated",
    "angry",
    "furious",
    "proud",
    "grateful",
];

const TOPICS: [&str; 8] = ["work", "family", "travel", "school", "health", "money", "friends", "home"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub seed: u64,
    pub train_per_label: usize,
    pub test_per_label: usize,
    pub dim: usize,
    /// Cosine between the simulated model's prototypes of paired labels.
    pub pair_cosine: f64,
    /// Cosine between the auxiliary model's directions of paired labels.
    pub aux_pair_cosine: f64,
    /// Upper bound of the secondary emotion's weight.
    pub secondary_max: f64,
    /// Chance the secondary emotion is the dominant one's partner.
    pub secondary_partner_rate: f64,
    pub perception_gain: f64,
    pub perception_noise: f64,
    pub aux_noise: f64,
    pub aux_temperature: f64,
    pub topic_scale: f64,
    /// Weight of emotion in the semantic vector.
    pub semantic_emotion: f64,
    pub semantic_noise: f64,
    /// Chance a training label is replaced by its partner.
    pub label_noise: f64,
    /// Prior added to the simulated model's score for these labels.
    pub biases: BTreeMap<String, f64>,
    pub temperature: f64,
    pub example_weight: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            train_per_label: 60,
            test_per_label: 40,
            dim: 32,
            pair_cosine: 0.6,
            aux_pair_cosine: 0.3,
            secondary_max: 0.6,
            secondary_partner_rate: 0.5,
            perception_gain: 1.0,
            perception_noise: 0.5,
            aux_noise: 0.25,
            aux_temperature: 0.25,
            topic_scale: 1.0,
            semantic_emotion: 0.8,
            semantic_noise: 0.3,
            label_noise: 0.25,
            biases: [("joyful".to_string(), 0.25), ("angry".to_string(), 0.2)]
                .into_iter()
                .collect(),
            temperature: 0.1,
            example_weight: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchWorld {
    pub config: BenchConfig,
    pub labels: Vec<String>,
    pub train: Corpus,
    pub test: Corpus,
    /// Unbiased prototypes; biases live in `config.biases`.
    pub bank: PrototypeBank,
    pub lexicon: Lexicon,
}

/// Unit directions for `BENCH_LABELS` with partners at cosine `pair_cos`
/// and other pairs orthogonal.
fn paired_directions(rng: &mut ChaCha8Rng, dim: usize, pair_cos: f64) -> Vec<Vec<f64>> {
    let basis = orthonormal_set(rng, BENCH_LABELS.len(), dim);
    let s = (1.0 - pair_cos * pair_cos).max(0.0).sqrt();
    (0..BENCH_LABELS.len())
        .map(|i| {
            if i % 2 == 0 {
                basis[i].clone()
            } else {
                basis[i - 1]
                    .iter()
                    .zip(&basis[i])
                    .map(|(a, b)| pair_cos * a + s * b)
                    .collect()
            }
        })
        .collect()
}

fn mix(dirs: &[Vec<f64>], weights: &[(usize, f64)], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for &(k, w) in weights {
        v.iter_mut().zip(&dirs[k]).for_each(|(a, d)| *a += w * d);
    }
    v
}

fn add_noise(v: &mut [f64], noise: &Normal<f64>, rng: &mut ChaCha8Rng) {
    v.iter_mut().for_each(|x| *x += noise.sample(rng));
}

fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| ((s - top) / temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Rounds through `f32` so in-memory values match what tensor files hold.
fn f32_exact(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd.max(0.0)).expect("finite standard deviation")
}

pub fn generate_bench(cfg: &BenchConfig) -> BenchWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = BENCH_LABELS.len();
    let d = cfg.dim.max(k);
    let labels: Vec<String> = BENCH_LABELS.iter().map(|s| s.to_string()).collect();
    let mut proto = paired_directions(&mut rng, d, cfg.pair_cosine);
    proto.iter_mut().for_each(|p| f32_exact(p));
    let aux_dirs = paired_directions(&mut rng, d, cfg.aux_pair_cosine);
    let sem_dirs = orthonormal_set(&mut rng, k, d);
    let topics: Vec<Vec<f64>> = (0..TOPICS.len())
        .map(|_| {
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&g);
            g.into_iter().map(|x| cfg.topic_scale * x / n).collect()
        })
        .collect();
    let (perc, aux, sem) = (normal(cfg.perception_noise), normal(cfg.aux_noise), normal(cfg.semantic_noise));

    let mut lexicon = Lexicon::new(d);
    let mut make = |split: Split, per_label: usize, rng: &mut ChaCha8Rng| -> Vec<SampleRecord> {
        let mut out = Vec::with_capacity(per_label * k);
        for j in 0..per_label {
            for c in 0..k {
                let second = if rng.random_bool(cfg.secondary_partner_rate) {
                    c ^ 1
                } else {
                    let mut o = rng.random_range(0..k - 1);
                    if o >= c {
                        o += 1;
                    }
                    o
                };
                let w2 = rng.random_range(0.0..=cfg.secondary_max);
                let state = [(c, 1.0), (second, w2)];
                let topic = rng.random_range(0..TOPICS.len());

                let mut x = mix(&proto, &state, d);
                x.iter_mut().for_each(|v| *v *= cfg.perception_gain);
                add_noise(&mut x, &perc, rng);
                f32_exact(&mut x);

                let mut v = mix(&aux_dirs, &state, d);
                add_noise(&mut v, &aux, rng);
                let scores: Vec<f64> = aux_dirs.iter().map(|a| crate::retrieval::dot(&v, a)).collect();
                let probs = softmax(&scores, cfg.aux_temperature);

                let mut s = mix(&sem_dirs, &state, d);
                s.iter_mut()
                    .zip(&topics[topic])
                    .for_each(|(a, t)| *a = cfg.semantic_emotion * *a + t);
                add_noise(&mut s, &sem, rng);

                let gold = if split == Split::Train && rng.random_bool(cfg.label_noise) {
                    c ^ 1
                } else {
                    c
                };
                let id = format!("{split}-{:05}", j * k + c);
                let text = format!("[{id}] a {} story", TOPICS[topic]);
                lexicon.insert(text.clone(), x).expect("dimension fixed above");
                out.push(SampleRecord {
                    id,
                    text,
                    gold_label: labels[gold].clone(),
                    emotion_probs: labels.iter().cloned().zip(probs).collect(),
                    emotion_vector: v,
                    semantic_vector: Some(s),
                });
            }
        }
        out
    };
    let train = make(Split::Train, cfg.train_per_label, &mut rng);
    let test = make(Split::Test, cfg.test_per_label, &mut rng);

    let train = Corpus::new(Split::Train, labels.clone(), train).expect("generated records are valid");
    let test = Corpus::new(Split::Test, labels.clone(), test).expect("generated records are valid");
    let bank = PrototypeBank::unbiased(labels.clone(), proto).expect("generated prototypes are valid");
    BenchWorld {
        config: cfg.clone(),
        labels,
        train,
        test,
        bank,
        lexicon,
    }
}

impl BenchWorld {
    pub fn biased_bank(&self) -> PrototypeBank {
        self.bank
            .clone()
            .with_biases(&self.config.biases)
            .expect("bias labels come from the label set")
    }

    /// The simulated model with this world's priors and reading of the texts.
    pub fn simulator(&self) -> PrototypeSim {
        PrototypeSim::new(self.biased_bank(), self.lexicon.clone(), self.config.temperature)
            .expect("matching dimensions")
            .with_example_weight(self.config.example_weight)
    }

    /// Writes `train.jsonl`, `test.jsonl`, `bank.evec` and `lexicon.evec`
    /// into `dir`; returns a provider config pointing at them.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<PrototypeSimConfig, crate::error::Error> {
        let dir = dir.as_ref();
        self.train.write_jsonl(dir.join("train.jsonl"))?;
        self.test.write_jsonl(dir.join("test.jsonl"))?;
        write_tensor_file(dir.join("bank.evec"), &self.bank.to_tensor()?)?;
        write_tensor_file(dir.join("lexicon.evec"), &self.lexicon.to_tensor()?)?;
        Ok(PrototypeSimConfig {
            bank: dir.join("bank.evec"),
            lexicon: Some(dir.join("lexicon.evec")),
            biases: self.config.biases.clone(),
            temperature: self.config.temperature,
            example_weight: self.config.example_weight,
            fallback_margin: None,
        })
    }
}
