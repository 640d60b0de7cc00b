use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::EvalError;
use crate::corpus::{Corpus, SampleRecord};
use crate::decision::{build_prompt, parse_emotion_response_with, split_candidates, Mode, PromptTemplates, Strictness};
use crate::hash::hex64;
use crate::llm::{prompt_key, LlmClient, ProviderConfig, TranscriptWriter};
use crate::retrieval::{top_k_similar, VectorField};
use crate::softlabel::{assemble_examples, LabelMode, WeightRule};

pub const DEFAULT_K1: usize = 5;
pub const DEFAULT_K2: usize = 3;
pub const DEFAULT_K3: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Retrieve by semantic rather than emotion vectors.
    pub no_eer: bool,
    /// Gold labels only.
    pub no_dsl: bool,
    /// One candidate list holding every label.
    pub no_te: bool,
}

impl Ablations {
    pub fn any(&self) -> bool {
        self.no_eer || self.no_dsl || self.no_te
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default = "default_k1")]
    pub k1: usize,
    #[serde(default = "default_k2")]
    pub k2: usize,
    /// Primary candidates; eicl only, defaults to 3.
    #[serde(default)]
    pub k3: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub ablations: Ablations,
    #[serde(default)]
    pub weight_rule: WeightRule,
    #[serde(default)]
    pub strictness: Strictness,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
}

fn default_k1() -> usize {
    DEFAULT_K1
}

fn default_k2() -> usize {
    DEFAULT_K2
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Settings after ablations are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Effective {
    pub field: VectorField,
    pub label_mode: LabelMode,
    pub k3: Option<usize>,
}

impl RunConfig {
    pub fn new(mode: Mode, provider: ProviderConfig) -> Self {
        Self {
            mode,
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            k3: None,
            alpha: DEFAULT_ALPHA,
            ablations: Ablations::default(),
            weight_rule: WeightRule::default(),
            strictness: Strictness::default(),
            provider,
            seed: 0,
            train: None,
            test: None,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(EvalError::Config("k1 and k2 must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(EvalError::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if self.mode != Mode::Eicl {
            if self.k3.is_some() {
                return Err(EvalError::Config("k3 only valid for eicl".into()));
            }
            if self.ablations.any() {
                return Err(EvalError::Config("ablation flags only valid for eicl".into()));
            }
        }
        if self.k3 == Some(0) {
            return Err(EvalError::Config("k3 must be at least 1".into()));
        }
        self.provider.validate()?;
        Ok(())
    }

    pub fn effective(&self, num_labels: usize) -> Effective {
        match self.mode {
            Mode::Zshot => Effective {
                field: VectorField::Emotion,
                label_mode: LabelMode::Hard,
                k3: None,
            },
            Mode::Icl => Effective {
                field: VectorField::Semantic,
                label_mode: LabelMode::Hard,
                k3: None,
            },
            Mode::Eicl => Effective {
                field: if self.ablations.no_eer {
                    VectorField::Semantic
                } else {
                    VectorField::Emotion
                },
                label_mode: if self.ablations.no_dsl {
                    LabelMode::Hard
                } else {
                    LabelMode::Soft
                },
                k3: Some(if self.ablations.no_te {
                    num_labels
                } else {
                    self.k3.unwrap_or(DEFAULT_K3)
                }),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Parsed,
    Unparsed,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub status: QueryStatus,
    pub prompt_hash: String,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub primary: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub template_hash: String,
    pub label_set: Vec<String>,
    pub records: Vec<QueryRecord>,
    pub metrics: Metrics,
    pub wall_clock_secs: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Header {
        config: Box<RunConfig>,
        template_hash: String,
        label_set: Vec<String>,
    },
    Query(QueryRecord),
    Summary {
        metrics: Metrics,
        wall_clock_secs: f64,
    },
}

impl RunReport {
    pub fn recompute_metrics(&self) -> Result<Metrics, EvalError> {
        let pairs: Vec<(String, Option<String>)> = self
            .records
            .iter()
            .map(|r| (r.gold.clone(), r.predicted.clone()))
            .collect();
        compute_metrics(&pairs, &self.label_set)
    }

    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &RunReport) -> bool {
        RunReport {
            wall_clock_secs: 0.0,
            ..self.clone()
        } == RunReport {
            wall_clock_secs: 0.0,
            ..other.clone()
        }
    }

    /// Header line, one line per query, summary line.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), EvalError> {
        let mut line = |l: &ReportLine| -> Result<(), EvalError> {
            let s = serde_json::to_string(l).map_err(|e| EvalError::Format(e.to_string()))?;
            writeln!(out, "{s}")?;
            Ok(())
        };
        line(&ReportLine::Header {
            config: Box::new(self.config.clone()),
            template_hash: self.template_hash.clone(),
            label_set: self.label_set.clone(),
        })?;
        for r in &self.records {
            line(&ReportLine::Query(r.clone()))?;
        }
        line(&ReportLine::Summary {
            metrics: self.metrics.clone(),
            wall_clock_secs: self.wall_clock_secs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut header = None;
        let mut summary = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReportLine =
                serde_json::from_str(&line).map_err(|e| EvalError::Format(format!("line {}: {e}", i + 1)))?;
            match parsed {
                ReportLine::Header {
                    config,
                    template_hash,
                    label_set,
                } => header = Some((*config, template_hash, label_set)),
                ReportLine::Query(r) => records.push(r),
                ReportLine::Summary {
                    metrics,
                    wall_clock_secs,
                } => summary = Some((metrics, wall_clock_secs)),
            }
        }
        let (config, template_hash, label_set) =
            header.ok_or_else(|| EvalError::Format("report has no header line".into()))?;
        let (metrics, wall_clock_secs) =
            summary.ok_or_else(|| EvalError::Format("report has no summary line".into()))?;
        Ok(Self {
            config,
            template_hash,
            label_set,
            records,
            metrics,
            wall_clock_secs,
        })
    }
}

pub fn run_experiment(
    cfg: &RunConfig,
    train: &Corpus,
    test: &Corpus,
    client: &LlmClient,
    templates: &PromptTemplates,
) -> Result<RunReport, EvalError> {
    run_inner::<std::io::Sink>(cfg, train, test, client, templates, None)
}

/// As [`run_experiment`], also appending every answered prompt to `transcript`.
pub fn run_experiment_recording<W: Write + Send>(
    cfg: &RunConfig,
    train: &Corpus,
    test: &Corpus,
    client: &LlmClient,
    templates: &PromptTemplates,
    transcript: &TranscriptWriter<W>,
) -> Result<RunReport, EvalError> {
    run_inner(cfg, train, test, client, templates, Some(transcript))
}

fn run_inner<W: Write + Send>(
    cfg: &RunConfig,
    train: &Corpus,
    test: &Corpus,
    client: &LlmClient,
    templates: &PromptTemplates,
    transcript: Option<&TranscriptWriter<W>>,
) -> Result<RunReport, EvalError> {
    cfg.validate()?;
    if train.label_set() != test.label_set() {
        return Err(EvalError::LabelSetMismatch {
            train: train.label_set().to_vec(),
            test: test.label_set().to_vec(),
        });
    }
    let labels = test.label_set();
    let eff = cfg.effective(labels.len());
    let clock = Clock::start();

    let one = |q: &SampleRecord| -> Result<QueryRecord, EvalError> {
        let examples = if cfg.mode == Mode::Zshot {
            Vec::new()
        } else {
            let neighbors = top_k_similar(q, train, cfg.k1, eff.field)?;
            assemble_examples(&neighbors, train, cfg.alpha, cfg.k2, eff.label_mode)?
        };
        let split = eff.k3.map(|k3| split_candidates(q, labels, k3)).transpose()?;
        let bundle = build_prompt(&q.text, labels, &examples, split.as_ref(), cfg.mode, templates)?;
        let prompt_hash = prompt_key(bundle.mode, &bundle.text);
        let primary = split.map(|s| s.primary);
        let mut rec = QueryRecord {
            id: q.id.clone(),
            gold: q.gold_label.clone(),
            predicted: None,
            status: QueryStatus::ProviderError,
            prompt_hash,
            response: None,
            error: None,
            primary,
        };
        match client.complete(&bundle) {
            Err(e) => rec.error = Some(e.to_string()),
            Ok(resp) => {
                if let Some(t) = transcript {
                    t.record(&bundle, &resp)?;
                }
                match parse_emotion_response_with(&resp, labels, cfg.strictness) {
                    Ok(label) => {
                        rec.predicted = Some(label);
                        rec.status = QueryStatus::Parsed;
                    }
                    Err(e) => {
                        rec.status = QueryStatus::Unparsed;
                        rec.error = Some(e.to_string());
                    }
                }
                rec.response = Some(resp);
            }
        }
        Ok(rec)
    };

    let queries = test.records();
    let workers = client.max_concurrency().min(queries.len()).max(1);
    let mut records = if workers == 1 {
        queries.iter().map(one).collect::<Result<Vec<_>, _>>()?
    } else {
        let next = AtomicUsize::new(0);
        let out = Mutex::new(Vec::with_capacity(queries.len()));
        let failure = Mutex::new(None);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= queries.len() {
                        break;
                    }
                    match one(&queries[i]) {
                        Ok(r) => out.lock().unwrap_or_else(|e| e.into_inner()).push(r),
                        Err(e) => {
                            failure.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e);
                            next.store(queries.len(), Ordering::Relaxed);
                        }
                    }
                });
            }
        });
        if let Some(e) = failure.into_inner().unwrap_or_else(|p| p.into_inner()) {
            return Err(e);
        }
        out.into_inner().unwrap_or_else(|p| p.into_inner())
    };
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let pairs: Vec<(String, Option<String>)> = records
        .iter()
        .map(|r| (r.gold.clone(), r.predicted.clone()))
        .collect();
    let metrics = compute_metrics(&pairs, labels)?;
    Ok(RunReport {
        config: cfg.clone(),
        template_hash: hex64(templates.hash()),
        label_set: labels.to_vec(),
        records,
        metrics,
        wall_clock_secs: clock.elapsed_secs(),
    })
}

/// Wall-clock timer; reads zero where no monotonic clock exists.
struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Self {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed_secs(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}
