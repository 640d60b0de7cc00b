use std::io::Write;

use serde::{Deserialize, Serialize};

use super::run::{run_experiment, Ablations, RunConfig, RunReport};
use super::EvalError;
use crate::corpus::Corpus;
use crate::decision::{Mode, PromptTemplates};
use crate::llm::LlmClient;

/// A method or ablation to run against the same data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Eicl,
    NoEer,
    NoDsl,
    NoTe,
    Icl,
    Zshot,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Eicl,
        Variant::NoEer,
        Variant::NoDsl,
        Variant::NoTe,
        Variant::Icl,
        Variant::Zshot,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Eicl => "eicl",
            Variant::NoEer => "no_eer",
            Variant::NoDsl => "no_dsl",
            Variant::NoTe => "no_te",
            Variant::Icl => "icl",
            Variant::Zshot => "zshot",
        }
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        let (mode, ablations) = match self {
            Variant::Eicl => (Mode::Eicl, Ablations::default()),
            Variant::NoEer => (Mode::Eicl, Ablations { no_eer: true, ..Default::default() }),
            Variant::NoDsl => (Mode::Eicl, Ablations { no_dsl: true, ..Default::default() }),
            Variant::NoTe => (Mode::Eicl, Ablations { no_te: true, ..Default::default() }),
            Variant::Icl => (Mode::Icl, Ablations::default()),
            Variant::Zshot => (Mode::Zshot, Ablations::default()),
        };
        c.mode = mode;
        c.ablations = ablations;
        if mode != Mode::Eicl {
            c.k3 = None;
        }
        c
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// Axes of a sweep. An empty axis keeps the base value; points are the
/// cartesian product, outermost axis first: variant, k1, k2, k3, alpha.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamGrid {
    pub variants: Vec<Variant>,
    pub k1: Vec<usize>,
    pub k2: Vec<usize>,
    pub k3: Vec<usize>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub variant: Option<Variant>,
    pub config: RunConfig,
}

impl ParamGrid {
    pub fn is_empty(&self) -> bool {
        self.variants.is_empty() && self.k1.is_empty() && self.k2.is_empty() && self.k3.is_empty() && self.alpha.is_empty()
    }

    pub fn points(&self, base: &RunConfig) -> Result<Vec<GridPoint>, EvalError> {
        if self.is_empty() {
            return Err(EvalError::EmptyGrid);
        }
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for variant in axis(&self.variants) {
            for k1 in axis(&self.k1) {
                for k2 in axis(&self.k2) {
                    for k3 in axis(&self.k3) {
                        for alpha in axis(&self.alpha) {
                            let mut c = variant.map_or_else(|| base.clone(), |v| v.apply(base));
                            if let Some(k1) = k1 {
                                c.k1 = k1;
                            }
                            if let Some(k2) = k2 {
                                c.k2 = k2;
                            }
                            if let Some(k3) = k3 {
                                if c.mode != Mode::Eicl {
                                    continue;
                                }
                                c.k3 = Some(k3);
                            }
                            if let Some(a) = alpha {
                                c.alpha = a;
                            }
                            out.push(GridPoint { variant, config: c });
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(EvalError::EmptyGrid);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub points: Vec<GridPoint>,
    pub reports: Vec<RunReport>,
}

pub fn run_ablation_suite(
    base: &RunConfig,
    grid: &ParamGrid,
    train: &Corpus,
    test: &Corpus,
    client: &LlmClient,
    templates: &PromptTemplates,
) -> Result<SuiteResult, EvalError> {
    let points = grid.points(base)?;
    let reports = points
        .iter()
        .map(|p| run_experiment(&p.config, train, test, client, templates))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteResult { points, reports })
}

impl SuiteResult {
    /// One row per grid point, grid order.
    pub fn write_summary_csv(&self, out: impl Write) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "variant", "mode", "no_eer", "no_dsl", "no_te", "k1", "k2", "k3", "alpha", "accuracy", "macro_f1",
            "total", "unparsed",
        ])?;
        for (p, r) in self.points.iter().zip(&self.reports) {
            let c = &p.config;
            let eff_k3 = c.effective(r.label_set.len()).k3;
            w.write_record([
                p.variant.map_or("base", |v| v.as_str()).to_string(),
                c.mode.to_string(),
                c.ablations.no_eer.to_string(),
                c.ablations.no_dsl.to_string(),
                c.ablations.no_te.to_string(),
                c.k1.to_string(),
                c.k2.to_string(),
                eff_k3.map_or(String::new(), |k| k.to_string()),
                c.alpha.to_string(),
                r.metrics.accuracy.to_string(),
                r.metrics.macro_f1.to_string(),
                r.metrics.total.to_string(),
                r.metrics.unparsed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-label precision, recall and F1 for one report.
pub fn write_per_label_csv(report: &RunReport, out: impl Write) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "support", "predicted", "precision", "recall", "f1"])?;
    for m in &report.metrics.per_label {
        w.write_record([
            m.label.clone(),
            m.support.to_string(),
            m.predicted.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
