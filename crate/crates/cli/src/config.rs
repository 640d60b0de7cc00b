use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use eicl::decision::{Mode, Strictness};
use eicl::eval::{Ablations, ParamGrid, RunConfig};
use eicl::llm::{HttpConfig, PrototypeSimConfig, ProviderConfig, ProviderKind};
use eicl::softlabel::WeightRule;

use crate::args::{ExperimentArgs, ModeArg, ProviderArg, ProviderArgs, StrictnessArg, WeightRuleArg};
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub runs_root: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub data: DataSection,
    pub run: RunSection,
    pub provider: Option<ProviderConfig>,
    pub grid: Option<ParamGrid>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Option<Mode>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub k3: Option<usize>,
    pub alpha: Option<f64>,
    pub ablations: Ablations,
    pub weight_rule: Option<WeightRule>,
    pub strictness: Option<Strictness>,
}

impl FileConfig {
    /// Parses `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.runs_root, &mut cfg.templates, &mut cfg.data.train, &mut cfg.data.test]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(pc) = &mut cfg.provider {
            match &mut pc.kind {
                ProviderKind::Replay { transcript } => fix(transcript),
                ProviderKind::PrototypeSim(s) => {
                    fix(&mut s.bank);
                    if let Some(l) = &mut s.lexicon {
                        fix(l);
                    }
                }
                ProviderKind::Http(_) => {}
            }
        }
        Ok(cfg)
    }
}

pub fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::Zshot => Mode::Zshot,
        ModeArg::Icl => Mode::Icl,
        ModeArg::Eicl => Mode::Eicl,
    }
}

fn same_kind(arg: ProviderArg, kind: &ProviderKind) -> bool {
    matches!(
        (arg, kind),
        (ProviderArg::Http, ProviderKind::Http(_))
            | (ProviderArg::Replay, ProviderKind::Replay { .. })
            | (ProviderArg::PrototypeSim, ProviderKind::PrototypeSim(_))
    )
}

fn fresh_kind(arg: ProviderArg, a: &ProviderArgs) -> Result<ProviderKind, CliError> {
    Ok(match arg {
        ProviderArg::Replay => ProviderKind::Replay {
            transcript: a
                .transcript
                .clone()
                .ok_or_else(|| CliError::Usage("the replay provider needs --transcript".into()))?,
        },
        ProviderArg::PrototypeSim => ProviderKind::PrototypeSim(PrototypeSimConfig {
            bank: a
                .bank
                .clone()
                .ok_or_else(|| CliError::Usage("the prototype-sim provider needs --bank".into()))?,
            lexicon: a.lexicon.clone(),
            biases: Default::default(),
            temperature: 0.1,
            example_weight: 1.0,
            fallback_margin: None,
        }),
        ProviderArg::Http => {
            let endpoint = a
                .endpoint
                .clone()
                .ok_or_else(|| CliError::Usage("the http provider needs --endpoint".into()))?;
            let model = a
                .model
                .clone()
                .ok_or_else(|| CliError::Usage("the http provider needs --model".into()))?;
            let h: HttpConfig = serde_json::from_value(serde_json::json!({"endpoint": endpoint, "model": model}))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            ProviderKind::Http(h)
        }
    })
}

/// Config-file provider with flag overrides; a `--provider` of a different
/// kind replaces the file's provider.
pub fn resolve_provider(file: Option<ProviderConfig>, a: &ProviderArgs) -> Result<ProviderConfig, CliError> {
    let inferred = a.provider.or(if a.transcript.is_some() {
        Some(ProviderArg::Replay)
    } else if a.bank.is_some() {
        Some(ProviderArg::PrototypeSim)
    } else if a.endpoint.is_some() {
        Some(ProviderArg::Http)
    } else {
        None
    });
    let mut cfg = match (inferred, file) {
        (None, Some(f)) => f,
        (Some(k), Some(f)) if same_kind(k, &f.kind) => f,
        (Some(k), f) => {
            let mut c = ProviderConfig::new(fresh_kind(k, a)?);
            if let Some(f) = f {
                c.max_concurrency = f.max_concurrency;
                c.retry = f.retry;
            }
            c
        }
        (None, None) => {
            return Err(CliError::Usage(
                "no provider configured; pass --provider or add a [provider] section".into(),
            ))
        }
    };
    match &mut cfg.kind {
        ProviderKind::Replay { transcript } => {
            if let Some(t) = &a.transcript {
                *transcript = t.clone();
            }
        }
        ProviderKind::PrototypeSim(s) => {
            if let Some(b) = &a.bank {
                s.bank = b.clone();
            }
            if let Some(l) = &a.lexicon {
                s.lexicon = Some(l.clone());
            }
        }
        ProviderKind::Http(h) => {
            if let Some(e) = &a.endpoint {
                h.endpoint = e.clone();
            }
            if let Some(m) = &a.model {
                h.model = m.clone();
            }
            if let Some(k) = &a.api_key_env {
                h.api_key_env = Some(k.clone());
            }
        }
    }
    if let Some(m) = a.max_concurrency {
        cfg.max_concurrency = m;
    }
    Ok(cfg)
}

/// Merges file and flags into a validated run configuration.
pub fn build_run_config(
    file: &FileConfig,
    exp: &ExperimentArgs,
    mode: Option<ModeArg>,
    k3: Option<usize>,
    flags: Ablations,
    seed: u64,
) -> Result<RunConfig, CliError> {
    let mode = mode.map(mode_of).or(file.run.mode).unwrap_or(Mode::Eicl);
    let placeholder = ProviderConfig::new(ProviderKind::Replay {
        transcript: PathBuf::new(),
    });
    let mut c = RunConfig::new(mode, placeholder);
    let r = &file.run;
    c.k1 = exp.k1.or(r.k1).unwrap_or(c.k1);
    c.k2 = exp.k2.or(r.k2).unwrap_or(c.k2);
    c.alpha = exp.alpha.or(r.alpha).unwrap_or(c.alpha);
    // A k3 from the file only applies when the mode is eicl; one on the
    // command line is always taken literally.
    c.k3 = k3.or(if mode == Mode::Eicl { r.k3 } else { None });
    c.ablations = if mode == Mode::Eicl {
        Ablations {
            no_eer: flags.no_eer || r.ablations.no_eer,
            no_dsl: flags.no_dsl || r.ablations.no_dsl,
            no_te: flags.no_te || r.ablations.no_te,
        }
    } else {
        flags
    };
    c.weight_rule = exp
        .weight_rule
        .map(|w| match w {
            WeightRuleArg::Normalized => WeightRule::Normalized,
            WeightRuleArg::Literal => WeightRule::Literal,
        })
        .or(r.weight_rule)
        .unwrap_or_default();
    c.strictness = exp
        .strictness
        .map(|s| match s {
            StrictnessArg::Lenient => Strictness::Lenient,
            StrictnessArg::Strict => Strictness::Strict,
        })
        .or(r.strictness)
        .unwrap_or_default();
    c.seed = seed;
    c.validate().map_err(|e| CliError::Usage(strip_prefix(e.to_string())))?;

    c.train = exp.train.clone().or_else(|| file.data.train.clone());
    c.test = exp.test.clone().or_else(|| file.data.test.clone());
    if c.train.is_none() || c.test.is_none() {
        return Err(CliError::Usage("need --train and --test (or a [data] section)".into()));
    }
    c.provider = resolve_provider(file.provider.clone(), &exp.provider)?;
    c.validate().map_err(|e| CliError::Usage(strip_prefix(e.to_string())))?;
    Ok(c)
}

fn strip_prefix(s: String) -> String {
    s.strip_prefix("invalid configuration: ").map(str::to_string).unwrap_or(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> FileConfig {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, text).unwrap();
        FileConfig::load(&p).unwrap()
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[data]\ntrain = \"t.jsonl\"\n[provider]\nkind = \"replay\"\ntranscript = \"r.jsonl\"\n").unwrap();
        let f = FileConfig::load(&p).unwrap();
        assert_eq!(f.data.train.unwrap(), dir.path().join("t.jsonl"));
        match f.provider.unwrap().kind {
            ProviderKind::Replay { transcript } => assert_eq!(transcript, dir.path().join("r.jsonl")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "[run]\nkk = 3\n").unwrap();
        assert!(matches!(FileConfig::load(&p), Err(CliError::Usage(_))));
    }

    #[test]
    fn provider_flags_override_matching_kind() {
        let f = file("[provider]\nkind = \"replay\"\ntranscript = \"a.jsonl\"\nmax_concurrency = 3\n");
        let args = ProviderArgs {
            transcript: Some("b.jsonl".into()),
            ..Default::default()
        };
        let p = resolve_provider(f.provider, &args).unwrap();
        assert!(matches!(p.kind, ProviderKind::Replay { ref transcript } if transcript == Path::new("b.jsonl")));
        assert_eq!(p.max_concurrency, 3);
    }

    #[test]
    fn different_kind_replaces_the_file_provider() {
        let f = file("[provider]\nkind = \"replay\"\ntranscript = \"a.jsonl\"\n");
        let args = ProviderArgs {
            provider: Some(ProviderArg::Http),
            endpoint: Some("http://localhost:1/v1".into()),
            ..Default::default()
        };
        assert!(matches!(resolve_provider(f.provider.clone(), &args), Err(CliError::Usage(_))));
        let args = ProviderArgs {
            model: Some("m".into()),
            ..args
        };
        let p = resolve_provider(f.provider, &args).unwrap();
        assert!(matches!(p.kind, ProviderKind::Http(ref h) if h.model == "m"));
    }

    #[test]
    fn file_k3_is_ignored_outside_eicl_but_flag_k3_is_not() {
        let f = file(
            "[data]\ntrain = \"a\"\ntest = \"b\"\n[run]\nk3 = 2\n[provider]\nkind = \"replay\"\ntranscript = \"t\"\n",
        );
        let exp = ExperimentArgs::default();
        let c = build_run_config(&f, &exp, Some(ModeArg::Icl), None, Ablations::default(), 1).unwrap();
        assert_eq!(c.k3, None);
        let e = build_run_config(&f, &exp, Some(ModeArg::Icl), Some(2), Ablations::default(), 1);
        assert!(matches!(e, Err(CliError::Usage(m)) if m == "k3 only valid for eicl"));
        let c = build_run_config(&f, &exp, None, None, Ablations::default(), 1).unwrap();
        assert_eq!((c.mode, c.k3, c.seed), (Mode::Eicl, Some(2), 1));
    }
}
