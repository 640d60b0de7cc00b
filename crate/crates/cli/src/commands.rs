use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use eicl::bench::{generate_bench, BenchConfig};
use eicl::corpus::{align_labels_with, ingest_jsonl, AlignOptions, Corpus, Split};
use eicl::decision::PromptTemplates;
use eicl::eval::{
    run_ablation_suite, run_experiment, run_experiment_recording, write_per_label_csv, Ablations, RunConfig,
    RunReport, Variant,
};
use eicl::llm::{LlmClient, ProviderKind, TranscriptWriter};
use eicl::probe::{
    build_prompt_pairs, category_similarity_matrix, extract_category_representation, rank_probability_curve,
    read_pairs_jsonl, read_trace, render_probe_prompt, synth_decisions, synth_generate, synth_queries, write_pairs_jsonl,
    write_trace, CategoryRepresentation, HiddenTrace, ProbeQuery, PromptPair, SimilarityScale, SynthConfig,
};
use eicl::retrieval::{top_k_similar, VectorField};
use eicl::tensor::{read_tensor, write_tensor_file, Tensor};

use crate::args::*;
use crate::config::{build_run_config, FileConfig};
use crate::rundir;
use crate::CliError;

struct Ctx<'a> {
    cli: &'a Cli,
    file: FileConfig,
    seed: u64,
}

impl Ctx<'_> {
    fn run_dir(&self, fingerprint: &impl Serialize) -> Result<PathBuf, CliError> {
        let root = self.cli.runs_root.as_ref().or(self.file.runs_root.as_ref());
        let dir = rundir::prepare(self.cli.run_dir.as_ref(), root, fingerprint)?;
        info!("writing to {}", dir.display());
        Ok(dir)
    }

    fn templates(&self, flag: Option<&PathBuf>) -> Result<PromptTemplates, CliError> {
        match flag.or(self.file.templates.as_ref()) {
            Some(dir) => Ok(PromptTemplates::from_dir(dir)?),
            None => Ok(PromptTemplates::default()),
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let ctx = Ctx { cli, file, seed };
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Align(a) => align(&ctx, a),
        Command::Retrieve(a) => retrieve(&ctx, a),
        Command::Run(a) => run(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
        Command::ProbePairs(a) => probe_pairs(&ctx, a),
        Command::ProbeAnalyze(a) => probe_analyze(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Report(a) => report(a),
    }
}

fn existing(p: &Path) -> Result<&Path, CliError> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::Domain(format!("{}: no such file or directory", p.display())))
    }
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn print_summary(c: &Corpus) {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in c.records() {
        *counts.entry(r.gold_label.as_str()).or_default() += 1;
    }
    let semantic = c
        .records()
        .first()
        .and_then(|r| r.semantic_vector.as_ref())
        .map_or(0, Vec::len);
    println!(
        "{} records, {} labels, d_emo {}, semantic dim {}",
        c.len(),
        c.label_set().len(),
        c.d_emo(),
        semantic
    );
    for l in c.label_set() {
        println!("  {l}: {}", counts.get(l.as_str()).copied().unwrap_or(0));
    }
}

fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    let expected = (!a.labels.is_empty()).then_some(a.labels.as_slice());
    let c = ingest_jsonl(existing(&a.input)?, split_of(a.split), expected)?;
    print_summary(&c);
    Ok(())
}

fn align(ctx: &Ctx, a: &AlignArgs) -> Result<(), CliError> {
    let mut opts = AlignOptions {
        renormalize: !a.no_renormalize,
        ..Default::default()
    };
    for alias in &a.aliases {
        let (from, to) = alias
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("alias {alias:?} is not of the form from=to")))?;
        opts.aliases.insert(from.trim().to_string(), to.trim().to_string());
    }
    let corpus = ingest_jsonl(existing(&a.input)?, split_of(a.split), None)?;
    let aligned = align_labels_with(&corpus, &a.aux_labels, &opts)?;
    let dir = ctx.run_dir(&("align", &a.input, &a.aux_labels, &opts.aliases, opts.renormalize))?;
    let out = dir.join("aligned.jsonl");
    aligned.write_jsonl(&out)?;
    print_summary(&aligned);
    println!("aligned corpus: {}", out.display());
    Ok(())
}

fn load_pair(train: &Path, test: &Path) -> Result<(Corpus, Corpus), CliError> {
    let train = ingest_jsonl(existing(train)?, Split::Train, None)?;
    let test = ingest_jsonl(existing(test)?, Split::Test, Some(train.label_set()))?;
    Ok((train, test))
}

#[derive(Serialize)]
struct NeighborLine<'a> {
    query_id: &'a str,
    neighbors: Vec<eicl::retrieval::ScoredNeighbor>,
}

fn retrieve(ctx: &Ctx, a: &RetrieveArgs) -> Result<(), CliError> {
    let train = a.train.clone().or_else(|| ctx.file.data.train.clone());
    let test = a.test.clone().or_else(|| ctx.file.data.test.clone());
    let (Some(train), Some(test)) = (train, test) else {
        return Err(CliError::Usage("need --train and --test (or a [data] section)".into()));
    };
    let k1 = a.k1.or(ctx.file.run.k1).unwrap_or(eicl::eval::DEFAULT_K1);
    if k1 == 0 {
        return Err(CliError::Usage("k1 must be at least 1".into()));
    }
    let field = match a.field {
        FieldArg::Emotion => VectorField::Emotion,
        FieldArg::Semantic => VectorField::Semantic,
    };
    let (train_c, test_c) = load_pair(&train, &test)?;
    let dir = ctx.run_dir(&("retrieve", &train, &test, k1, field))?;
    let out = dir.join("neighbors.jsonl");
    let mut w = BufWriter::new(fs::File::create(&out)?);
    for q in test_c.records() {
        let line = NeighborLine {
            query_id: &q.id,
            neighbors: top_k_similar(q, &train_c, k1, field)?,
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    w.flush()?;
    println!("{} queries, k1 {k1}, {field} vectors: {}", test_c.len(), out.display());
    Ok(())
}

fn save_config(dir: &Path, cfg: &impl Serialize) -> Result<(), CliError> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Domain(e.to_string()))?;
    fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

fn corpora(cfg: &RunConfig) -> Result<(Corpus, Corpus), CliError> {
    let (Some(train), Some(test)) = (&cfg.train, &cfg.test) else {
        return Err(CliError::Usage("need --train and --test".into()));
    };
    load_pair(train, test)
}

fn run(ctx: &Ctx, a: &RunArgs) -> Result<(), CliError> {
    let flags = Ablations {
        no_eer: a.no_eer,
        no_dsl: a.no_dsl,
        no_te: a.no_te,
    };
    let cfg = build_run_config(&ctx.file, &a.exp, a.mode, a.k3, flags, ctx.seed)?;
    let templates = ctx.templates(a.exp.templates.as_ref())?;
    let (train, test) = corpora(&cfg)?;
    let client = LlmClient::from_config(&cfg.provider)?;
    let dir = ctx.run_dir(&(&cfg, templates.hash()))?;
    save_config(&dir, &cfg)?;

    let report = if matches!(cfg.provider.kind, ProviderKind::Replay { .. }) {
        run_experiment(&cfg, &train, &test, &client, &templates)?
    } else {
        let file = fs::File::create(dir.join("transcript.jsonl"))?;
        let writer = TranscriptWriter::new(BufWriter::new(file));
        let r = run_experiment_recording(&cfg, &train, &test, &client, &templates, &writer)?;
        writer.into_inner().flush()?;
        r
    };
    report.save(dir.join("report.jsonl"))?;
    write_per_label_csv(&report, fs::File::create(dir.join("per_label.csv"))?)?;
    let m = &report.metrics;
    println!(
        "{}: accuracy {:.4}, macro-F1 {:.4}, {} queries, {} unparsed",
        cfg.mode, m.accuracy, m.macro_f1, m.total, m.unparsed
    );
    println!("run directory: {}", dir.display());
    Ok(())
}

fn ablate(ctx: &Ctx, a: &AblateArgs) -> Result<(), CliError> {
    let base = build_run_config(&ctx.file, &a.exp, a.mode, a.k3, Ablations::default(), ctx.seed)?;
    let mut grid = ctx.file.grid.clone().unwrap_or_default();
    if !a.variants.is_empty() {
        grid.variants = a
            .variants
            .iter()
            .map(|v| v.parse::<Variant>().map_err(CliError::Usage))
            .collect::<Result<_, _>>()?;
    }
    for (axis, flag) in [(&mut grid.k1, &a.k1_values), (&mut grid.k2, &a.k2_values), (&mut grid.k3, &a.k3_values)] {
        if !flag.is_empty() {
            *axis = flag.clone();
        }
    }
    if !a.alpha_values.is_empty() {
        grid.alpha = a.alpha_values.clone();
    }
    if grid.is_empty() {
        grid.variants = Variant::ALL.to_vec();
    }
    let points = grid.points(&base).map_err(|e| CliError::Usage(e.to_string()))?;
    for p in &points {
        p.config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    }

    let templates = ctx.templates(a.exp.templates.as_ref())?;
    let (train, test) = corpora(&base)?;
    let client = LlmClient::from_config(&base.provider)?;
    let dir = ctx.run_dir(&(&base, &grid, templates.hash()))?;
    save_config(&dir, &base)?;
    let suite = run_ablation_suite(&base, &grid, &train, &test, &client, &templates)?;
    let reports = dir.join("reports");
    fs::create_dir_all(&reports)?;
    for (i, (p, r)) in suite.points.iter().zip(&suite.reports).enumerate() {
        let name = format!("{i:03}-{}", p.variant.map_or("base", |v| v.as_str()));
        r.save(reports.join(format!("{name}.jsonl")))?;
        write_per_label_csv(r, fs::File::create(reports.join(format!("{name}.per_label.csv")))?)?;
    }
    suite.write_summary_csv(fs::File::create(dir.join("summary.csv"))?)?;
    suite.write_summary_csv(io::stdout().lock())?;
    println!("run directory: {}", dir.display());
    Ok(())
}

fn probe_pairs(ctx: &Ctx, a: &ProbePairsArgs) -> Result<(), CliError> {
    let corpus = ingest_jsonl(existing(&a.input)?, split_of(a.split), None)?;
    let labels: Vec<String> = if a.labels.is_empty() {
        corpus.label_set().to_vec()
    } else {
        a.labels.clone()
    };
    let mut pairs = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        // One stream per label so adding a label leaves the others unchanged.
        pairs.extend(build_prompt_pairs(&corpus, l, a.per_label, ctx.seed.wrapping_add(i as u64))?);
    }
    let dir = ctx.run_dir(&("probe-pairs", &a.input, &labels, a.per_label, ctx.seed))?;
    let out = dir.join("pairs.jsonl");
    write_pairs_jsonl(&out, &pairs)?;
    println!("{} pairs over {} labels: {}", pairs.len(), labels.len(), out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DecisionLine {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold: Option<String>,
    probabilities: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Analysis {
    labels: Vec<String>,
    scale: &'static str,
    heatmap: Vec<Vec<f64>>,
    rank_curve: Option<eicl::probe::RankCurve>,
}

fn read_decisions(path: &Path) -> Result<HashMap<String, BTreeMap<String, f64>>, CliError> {
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DecisionLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Domain(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.insert(d.id, d.probabilities);
    }
    Ok(out)
}

fn query_states(t: &Tensor) -> Result<Vec<(String, Vec<Vec<f64>>)>, CliError> {
    if t.shape.len() != 3 {
        return Err(CliError::Domain(format!("queries must be [N, L, d], got {:?}", t.shape)));
    }
    let names = t
        .names
        .clone()
        .ok_or_else(|| CliError::Domain("query tensor has no row names".into()))?;
    let (l, d) = (t.shape[1], t.shape[2]);
    Ok(names
        .into_iter()
        .zip(t.values.chunks(l * d))
        .map(|(id, block)| {
            let layers = block
                .chunks(d)
                .map(|row| row.iter().map(|&x| f64::from(x)).collect())
                .collect();
            (id, layers)
        })
        .collect())
}

fn write_matrix_csv(path: &Path, labels: &[String], m: &[Vec<f64>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("label").chain(labels.iter().map(String::as_str)))?;
    for (l, row) in labels.iter().zip(m) {
        w.write_record(std::iter::once(l.clone()).chain(row.iter().map(|x| x.to_string())))?;
    }
    w.flush()?;
    Ok(())
}

fn probe_analyze(ctx: &Ctx, a: &ProbeAnalyzeArgs) -> Result<(), CliError> {
    let pick = |flag: &Option<PathBuf>, name: &str| flag.clone().or_else(|| a.input.as_ref().map(|d| d.join(name)));
    let pairs_path =
        pick(&a.pairs, "pairs.jsonl").ok_or_else(|| CliError::Usage("need --input or --pairs".into()))?;
    let traces_dir = pick(&a.traces, "traces").ok_or_else(|| CliError::Usage("need --input or --traces".into()))?;
    let queries = pick(&a.queries, "queries.evec").filter(|p| a.queries.is_some() || p.exists());
    let decisions = pick(&a.decisions, "decisions.jsonl").filter(|p| a.decisions.is_some() || p.exists());
    if queries.is_some() != decisions.is_some() {
        return Err(CliError::Usage("queries and decisions go together".into()));
    }

    let pairs = read_pairs_jsonl(existing(&pairs_path)?)?;
    let mut labels: Vec<String> = Vec::new();
    let mut by_label: HashMap<String, Vec<HiddenTrace>> = HashMap::new();
    for p in &pairs {
        if !labels.contains(&p.label) {
            labels.push(p.label.clone());
        }
        let t = read_trace(traces_dir.join(format!("{}.evec", p.sample_id)))?;
        by_label.entry(p.label.clone()).or_default().push(t);
    }
    let reps: Vec<CategoryRepresentation> = labels
        .iter()
        .map(|l| extract_category_representation(l, &by_label[l]))
        .collect::<Result<_, _>>()?;
    let (scale, scale_name) = match a.scale {
        ScaleArg::Affine => (SimilarityScale::Affine, "affine"),
        ScaleArg::Minmax => (SimilarityScale::MinMax, "minmax"),
    };
    let heatmap = category_similarity_matrix(&reps, scale)?;

    let curve = match (&queries, &decisions) {
        (Some(q), Some(d)) => {
            let states = query_states(&read_tensor(q)?)?;
            let probs = read_decisions(d)?;
            let mut probe = Vec::with_capacity(states.len());
            for (id, trace) in states {
                let p = probs
                    .get(&id)
                    .ok_or_else(|| CliError::Domain(format!("no decision for query {id:?}")))?;
                let probabilities = labels.iter().map(|l| p.get(l).copied().unwrap_or(0.0)).collect();
                probe.push(ProbeQuery { trace, probabilities });
            }
            Some(rank_probability_curve(&probe, &reps)?)
        }
        _ => None,
    };

    let dir = ctx.run_dir(&("probe-analyze", &pairs_path, &traces_dir, &queries, &decisions, scale_name))?;
    let layers = reps[0].layers();
    let dim = reps[0].dim();
    let values = reps
        .iter()
        .flat_map(|r| r.per_layer.iter().flatten().map(|&x| x as f32))
        .collect();
    write_tensor_file(
        dir.join("representations.evec"),
        &Tensor::new(vec![reps.len(), layers, dim], values)?.with_names(labels.clone()),
    )?;
    write_matrix_csv(&dir.join("heatmap.csv"), &labels, &heatmap)?;
    if let Some(c) = &curve {
        let mut w = csv::Writer::from_path(dir.join("rank_curve.csv"))?;
        w.write_record(["rank", "mean_probability"])?;
        for (i, p) in c.mean_probability.iter().enumerate() {
            w.write_record([(i + 1).to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    let analysis = Analysis {
        labels,
        scale: scale_name,
        heatmap,
        rank_curve: curve.clone(),
    };
    fs::write(dir.join("analysis.json"), serde_json::to_string_pretty(&analysis)?)?;

    println!("{} labels, {} traces, {layers} layers, d {dim}", reps.len(), pairs.len());
    match curve {
        Some(c) => match c.spearman {
            Some(rho) => println!("rank-probability spearman {rho:.4} over {} queries", c.queries),
            None => println!("rank-probability curve is flat over {} queries", c.queries),
        },
        None => println!("no queries given; heatmap only"),
    }
    println!("run directory: {}", dir.display());
    Ok(())
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<(), CliError> {
    if a.bench {
        return synth_bench(ctx, a);
    }
    let mut cfg = SynthConfig::new(a.labels, a.layers, a.dim, a.per_label, a.sigma, ctx.seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let query_sigma = a.query_sigma.unwrap_or(a.sigma);
    if !(query_sigma >= 0.0) || !(a.temperature > 0.0) || a.queries == 0 {
        return Err(CliError::Usage("need query sigma >= 0, temperature > 0 and at least one query".into()));
    }
    let world = synth_generate(&cfg)?;
    cfg = world.config.clone();
    let dir = ctx.run_dir(&("synth", &cfg, a.queries, query_sigma, a.temperature))?;

    let traces_dir = dir.join("traces");
    fs::create_dir_all(&traces_dir)?;
    let mut pairs = Vec::new();
    for (c, traces) in world.traces.iter().enumerate() {
        let other = &world.labels[(c + 1) % world.labels.len()];
        for t in traces {
            let text = format!("synthetic sample {}", t.pair_id);
            pairs.push(PromptPair {
                sample_id: t.pair_id.clone(),
                label: world.labels[c].clone(),
                negative_label: other.clone(),
                positive_text: render_probe_prompt(&world.labels[c], &text),
                negative_text: render_probe_prompt(other, &text),
            });
            write_trace(traces_dir.join(format!("{}.evec", t.pair_id)), t)?;
        }
    }
    write_pairs_jsonl(dir.join("pairs.jsonl"), &pairs)?;
    write_tensor_file(dir.join("bank.evec"), &world.bank.to_tensor()?)?;

    let queries = synth_queries(&world, a.queries, query_sigma, ctx.seed.wrapping_add(1))?;
    let decisions = synth_decisions(&world.bank, &queries, a.temperature)?;
    let ids: Vec<String> = (0..queries.len()).map(|i| format!("query-{i:05}")).collect();
    let values = queries
        .iter()
        .flat_map(|q| q.trace.iter().flatten().map(|&x| x as f32))
        .collect();
    write_tensor_file(
        dir.join("queries.evec"),
        &Tensor::new(vec![queries.len(), cfg.layers, cfg.dim], values)?.with_names(ids.clone()),
    )?;
    let mut w = BufWriter::new(fs::File::create(dir.join("decisions.jsonl"))?);
    for ((id, q), d) in ids.iter().zip(&queries).zip(&decisions) {
        let line = DecisionLine {
            id: id.clone(),
            gold: Some(world.labels[q.label].clone()),
            probabilities: world.labels.iter().cloned().zip(d.probabilities.iter().copied()).collect(),
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    w.flush()?;
    fs::write(dir.join("synth.json"), serde_json::to_string_pretty(&cfg)?)?;
    println!(
        "{} labels x {} pairs, {} layers, d {}, {} queries",
        cfg.num_labels, cfg.per_label, cfg.layers, cfg.dim, a.queries
    );
    println!("run directory: {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchRunFile {
    seed: u64,
    data: BenchData,
    provider: eicl::llm::ProviderConfig,
}

#[derive(Serialize)]
struct BenchData {
    train: PathBuf,
    test: PathBuf,
}

fn synth_bench(ctx: &Ctx, a: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = BenchConfig {
        seed: ctx.seed,
        ..Default::default()
    };
    if let Some(n) = a.train_per_label {
        cfg.train_per_label = n;
    }
    if let Some(n) = a.test_per_label {
        cfg.test_per_label = n;
    }
    if cfg.train_per_label == 0 || cfg.test_per_label == 0 {
        return Err(CliError::Usage("per-label counts must be positive".into()));
    }
    let world = generate_bench(&cfg);
    let dir = ctx.run_dir(&("synth-bench", &cfg))?;
    let mut sim = world.write_to(&dir)?;
    // Paths in the generated config are relative to the config file.
    sim.bank = PathBuf::from("bank.evec");
    sim.lexicon = Some(PathBuf::from("lexicon.evec"));
    let file = BenchRunFile {
        seed: ctx.seed,
        data: BenchData {
            train: "train.jsonl".into(),
            test: "test.jsonl".into(),
        },
        provider: eicl::llm::ProviderConfig::new(ProviderKind::PrototypeSim(sim)),
    };
    let text = toml::to_string(&file).map_err(|e| CliError::Domain(e.to_string()))?;
    fs::write(dir.join("config.toml"), text)?;
    fs::write(dir.join("bench.json"), serde_json::to_string_pretty(&cfg)?)?;
    println!(
        "{} train and {} test records over {} labels",
        world.train.len(),
        world.test.len(),
        world.labels.len()
    );
    println!("config: {}", dir.join("config.toml").display());
    println!("run directory: {}", dir.display());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    out.write_record(["report", "mode", "accuracy", "macro_f1", "total", "unparsed", "recomputed"])?;
    let mut loaded = Vec::new();
    for path in &a.reports {
        let r = RunReport::load(existing(path)?)?;
        let again = r.recompute_metrics()?;
        let ok = again == r.metrics;
        out.write_record([
            path.display().to_string(),
            r.config.mode.to_string(),
            r.metrics.accuracy.to_string(),
            r.metrics.macro_f1.to_string(),
            r.metrics.total.to_string(),
            r.metrics.unparsed.to_string(),
            if ok { "match" } else { "MISMATCH" }.to_string(),
        ])?;
        loaded.push((path, r, ok));
    }
    out.flush()?;
    drop(out);
    if a.per_label {
        for (path, r, _) in &loaded {
            println!("\n# {}", path.display());
            write_per_label_csv(r, io::stdout().lock())?;
        }
    }
    if let Some((path, _, _)) = loaded.iter().find(|(_, _, ok)| !ok) {
        return Err(CliError::Domain(format!(
            "{}: stored metrics differ from those recomputed from its records",
            path.display()
        )));
    }
    Ok(())
}
