use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn eicl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eicl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = eicl(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Query lines of a report, which exclude the header's wall-clock field.
fn query_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"type\":\"query\""))
        .map(str::to_string)
        .collect()
}

fn spearman_oracle(y: &[f64]) -> f64 {
    // Ranks of y against positions 1..n; y has no ties here.
    let n = y.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap());
    let mut rank = vec![0.0; n];
    for (r, &i) in idx.iter().enumerate() {
        rank[i] = (r + 1) as f64;
    }
    let d2: f64 = (0..n).map(|i| ((i + 1) as f64 - rank[i]).powi(2)).sum();
    1.0 - 6.0 * d2 / (n as f64 * ((n * n) as f64 - 1.0))
}

#[test]
fn k3_outside_eicl_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eicl(tmp.path(), &["run", "--mode", "icl", "--k3", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k3 only valid for eicl"), "{err}");
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_flags_and_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(eicl(tmp.path(), &["run", "--bogus"]).status.code(), Some(2));
    assert_eq!(eicl(tmp.path(), &[]).status.code(), Some(2));
    let out = eicl(tmp.path(), &["ingest", "--input", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    let out = eicl(tmp.path(), &["run", "--mode", "eicl", "--train", "a.jsonl", "--test", "b.jsonl"]);
    assert_eq!(out.status.code(), Some(2), "no provider is a usage error");
}

#[test]
fn synth_then_probe_analyze_gives_a_decreasing_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth", "--labels", "10", "--layers", "4", "--dim", "64", "--per-label", "50", "--sigma", "0.3", "--seed",
            "7", "--run-dir", "synth",
        ],
    );
    assert_eq!(fs::read_dir(d.join("synth/traces")).unwrap().count(), 500);
    let stdout = ok(d, &["probe-analyze", "--input", "synth", "--run-dir", "analysis"]);
    assert!(stdout.contains("spearman"));

    let csv = fs::read_to_string(d.join("analysis/rank_curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("rank,mean_probability"));
    let curve: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(curve.len(), 10);
    let total: f64 = curve.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    let rho = spearman_oracle(&curve);
    assert!(rho <= -0.9, "spearman {rho}, curve {curve:?}");

    let analysis: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("analysis/analysis.json")).unwrap()).unwrap();
    let reported = analysis["rank_curve"]["spearman"].as_f64().unwrap();
    assert!((reported - rho).abs() < 1e-12);
    let heat = fs::read_to_string(d.join("analysis/heatmap.csv")).unwrap();
    assert_eq!(heat.lines().count(), 11);
}

#[test]
fn bench_run_replays_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--bench", "--seed", "7", "--test-per-label", "8", "--run-dir", "bench"]);
    let out = ok(d, &["run", "--config", "bench/config.toml", "--mode", "eicl", "--run-dir", "live"]);
    assert!(out.contains("accuracy"));
    ok(d, &["run", "--config", "bench/config.toml", "--mode", "eicl", "--run-dir", "live2"]);
    ok(
        d,
        &[
            "run", "--mode", "eicl", "--config", "bench/config.toml", "--provider", "replay", "--transcript",
            "live/transcript.jsonl", "--run-dir", "replayed",
        ],
    );
    ok(
        d,
        &[
            "run", "--mode", "eicl", "--config", "bench/config.toml", "--provider", "replay", "--transcript",
            "live/transcript.jsonl", "--run-dir", "replayed2",
        ],
    );
    let live = query_lines(&d.join("live/report.jsonl"));
    assert_eq!(live.len(), 80);
    assert_eq!(live, query_lines(&d.join("live2/report.jsonl")));
    assert_eq!(live, query_lines(&d.join("replayed/report.jsonl")));
    assert_eq!(
        fs::read_to_string(d.join("replayed/per_label.csv")).unwrap(),
        fs::read_to_string(d.join("replayed2/per_label.csv")).unwrap()
    );
    let summary = ok(d, &["report", "live/report.jsonl", "replayed/report.jsonl"]);
    assert_eq!(summary.matches(",match").count(), 2);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--bench", "--test-per-label", "2", "--run-dir", "bench"]);
    let mut cfg = fs::read_to_string(d.join("bench/config.toml")).unwrap();
    cfg.push_str("\n[run]\nmode = \"icl\"\nk1 = 2\n");
    fs::write(d.join("bench/config.toml"), cfg).unwrap();

    ok(d, &["run", "--config", "bench/config.toml", "--run-dir", "from-file"]);
    let text = fs::read_to_string(d.join("from-file/config.toml")).unwrap();
    assert!(text.contains("mode = \"icl\"") && text.contains("k1 = 2"), "{text}");

    ok(d, &["run", "--config", "bench/config.toml", "--mode", "zshot", "--k1", "4", "--run-dir", "flags"]);
    let text = fs::read_to_string(d.join("flags/config.toml")).unwrap();
    assert!(text.contains("mode = \"zshot\"") && text.contains("k1 = 4"), "{text}");
}

#[test]
fn generated_run_directories_are_named_by_time_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--bench", "--test-per-label", "2", "--run-dir", "bench"]);
    ok(d, &["run", "--config", "bench/config.toml", "--mode", "zshot", "--runs-root", "runs"]);
    let names: Vec<String> = fs::read_dir(d.join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), 1);
    let parts: Vec<&str> = names[0].split('-').collect();
    assert_eq!(parts.len(), 3, "{names:?}");
    assert_eq!(parts[0], "run");
    assert!(parts[1].parse::<u64>().is_ok());
    assert!(parts[2].len() == 8 && parts[2].chars().all(|c| c.is_ascii_hexdigit()));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--bench", "--test-per-label", "3", "--run-dir", "bench"]);
    ok(d, &["ablate", "--config", "bench/config.toml", "--run-dir", "ab"]);
    let summary = fs::read_to_string(d.join("ab/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    let variants: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["eicl", "no_eer", "no_dsl", "no_te", "icl", "zshot"]);
    assert_eq!(fs::read_dir(d.join("ab/reports")).unwrap().count(), 12);

    let out = eicl(d, &["ablate", "--config", "bench/config.toml", "--variants", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn probe_pairs_follow_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--bench", "--test-per-label", "2", "--run-dir", "bench"]);
    for (dir, seed) in [("p1", "3"), ("p2", "3"), ("p3", "4")] {
        ok(d, &["probe-pairs", "--input", "bench/train.jsonl", "--per-label", "5", "--seed", seed, "--run-dir", dir]);
    }
    let read = |p: &str| fs::read_to_string(d.join(p).join("pairs.jsonl")).unwrap();
    assert_eq!(read("p1"), read("p2"));
    assert_ne!(read("p1"), read("p3"));
    assert_eq!(read("p1").lines().count(), 50);
}

#[test]
fn retrieve_and_align_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--bench", "--test-per-label", "2", "--run-dir", "bench"]);
    ok(d, &["retrieve", "--train", "bench/train.jsonl", "--test", "bench/test.jsonl", "--k1", "3", "--run-dir", "rt"]);
    let lines: Vec<serde_json::Value> = fs::read_to_string(d.join("rt/neighbors.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 20);
    assert!(lines.iter().all(|l| l["neighbors"].as_array().unwrap().len() == 3));

    ok(
        d,
        &[
            "align", "--input", "bench/train.jsonl", "--aux-labels", "sad,proud,rage", "--alias", "rage=angry",
            "--run-dir", "al",
        ],
    );
    let out = ok(d, &["ingest", "--input", "al/aligned.jsonl"]);
    assert!(out.contains("3 labels"), "{out}");
}
