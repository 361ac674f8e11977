mod common;

use std::path::Path;

use common::*;

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn small() -> PipelineSize {
    PipelineSize {
        train: 600,
        ood: 200,
        iterations: 60,
        members: 2,
    }
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("no_such_config.json");
    let out = dir.path().join("out");
    let (code, err) = nads(None, &["search", "--config", &s(&cfg), "--data", "d.json", "--out", &s(&out)]);
    assert_eq!(code, 2);
    assert!(err.contains("no_such_config.json"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_flags_and_unknown_ops_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(&dir.path().join("out"));
    nads_ok(None, &["synth", "--family", "two_moons", "--count", "50", "--out", &s(&dir.path().join("t.csv"))]);
    std::fs::write(dir.path().join("d.json"), r#"{"train":"t.csv"}"#).unwrap();
    let data = s(&dir.path().join("d.json"));
    let (code, _) = nads(None, &["search", "--profile", "toy", "--data", &data, "--out", &out, "--ops", "zero,warp"]);
    assert_eq!(code, 2);
    let (code, _) = nads(None, &["search", "--profile", "toy", "--data", &data, "--out", &out, "--tau", "-1"]);
    assert_eq!(code, 2);
    let (code, _) = nads(None, &["search", "--profile", "nope", "--data", &data, "--out", &out]);
    assert_eq!(code, 2);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn dry_run_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    nads_ok(None, &["synth", "--family", "two_moons", "--count", "50", "--out", &s(&dir.path().join("t.csv"))]);
    std::fs::write(dir.path().join("d.json"), r#"{"train":"t.csv","standardize":true}"#).unwrap();
    let out = dir.path().join("out");
    nads_ok(Some(1), &["search", "--profile", "toy", "--data", &s(&dir.path().join("d.json")), "--out", &s(&out), "--dry-run"]);
    let files: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, vec!["manifest.json"]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "search");
    assert_eq!(m["dry_run"], true);
    assert_eq!(m["seeds"]["root"], 1);
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "x,y\n").unwrap();
    std::fs::write(dir.path().join("d.json"), r#"{"train":"empty.csv"}"#).unwrap();
    let (code, _) = nads(None, &["search", "--profile", "toy", "--data", &s(&dir.path().join("d.json")), "--out", &s(&dir.path().join("o"))]);
    assert_eq!(code, 2);
}

#[test]
fn full_pipeline_and_artifact_errors() {
    let dir = tempfile::tempdir().unwrap();
    let eval = toy_pipeline(dir.path(), 3, &small());
    for f in ["report.json", "roc.csv", "pr.csv", "hist.csv", "manifest.json"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    for f in ["phi.json", "theta.nads", "trace.csv", "architecture.txt", "standardizer.json", "manifest.json"] {
        assert!(dir.path().join("search").join(f).exists(), "{f}");
    }
    let m = read_metrics(&eval);
    assert_eq!((m["n_in"].as_u64(), m["n_out"].as_u64()), (Some(200), Some(200)));
    let hist = std::fs::read_to_string(eval.join("hist.csv")).unwrap();
    let (mut cin, mut cout) = (0u64, 0u64);
    for line in hist.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        cin += f[2].parse::<u64>().unwrap();
        cout += f[3].parse::<u64>().unwrap();
    }
    assert_eq!((cin, cout), (200, 200));

    let p = |n: &str| s(&dir.path().join(n));
    nads_ok(None, &["generate", "--ensemble", &p("ensemble"), "--count", "5", "--out", &p("gen.csv")]);
    assert_eq!(std::fs::read_to_string(dir.path().join("gen.csv")).unwrap().lines().count(), 6);

    // Resuming a finished search is a no-op that keeps the outputs.
    let phi = std::fs::read(dir.path().join("search/phi.json")).unwrap();
    nads_ok(
        Some(3),
        &["search", "--profile", "toy", "--data", &p("data.json"), "--out", &p("search"), "--iterations", "60", "--resume"],
    );
    assert_eq!(std::fs::read(dir.path().join("search/phi.json")).unwrap(), phi);

    let (code, _) = nads(None, &["score", "--ensemble", &p("nowhere"), "--data", &p("test.csv"), "--out", &p("x.csv")]);
    assert_eq!(code, 4);
    std::fs::remove_file(dir.path().join("ensemble/member_1.nads")).unwrap();
    let (code, err) = nads(None, &["score", "--ensemble", &p("ensemble"), "--data", &p("test.csv"), "--out", &p("x.csv")]);
    assert_eq!(code, 4, "{err}");
    assert!(err.contains("member_1.nads"), "{err}");

    std::fs::write(dir.path().join("empty.csv"), "x,y\n").unwrap();
    let (code, _) = nads(None, &["eval", "--in-report", &p("in.csv"), "--out-report", &p("empty.csv"), "--out", &p("e2")]);
    assert_eq!(code, 2);
    let (code, _) = nads(None, &["eval", "--in-report", &p("in.csv"), "--out-report", &p("absent.csv"), "--out", &p("e2")]);
    assert_eq!(code, 4);
}

#[test]
fn single_member_scores_are_plain_log_likelihoods() {
    let dir = tempfile::tempdir().unwrap();
    let size = PipelineSize {
        members: 1,
        ..small()
    };
    toy_pipeline(dir.path(), 4, &size);
    let text = std::fs::read_to_string(dir.path().join("in.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (m, v, w) = (col("mean"), col("variance"), col("waic"));
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(f[v], 0.0);
        assert_eq!(f[w], f[m]);
    }
}

#[test]
fn separated_reports_give_perfect_auroc() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, scores: &[f64]| {
        let mut t = String::from("sample_id,mean,variance,waic\n");
        for (i, v) in scores.iter().enumerate() {
            t.push_str(&format!("{i},{v},0,{v}\n"));
        }
        std::fs::write(dir.path().join(name), t).unwrap();
    };
    write("a.csv", &[5.0, 6.0, 7.0, 8.0]);
    write("b.csv", &[-1.0, 0.0, 1.0]);
    let p = |n: &str| s(&dir.path().join(n));
    nads_ok(None, &["eval", "--in-report", &p("a.csv"), "--out-report", &p("b.csv"), "--out", &p("e")]);
    let m = read_metrics(&dir.path().join("e"));
    assert_eq!((m["auroc"].as_f64(), m["aupr"].as_f64(), m["fpr_at_95_tpr"].as_f64()), (Some(1.0), Some(1.0), Some(0.0)));
}

#[test]
fn reruns_reproduce_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    toy_pipeline(a.path(), 11, &small());
    toy_pipeline(b.path(), 11, &small());
    for f in ["search/phi.json", "search/theta.nads", "ensemble/member_0.nads", "ensemble/ensemble.json", "in.csv", "out.csv", "eval/report.json", "eval/roc.csv", "eval/pr.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let hashes = |d: &Path| {
        let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ensemble/manifest.json")).unwrap()).unwrap();
        m["artifacts"].clone()
    };
    assert_eq!(hashes(a.path()), hashes(b.path()));
}
