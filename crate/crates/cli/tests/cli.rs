use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pvrp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvrp")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, dist: &str, count: &str) -> std::path::PathBuf {
    let out = dir.join(format!("{dist}.jsonl"));
    let o = pvrp(&["generate", "--n", "5", "--m", "2", "--dist", dist, "--count", count, "--seed", "7", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "cluster", "3");
    let first = fs::read(&a).unwrap();
    let b = generate(dir.path(), "cluster", "3");
    assert_eq!(first, fs::read(b).unwrap());
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 3);
}

#[test]
fn zone_with_preferences_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    let o = pvrp(&["generate", "--n", "5", "--m", "2", "--dist", "zone", "--variant", "preferences", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(pvrp(&["generate", "--bogus"]).status.code(), Some(2));
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate(dir.path(), "random", "1");
    let id: String = serde_json::from_str::<serde_json::Value>(fs::read_to_string(&inst).unwrap().lines().next().unwrap()).unwrap()["id"]
        .as_str()
        .unwrap()
        .to_string();

    // one trip per client on vehicle 0 is always feasible
    let good = dir.path().join("good.jsonl");
    fs::write(&good, format!("{{\"instance_id\":\"{id}\",\"routes\":[[0,1,0,2,0,3,0,4,0,5,0],[0]]}}\n")).unwrap();
    let o = pvrp(&["validate", "--instances", p(&inst), "--solutions", p(&good)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, format!("{{\"instance_id\":\"{id}\",\"routes\":[[0,1,0,2,0,3,0,4,0],[0]]}}\n")).unwrap();
    let o = pvrp(&["validate", "--instances", p(&inst), "--solutions", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("infeasible"));

    let short = dir.path().join("short.jsonl");
    fs::write(&short, format!("{{\"instance_id\":\"{id}\",\"routes\":[[0,1,2,3,4,5,0]]}}\n")).unwrap();
    assert_eq!(pvrp(&["validate", "--instances", p(&inst), "--solutions", p(&short)]).status.code(), Some(1));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"model": {"d_h": 8, "heads": 2, "ffn_width": 16, "layers": 1},
            "train": {"epochs": 2, "samples_per_epoch": 16, "batch_size": 8, "augmentations": 2, "n_min": 4, "n_max": 4}}"#,
    )
    .unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--config", p(&cfg), "--out-dir", p(&out)];
        args.extend_from_slice(extra);
        let o = pvrp(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.csv")).unwrap());
    // config line, header, 2 epochs x 2 batches x 3 distributions
    assert_eq!(metrics.lines().count(), 2 + 12);
    assert!(a.join("checkpoint-epoch001.json").exists());

    let ab = run("ablate", &["--no-encoder-comm", "--shared-profile", "--no-reward-balance"]);
    let ck: serde_json::Value = serde_json::from_str(&fs::read_to_string(ab.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ck["meta"]["camp"]["encoder_comm"], false);
    assert_eq!(ck["meta"]["camp"]["profile_embeddings"], false);
    assert_eq!(ck["meta"]["extra"]["train"]["reward_balance"], false);

    let inst = generate(dir.path(), "angle", "2");
    let out = dir.path().join("eval.csv");
    let pareto = dir.path().join("pareto.csv");
    let ck = a.join("checkpoint.json");
    let o = pvrp(&[
        "eval", "--instances", p(&inst), "--checkpoint", p(&ck), "--samples", "4", "--alphas", "0,0.1", "--out", p(&out), "--pareto", p(&pareto),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    // config line, header, 2 instances x 2 alphas x 5 methods
    assert_eq!(text.lines().count(), 2 + 20);
    assert!(text.lines().nth(1).unwrap().starts_with("instance_id,"));
    assert!(fs::read_to_string(&pareto).unwrap().lines().count() > 2);

    let o = pvrp(&["eval", "--instances", p(&inst), "--methods", "camp-greedy", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}
