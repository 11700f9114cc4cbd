use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn compdef(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_compdef"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = compdef(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_config(dir: &Path, out: &Path) -> PathBuf {
    let cfg = dir.join("cfg.json");
    let text = format!(
        r#"{{
  "models": [{{"family": "resnet_mini", "scale": 1, "seed": 0}}],
  "trial_grid": [0, 4],
  "seeds": [3],
  "corpus": {{"families": ["resnet_mini"], "scales": [1], "seeds": [0, 1]}},
  "out_dir": "{}"
}}"#,
        out.display()
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn gen_is_deterministic_and_valid() {
    let a = ok(&[
        "gen",
        "--family",
        "densenet_mini",
        "--scale",
        "1",
        "--seed",
        "4",
    ])
    .stdout;
    let b = ok(&[
        "gen",
        "--family",
        "densenet_mini",
        "--scale",
        "1",
        "--seed",
        "4",
    ])
    .stdout;
    assert_eq!(a, b);
    let g = compdef::ir::load_model(&a).unwrap();
    assert_eq!(g.name(), "densenet_mini_s1_4");
}

#[test]
fn compile_zero_trials_is_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let sched = dir.path().join("s.json");
    ok(&[
        "gen",
        "--family",
        "yolo_mini",
        "--scale",
        "1",
        "--out",
        p(&model),
    ]);
    ok(&[
        "compile",
        "--model",
        p(&model),
        "--trials",
        "0",
        "--out",
        p(&sched),
    ]);
    let g = compdef::ir::load_model(&std::fs::read(&model).unwrap()).unwrap();
    let got =
        compdef::schedule::ScheduleAssignment::from_json(&std::fs::read(&sched).unwrap()).unwrap();
    assert_eq!(got, compdef::schedule::ScheduleAssignment::defaults(&g));
    // zero trials, empty log
    assert_eq!(
        std::fs::read(dir.path().join("s.tuning.jsonl")).unwrap(),
        b""
    );
}

#[test]
fn compile_writes_tuning_log() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    let log = dir.path().join("log.jsonl");
    ok(&[
        "gen",
        "--family",
        "resnet_mini",
        "--scale",
        "1",
        "--out",
        p(&model),
    ]);
    let out = ok(&[
        "compile",
        "--model",
        p(&model),
        "--trials",
        "3",
        "--log",
        p(&log),
    ]);
    assert!(!out.stdout.is_empty());
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(!lines.is_empty());
    for l in lines {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["trial_index"].as_u64().unwrap() < 3);
        assert!(v["best_cost_ns"].as_f64().unwrap() <= v["cost_ns"].as_f64().unwrap());
    }
}

#[test]
fn attack_with_model_reports_fidelity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = d.join("m.json");
    let trace = d.join("t.csv");
    let db = d.join("db.json");
    let pred = d.join("p.json");
    ok(&[
        "gen",
        "--family",
        "resnet_mini",
        "--scale",
        "1",
        "--out",
        p(&model),
    ]);
    ok(&[
        "profile",
        "--model",
        p(&model),
        "--sigma",
        "0",
        "--out",
        p(&trace),
    ]);
    ok(&["buildb", p(&model), "--sigma", "0", "--out", p(&db)]);
    ok(&[
        "attack",
        "--trace",
        p(&trace),
        "--db",
        p(&db),
        "--model",
        p(&model),
        "--out",
        p(&pred),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&pred).unwrap()).unwrap();
    let f = v["fidelity"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));
    assert_eq!(
        v["sequence"].as_array().unwrap().len(),
        v["confidences"].as_array().unwrap().len()
    );

    ok(&[
        "attack",
        "--trace",
        p(&trace),
        "--db",
        p(&db),
        "--out",
        p(&pred),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&pred).unwrap()).unwrap();
    assert!(v.get("fidelity").is_none());
}

#[test]
fn file_pipeline_equals_sweep_cell() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = d.join("sweep");
    let cfg = small_config(d, &out);
    ok(&["sweep", "--config", p(&cfg)]);
    let cell = out.join("cells/resnet_mini_s1_0/t0004_s3");
    let model = out.join("models/resnet_mini_s1_0.json");

    let sched = d.join("s.json");
    let trace = d.join("t.csv");
    let pred = d.join("p.json");
    ok(&[
        "compile",
        "--config",
        p(&cfg),
        "--model",
        p(&model),
        "--trials",
        "4",
        "--seed",
        "3",
        "--out",
        p(&sched),
    ]);
    ok(&[
        "profile",
        "--config",
        p(&cfg),
        "--model",
        p(&model),
        "--schedule",
        p(&sched),
        "--seed",
        "3",
        "--out",
        p(&trace),
    ]);
    let db = out.join("db.json");
    ok(&[
        "attack",
        "--config",
        p(&cfg),
        "--trace",
        p(&trace),
        "--db",
        p(&db),
        "--model",
        p(&model),
        "--out",
        p(&pred),
    ]);

    for (mine, theirs) in [
        (&sched, "schedule.json"),
        (&trace, "trace.csv"),
        (&pred, "prediction.json"),
    ] {
        assert_eq!(
            std::fs::read(mine).unwrap(),
            std::fs::read(cell.join(theirs)).unwrap(),
            "{theirs}"
        );
    }

    // buildb from the config reproduces the sweep's database
    let db2 = d.join("db2.json");
    ok(&["buildb", "--config", p(&cfg), "--out", p(&db2)]);
    assert_eq!(std::fs::read(&db2).unwrap(), std::fs::read(&db).unwrap());
}

#[test]
fn sweep_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = small_config(d, &d.join("a"));
    ok(&["sweep", "--config", p(&cfg)]);
    ok(&["sweep", "--config", p(&cfg), "--out", p(&d.join("b"))]);
    let files = |root: &Path| {
        let mut v = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in std::fs::read_dir(dir).unwrap() {
                let path = e.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    v.push((
                        path.strip_prefix(root).unwrap().to_path_buf(),
                        std::fs::read(&path).unwrap(),
                    ));
                }
            }
        }
        v.sort();
        v
    };
    let a = files(&d.join("a"));
    assert!(a.iter().any(|(p, _)| p == Path::new("sweep.csv")));
    assert!(a
        .iter()
        .any(|(p, _)| p == Path::new("fidelity_vs_trials.svg")));
    assert!(a
        .iter()
        .any(|(p, _)| p == Path::new("latency_vs_trials.svg")));
    assert_eq!(a, files(&d.join("b")));
}

#[test]
fn exit_codes() {
    // usage errors
    let o = compdef(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(
        compdef(&["gen", "--family", "resnet_mini", "--bogus"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        compdef(&["gen", "--family", "lenet"]).status.code(),
        Some(1)
    );
    assert_eq!(compdef(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    // missing file -> I/O
    let missing = dir.path().join("nope.json");
    assert_eq!(
        compdef(&["compile", "--model", p(&missing)]).status.code(),
        Some(2)
    );
    // invalid document -> validation
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        br#"{"name":"x","inputs":[],"nodes":[{"id":"a","op":"relu","inputs":["ghost"]}]}"#,
    )
    .unwrap();
    assert_eq!(
        compdef(&["compile", "--model", p(&bad)]).status.code(),
        Some(1)
    );
    // scale outside the family's range -> validation
    assert_eq!(
        compdef(&["gen", "--family", "resnet_mini", "--scale", "9"])
            .status
            .code(),
        Some(1)
    );
    // unwritable output -> I/O
    let out = dir.path().join("no/such/dir/m.json");
    assert_eq!(
        compdef(&["gen", "--family", "resnet_mini", "--out", p(&out)])
            .status
            .code(),
        Some(2)
    );
    // malformed trace -> validation
    let trace = dir.path().join("t.csv");
    std::fs::write(&trace, "index,name\n").unwrap();
    let model = dir.path().join("m.json");
    ok(&[
        "gen",
        "--family",
        "resnet_mini",
        "--scale",
        "1",
        "--out",
        p(&model),
    ]);
    let db = dir.path().join("db.json");
    ok(&["buildb", p(&model), "--out", p(&db)]);
    assert_eq!(
        compdef(&["attack", "--trace", p(&trace), "--db", p(&db)])
            .status
            .code(),
        Some(1)
    );
}
