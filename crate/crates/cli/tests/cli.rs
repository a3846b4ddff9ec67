use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cal"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn cal")
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = run(args, dir);
    assert!(
        out.status.success(),
        "cal {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn report_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

const SMALL_TRAIN: &str = "\
[train]
epochs = 2
batch_triples = 32
lr0 = 0.0001
momentum = 0.9

[model]
hidden_mlp = 16
embed = 8
hidden_lstm = 8
";

#[test]
fn default_spec_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("train.toml"), SMALL_TRAIN).unwrap();
    run_ok(&["gen", "--out", "corpus"], dir);
    run_ok(
        &[
            "train", "--corpus", "corpus", "--preset", "charades-sta", "--config", "train.toml",
            "--out", "ckpt/model.calw",
        ],
        dir,
    );
    assert_eq!(
        String::from_utf8(read(dir, "ckpt/model.calw.log.jsonl"))
            .unwrap()
            .lines()
            .count(),
        2
    );
    run_ok(
        &[
            "index", "--corpus", "corpus", "--ckpt", "ckpt/model.calw", "--flavor", "exact",
            "--out", "exact.calx",
        ],
        dir,
    );
    run_ok(
        &[
            "index", "--corpus", "corpus", "--ckpt", "ckpt/model.calw", "--flavor", "ivf",
            "--out", "ivf.calx",
        ],
        dir,
    );
    let common = ["--corpus", "corpus", "--ckpt", "ckpt/model.calw", "--split", "test"];
    let search = |extra: &[&str]| {
        let mut args = vec!["search"];
        args.extend(common);
        args.extend(extra);
        run_ok(&args, dir);
    };
    search(&["--mode", "exhaustive", "--out", "ex.jsonl"]);
    search(&[
        "--mode", "two-stage", "--index", "exact.calx", "--clip-budget", "all", "--out",
        "ts.jsonl",
    ]);
    search(&["--mode", "approx", "--index", "ivf.calx", "--out", "ap.jsonl"]);
    assert_eq!(read(dir, "ex.jsonl"), read(dir, "ts.jsonl"));

    let results = String::from_utf8(read(dir, "ex.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 120);
    let stats: serde_json::Value =
        serde_json::from_slice(&read(dir, "ap.jsonl.stats.json")).unwrap();
    assert_eq!(stats["mode"], "approx");
    assert!(stats["totals"]["partitions_probed"].as_u64().unwrap() > 0);

    for (name, kind) in [("chance.jsonl", "chance"), ("prior.jsonl", "moment-prior")] {
        run_ok(
            &[
                "baseline", "--kind", kind, "--corpus", "corpus", "--split", "test", "--preset",
                "charades-sta", "--out", name,
            ],
            dir,
        );
    }
    for results in ["ex.jsonl", "ap.jsonl", "chance.jsonl", "prior.jsonl"] {
        let report = format!("{results}.report");
        run_ok(
            &[
                "eval", "--results", results, "--gt", "corpus/queries.jsonl", "--preset",
                "charades-sta", "--corpus", "corpus", "--out", &report,
            ],
            dir,
        );
        let text = String::from_utf8(read(dir, &report)).unwrap();
        let kv = report_values(&text);
        assert_eq!(kv["queries"], "120");
        assert_eq!(kv["oracle.iou0.50"], "1");
        let shown = run_ok(&["report", "show", &report], dir);
        assert_eq!(String::from_utf8(shown.stdout).unwrap(), text);
    }

    run_ok(
        &[
            "search", "--corpus", "corpus", "--ckpt", "ckpt/model.calw", "--split", "train",
            "--top-k", "20", "--out", "train.jsonl",
        ],
        dir,
    );
    run_ok(
        &[
            "retrain-rerank", "--base", "ckpt/model.calw", "--retrievals", "train.jsonl",
            "--corpus", "corpus", "--out", "rerank.calw",
        ],
        dir,
    );
    search(&[
        "--mode", "two-stage", "--index", "exact.calx", "--rerank-ckpt", "rerank.calw", "--out",
        "rr.jsonl",
    ]);
    assert_eq!(
        String::from_utf8(read(dir, "rr.jsonl")).unwrap().lines().count(),
        120
    );
}

#[test]
fn seed_flag_reaches_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("spec.json"),
        r#"{"num_videos": 12, "visual_dim": 6, "word_dim": 4, "vocab_size": 30, "queries_per_video": 2}"#,
    )
    .unwrap();
    std::fs::write(dir.join("train.toml"), SMALL_TRAIN).unwrap();
    let steps: &[&[&str]] = &[
        &["gen", "--spec", "spec.json", "--out", "c", "--seed", "42"],
        &["train", "--corpus", "c", "--preset", "charades-sta", "--config", "train.toml", "--out", "m.calw", "--seed", "42"],
        &["index", "--corpus", "c", "--ckpt", "m.calw", "--flavor", "ivf", "--out", "i.calx", "--seed", "42"],
        &["search", "--corpus", "c", "--ckpt", "m.calw", "--out", "r.jsonl", "--seed", "42"],
        &["eval", "--results", "r.jsonl", "--gt", "c/queries.jsonl", "--preset", "charades-sta", "--out", "r.report"],
    ];
    for s in steps {
        run_ok(s, dir);
    }
    let spec: serde_json::Value = serde_json::from_slice(&read(dir, "c/spec.json")).unwrap();
    assert_eq!(spec["seed"], 42);
    let meta: serde_json::Value = serde_json::from_slice(&read(dir, "i.calx.meta.json")).unwrap();
    assert_eq!(meta["seed"], 42);
    let stats: serde_json::Value =
        serde_json::from_slice(&read(dir, "r.jsonl.stats.json")).unwrap();
    assert_eq!(stats["seed"], 42);
    let results = String::from_utf8(read(dir, "r.jsonl")).unwrap();
    assert!(results.lines().all(|l| l.contains("\"seed\":42")));
    let report = String::from_utf8(read(dir, "r.report")).unwrap();
    assert_eq!(report_values(&report)["config.seed"], "42");
}

// Three queries, hand-scored:
//   q1  gt v1 [0,10]:  v2 [0,10] (wrong video), v1 [0,8] (IoU 0.8), v1 [0,10]
//       -> first correct rank 2 at IoU 0.5 and 0.7
//   q2  gt v1 [10,20]: v1 [10,20] (IoU 1) -> rank 1 at both
//   q3  gt v2 [0,6]:   v2 [0,10] (IoU 0.6), v2 [4,6] (IoU 1/3)
//       -> rank 1 at 0.5, no hit at 0.7 (rank universe + 1 = 11)
// R@1: 2/3 and 1/3; R@2: 3/3 and 2/3; median rank: 1 and 2.
const FIXTURE_RESULTS: &str = r#"{"query_id":"q1","seed":5,"universe":10,"truncated":false,"ranked":[{"video_id":"v2","start_s":0.0,"end_s":10.0,"cost":0.1,"first_clip":0,"last_clip":4},{"video_id":"v1","start_s":0.0,"end_s":8.0,"cost":0.2,"first_clip":0,"last_clip":3},{"video_id":"v1","start_s":0.0,"end_s":10.0,"cost":0.3,"first_clip":0,"last_clip":4}]}
{"query_id":"q2","seed":5,"universe":10,"truncated":false,"ranked":[{"video_id":"v1","start_s":10.0,"end_s":20.0,"cost":0.1,"first_clip":5,"last_clip":9}]}
{"query_id":"q3","seed":5,"universe":10,"truncated":false,"ranked":[{"video_id":"v2","start_s":0.0,"end_s":10.0,"cost":0.1,"first_clip":0,"last_clip":4},{"video_id":"v2","start_s":4.0,"end_s":6.0,"cost":0.2,"first_clip":2,"last_clip":2}]}
"#;

const FIXTURE_GT: &str = r#"{"query_id":"q1","video_id":"v1","spans":[[0.0,10.0]],"words_path":"unused"}
{"query_id":"q2","video_id":"v1","spans":[[10.0,20.0]],"words_path":"unused"}
{"query_id":"q3","video_id":"v2","spans":[[0.0,6.0]],"words_path":"unused"}
"#;

#[test]
fn eval_reproduces_hand_computed_recalls() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("results.jsonl"), FIXTURE_RESULTS).unwrap();
    std::fs::write(dir.join("gt.jsonl"), FIXTURE_GT).unwrap();
    run_ok(
        &[
            "eval", "--results", "results.jsonl", "--gt", "gt.jsonl", "--preset", "charades-sta",
            "--ks", "1,2", "--out", "report.txt",
        ],
        dir,
    );
    let kv = report_values(&String::from_utf8(read(dir, "report.txt")).unwrap());
    let value = |k: &str| -> f64 { kv[k].parse().unwrap() };
    let expected = [
        ("recall.r1.iou0.50", 2.0 / 3.0),
        ("recall.r2.iou0.50", 1.0),
        ("recall.r1.iou0.70", 1.0 / 3.0),
        ("recall.r2.iou0.70", 2.0 / 3.0),
        ("median_rank.iou0.50", 1.0),
        ("median_rank.iou0.70", 2.0),
    ];
    for (k, want) in expected {
        assert!((value(k) - want).abs() < 1e-12, "{k} = {}", kv[k]);
    }
    assert_eq!(kv["queries"], "3");
    assert_eq!(kv["config.seed"], "5");
}

#[test]
fn help_lists_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let flags: &[(&str, &[&str])] = &[
        ("gen", &["--spec", "--out"]),
        (
            "train",
            &[
                "--corpus", "--preset", "--config", "--out", "--queries", "--split", "--tef",
                "--tef-only", "--variant",
            ],
        ),
        (
            "index",
            &["--corpus", "--ckpt", "--flavor", "--out", "--partitions", "--kmeans-iters"],
        ),
        (
            "search",
            &[
                "--corpus", "--index", "--ckpt", "--rerank-ckpt", "--queries", "--split",
                "--mode", "--top-k", "--out", "--preset", "--stage-one", "--budget",
                "--clip-budget", "--nprobe", "--dilate",
            ],
        ),
        (
            "retrain-rerank",
            &[
                "--base", "--retrievals", "--out", "--corpus", "--config", "--queries", "--split",
                "--preset",
            ],
        ),
        (
            "eval",
            &[
                "--results", "--gt", "--preset", "--single-video", "--out", "--corpus",
                "--min-judgments", "--ks", "--ious",
            ],
        ),
        ("bench", &["--spec", "--methods", "--out", "--csv"]),
        (
            "baseline",
            &[
                "--kind", "--corpus", "--queries", "--split", "--preset", "--top-k", "--out",
                "--ckpt", "--prior-queries", "--bins",
            ],
        ),
    ];
    for (cmd, expected) in flags {
        let out = run_ok(&[cmd, "--help"], tmp.path());
        let help = String::from_utf8(out.stdout).unwrap();
        for flag in expected.iter().chain(&["--seed", "--workers"]) {
            let listed = help
                .lines()
                .any(|l| l.trim_start().split([' ', ',']).any(|w| w == *flag));
            assert!(listed, "`cal {cmd} --help` does not list {flag}");
        }
    }
    let top = String::from_utf8(run_ok(&["--help"], tmp.path()).stdout).unwrap();
    for cmd in flags.iter().map(|(c, _)| *c).chain(["report"]) {
        assert!(top.contains(cmd), "top-level help lacks {cmd}");
    }
}

fn assert_error(out: &Output, code: &str) {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.lines().count(), 1, "not a single line: {stderr:?}");
    assert!(
        stderr.starts_with(&format!("error[{code}]: ")),
        "unexpected error line {stderr:?}"
    );
}

#[test]
fn failures_print_one_coded_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_error(
        &run(&["train", "--corpus", "missing", "--preset", "didemo", "--out", "m"], dir),
        "E_IO",
    );
    std::fs::write(dir.join("results.jsonl"), FIXTURE_RESULTS).unwrap();
    std::fs::write(dir.join("gt.jsonl"), "{\"query_id\": 3}\n").unwrap();
    assert_error(
        &run(
            &[
                "eval", "--results", "results.jsonl", "--gt", "gt.jsonl", "--preset", "didemo",
                "--out", "r",
            ],
            dir,
        ),
        "E_FORMAT",
    );
    std::fs::write(dir.join("spec.toml"), "num_videos = 0\n").unwrap();
    assert_error(
        &run(&["gen", "--spec", "spec.toml", "--out", "c"], dir),
        "E_CONFIG",
    );
    let out = run(&["search", "--bogus"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert_error(&out, "E_USAGE");
}

#[test]
fn corrupted_checkpoint_is_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("spec.json"),
        r#"{"num_videos": 6, "visual_dim": 4, "word_dim": 3, "vocab_size": 20, "queries_per_video": 1}"#,
    )
    .unwrap();
    run_ok(&["gen", "--spec", "spec.json", "--out", "c"], dir);
    std::fs::write(dir.join("bad.calw"), b"XXXX0000").unwrap();
    assert_error(
        &run(&["index", "--corpus", "c", "--ckpt", "bad.calw", "--out", "i"], dir),
        "E_FORMAT",
    );
}
