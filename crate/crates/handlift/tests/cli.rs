//! Command-line surface tests: exit codes, file contracts, preset plumbing.

use handlift::cli;
use handlift::format;
use std::path::{Path, PathBuf};

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("handlift").chain(args.iter().copied()))
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Fixture { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn small_dataset(&self, name: &str, n: u64, extra: &[&str]) -> PathBuf {
        let out = self.path(name);
        let mut args: Vec<String> =
            ["gen-data", "--out", &s(&out), "--n", &n.to_string(), "--seed", "5"]
                .map(String::from)
                .to_vec();
        args.extend(extra.iter().map(|a| a.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(run(&refs), 0);
        out
    }
}

#[test]
fn gen_data_rejects_zero_samples() {
    let f = Fixture::new();
    let code = run(&["gen-data", "--out", &s(&f.path("x.jsonl")), "--n", "0", "--seed", "1"]);
    assert_eq!(code, 1);
}

#[test]
fn gen_data_output_reloads_cleanly() {
    let f = Fixture::new();
    let data = f.small_dataset("d.jsonl", 100, &[]);
    let records = format::read_dataset(&data).unwrap();
    assert_eq!(records.len(), 100);
    // Round-trip: rewriting the parsed records reproduces the file.
    let copy = f.path("copy.jsonl");
    format::write_dataset(&copy, &records).unwrap();
    assert_eq!(std::fs::read(&data).unwrap(), std::fs::read(&copy).unwrap());
}

#[test]
fn train_rejects_unknown_arch_and_preset() {
    let f = Fixture::new();
    let data = f.small_dataset("d.jsonl", 20, &[]);
    let code = run(&[
        "train", "--arch", "mystery", "--data", &s(&data), "--out",
        &s(&f.path("c.ckpt.json")), "--seed", "1",
    ]);
    assert_eq!(code, 1);
    let code = run(&[
        "train", "--arch", "poseprior", "--data", &s(&data), "--out",
        &s(&f.path("c.ckpt.json")), "--seed", "1", "--config", "preset:warp-speed",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn preset_schedule_lands_in_checkpoint_config() {
    let f = Fixture::new();
    let data = f.small_dataset("d.jsonl", 40, &[]);
    let ckpt = f.path("c.ckpt.json");
    let code = run(&[
        "train", "--arch", "poseprior", "--data", &s(&data), "--out", &s(&ckpt),
        "--seed", "1", "--config", "preset:posenet-schedule", "--iterations", "2",
        "--holdout", "10",
    ]);
    assert_eq!(code, 0);
    let (manifest, _) = format::load_checkpoint(&ckpt).unwrap();
    let schedule = &manifest.config["schedule"]["entries"];
    assert_eq!(schedule[0][0], 0);
    assert_eq!(schedule[0][1], 1e-4);
    assert_eq!(schedule[1][0], 10_000);
    assert_eq!(schedule[1][1], 1e-5);
    assert_eq!(schedule[2][0], 20_000);
    assert_eq!(schedule[2][1], 1e-6);
    assert_eq!(manifest.config["batch_size"], 8);
}

#[test]
fn zero_iteration_checkpoint_is_the_initialization() {
    let f = Fixture::new();
    let data = f.small_dataset("d.jsonl", 20, &[]);
    let ckpt = f.path("init.ckpt.json");
    let code = run(&[
        "train", "--arch", "poseprior-direct", "--data", &s(&data), "--out", &s(&ckpt),
        "--seed", "3", "--iterations", "0", "--holdout", "0",
    ]);
    assert_eq!(code, 0);
    let (manifest, tensors) = format::load_checkpoint(&ckpt).unwrap();
    assert_eq!(manifest.iteration, 0);
    let init = handlift::models::LiftingModel::init("poseprior-direct", 0.25, 3).unwrap();
    let stream = &init.streams()[0];
    for (name, tensor) in stream.param_names().iter().zip(stream.param_tensors()) {
        let (_, stored) = &tensors[&format!("net/{name}")];
        assert_eq!(stored, tensor.data());
    }
}

#[test]
fn eval_same_checkpoint_twice_gives_identical_rows() {
    let f = Fixture::new();
    let data = f.small_dataset("d.jsonl", 60, &[]);
    let ckpt = f.path("m.ckpt.json");
    assert_eq!(
        run(&[
            "train", "--arch", "poseprior", "--data", &s(&data), "--out", &s(&ckpt),
            "--seed", "2", "--iterations", "5", "--holdout", "20",
        ]),
        0
    );
    let out = f.path("eval");
    assert_eq!(
        run(&[
            "eval", "--ckpt", &s(&ckpt), "--ckpt-b", &s(&ckpt), "--data", &s(&data),
            "--skip", "40", "--out", &s(&out),
        ]),
        0
    );
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);

    // Curve files exist and their fraction column is monotone.
    for tag in ["a_poseprior", "b_poseprior"] {
        for space in ["norm", "mm"] {
            let curve =
                std::fs::read_to_string(out.join(format!("pck_{space}_{tag}.csv"))).unwrap();
            let fractions: Vec<f64> = curve
                .lines()
                .skip(1)
                .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
                .collect();
            assert!(fractions.windows(2).all(|w| w[1] >= w[0]));
            assert!(fractions.iter().all(|f| (0.0..=1.0).contains(f)));
        }
    }
}

#[test]
fn eval_rejects_skip_beyond_dataset() {
    let f = Fixture::new();
    let data = f.small_dataset("d.jsonl", 10, &[]);
    let ckpt = f.path("m.ckpt.json");
    assert_eq!(
        run(&[
            "train", "--arch", "poseprior", "--data", &s(&data), "--out", &s(&ckpt),
            "--seed", "2", "--iterations", "1", "--holdout", "0",
        ]),
        0
    );
    let code = run(&[
        "eval", "--ckpt", &s(&ckpt), "--data", &s(&data), "--skip", "10", "--out",
        &s(&f.path("eval")),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn gesture_flow_trains_and_reports_accuracy() {
    let f = Fixture::new();
    let labeled = f.small_dataset("g.jsonl", 240, &["--classes", "3"]);
    let ckpt = f.path("g.ckpt.json");
    assert_eq!(
        run(&[
            "train", "--arch", "gesturenet", "--data", &s(&labeled), "--out", &s(&ckpt),
            "--seed", "4", "--iterations", "400",
        ]),
        0
    );
    let out = f.path("eval");
    assert_eq!(
        run(&["eval", "--ckpt", &s(&ckpt), "--data", &s(&labeled), "--out", &s(&out)]),
        0
    );
    let text = std::fs::read_to_string(out.join("accuracy.csv")).unwrap();
    let accuracy: f64 =
        text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(accuracy > 0.5, "accuracy {accuracy}");

    // Unlabeled data is a validation error for gesture training and eval.
    let unlabeled = f.small_dataset("u.jsonl", 40, &[]);
    assert_eq!(
        run(&[
            "train", "--arch", "gesturenet", "--data", &s(&unlabeled), "--out",
            &s(&f.path("u.ckpt.json")), "--seed", "4", "--iterations", "5",
        ]),
        1
    );
    assert_eq!(
        run(&["eval", "--ckpt", &s(&ckpt), "--data", &s(&unlabeled), "--out", &s(&out)]),
        1
    );
}

#[test]
fn dataset_version_gate_is_enforced() {
    let f = Fixture::new();
    let bad = f.path("bad.jsonl");
    std::fs::write(&bad, "{\"format\":\"handlift-dataset\",\"version\":99,\"count\":0}\n").unwrap();
    let code = run(&[
        "train", "--arch", "poseprior", "--data", &s(&bad), "--out",
        &s(&f.path("c.ckpt.json")), "--seed", "1",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn gradcheck_fault_injection_exits_nonzero() {
    assert_eq!(run(&["gradcheck", "--seed", "1", "--arch", "layers"]), 0);
    assert_eq!(
        run(&["gradcheck", "--seed", "1", "--arch", "layers", "--corrupt-gradient"]),
        2
    );
    assert_eq!(run(&["gradcheck", "--seed", "1", "--arch", "warp"]), 1);
}

#[test]
fn missing_seed_is_a_usage_error() {
    let f = Fixture::new();
    let code = run(&["gen-data", "--out", &s(&f.path("x.jsonl")), "--n", "5"]);
    assert_eq!(code, 1);
}
