mod common;

use std::fs;
use std::path::Path;

use common::small_config;
use pepnet::cli::run;
use pepnet::kv::render;
use pepnet::synthgen::SceneSpec;
use pepnet::train::RunConfig;

fn arg(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn bad_arguments_exit_with_two() {
    assert_eq!(run(["pepnet", "--no-such-flag"]), 2);
    assert_eq!(run(["pepnet", "gradcheck", "--cases", "0"]), 2);
    assert_eq!(run(["pepnet", "bench", "--kernel", "fps", "--N", "8", "--n-out", "9"]), 2);
    assert_eq!(run(["pepnet", "eval", "--checkpoint", "x", "--data", "y", "--train-fraction", "1.5"]), 2);
}

#[test]
fn missing_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = arg(&dir.path().join("absent.txt"));
    let out = arg(&dir.path().join("ds"));
    assert_eq!(run(["pepnet", "ingest", "--events", &missing, "--poses", &missing, "--out", &out]), 1);
}

#[test]
fn synth_ingest_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let spec = SceneSpec { duration_us: 400_000, ..SceneSpec::default() };
    fs::write(root.join("scene.cfg"), render(&spec.to_pairs())).unwrap();
    let scene = root.join("scene");
    assert_eq!(
        run(["pepnet", "synth", "--spec", &arg(&root.join("scene.cfg")), "--out", &arg(&scene), "--seed", "1"]),
        0
    );

    let cfg = small_config();
    let data = root.join("data");
    let n = (2 * cfg.n_points).to_string();
    assert_eq!(
        run([
            "pepnet",
            "ingest",
            "--events",
            &arg(&scene.join("events.txt")),
            "--poses",
            &arg(&scene.join("poses.txt")),
            "--N",
            &n,
            "--out",
            &arg(&data),
        ]),
        0
    );

    let run_cfg = RunConfig { model: cfg, epochs: 2, batch_size: 4, ..RunConfig::default() };
    fs::write(root.join("run.cfg"), run_cfg.render()).unwrap();
    let out = root.join("run");
    assert_eq!(
        run(["pepnet", "train", "--data", &arg(&data), "--config", &arg(&root.join("run.cfg")), "--out", &arg(&out)]),
        0
    );
    for f in ["loss.csv", "final.pepw", "best.pepw", "report.jsonl", "run.cfg"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 3);
    assert_eq!(RunConfig::from_kv_text(&fs::read_to_string(out.join("run.cfg")).unwrap()).unwrap(), run_cfg);

    let report = root.join("eval.jsonl");
    let ckpt = arg(&out.join("final.pepw"));
    assert_eq!(run(["pepnet", "eval", "--checkpoint", &ckpt, "--data", &arg(&data), "--report", &arg(&report)]), 0);
    // the trainer evaluates the same novel test split with sample seed 0
    assert_eq!(fs::read_to_string(&report).unwrap(), fs::read_to_string(out.join("report.jsonl")).unwrap());

    assert_eq!(run(["pepnet", "attn", "--checkpoint", &ckpt, "--data", &arg(&data), "--window", "0"]), 0);
}

#[test]
fn small_benchmarks_run() {
    assert_eq!(run(["pepnet", "bench", "--kernel", "fps", "--N", "64", "--reps", "2"]), 0);
    assert_eq!(run(["pepnet", "bench", "--kernel", "knn", "--N", "64", "--k", "8", "--reps", "2"]), 0);
}
