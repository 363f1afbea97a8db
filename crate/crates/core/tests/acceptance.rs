//! End-to-end acceptance criteria. Each test prints one `PASS` or `FAIL`
//! line; run with `--nocapture` to see them. Tests share a lock so the
//! timed criteria never compete for the CPU.

mod common;

use std::fmt::Display;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use common::*;
use pepnet::autodiff::{Graph, Tensor};
use pepnet::event_io::SensorDims;
use pepnet::gradsuite::{run_suite, GradRow};
use pepnet::model::*;
use pepnet::point_ops::*;
use pepnet::synthgen::{generate, SceneSpec};
use pepnet::train::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn criterion<F: FnOnce() -> Result<String, String> + Send>(name: &str, body: F) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    pepnet::heap::retain_freed_memory();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    match pool.install(body) {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            panic!("{name} failed: {detail}");
        }
    }
}

fn check(ok: bool, detail: impl Display) -> Result<String, String> {
    if ok {
        Ok(detail.to_string())
    } else {
        Err(detail.to_string())
    }
}

#[test]
fn gradient_suite() {
    criterion("gradient suite", || {
        let start = Instant::now();
        let rows = run_suite(100, 0).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let worst = rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
        // the whole-network check runs a quarter of the cases to fit the time budget
        let short = |r: &GradRow| r.cases < if r.name == "model_loss" { 25 } else { 100 };
        let failing: Vec<&str> = rows.iter().filter(|r| !r.passed() || short(r)).map(|r| r.name.as_str()).collect();
        check(
            failing.is_empty() && secs < 120.0,
            format!("{} checks, worst relative error {worst:.2e}, {secs:.1} s, failing {failing:?}", rows.len()),
        )
    });
}

#[test]
fn kernel_oracles() {
    criterion("FPS and KNN oracles", || {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut mismatches = 0;
        for _ in 0..1000 {
            let pts = random_instance(&mut rng);
            let n_out = rng.gen_range(1..=pts.len());
            let order = farthest_point_order(&pts, n_out).map_err(|e| e.to_string())?;
            mismatches += usize::from(order != reference_fps(&pts, n_out));
            let mut centroids = order;
            centroids.sort();
            let k = rng.gen_range(1..=pts.len());
            let got = knn_indices(&pts, &centroids, k).map_err(|e| e.to_string())?;
            for (g, &c) in centroids.iter().enumerate() {
                mismatches += usize::from(got[g * k..(g + 1) * k] != reference_knn(&pts, c, k)[..]);
            }
        }
        check(mismatches == 0, format!("1000 instances, {mismatches} mismatches"))
    });
}

#[test]
fn standardization() {
    criterion("group standardization", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let k = rng.gen_range(2..40);
            let scale = 10f64.powf(rng.gen_range(-1.0..1.0));
            let rel: Vec<[f64; 3]> = (0..k).map(|_| [(); 3].map(|_| rng.gen_range(-1.0..1.0) * scale)).collect();
            let flat: Vec<f64> = standardize_group(&rel).into_iter().flatten().collect();
            let mean = flat.iter().sum::<f64>() / flat.len() as f64;
            let std = (flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (flat.len() - 1) as f64).sqrt();
            worst = worst.max((std - 1.0).abs());
        }
        let zeros =
            [1, 2, 24].iter().all(|&k| standardize_group(&vec![[0.0; 3]; k]).iter().flatten().all(|&v| v == 0.0));
        check(worst < 1e-6 && zeros, format!("worst |std - 1| {worst:.2e}, identical groups zero: {zeros}"))
    });
}

fn rows_normalized(values: &[f64], width: usize) -> f64 {
    values.chunks(width).map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
}

#[test]
fn attention_normalization() {
    criterion("attention normalization", || {
        let cfg = ModelConfig::tiny();
        let mut worst: f64 = 0.0;
        for seed in 0..4u64 {
            let model = Model::<f32>::new(cfg.clone(), seed).map_err(|e| e.to_string())?;
            let plans: Vec<HierarchyPlan> =
                (0..2).map(|i| model.plan(&window_cloud(seed * 2 + i, cfg.n_points)).unwrap()).collect();
            let refs: Vec<&HierarchyPlan> = plans.iter().collect();
            let mut g = Graph::new();
            let bound = model.params().bind(&mut g);
            let out = model.forward(&mut g, &bound, &refs, true).map_err(|e| e.to_string())?;
            for stage in &out.stages {
                worst = worst.max(rows_normalized(&g.value(stage.attention.unwrap()).to_f64_vec(), cfg.k));
            }
            let head = g.value(out.head_attention.unwrap()).to_f64_vec();
            worst = worst.max(rows_normalized(&head, *cfg.stage_points.last().unwrap()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let mut mean_err: f64 = 0.0;
        for k in [1, 2, 5, 24] {
            let d = 6;
            let row: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut g = Graph::no_grad();
            let f = g.constant(Tensor::new(vec![k, d], row.iter().cycle().take(k * d).copied().collect()));
            let w = g.constant(Tensor::new(vec![d, 1], (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()));
            let b = g.constant(Tensor::new(vec![1], vec![0.3]));
            let (out, _) = temporal_aggregate(&mut g, f, w, b, k).map_err(|e| e.to_string())?;
            for (got, want) in g.data(out).iter().zip(&row) {
                mean_err = mean_err.max((got - want).abs());
            }
        }
        check(
            worst < 1e-6 && mean_err < 1e-12,
            format!("worst row-sum error {worst:.2e}, identical-member mean error {mean_err:.2e}"),
        )
    });
}

#[test]
fn order_preservation() {
    criterion("timestamp order", || {
        let cfg = ModelConfig::standard();
        let mut violations = 0;
        for seed in 0..1000 {
            let cloud = window_cloud(seed, cfg.n_points);
            violations += usize::from(!cloud.windows(2).all(|w| w[0][2] <= w[1][2]));
            let plan = HierarchyPlan::build(&cloud, &cfg).map_err(|e| e.to_string())?;
            let mut coords = cloud;
            for stage in &plan.stages {
                violations += usize::from(!stage.coords.windows(2).all(|w| w[0][2] <= w[1][2]));
                for group in stage.member_idx.chunks(stage.k) {
                    violations += usize::from(!group.windows(2).all(|w| coords[w[0]][2] <= coords[w[1]][2]));
                }
                coords = stage.coords.clone();
            }
        }
        check(violations == 0, format!("1000 windows, {violations} violations"))
    });
}

#[test]
fn shape_contract() {
    criterion("shape contract", || {
        let cfg = ModelConfig::standard();
        let model = Model::<f32>::new(cfg.clone(), 0).map_err(|e| e.to_string())?;
        let plans: Vec<HierarchyPlan> = (0..2).map(|s| model.plan(&window_cloud(s, 1024)).unwrap()).collect();
        let refs: Vec<&HierarchyPlan> = plans.iter().collect();
        let mut g = Graph::no_grad();
        let bound = model.params().bind(&mut g);
        let out = model.forward(&mut g, &bound, &refs, false).map_err(|e| e.to_string())?;
        let stages: Vec<Vec<usize>> = out.stages.iter().map(|s| g.shape(s.features).to_vec()).collect();
        let head = g.shape(out.head_attention.unwrap()).to_vec();
        let pose = g.shape(out.pose).to_vec();
        let ok = stages == [vec![1024, 64], vec![512, 128], vec![256, 256]] && head == [2, 1, 128] && pose == [2, 6];
        check(ok, format!("stages {stages:?} (batch of 2 flattened), head attention {head:?}, pose {pose:?}"))
    });
}

#[test]
fn parameter_counts() {
    criterion("parameter counts", || {
        let standard = count_parameters(&ModelConfig::standard()).map_err(|e| e.to_string())?;
        let tiny = count_parameters(&ModelConfig::tiny()).map_err(|e| e.to_string())?;
        let ratio = tiny as f64 / standard as f64;
        check(
            (550_000..=1_000_000).contains(&standard)
                && (45_000..=85_000).contains(&tiny)
                && (0.06..=0.10).contains(&ratio),
            format!("standard {standard}, tiny {tiny}, ratio {ratio:.4}"),
        )
    });
}

#[test]
fn metric_anchors() {
    criterion("metric anchors", || {
        let tr = |t: f64, r: f64| {
            EvalReport::from_errors(vec![WindowError { window_id: 0, trans_err: t, rot_err: r }]).unwrap().t_plus_r
        };
        let (a, b) = (tr(0.011, 0.582), tr(0.0302, 1.684));
        check((a - 2.12).abs() <= 0.01 && (b - 5.96).abs() <= 0.01, format!("{a:.4} and {b:.4}"))
    });
}

/// The default synthetic scene at seed 1, ingested with default settings.
fn default_scene() -> Dataset {
    let out = generate(&SceneSpec::default(), 1).unwrap();
    Dataset::from_streams(out.events, out.poses, DatasetConfig::default()).unwrap().0
}

#[test]
fn overfit() {
    criterion("overfit", || {
        let ds = default_scene();
        let cfg = ModelConfig::tiny();
        let samples = prepare_samples(&ds.windows[..32], ds.config.sensor, &cfg, 7).map_err(|e| e.to_string())?;
        let mut run =
            RunConfig { model: cfg.clone(), epochs: 500, batch_size: 8, eval_every: 0, ..RunConfig::default() };
        run.optim.decay_every = 100;
        let start = Instant::now();
        let out =
            train(Model::<f32>::new(cfg, run.seed).unwrap(), &samples, &[], &run, |_| {}).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let (first, last) = (out.curve[0].mean_loss, out.curve.last().unwrap().mean_loss);
        let report = evaluate(&out.model, &samples, RotationMetric::Geodesic).map_err(|e| e.to_string())?;
        let trans = report.median_trans_err / out.model.target_norm.p_scale;
        let reg = out.model.config().lambda
            * out
                .model
                .params()
                .iter()
                .flat_map(|(_, t)| t.data().iter().map(|&v| f64::from(v) * f64::from(v)))
                .sum::<f64>();
        check(
            last < 0.01 * first && trans < 0.01 && secs < 600.0,
            format!(
                "loss {first:.4} -> {last:.5} (ratio {:.4}, weight penalty {reg:.5}), median translation {trans:.5} normalized, {secs:.0} s",
                last / first
            ),
        )
    });
}

#[test]
fn ablation_ordering() {
    criterion("ablation ordering", || {
        let ds = default_scene();
        let conds = ablation_matrix(&ModelConfig::tiny());
        let score = |cond: usize, seed: u64| -> f64 {
            let cfg = conds[cond].1.clone();
            let split = make_split(ds.windows.len(), &SplitSpec { mode: SplitMode::Random, train_fraction: 0.7, seed })
                .unwrap();
            let samples = prepare_samples(&ds.windows, ds.config.sensor, &cfg, seed).unwrap();
            let pick = |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| samples[i].clone()).collect() };
            let run = RunConfig {
                model: cfg.clone(),
                epochs: ABLATION_EPOCHS,
                batch_size: 8,
                eval_every: 0,
                seed,
                ..RunConfig::default()
            };
            let out = train(Model::<f32>::new(cfg, seed).unwrap(), &pick(&split.train), &[], &run, |_| {}).unwrap();
            evaluate(&out.model, &pick(&split.test), RotationMetric::Geodesic).unwrap().t_plus_r
        };
        let median = |cond: usize| {
            let mut v: Vec<f64> = (0..5).map(|s| score(cond, s)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (v[2], v)
        };
        let (first, first_all) = median(0);
        let (last, last_all) = median(5);
        check(
            last < first,
            format!(
                "median T+R {} {last:.3} vs {} {first:.3} ({last_all:.3?} vs {first_all:.3?})",
                conds[5].0, conds[0].0
            ),
        )
    });
}

const ABLATION_EPOCHS: usize = 20;

fn train_via_cli(data: &Path, cfg: &Path, out: &Path) -> i32 {
    let arg = |p: &Path| p.display().to_string();
    pepnet::cli::run([
        "pepnet",
        "--threads",
        "1",
        "train",
        "--data",
        &arg(data),
        "--config",
        &arg(cfg),
        "--out",
        &arg(out),
    ])
}

#[test]
fn determinism() {
    criterion("determinism", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = dir.path();
        let mut ds = default_scene();
        ds.windows.truncate(24);
        let data = root.join("data");
        ds.save(&data).map_err(|e| e.to_string())?;
        let run = RunConfig { model: ModelConfig::tiny(), epochs: 3, batch_size: 8, ..RunConfig::default() };
        std::fs::write(root.join("run.cfg"), run.render()).map_err(|e| e.to_string())?;
        let mut same = true;
        for i in 0..2 {
            if train_via_cli(&data, &root.join("run.cfg"), &root.join(format!("run{i}"))) != 0 {
                return Err(format!("training run {i} failed"));
            }
        }
        let mut compared = Vec::new();
        for f in ["loss.csv", "final.pepw", "best.pepw"] {
            let a = std::fs::read(root.join("run0").join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(root.join("run1").join(f)).map_err(|e| e.to_string())?;
            same &= a == b;
            compared.push(format!("{f} {} bytes", a.len()));
        }
        check(same, format!("two single-thread runs, identical: {same} ({})", compared.join(", ")))
    });
}

#[test]
fn performance() {
    criterion("inference latency", || {
        let rows = bench_forward(&ModelConfig::standard(), 20, 0).map_err(|e| e.to_string())?;
        let (grouping, total) = (&rows[0], &rows[rows.len() - 1]);
        let p50_ms = total.p50_us / 1000.0;
        check(
            p50_ms < 100.0,
            format!("standard p50 {p50_ms:.1} ms, FPS+KNN share {:.2}", grouping.mean_us / total.mean_us),
        )
    });
}

#[test]
fn real_recording_smoke() {
    let Some(dir) = std::env::var_os("PEPNET_IJRR_DIR") else {
        println!("SKIP real recording smoke: PEPNET_IJRR_DIR is not set");
        return;
    };
    criterion("real recording smoke", || {
        let dir = Path::new(&dir);
        let config = DatasetConfig { sensor: SensorDims::new(240, 180), ..DatasetConfig::default() };
        let (mut ds, _) = Dataset::ingest(&dir.join("events.txt"), &dir.join("groundtruth.txt"), config)
            .map_err(|e| e.to_string())?;
        ds.windows.retain(|w| w.label.is_some());
        ds.windows.truncate(64);
        let cfg = ModelConfig::tiny();
        let samples = prepare_samples(&ds.windows, ds.config.sensor, &cfg, 0).map_err(|e| e.to_string())?;
        let run = RunConfig { model: cfg.clone(), epochs: 5, batch_size: 8, eval_every: 0, ..RunConfig::default() };
        let out = train(Model::<f32>::new(cfg, 0).unwrap(), &samples, &[], &run, |_| {}).map_err(|e| e.to_string())?;
        let losses: Vec<f64> = out.curve.iter().map(|r| r.mean_loss).collect();
        check(losses.windows(2).all(|w| w[1] < w[0]), format!("{} windows, epoch losses {losses:.4?}", samples.len()))
    });
}
