//! Command-line front end. [`run`] maps every outcome onto an exit code:
//! 0 success, 1 runtime failure, 2 bad usage.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::event_io::{LabelOptions, PoseAssociation, SensorDims, TimeUnit};
use crate::gradsuite::{render_table, run_suite};
use crate::kv::render;
use crate::model::{bench_forward, Model, ModelConfig};
use crate::point_ops::{bench_grouping, BenchRow};
use crate::synthgen::{generate, write_scene, SceneSpec};
use crate::train::{
    evaluate, make_split, prepare_samples, train, Dataset, DatasetConfig, RotationMetric, RunConfig, Sample, SplitMode,
    SplitSpec, LOSS_CSV_HEADER,
};

pub const THREADS_ENV: &str = "PEPNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pepnet", version, about = "Event-camera pose relocalization toolkit")]
struct Cli {
    /// Worker threads for data preparation and evaluation (0 = all cores).
    /// Falls back to $PEPNET_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kernel {
    Fps,
    Knn,
    Forward,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Standard,
    Tiny,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Subset {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RotMetric {
    Geodesic,
    Euler,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic event stream and ground-truth poses.
    Synth {
        /// Scene spec (key = value); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Segment and label an event stream into a dataset directory.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        /// Chunk duration in microseconds.
        #[arg(long = "R", default_value_t = 1000)]
        r: u64,
        /// Window event-count threshold.
        #[arg(long = "N", default_value_t = 1024)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 240)]
        width: u32,
        #[arg(long, default_value_t = 180)]
        height: u32,
        /// Event timestamp unit: s or us.
        #[arg(long, default_value = "s")]
        time_unit: TimeUnit,
        /// Pose association instant: start, mid or end.
        #[arg(long, default_value = "end")]
        association: PoseAssociation,
        #[arg(long, default_value_t = 10_000)]
        tolerance_us: u64,
    },
    /// Train a model on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Run config (key = value); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "novel")]
        split: SplitModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
        /// Seed used when sampling points from each window.
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long, value_enum, default_value = "geodesic")]
        rotation_metric: RotMetric,
        /// JSON-lines output; defaults to `<checkpoint>.eval.jsonl`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference check of every autodiff operator and composed graph.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Latency microbenchmarks, CSV on standard output.
    Bench {
        #[arg(long, value_enum)]
        kernel: Kernel,
        #[arg(long = "N", default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        /// FPS output size (defaults to N/2).
        #[arg(long)]
        n_out: Option<usize>,
        #[arg(long, default_value_t = 24)]
        k: usize,
        /// Model preset for the forward kernel.
        #[arg(long, value_enum, default_value = "standard")]
        config: Preset,
    },
    /// Attention weights of the recurrent head over one window, as CSV.
    Attn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Window id from the dataset manifest.
        #[arg(long)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitModeArg {
    Random,
    Novel,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

fn rt<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    crate::heap::retain_freed_memory();
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let threads = match cli.threads {
        Some(t) => t,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse() {
                Ok(t) => t,
                Err(_) => {
                    eprintln!("error: {THREADS_ENV}={v} is not a thread count");
                    return 2;
                }
            },
            Err(_) => 0,
        },
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command, threads)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn header(pairs: &[(&str, String)]) {
    let mut out = String::from("# resolved config\n");
    for line in render(pairs).lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    print!("{out}");
}

fn dispatch(cmd: Command, threads: usize) -> Result<i32, CliError> {
    let threads_pair = ("threads", threads.to_string());
    match cmd {
        Command::Synth { spec, out, seed } => {
            let spec = match &spec {
                Some(p) => {
                    SceneSpec::from_kv_text(&fs::read_to_string(p).map_err(rt)?).map_err(|e| usage(e.to_string()))?
                }
                None => SceneSpec::default(),
            };
            let mut pairs = spec.to_pairs();
            pairs.extend([("seed", seed.to_string()), ("out", out.display().to_string()), threads_pair]);
            header(&pairs);
            let gen = generate(&spec, seed).map_err(rt)?;
            write_scene(&out, &spec, &gen).map_err(rt)?;
            println!(
                "events {}\nnoise_events {}\nposes {}\ninvisible_landmarks {}",
                gen.events.len(),
                gen.noise_events,
                gen.poses.len(),
                gen.invisible.len()
            );
            Ok(0)
        }
        Command::Ingest { events, poses, r, n, out, width, height, time_unit, association, tolerance_us } => {
            let config = DatasetConfig {
                sensor: SensorDims::new(width, height),
                time_unit,
                chunk_us: r,
                window_events: n,
                labels: LabelOptions { association, tolerance_us },
            };
            config.validate().map_err(|e| usage(e.to_string()))?;
            let mut pairs = config.to_pairs();
            pairs.extend([
                ("events", events.display().to_string()),
                ("poses", poses.display().to_string()),
                ("out", out.display().to_string()),
                threads_pair,
            ]);
            header(&pairs);
            let (ds, stats) = Dataset::ingest(&events, &poses, config).map_err(rt)?;
            ds.save(&out).map_err(rt)?;
            print!("{}", stats.summary());
            Ok(0)
        }
        Command::Train { data, config, out } => {
            let cfg = match &config {
                Some(p) => {
                    RunConfig::from_kv_text(&fs::read_to_string(p).map_err(rt)?).map_err(|e| usage(e.to_string()))?
                }
                None => RunConfig::default(),
            };
            let mut pairs = cfg.to_pairs();
            pairs.extend([("data", data.display().to_string()), ("out", out.display().to_string()), threads_pair]);
            header(&pairs);
            run_train(&data, &cfg, &out).map_err(rt)?;
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            seed,
            train_fraction,
            subset,
            sample_seed,
            rotation_metric,
            report,
        } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(usage("--train-fraction must lie in (0, 1)"));
            }
            let report = report.unwrap_or_else(|| checkpoint.with_extension("eval.jsonl"));
            let mode = match split {
                SplitModeArg::Random => SplitMode::Random,
                SplitModeArg::Novel => SplitMode::Novel,
            };
            let metric = match rotation_metric {
                RotMetric::Geodesic => RotationMetric::Geodesic,
                RotMetric::Euler => RotationMetric::EulerAxis,
            };
            header(&[
                ("checkpoint", checkpoint.display().to_string()),
                ("data", data.display().to_string()),
                ("split", mode.to_string()),
                ("seed", seed.to_string()),
                ("train_fraction", format!("{train_fraction:?}")),
                ("subset", format!("{subset:?}").to_lowercase()),
                ("sample_seed", sample_seed.to_string()),
                ("rotation_metric", format!("{rotation_metric:?}").to_lowercase()),
                ("report", report.display().to_string()),
                threads_pair,
            ]);
            let model = Model::<f32>::load(&checkpoint).map_err(rt)?;
            let ds = Dataset::load(&data).map_err(rt)?;
            let spec = SplitSpec { mode, train_fraction, seed };
            let picked = select(&ds, &spec, subset)?;
            let samples = prepare_samples(&picked, ds.config.sensor, model.config(), sample_seed).map_err(rt)?;
            let rep = evaluate(&model, &samples, metric).map_err(rt)?;
            print!("{}", rep.table());
            fs::write(&report, rep.json_lines()).map_err(rt)?;
            Ok(0)
        }
        Command::Gradcheck { cases, seed } => {
            if cases == 0 {
                return Err(usage("--cases must be positive"));
            }
            header(&[("cases", cases.to_string()), ("seed", seed.to_string()), threads_pair]);
            let rows = run_suite(cases, seed).map_err(rt)?;
            print!("{}", render_table(&rows));
            Ok(if rows.iter().all(|r| r.passed()) { 0 } else { 1 })
        }
        Command::Bench { kernel, n, reps, n_out, k, config } => {
            let n_out = n_out.unwrap_or(n / 2);
            if n == 0 || n_out == 0 || n_out > n || k == 0 || k > n || reps == 0 {
                return Err(usage("need 0 < n_out <= N, 0 < k <= N and reps > 0"));
            }
            header(&[
                ("kernel", format!("{kernel:?}").to_lowercase()),
                ("N", n.to_string()),
                ("n_out", n_out.to_string()),
                ("k", k.to_string()),
                ("reps", reps.to_string()),
                ("config", format!("{config:?}").to_lowercase()),
                threads_pair,
            ]);
            let rows = match kernel {
                Kernel::Fps | Kernel::Knn => {
                    let want = if matches!(kernel, Kernel::Fps) { "fps" } else { "knn" };
                    bench_grouping(n, n_out, k, reps).map_err(rt)?.into_iter().filter(|r| r.kernel == want).collect()
                }
                Kernel::Forward => {
                    let mut cfg = match config {
                        Preset::Standard => ModelConfig::standard(),
                        Preset::Tiny => ModelConfig::tiny(),
                    };
                    if n != cfg.n_points {
                        return Err(usage(format!("forward bench runs the preset's N = {}", cfg.n_points)));
                    }
                    cfg.k = k;
                    cfg.validate().map_err(|e| usage(e.to_string()))?;
                    bench_forward(&cfg, reps, 0).map_err(rt)?
                }
            };
            println!("{}", BenchRow::CSV_HEADER);
            for r in &rows {
                println!("{}", r.csv());
            }
            if let [grouping, _, total] = &rows[..] {
                eprintln!("grouping share of forward latency: {:.3}", grouping.mean_us / total.mean_us);
            }
            Ok(0)
        }
        Command::Attn { checkpoint, data, window, sample_seed } => {
            header(&[
                ("checkpoint", checkpoint.display().to_string()),
                ("data", data.display().to_string()),
                ("window", window.to_string()),
                ("sample_seed", sample_seed.to_string()),
                threads_pair,
            ]);
            let model = Model::<f32>::load(&checkpoint).map_err(rt)?;
            let ds = Dataset::load(&data).map_err(rt)?;
            let w = ds
                .windows
                .iter()
                .find(|w| w.id == window)
                .ok_or_else(|| rt(format!("window {window} is not in the manifest")))?;
            let sample = prepare_samples(std::slice::from_ref(w), ds.config.sensor, model.config(), sample_seed)
                .map_err(rt)?
                .remove(0);
            let weights = model.attention_trace_for_plan(&sample.plan).map_err(rt)?;
            let times = &sample.plan.stages.last().expect("at least one stage").coords;
            println!("index,t,attention");
            for (i, (a, c)) in weights.iter().zip(times).enumerate() {
                println!("{i},{:?},{a:?}", c[2]);
            }
            Ok(0)
        }
    }
}

fn select(ds: &Dataset, spec: &SplitSpec, subset: Subset) -> Result<Vec<crate::event_io::EventWindow>, CliError> {
    let idx: Vec<usize> = match subset {
        Subset::All => (0..ds.windows.len()).collect(),
        _ => {
            let split = make_split(ds.windows.len(), spec).map_err(rt)?;
            if matches!(subset, Subset::Train) {
                split.train
            } else {
                split.test
            }
        }
    };
    Ok(idx.into_iter().map(|i| ds.windows[i].clone()).collect())
}

/// Trains on the configured split, validating on the held-out side, and
/// writes `loss.csv`, `final.pepw`, `best.pepw`, `report.jsonl` and
/// `run.cfg` into `out`.
pub fn run_train(data: &Path, cfg: &RunConfig, out: &Path) -> Result<(), Box<dyn std::error::Error>> {
    let ds = Dataset::load(data)?;
    let split = make_split(ds.windows.len(), &cfg.split)?;
    let samples = prepare_samples(&ds.windows, ds.config.sensor, &cfg.model, cfg.sample_seed)?;
    let pick = |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| samples[i].clone()).collect() };
    let (train_set, test_set) = (pick(&split.train), pick(&split.test));
    fs::create_dir_all(out)?;
    fs::write(out.join("run.cfg"), cfg.render())?;
    let mut csv = fs::File::create(out.join("loss.csv"))?;
    writeln!(csv, "{LOSS_CSV_HEADER}")?;
    println!("{LOSS_CSV_HEADER}");
    let model = Model::<f32>::new(cfg.model.clone(), cfg.seed)?;
    let mut io_err = None;
    let outcome = train(model, &train_set, &test_set, cfg, |rec| {
        println!("{}", rec.csv());
        if let Err(e) = writeln!(csv, "{}", rec.csv()) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    outcome.model.save(out.join("final.pepw"))?;
    outcome.best.save(out.join("best.pepw"))?;
    let report = evaluate(&outcome.model, &test_set, RotationMetric::Geodesic)?;
    fs::write(out.join("report.jsonl"), report.json_lines())?;
    print!("{}", report.table());
    println!("best_epoch {}", outcome.best_epoch);
    Ok(())
}
