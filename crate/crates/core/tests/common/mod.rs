//! Brute-force references shared by the integration suites.
#![allow(dead_code)]

use pepnet::event_io::{sample_and_normalize, Event, EventWindow, SensorDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn d2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// Farthest point sampling recomputing every min-distance from scratch.
pub fn reference_fps(coords: &[[f64; 3]], n_out: usize) -> Vec<usize> {
    let mut picked = vec![0];
    while picked.len() < n_out {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..coords.len() {
            if picked.contains(&i) {
                continue;
            }
            let d = picked.iter().map(|&j| d2(coords[i], coords[j])).fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        picked.push(best.unwrap());
    }
    picked
}

/// Full sort by (distance, index), first `k`, back in index order.
pub fn reference_knn(coords: &[[f64; 3]], centroid: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..coords.len()).collect();
    all.sort_by(|&a, &b| {
        d2(coords[a], coords[centroid]).partial_cmp(&d2(coords[b], coords[centroid])).unwrap().then(a.cmp(&b))
    });
    let mut group = all[..k].to_vec();
    group.sort();
    group
}

/// Random time-sorted set of up to 64 points. Half the instances sit on a
/// coarse integer grid so distance ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let n = rng.gen_range(1..=64);
    let grid = rng.gen_bool(0.5);
    let mut pts: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            if grid {
                [rng.gen_range(0..4) as f64, rng.gen_range(0..4) as f64, rng.gen_range(0..4) as f64]
            } else {
                [rng.gen(), rng.gen(), rng.gen()]
            }
        })
        .collect();
    pts.sort_by(|a, b| a[2].partial_cmp(&b[2]).unwrap());
    pts
}

/// A synthetic window of `n` time-sorted events with random gaps.
pub fn random_window(seed: u64, n: usize) -> EventWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0;
    let events: Vec<Event> = (0..n)
        .map(|_| {
            t += rng.gen_range(0..4);
            Event { t, x: rng.gen_range(0..240), y: rng.gen_range(0..180), p: rng.gen() }
        })
        .collect();
    let t_end = events[n - 1].t.max(1);
    EventWindow { id: seed as usize, first_event: 0, t_start: 0, t_end, span_end: t_end + 1, events, label: None }
}

pub fn window_cloud(seed: u64, n: usize) -> Vec<[f64; 3]> {
    let window = random_window(seed, n + n / 2);
    sample_and_normalize(&window, n, seed, SensorDims::DAVIS240).unwrap().points
}

/// Small but complete network for end-to-end tests.
pub fn small_config() -> pepnet::model::ModelConfig {
    pepnet::model::ModelConfig {
        n_points: 64,
        stage_points: vec![32, 16, 8],
        k: 8,
        regressor_hidden: 32,
        ..pepnet::model::ModelConfig::tiny()
    }
}

/// Labeled samples from a short synthetic scene, windows closing after
/// `2 * n_points` events.
pub fn synth_samples(cfg: &pepnet::model::ModelConfig, count: usize, seed: u64) -> Vec<pepnet::train::Sample> {
    use pepnet::synthgen::{generate, SceneSpec};
    use pepnet::train::{prepare_samples, Dataset, DatasetConfig};
    let spec = SceneSpec { duration_us: 400_000, ..SceneSpec::default() };
    let out = generate(&spec, seed).unwrap();
    let dcfg = DatasetConfig { window_events: 2 * cfg.n_points, ..DatasetConfig::default() };
    let (ds, _) = Dataset::from_streams(out.events, out.poses, dcfg).unwrap();
    assert!(ds.windows.len() >= count, "only {} windows", ds.windows.len());
    prepare_samples(&ds.windows[..count], dcfg.sensor, cfg, seed).unwrap()
}
