use pepnet::event_io::{parse_event_stream, parse_pose_file, EventParseOptions};
use pepnet::synthgen::*;

fn single_landmark(traj: Trajectory, noise_rate: f64) -> SceneSpec {
    SceneSpec {
        landmarks: LandmarkSpec::Explicit(vec![[0.0, 0.0, 2.0]]),
        trajectory: TrajectorySpec::Explicit(traj),
        duration_us: 1_000_000,
        noise_rate,
        ..SceneSpec::default()
    }
}

#[test]
fn crossing_times_follow_the_projection() {
    // u(t) = 120 + fx * (0.1 t - 0.0025) / 2 = 119.75 + 10 t, t in seconds
    let mut traj = Trajectory::stationary();
    traj.p0 = [0.0025, 0.0, 0.0];
    traj.velocity = [-0.1, 0.0, 0.0];
    let out = generate(&single_landmark(traj, 0.0), 0).unwrap();
    assert_eq!(out.events.len(), 10);
    for (e, column) in out.events.iter().zip(120u16..) {
        let t = ((f64::from(column) - 119.75) / 10.0 * 1e6).round() as u64;
        assert_eq!((e.t, e.x, e.y, e.p), (t, column, 90, true));
    }
}

#[test]
fn static_scene_without_noise_is_silent() {
    let out = generate(&single_landmark(Trajectory::stationary(), 0.0), 4).unwrap();
    assert!(out.events.is_empty());
    assert_eq!(out.poses.len(), 201);
}

#[test]
fn doubling_the_noise_rate_doubles_the_noise() {
    let count = |rate: f64| -> usize {
        (0..100)
            .map(|seed| {
                let out = generate(&single_landmark(Trajectory::stationary(), rate), seed).unwrap();
                assert_eq!(out.events.len(), out.noise_events);
                out.noise_events
            })
            .sum()
    };
    let ratio = count(3000.0) as f64 / count(1500.0) as f64;
    assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn default_scene_properties() {
    let spec = SceneSpec { duration_us: 500_000, ..SceneSpec::default() };
    let a = generate(&spec, 7).unwrap();
    let b = generate(&spec, 7).unwrap();
    assert_eq!(a.events, b.events);
    assert_eq!(a.poses, b.poses);
    assert_ne!(a.events, generate(&spec, 8).unwrap().events);

    assert!(a.events.windows(2).all(|w| w[0].t <= w[1].t));
    assert!(a.events.iter().all(|e| u32::from(e.x) < 240 && u32::from(e.y) < 180 && e.t <= spec.duration_us));
    for (i, p) in a.poses.iter().enumerate() {
        assert_eq!(p.t, i as u64 * POSE_PERIOD_US);
        assert_eq!(*p, a.trajectory.pose(p.t));
    }
}

#[test]
fn written_scene_parses_back() {
    let spec = SceneSpec { duration_us: 200_000, ..SceneSpec::default() };
    let out = generate(&spec, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &spec, &out).unwrap();
    let events = std::fs::read(dir.path().join("events.txt")).unwrap();
    let poses = std::fs::read(dir.path().join("poses.txt")).unwrap();
    assert_eq!(parse_event_stream(events.as_slice(), &EventParseOptions::default()).unwrap().items, out.events);
    assert_eq!(parse_pose_file(poses.as_slice()).unwrap().items, out.poses);
    let cfg = std::fs::read_to_string(dir.path().join("scene.cfg")).unwrap();
    assert_eq!(SceneSpec::from_kv_text(&cfg).unwrap(), spec);
}

#[test]
fn invisible_scene_is_an_error() {
    let spec = SceneSpec {
        landmarks: LandmarkSpec::Explicit(vec![[0.0, 0.0, -3.0]]),
        trajectory: TrajectorySpec::Explicit(Trajectory::stationary()),
        ..SceneSpec::default()
    };
    assert!(matches!(generate(&spec, 0), Err(SynthError::NothingVisible)));
}
