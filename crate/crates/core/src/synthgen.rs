//! Synthetic event streams with analytic ground truth.
//!
//! Landmarks are projected through a pinhole camera moving along a smooth
//! parametric trajectory. Every time a projection crosses a pixel boundary
//! an event is emitted at the linearly interpolated crossing time, with
//! polarity given by the crossing direction. Uniform background noise is
//! added with Poisson-distributed counts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::event_io::{write_events, write_poses, Event, PoseSample, SensorDims, TimeUnit};
use crate::geometry::{euler_to_matrix, mat_vec, sub3, transpose, Quaternion};
use crate::kv::{render, KvError, KvMap};

pub const POSE_PERIOD_US: u64 = 5000;
/// Fine projection steps over the whole duration.
pub const FINE_STEPS: u64 = 100_000;
/// Points closer than this to the image plane are not projected.
pub const MIN_DEPTH: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("no landmark is ever visible")]
    NothingVisible,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Camera {
    fn default() -> Self {
        Self { fx: 200.0, fy: 200.0, cx: 120.0, cy: 90.0, width: 240, height: 180 }
    }
}

impl Camera {
    pub fn sensor(&self) -> SensorDims {
        SensorDims::new(self.width, self.height)
    }

    /// Image coordinates of a camera-frame point, if in front of the camera.
    pub fn project(&self, xc: [f64; 3]) -> Option<[f64; 2]> {
        (xc[2] > MIN_DEPTH).then(|| [self.fx * xc[0] / xc[2] + self.cx, self.fy * xc[1] / xc[2] + self.cy])
    }

    fn in_bounds(&self, px: i64, py: i64) -> bool {
        px >= 0 && py >= 0 && px < i64::from(self.width) && py < i64::from(self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinusoid {
    pub amp: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

impl Sinusoid {
    pub fn at(&self, t_s: f64) -> f64 {
        self.amp * (std::f64::consts::TAU * self.freq_hz * t_s + self.phase).sin()
    }
}

/// `p(t) = p0 + v t + sum sinusoids`, Euler angles `e0 + sum sinusoids`,
/// with `t` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub p0: [f64; 3],
    pub velocity: [f64; 3],
    pub trans: [Vec<Sinusoid>; 3],
    pub euler0: [f64; 3],
    pub rot: [Vec<Sinusoid>; 3],
}

impl Trajectory {
    pub fn stationary() -> Self {
        Self { p0: [0.0; 3], velocity: [0.0; 3], trans: Default::default(), euler0: [0.0; 3], rot: Default::default() }
    }

    pub fn position(&self, t_us: f64) -> [f64; 3] {
        let t = t_us * 1e-6;
        [0, 1, 2].map(|a| self.p0[a] + self.velocity[a] * t + self.trans[a].iter().map(|s| s.at(t)).sum::<f64>())
    }

    pub fn euler(&self, t_us: f64) -> [f64; 3] {
        let t = t_us * 1e-6;
        [0, 1, 2].map(|a| self.euler0[a] + self.rot[a].iter().map(|s| s.at(t)).sum::<f64>())
    }

    pub fn pose(&self, t_us: u64) -> PoseSample {
        let t = t_us as f64;
        PoseSample { t: t_us, p: self.position(t), q: Quaternion::from_euler(self.euler(t)) }
    }

    /// World point in the camera frame, `R^T (x - p)`.
    pub fn to_camera(&self, t_us: f64, x: [f64; 3]) -> [f64; 3] {
        let r = euler_to_matrix(self.euler(t_us));
        mat_vec(&transpose(&r), sub3(x, self.position(t_us)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LandmarkSpec {
    /// Uniform in the axis-aligned box `[min, max]`.
    Random {
        count: usize,
        min: [f64; 3],
        max: [f64; 3],
    },
    Explicit(Vec<[f64; 3]>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec {
    /// Seeded sinusoids: each axis gets `harmonics` terms with amplitudes
    /// drawn up to `trans_amp` (m) / `rot_amp` (rad) and frequencies up to
    /// `max_freq_hz`.
    Random {
        velocity: [f64; 3],
        trans_amp: f64,
        rot_amp: f64,
        harmonics: usize,
        max_freq_hz: f64,
    },
    Explicit(Trajectory),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub landmarks: LandmarkSpec,
    pub camera: Camera,
    pub trajectory: TrajectorySpec,
    pub duration_us: u64,
    /// Background noise, events per second.
    pub noise_rate: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            landmarks: LandmarkSpec::Random { count: 200, min: [-2.0, -1.5, 3.0], max: [2.0, 1.5, 6.0] },
            camera: Camera::default(),
            trajectory: TrajectorySpec::Random {
                velocity: [0.0; 3],
                trans_amp: 0.3,
                rot_amp: 0.15,
                harmonics: 2,
                max_freq_hz: 1.0,
            },
            duration_us: 2_000_000,
            noise_rate: 2000.0,
        }
    }
}

fn parse_vec3(key: &str, v: &str) -> Result<[f64; 3], KvError> {
    let bad = |reason: String| KvError::Value { key: key.into(), value: v.into(), reason };
    let parts: Vec<f64> =
        v.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| bad(e.to_string()))?;
    <[f64; 3]>::try_from(parts).map_err(|_| bad("expected three comma-separated numbers".into()))
}

fn fmt_vec3(v: [f64; 3]) -> String {
    format!("{:?},{:?},{:?}", v[0], v[1], v[2])
}

impl SceneSpec {
    /// Parses the randomized scene form. Keys: `landmarks`, `box_min`,
    /// `box_max`, `fx`, `fy`, `cx`, `cy`, `width`, `height`, `duration_us`,
    /// `noise_rate`, `velocity`, `trans_amp`, `rot_amp`, `harmonics`,
    /// `max_freq_hz`.
    pub fn from_kv_text(text: &str) -> Result<Self, SynthError> {
        let mut kv = KvMap::parse(text)?;
        let mut s = Self::default();
        let (
            LandmarkSpec::Random { count, min, max },
            TrajectorySpec::Random { velocity, trans_amp, rot_amp, harmonics, max_freq_hz },
        ) = (&mut s.landmarks, &mut s.trajectory)
        else {
            unreachable!("default spec is randomized")
        };
        kv.take_into("landmarks", count)?;
        if let Some(v) = kv.take_str("box_min") {
            *min = parse_vec3("box_min", &v)?;
        }
        if let Some(v) = kv.take_str("box_max") {
            *max = parse_vec3("box_max", &v)?;
        }
        if let Some(v) = kv.take_str("velocity") {
            *velocity = parse_vec3("velocity", &v)?;
        }
        kv.take_into("trans_amp", trans_amp)?;
        kv.take_into("rot_amp", rot_amp)?;
        kv.take_into("harmonics", harmonics)?;
        kv.take_into("max_freq_hz", max_freq_hz)?;
        let c = &mut s.camera;
        kv.take_into("fx", &mut c.fx)?;
        kv.take_into("fy", &mut c.fy)?;
        kv.take_into("cx", &mut c.cx)?;
        kv.take_into("cy", &mut c.cy)?;
        kv.take_into("width", &mut c.width)?;
        kv.take_into("height", &mut c.height)?;
        kv.take_into("duration_us", &mut s.duration_us)?;
        kv.take_into("noise_rate", &mut s.noise_rate)?;
        kv.finish()?;
        s.validate()?;
        Ok(s)
    }

    /// Key/value form; explicit landmark lists and trajectories are
    /// summarized rather than serialized.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut p = Vec::new();
        match &self.landmarks {
            LandmarkSpec::Random { count, min, max } => {
                p.push(("landmarks", count.to_string()));
                p.push(("box_min", fmt_vec3(*min)));
                p.push(("box_max", fmt_vec3(*max)));
            }
            LandmarkSpec::Explicit(l) => p.push(("explicit_landmarks", l.len().to_string())),
        }
        let c = &self.camera;
        p.extend([
            ("fx", format!("{:?}", c.fx)),
            ("fy", format!("{:?}", c.fy)),
            ("cx", format!("{:?}", c.cx)),
            ("cy", format!("{:?}", c.cy)),
            ("width", c.width.to_string()),
            ("height", c.height.to_string()),
            ("duration_us", self.duration_us.to_string()),
            ("noise_rate", format!("{:?}", self.noise_rate)),
        ]);
        match &self.trajectory {
            TrajectorySpec::Random { velocity, trans_amp, rot_amp, harmonics, max_freq_hz } => p.extend([
                ("velocity", fmt_vec3(*velocity)),
                ("trans_amp", format!("{trans_amp:?}")),
                ("rot_amp", format!("{rot_amp:?}")),
                ("harmonics", harmonics.to_string()),
                ("max_freq_hz", format!("{max_freq_hz:?}")),
            ]),
            TrajectorySpec::Explicit(_) => p.push(("explicit_trajectory", "true".into())),
        }
        p
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Spec(m.into()));
        match &self.landmarks {
            LandmarkSpec::Random { count, min, max } => {
                if *count == 0 {
                    return bad("at least one landmark is required");
                }
                if (0..3).any(|a| !(min[a] <= max[a])) {
                    return bad("box_min must not exceed box_max");
                }
            }
            LandmarkSpec::Explicit(l) if l.is_empty() => return bad("at least one landmark is required"),
            LandmarkSpec::Explicit(_) => {}
        }
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || c.width > u32::from(u16::MAX) || c.height > u32::from(u16::MAX) {
            return bad("sensor dimensions must be in 1..=65535");
        }
        if !(c.fx > 0.0 && c.fy > 0.0) {
            return bad("focal lengths must be positive");
        }
        if self.duration_us == 0 {
            return bad("duration_us must be positive");
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return bad("noise_rate must be finite and >= 0");
        }
        if let TrajectorySpec::Random { max_freq_hz, .. } = &self.trajectory {
            if !(*max_freq_hz > 0.0) {
                return bad("max_freq_hz must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub events: Vec<Event>,
    pub poses: Vec<PoseSample>,
    pub trajectory: Trajectory,
    pub landmarks: Vec<[f64; 3]>,
    /// Landmarks that never projected inside the sensor.
    pub invisible: Vec<usize>,
    pub noise_events: usize,
}

fn random_trajectory(rng: &mut ChaCha8Rng, spec: &TrajectorySpec) -> Trajectory {
    match spec {
        TrajectorySpec::Explicit(t) => t.clone(),
        &TrajectorySpec::Random { velocity, trans_amp, rot_amp, harmonics, max_freq_hz } => {
            let mut terms = |amp: f64| -> [Vec<Sinusoid>; 3] {
                [(); 3].map(|_| {
                    (0..harmonics)
                        .map(|_| Sinusoid {
                            amp: amp * rng.gen_range(0.3..=1.0),
                            freq_hz: max_freq_hz * rng.gen_range(0.2..=1.0),
                            phase: rng.gen_range(0.0..std::f64::consts::TAU),
                        })
                        .collect()
                })
            };
            let trans = terms(trans_amp);
            let rot = terms(rot_amp);
            Trajectory { p0: [0.0; 3], velocity, trans, euler0: [0.0; 3], rot }
        }
    }
}

/// Boundary-crossing events of one landmark as `(t_us, x, y, polarity)`.
fn landmark_events(
    cam: &Camera,
    traj: &Trajectory,
    x: [f64; 3],
    duration_us: u64,
) -> (Vec<(f64, u16, u16, bool)>, bool) {
    let dt = duration_us as f64 / FINE_STEPS as f64;
    let mut out = Vec::new();
    let mut seen = false;
    let mut prev: Option<(f64, [f64; 2])> = None;
    for i in 0..=FINE_STEPS {
        let t = i as f64 * dt;
        let cur = cam.project(traj.to_camera(t, x));
        if let Some(uv) = cur {
            seen |= cam.in_bounds(uv[0].floor() as i64, uv[1].floor() as i64);
        }
        if let (Some((t0, a)), Some(b)) = (prev, cur) {
            crossings(cam, t0, a, t, b, &mut out);
        }
        prev = cur.map(|uv| (t, uv));
    }
    (out, seen)
}

/// Emits one event per integer pixel boundary crossed on the segment
/// `a -> b`, in time order.
fn crossings(cam: &Camera, t0: f64, a: [f64; 2], t1: f64, b: [f64; 2], out: &mut Vec<(f64, u16, u16, bool)>) {
    let mut hits: Vec<(f64, usize, bool, i64)> = Vec::new();
    for axis in 0..2 {
        let (pa, pb) = (a[axis].floor(), b[axis].floor());
        if pa == pb {
            continue;
        }
        let up = pb > pa;
        let (lo, hi) = if up { (pa + 1.0, pb) } else { (pb + 1.0, pa) };
        let mut boundary = lo;
        while boundary <= hi {
            let f = (boundary - a[axis]) / (b[axis] - a[axis]);
            hits.push((f, axis, up, boundary as i64));
            boundary += 1.0;
        }
    }
    hits.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.cmp(&r.1)));
    for (f, axis, up, boundary) in hits {
        let u = a[0] + f * (b[0] - a[0]);
        let v = a[1] + f * (b[1] - a[1]);
        // The pixel being entered: the boundary itself when moving up, the
        // one below it when moving down.
        let mut px = [u.floor() as i64, v.floor() as i64];
        px[axis] = if up { boundary } else { boundary - 1 };
        if cam.in_bounds(px[0], px[1]) {
            out.push((t0 + f * (t1 - t0), px[0] as u16, px[1] as u16, up));
        }
    }
}

/// Generates events and 5 ms pose samples for a scene.
pub fn generate(spec: &SceneSpec, seed: u64) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let landmarks = match &spec.landmarks {
        LandmarkSpec::Explicit(l) => l.clone(),
        LandmarkSpec::Random { count, min, max } => (0..*count)
            .map(|_| [0, 1, 2].map(|a| if min[a] == max[a] { min[a] } else { rng.gen_range(min[a]..=max[a]) }))
            .collect(),
    };
    let trajectory = random_trajectory(&mut rng, &spec.trajectory);
    let cam = spec.camera;

    let per_landmark: Vec<_> =
        landmarks.par_iter().map(|&x| landmark_events(&cam, &trajectory, x, spec.duration_us)).collect();
    let invisible: Vec<usize> =
        per_landmark.iter().enumerate().filter(|(_, (_, seen))| !seen).map(|(i, _)| i).collect();
    for &i in &invisible {
        log::warn!("landmark {i} is never visible");
    }
    if invisible.len() == landmarks.len() {
        return Err(SynthError::NothingVisible);
    }

    let mut timed: Vec<(f64, u16, u16, bool)> = per_landmark.into_iter().flat_map(|(ev, _)| ev).collect();
    let mean_noise = spec.noise_rate * spec.duration_us as f64 * 1e-6;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6E6F_6973_6500_0000);
    let noise_events = if mean_noise > 0.0 {
        Poisson::new(mean_noise).map_err(|e| SynthError::Spec(e.to_string()))?.sample(&mut noise_rng) as usize
    } else {
        0
    };
    for _ in 0..noise_events {
        timed.push((
            noise_rng.gen_range(0.0..spec.duration_us as f64),
            noise_rng.gen_range(0..cam.width) as u16,
            noise_rng.gen_range(0..cam.height) as u16,
            noise_rng.gen(),
        ));
    }
    // Stable, so simultaneous events keep landmark order.
    timed.sort_by(|a, b| a.0.total_cmp(&b.0));
    let events =
        timed.into_iter().map(|(t, x, y, p)| Event { t: (t.round() as u64).min(spec.duration_us), x, y, p }).collect();

    let poses = (0..=spec.duration_us / POSE_PERIOD_US).map(|i| trajectory.pose(i * POSE_PERIOD_US)).collect();
    Ok(SynthOutput { events, poses, trajectory, landmarks, invisible, noise_events })
}

/// Writes `events.txt` (seconds), `poses.txt` and `scene.cfg` into `dir`.
pub fn write_scene(dir: &Path, spec: &SceneSpec, out: &SynthOutput) -> Result<(), SynthError> {
    fs::create_dir_all(dir)?;
    let mut ev = BufWriter::new(File::create(dir.join("events.txt"))?);
    write_events(&mut ev, &out.events, TimeUnit::Seconds)?;
    ev.flush()?;
    let mut po = BufWriter::new(File::create(dir.join("poses.txt"))?);
    write_poses(&mut po, &out.poses)?;
    po.flush()?;
    fs::write(dir.join("scene.cfg"), render(&spec.to_pairs()))?;
    Ok(())
}
