//! Event-stream and ground-truth ingestion.
//!
//! Text formats, one record per line, `#` comments and blank lines ignored:
//!
//! * events: `t x y p` with `t` in seconds (decimal) or integer microseconds
//! * poses: `t px py pz qx qy qz qw` with `t` in seconds
//!
//! All timestamps are held internally as integer microseconds.

mod parse;
mod window;

pub use parse::{
    format_seconds, parse_event_stream, parse_pose_file, parse_seconds_to_us, write_events, write_poses,
    EventParseOptions, OrderPolicy, ParseOutcome, ParseWarning, TimeUnit,
};
pub use window::{label_window, sample_and_normalize, segment_windows, LabelOptions, PoseAssociation};

use crate::geometry::Quaternion;

/// One DVS event. `p` is the polarity (true = ON).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: u64,
    pub p: [f64; 3],
    pub q: Quaternion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorDims {
    pub width: u32,
    pub height: u32,
}

impl SensorDims {
    /// DAVIS240 resolution.
    pub const DAVIS240: SensorDims = SensorDims { width: 240, height: 180 };

    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }
}

/// Regression target for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLabel {
    pub p: [f64; 3],
    /// Z-Y-X Euler angles `[roll, pitch, yaw]` in radians.
    pub q_euler: [f64; 3],
    pub q_quat: Quaternion,
    /// Index into the pose list the label was taken from.
    pub pose_index: usize,
}

impl PoseLabel {
    pub fn from_pose(pose: &PoseSample, pose_index: usize) -> Self {
        Self { p: pose.p, q_euler: pose.q.to_euler(), q_quat: pose.q, pose_index }
    }
}

/// A run of consecutive events closed once its count exceeded the
/// window threshold.
///
/// `t_start`/`t_end` are the first and last event timestamps; the window
/// spans the chunk-aligned interval `[t_start, span_end)` whose length is a
/// whole number of chunk durations.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub id: usize,
    /// Offset of the first event in the source stream.
    pub first_event: usize,
    pub events: Vec<Event>,
    pub t_start: u64,
    pub t_end: u64,
    pub span_end: u64,
    pub label: Option<PoseLabel>,
}

impl EventWindow {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// `N x 3` rows of `(x/w, y/h, (t - t_j)/(t_l - t_j))`, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCloud {
    pub points: Vec<[f64; 3]>,
    pub source_window_id: usize,
}

impl NormalizedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EventIoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: event ({x}, {y}) outside sensor {width}x{height}")]
    OutOfBounds { line: usize, x: u64, y: u64, width: u32, height: u32 },
    #[error("line {line}: timestamp {t}us precedes previous timestamp {prev}us")]
    Unordered { line: usize, prev: u64, t: u64 },
    #[error("line {line}: pose timestamp {t}us is not strictly increasing")]
    DuplicatePoseTimestamp { line: usize, t: u64 },
    #[error("window has {have} events, {need} required")]
    InsufficientEvents { have: usize, need: usize },
    #[error("window starting at {t}us has zero duration")]
    DegenerateWindow { t: u64 },
    #[error("no pose within {tolerance_us}us of t={t_ref}us (nearest is {distance_us}us away)")]
    Unlabeled { t_ref: u64, distance_us: u64, tolerance_us: u64 },
    #[error("pose list is empty")]
    NoPoses,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
