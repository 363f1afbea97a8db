use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Event, EventIoError, EventWindow, NormalizedCloud, PoseLabel, PoseSample, SensorDims};

/// Splits a time-sorted stream into windows.
///
/// Starting at the first unconsumed event, chunks of `chunk_us` are
/// accumulated until the window holds more than `threshold` events. A
/// trailing run that never exceeds the threshold is dropped.
pub fn segment_windows(events: &[Event], chunk_us: u64, threshold: usize) -> Vec<EventWindow> {
    assert!(chunk_us > 0, "chunk duration must be positive");
    let mut windows = Vec::new();
    let n = events.len();
    let mut start = 0;
    while start < n {
        let anchor = events[start].t;
        let mut span_end = anchor;
        let mut end = start;
        loop {
            span_end += chunk_us;
            while end < n && events[end].t < span_end {
                end += 1;
            }
            if end - start > threshold {
                break;
            }
            if end == n {
                return windows;
            }
            // Skip empty chunks in one step.
            let gap = events[end].t - span_end;
            span_end += gap / chunk_us * chunk_us;
        }
        windows.push(EventWindow {
            id: windows.len(),
            first_event: start,
            events: events[start..end].to_vec(),
            t_start: anchor,
            t_end: events[end - 1].t,
            span_end,
            label: None,
        });
        start = end;
    }
    windows
}

/// Which instant of a window is matched against the pose list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoseAssociation {
    Start,
    Mid,
    #[default]
    End,
}

impl std::str::FromStr for PoseAssociation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "start" => Ok(Self::Start),
            "mid" => Ok(Self::Mid),
            "end" => Ok(Self::End),
            other => Err(format!("unknown pose association `{other}`")),
        }
    }
}

impl std::fmt::Display for PoseAssociation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Start => "start",
            Self::Mid => "mid",
            Self::End => "end",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelOptions {
    pub association: PoseAssociation,
    pub tolerance_us: u64,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self { association: PoseAssociation::End, tolerance_us: 10_000 }
    }
}

/// Labels a window with the pose nearest to its reference instant
/// (earlier pose on exact ties).
pub fn label_window(
    window: &EventWindow,
    poses: &[PoseSample],
    opts: &LabelOptions,
) -> Result<PoseLabel, EventIoError> {
    if poses.is_empty() {
        return Err(EventIoError::NoPoses);
    }
    let t_ref = match opts.association {
        PoseAssociation::Start => window.t_start,
        PoseAssociation::End => window.t_end,
        PoseAssociation::Mid => window.t_start + (window.t_end - window.t_start) / 2,
    };
    let after = poses.partition_point(|p| p.t < t_ref);
    let mut best = None;
    for idx in [after.checked_sub(1), Some(after)].into_iter().flatten() {
        if let Some(pose) = poses.get(idx) {
            let d = pose.t.abs_diff(t_ref);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((idx, d));
            }
        }
    }
    let (idx, distance) = best.expect("non-empty pose list");
    if distance > opts.tolerance_us {
        return Err(EventIoError::Unlabeled { t_ref, distance_us: distance, tolerance_us: opts.tolerance_us });
    }
    Ok(PoseLabel::from_pose(&poses[idx], idx))
}

/// Draws `n` events uniformly without replacement, restores time order and
/// maps them into the unit cube using the window's first and last timestamps.
pub fn sample_and_normalize(
    window: &EventWindow,
    n: usize,
    seed: u64,
    sensor: SensorDims,
) -> Result<NormalizedCloud, EventIoError> {
    if n < 2 {
        return Err(EventIoError::InvalidArgument(format!("sample size {n} < 2")));
    }
    if window.len() < n {
        return Err(EventIoError::InsufficientEvents { have: window.len(), need: n });
    }
    let t_first = window.events[0].t;
    let t_last = window.events[window.len() - 1].t;
    if t_last == t_first {
        return Err(EventIoError::DegenerateWindow { t: t_first });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, window.len(), n).into_vec();
    picked.sort_unstable();
    let span = (t_last - t_first) as f64;
    let (w, h) = (f64::from(sensor.width), f64::from(sensor.height));
    let points = picked
        .into_iter()
        .map(|i| {
            let e = &window.events[i];
            [f64::from(e.x) / w, f64::from(e.y) / h, (e.t - t_first) as f64 / span]
        })
        .collect();
    Ok(NormalizedCloud { points, source_window_id: window.id })
}
