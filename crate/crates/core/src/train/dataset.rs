//! Ingested dataset directories.
//!
//! ```text
//! DIR/dataset.cfg   key = value: width, height, time_unit, chunk_us, window_events, association, tolerance_us
//! DIR/events.txt    event stream
//! DIR/poses.txt     ground-truth poses
//! DIR/windows.txt   one line per labeled window: id t_start t_end n_events label_pose_index
//! ```
//!
//! The manifest pins window boundaries so training and evaluation never
//! re-run segmentation.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::event_io::{
    label_window, parse_event_stream, parse_pose_file, sample_and_normalize, segment_windows, write_events,
    write_poses, Event, EventIoError, EventParseOptions, EventWindow, LabelOptions, OrderPolicy, PoseAssociation,
    PoseLabel, PoseSample, SensorDims, TimeUnit,
};
use crate::kv::{render, KvMap};
use crate::model::{HierarchyPlan, ModelConfig};

use super::TrainError;

pub const CONFIG_FILE: &str = "dataset.cfg";
pub const EVENTS_FILE: &str = "events.txt";
pub const POSES_FILE: &str = "poses.txt";
pub const MANIFEST_FILE: &str = "windows.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    pub sensor: SensorDims,
    pub time_unit: TimeUnit,
    /// Chunk duration R in microseconds.
    pub chunk_us: u64,
    /// A window closes once its event count exceeds this.
    pub window_events: usize,
    pub labels: LabelOptions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            sensor: SensorDims::DAVIS240,
            time_unit: TimeUnit::Seconds,
            chunk_us: 1000,
            window_events: 1024,
            labels: LabelOptions::default(),
        }
    }
}

impl DatasetConfig {
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("width", self.sensor.width.to_string()),
            ("height", self.sensor.height.to_string()),
            ("time_unit", self.time_unit.to_string()),
            ("chunk_us", self.chunk_us.to_string()),
            ("window_events", self.window_events.to_string()),
            ("association", self.labels.association.to_string()),
            ("tolerance_us", self.labels.tolerance_us.to_string()),
        ]
    }

    pub fn from_kv_text(text: &str) -> Result<Self, TrainError> {
        let mut kv = KvMap::parse(text)?;
        let mut c = Self::default();
        kv.take_into("width", &mut c.sensor.width)?;
        kv.take_into("height", &mut c.sensor.height)?;
        kv.take_into("time_unit", &mut c.time_unit)?;
        kv.take_into("chunk_us", &mut c.chunk_us)?;
        kv.take_into("window_events", &mut c.window_events)?;
        kv.take_into::<PoseAssociation>("association", &mut c.labels.association)?;
        kv.take_into("tolerance_us", &mut c.labels.tolerance_us)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.chunk_us == 0 {
            return Err(TrainError::Config("chunk_us must be positive".into()));
        }
        if self.window_events == 0 {
            return Err(TrainError::Config("window_events must be positive".into()));
        }
        if self.sensor.width == 0 || self.sensor.height == 0 {
            return Err(TrainError::Config("sensor dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub n_events: usize,
    pub label_pose_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub events: usize,
    pub poses: usize,
    pub windows: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    /// Events left in the trailing partial window.
    pub trailing_events: usize,
    pub warnings: usize,
}

impl IngestStats {
    pub fn summary(&self) -> String {
        format!(
            "events {}\nposes {}\nwindows {}\nlabeled {}\nunlabeled {}\ntrailing_events {}\nwarnings {}\n",
            self.events, self.poses, self.windows, self.labeled, self.unlabeled, self.trailing_events, self.warnings
        )
    }
}

/// Labeled windows over one event stream.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub events: Vec<Event>,
    pub poses: Vec<PoseSample>,
    /// Labeled windows in chronological order.
    pub windows: Vec<EventWindow>,
}

impl Dataset {
    /// Segments and labels a stream. Windows without a pose inside the
    /// tolerance are dropped and counted.
    pub fn from_streams(
        events: Vec<Event>,
        poses: Vec<PoseSample>,
        config: DatasetConfig,
    ) -> Result<(Self, IngestStats), TrainError> {
        config.validate()?;
        if poses.is_empty() {
            return Err(EventIoError::NoPoses.into());
        }
        let all = segment_windows(&events, config.chunk_us, config.window_events);
        let covered: usize = all.iter().map(EventWindow::len).sum();
        let mut stats = IngestStats {
            events: events.len(),
            poses: poses.len(),
            windows: all.len(),
            trailing_events: events.len() - all.last().map_or(0, |w| w.first_event + w.len()),
            ..Default::default()
        };
        debug_assert!(covered <= events.len());
        let mut windows = Vec::with_capacity(all.len());
        for mut w in all {
            match label_window(&w, &poses, &config.labels) {
                Ok(label) => {
                    w.label = Some(label);
                    windows.push(w);
                }
                Err(EventIoError::Unlabeled { .. }) => stats.unlabeled += 1,
                Err(e) => return Err(e.into()),
            }
        }
        stats.labeled = windows.len();
        Ok((Self { config, events, poses, windows }, stats))
    }

    /// Parses raw event and pose files.
    pub fn ingest(
        events_path: &Path,
        poses_path: &Path,
        config: DatasetConfig,
    ) -> Result<(Self, IngestStats), TrainError> {
        let opts = EventParseOptions { sensor: config.sensor, time_unit: config.time_unit, order: OrderPolicy::Reject };
        let ev = parse_event_stream(BufReader::new(File::open(events_path)?), &opts)?;
        let po = parse_pose_file(BufReader::new(File::open(poses_path)?))?;
        for w in ev.warnings.iter().chain(&po.warnings) {
            log::warn!("line {}: {}", w.line, w.message);
        }
        let warnings = ev.warnings.len() + po.warnings.len();
        let (ds, mut stats) = Self::from_streams(ev.items, po.items, config)?;
        stats.warnings = warnings;
        Ok((ds, stats))
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.windows
            .iter()
            .map(|w| ManifestEntry {
                id: w.id,
                t_start: w.t_start,
                t_end: w.t_end,
                n_events: w.len(),
                label_pose_index: w.label.expect("dataset windows are labeled").pose_index,
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), render(&self.config.to_pairs()))?;
        let mut ev = BufWriter::new(File::create(dir.join(EVENTS_FILE))?);
        write_events(&mut ev, &self.events, self.config.time_unit)?;
        ev.flush()?;
        let mut po = BufWriter::new(File::create(dir.join(POSES_FILE))?);
        write_poses(&mut po, &self.poses)?;
        po.flush()?;
        let mut mf = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
        writeln!(mf, "# id t_start t_end n_events label_pose_index")?;
        for e in self.manifest() {
            writeln!(mf, "{} {} {} {} {}", e.id, e.t_start, e.t_end, e.n_events, e.label_pose_index)?;
        }
        mf.flush()?;
        Ok(())
    }

    /// Loads a directory written by [`Dataset::save`], rebuilding windows
    /// from the manifest without re-segmenting.
    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let config = DatasetConfig::from_kv_text(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let opts = EventParseOptions { sensor: config.sensor, time_unit: config.time_unit, order: OrderPolicy::Reject };
        let events = parse_event_stream(BufReader::new(File::open(dir.join(EVENTS_FILE))?), &opts)?.items;
        let poses = parse_pose_file(BufReader::new(File::open(dir.join(POSES_FILE))?))?.items;
        let manifest = parse_manifest(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let mut windows = Vec::with_capacity(manifest.len());
        for e in manifest {
            let first = events.partition_point(|ev| ev.t < e.t_start);
            let last = events.partition_point(|ev| ev.t <= e.t_end);
            if last - first != e.n_events || e.t_end < e.t_start {
                return Err(TrainError::Data(format!(
                    "window {} lists {} events but the stream holds {} in [{}, {}]",
                    e.id,
                    e.n_events,
                    last - first,
                    e.t_start,
                    e.t_end
                )));
            }
            let pose = poses.get(e.label_pose_index).ok_or_else(|| {
                TrainError::Data(format!("window {} labels missing pose {}", e.id, e.label_pose_index))
            })?;
            let chunks = (e.t_end - e.t_start) / config.chunk_us + 1;
            windows.push(EventWindow {
                id: e.id,
                first_event: first,
                events: events[first..last].to_vec(),
                t_start: e.t_start,
                t_end: e.t_end,
                span_end: e.t_start + chunks * config.chunk_us,
                label: Some(PoseLabel::from_pose(pose, e.label_pose_index)),
            });
        }
        Ok(Self { config, events, poses, windows })
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, TrainError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || TrainError::Data(format!("{MANIFEST_FILE} line {}: expected 5 integers", i + 1));
        let f: Vec<u64> = line.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| bad())?;
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(ManifestEntry {
            id: f[0] as usize,
            t_start: f[1],
            t_end: f[2],
            n_events: f[3] as usize,
            label_pose_index: f[4] as usize,
        });
    }
    Ok(out)
}

/// A window reduced to what the network consumes.
#[derive(Debug, Clone)]
pub struct Sample {
    pub window_id: usize,
    pub cloud: Vec<[f64; 3]>,
    pub label: PoseLabel,
    pub plan: HierarchyPlan,
}

/// Per-window sampling seed, independent of processing order.
pub fn window_seed(seed: u64, window_id: usize) -> u64 {
    seed ^ (window_id as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Samples, normalizes and plans every window in parallel. Output order
/// follows `windows`.
pub fn prepare_samples(
    windows: &[EventWindow],
    sensor: SensorDims,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<Vec<Sample>, TrainError> {
    windows
        .par_iter()
        .map(|w| {
            let label = w.label.ok_or_else(|| TrainError::Data(format!("window {} is unlabeled", w.id)))?;
            let cloud = sample_and_normalize(w, cfg.n_points, window_seed(seed, w.id), sensor)?;
            let plan = HierarchyPlan::build(&cloud.points, cfg).map_err(crate::model::ModelError::from)?;
            Ok(Sample { window_id: w.id, cloud: cloud.points, label, plan })
        })
        .collect()
}
