//! C ABI for the pepnet library.
//!
//! Every fallible function returns a [`PepStatus`]; on failure a message is
//! kept per thread and can be copied out with [`pep_last_error_message`].
//! Objects cross the boundary as opaque handles that must be released with
//! their matching `*_free` function. Point clouds are row-major `n x 3`
//! `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pepnet::event_io::{
    parse_event_stream, sample_and_normalize, segment_windows, Event, EventIoError, EventParseOptions, EventWindow,
    SensorDims, TimeUnit,
};
use pepnet::model::{Model, ModelError};
use pepnet::point_ops::{farthest_point_order, knn_indices, PointOpsError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PepStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Model = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Trained network loaded from a checkpoint.
pub struct PepModel(Model<f32>);

/// Parsed event stream.
pub struct PepEvents(Vec<Event>);

/// Windows segmented from an event stream.
pub struct PepWindows(Vec<EventWindow>);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Failure(PepStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(PepStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Failure(PepStatus::InvalidArgument, msg.into())
    }
}

impl From<EventIoError> for Failure {
    fn from(e: EventIoError) -> Self {
        let status = match e {
            EventIoError::Io(_) => PepStatus::Io,
            EventIoError::InsufficientEvents { .. }
            | EventIoError::DegenerateWindow { .. }
            | EventIoError::InvalidArgument(_) => PepStatus::InvalidArgument,
            _ => PepStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Io(_) => PepStatus::Io,
            ModelError::Points(_) | ModelError::Batch(_) => PepStatus::InvalidArgument,
            _ => PepStatus::Model,
        };
        Failure(status, e.to_string())
    }
}

impl From<PointOpsError> for Failure {
    fn from(e: PointOpsError) -> Self {
        Failure::invalid(e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PepStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PepStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PepStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Failure> {
    if path.is_null() {
        return Err(Failure::null("path"));
    }
    CStr::from_ptr(path).to_str().map(str::to_owned).map_err(|_| Failure::invalid("path is not UTF-8"))
}

unsafe fn handle<'a, H>(h: *const H, what: &str) -> Result<&'a H, Failure> {
    h.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn cloud_arg(cloud: *const f64, n_points: usize) -> Result<Vec<[f64; 3]>, Failure> {
    if cloud.is_null() {
        return Err(Failure::null("cloud"));
    }
    let len = n_points.checked_mul(3).ok_or_else(|| Failure::invalid("n_points overflows"))?;
    let flat = std::slice::from_raw_parts(cloud, len);
    Ok(flat.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect())
}

unsafe fn out_slice<'a, V>(out: *mut V, len: usize, what: &str) -> Result<&'a mut [V], Failure> {
    if out.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(out, len))
}

unsafe fn store<H>(out: *mut *mut H, value: H) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes. Returns the full message length excluding
/// the terminator; pass a null buffer to query it.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn pep_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint written by `pepnet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pep_model_load(path: *const c_char, out: *mut *mut PepModel) -> PepStatus {
    guard(|| {
        let path = path_arg(path)?;
        let model = Model::<f32>::load(&path)?;
        store(out, PepModel(model))
    })
}

/// # Safety
/// `model` must be null or a handle from [`pep_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pep_model_free(model: *mut PepModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Points per input cloud expected by the model, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pep_model_input_points(model: *const PepModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.config().n_points)
}

/// Trainable scalar count, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pep_model_parameter_count(model: *const PepModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.parameter_count())
}

/// Regresses one pose from a normalized cloud of exactly
/// [`pep_model_input_points`] rows. Writes `[px, py, pz, roll, pitch, yaw]`
/// (radians) to `out_pose`.
///
/// # Safety
/// `cloud` must hold `n_points * 3` doubles and `out_pose` room for 6.
#[no_mangle]
pub unsafe extern "C" fn pep_model_predict(
    model: *const PepModel,
    cloud: *const f64,
    n_points: usize,
    out_pose: *mut f64,
) -> PepStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let cloud = cloud_arg(cloud, n_points)?;
        let out = out_slice(out_pose, 6, "out_pose")?;
        let plan = model.plan(&cloud)?;
        let pred = model.predict(&[&plan])?[0];
        out[..3].copy_from_slice(&pred.p_hat);
        out[3..].copy_from_slice(&pred.q_hat);
        Ok(())
    })
}

/// Attention weights of the recurrent head, one per final-stage point in
/// time order. `*written` receives the trace length; when it exceeds
/// `out_len` nothing is copied and `BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `cloud` must hold `n_points * 3` doubles, `out` room for `out_len`
/// doubles (or be null when `out_len` is 0) and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pep_model_attention(
    model: *const PepModel,
    cloud: *const f64,
    n_points: usize,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> PepStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        let cloud = cloud_arg(cloud, n_points)?;
        if written.is_null() {
            return Err(Failure::null("written"));
        }
        let trace = model.extract_attention_trace(&cloud)?;
        *written = trace.len();
        if trace.len() > out_len {
            return Err(Failure(PepStatus::BufferTooSmall, format!("trace needs {} slots", trace.len())));
        }
        out_slice(out, trace.len(), "out")?.copy_from_slice(&trace);
        Ok(())
    })
}

/// Parses an event file (`t x y p` per line). `microseconds` selects
/// integer-microsecond timestamps instead of decimal seconds.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pep_events_load(
    path: *const c_char,
    width: u32,
    height: u32,
    microseconds: bool,
    out: *mut *mut PepEvents,
) -> PepStatus {
    guard(|| {
        let path = path_arg(path)?;
        if width == 0 || height == 0 {
            return Err(Failure::invalid("sensor dimensions must be positive"));
        }
        let file = File::open(&path).map_err(|e| Failure(PepStatus::Io, format!("{path}: {e}")))?;
        let opts = EventParseOptions {
            sensor: SensorDims::new(width, height),
            time_unit: if microseconds { TimeUnit::Micros } else { TimeUnit::Seconds },
            ..Default::default()
        };
        let parsed = parse_event_stream(BufReader::new(file), &opts)?;
        store(out, PepEvents(parsed.items))
    })
}

/// # Safety
/// `events` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pep_events_len(events: *const PepEvents) -> usize {
    events.as_ref().map_or(0, |e| e.0.len())
}

/// # Safety
/// `events` must be null or a handle from [`pep_events_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pep_events_free(events: *mut PepEvents) {
    if !events.is_null() {
        drop(Box::from_raw(events));
    }
}

/// Splits the stream into windows of whole `chunk_us` spans holding at
/// least `min_events` events each.
///
/// # Safety
/// `events` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pep_windows_segment(
    events: *const PepEvents,
    chunk_us: u64,
    min_events: usize,
    out: *mut *mut PepWindows,
) -> PepStatus {
    guard(|| {
        let events = &handle(events, "events")?.0;
        if chunk_us == 0 || min_events == 0 {
            return Err(Failure::invalid("chunk_us and min_events must be positive"));
        }
        store(out, PepWindows(segment_windows(events, chunk_us, min_events)))
    })
}

/// # Safety
/// `windows` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pep_windows_len(windows: *const PepWindows) -> usize {
    windows.as_ref().map_or(0, |w| w.0.len())
}

/// Start and end timestamps (microseconds) of window `index`.
///
/// # Safety
/// `windows` must be a live handle; `t_start` and `t_end` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pep_windows_span(
    windows: *const PepWindows,
    index: usize,
    t_start: *mut u64,
    t_end: *mut u64,
) -> PepStatus {
    guard(|| {
        let w = window_at(windows, index)?;
        *out_slice(t_start, 1, "t_start")?.first_mut().expect("len 1") = w.t_start;
        *out_slice(t_end, 1, "t_end")?.first_mut().expect("len 1") = w.t_end;
        Ok(())
    })
}

unsafe fn window_at<'a>(windows: *const PepWindows, index: usize) -> Result<&'a EventWindow, Failure> {
    let all = &handle(windows, "windows")?.0;
    all.get(index).ok_or_else(|| Failure::invalid(format!("window {index} out of {}", all.len())))
}

/// Samples `n_points` events of window `index` and writes the normalized
/// cloud (`n_points x 3`) to `out`.
///
/// # Safety
/// `windows` must be a live handle and `out` hold `n_points * 3` doubles.
#[no_mangle]
pub unsafe extern "C" fn pep_windows_cloud(
    windows: *const PepWindows,
    index: usize,
    n_points: usize,
    seed: u64,
    width: u32,
    height: u32,
    out: *mut f64,
) -> PepStatus {
    guard(|| {
        let w = window_at(windows, index)?;
        if width == 0 || height == 0 {
            return Err(Failure::invalid("sensor dimensions must be positive"));
        }
        let cloud = sample_and_normalize(w, n_points, seed, SensorDims::new(width, height))?;
        let out = out_slice(out, n_points * 3, "out")?;
        for (dst, p) in out.chunks_exact_mut(3).zip(&cloud.points) {
            dst.copy_from_slice(p);
        }
        Ok(())
    })
}

/// # Safety
/// `windows` must be null or a handle from [`pep_windows_segment`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn pep_windows_free(windows: *mut PepWindows) {
    if !windows.is_null() {
        drop(Box::from_raw(windows));
    }
}

/// Farthest point sampling seeded at row 0. Writes `n_out` row indices in
/// selection order.
///
/// # Safety
/// `coords` must hold `n * 3` doubles and `out_idx` room for `n_out`.
#[no_mangle]
pub unsafe extern "C" fn pep_fps(coords: *const f64, n: usize, n_out: usize, out_idx: *mut usize) -> PepStatus {
    guard(|| {
        let coords = cloud_arg(coords, n)?;
        let order = farthest_point_order(&coords, n_out)?;
        out_slice(out_idx, n_out, "out_idx")?.copy_from_slice(&order);
        Ok(())
    })
}

/// `k` nearest rows of every centroid (the centroid included), listed in
/// ascending row order so time order is kept. Writes `m * k` indices.
///
/// # Safety
/// `coords` must hold `n * 3` doubles, `centroids` `m` indices and
/// `out_idx` room for `m * k`.
#[no_mangle]
pub unsafe extern "C" fn pep_knn(
    coords: *const f64,
    n: usize,
    centroids: *const usize,
    m: usize,
    k: usize,
    out_idx: *mut usize,
) -> PepStatus {
    guard(|| {
        let coords = cloud_arg(coords, n)?;
        if centroids.is_null() {
            return Err(Failure::null("centroids"));
        }
        let centroids = std::slice::from_raw_parts(centroids, m);
        if let Some(&bad) = centroids.iter().find(|&&c| c >= n) {
            return Err(Failure::invalid(format!("centroid {bad} out of {n}")));
        }
        let idx = knn_indices(&coords, centroids, k)?;
        out_slice(out_idx, m * k, "out_idx")?.copy_from_slice(&idx);
        Ok(())
    })
}

/// Combined score from median translation error and median rotation
/// error in degrees.
#[no_mangle]
pub extern "C" fn pep_t_plus_r(median_trans: f64, median_rot_deg: f64) -> f64 {
    pepnet::train::t_plus_r(median_trans, median_rot_deg)
}
