use std::io::{BufRead, Write};

use super::{Event, EventIoError, PoseSample, SensorDims};
use crate::geometry::Quaternion;

/// Unit of the timestamp column in event files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeUnit {
    #[default]
    Seconds,
    Micros,
}

impl std::str::FromStr for TimeUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "s" | "sec" | "seconds" => Ok(TimeUnit::Seconds),
            "us" | "micros" => Ok(TimeUnit::Micros),
            other => Err(format!("unknown time unit `{other}` (expected s or us)")),
        }
    }
}

impl std::fmt::Display for TimeUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TimeUnit::Seconds => "s",
            TimeUnit::Micros => "us",
        })
    }
}

/// What to do when an event timestamp goes backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderPolicy {
    #[default]
    Reject,
    WarnAndSort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventParseOptions {
    pub sensor: SensorDims,
    pub time_unit: TimeUnit,
    pub order: OrderPolicy,
}

impl Default for EventParseOptions {
    fn default() -> Self {
        Self { sensor: SensorDims::DAVIS240, time_unit: TimeUnit::Seconds, order: OrderPolicy::Reject }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome<T> {
    pub items: Vec<T>,
    pub warnings: Vec<ParseWarning>,
}

fn significant(line: &str) -> Option<&str> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        None
    } else {
        Some(line)
    }
}

/// Exact decimal-seconds to microseconds conversion, rounding half up past
/// the sixth fractional digit.
pub fn parse_seconds_to_us(s: &str) -> Option<u64> {
    let s = s.strip_prefix('+').unwrap_or(s);
    if s.contains(['e', 'E']) {
        let v: f64 = s.parse().ok()?;
        if !v.is_finite() || v < 0.0 {
            return None;
        }
        return Some((v * 1e6).round() as u64);
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut micros = 0u64;
    for (i, b) in frac_part.bytes().take(6).enumerate() {
        micros += u64::from(b - b'0') * 10u64.pow(5 - i as u32);
    }
    if frac_part.len() > 6 && frac_part.as_bytes()[6] >= b'5' {
        micros += 1;
    }
    whole.checked_mul(1_000_000)?.checked_add(micros)
}

pub fn format_seconds(t_us: u64) -> String {
    format!("{}.{:06}", t_us / 1_000_000, t_us % 1_000_000)
}

fn field<'a>(fields: &mut std::str::SplitWhitespace<'a>, line: usize, name: &str) -> Result<&'a str, EventIoError> {
    fields.next().ok_or_else(|| EventIoError::Parse { line, msg: format!("missing field `{name}`") })
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T, EventIoError> {
    s.parse().map_err(|_| EventIoError::Parse { line, msg: format!("invalid {name} `{s}`") })
}

/// Parses `t x y p` lines into events in file order.
pub fn parse_event_stream<R: BufRead>(
    source: R,
    opts: &EventParseOptions,
) -> Result<ParseOutcome<Event>, EventIoError> {
    let mut events = Vec::new();
    let mut warnings = Vec::new();
    let mut unsorted = false;
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let Some(body) = significant(&line) else {
            continue;
        };
        let mut fields = body.split_whitespace();
        let t_str = field(&mut fields, line_no, "t")?;
        let t = match opts.time_unit {
            TimeUnit::Seconds => parse_seconds_to_us(t_str)
                .ok_or_else(|| EventIoError::Parse { line: line_no, msg: format!("invalid timestamp `{t_str}`") })?,
            TimeUnit::Micros => parse_num::<u64>(t_str, line_no, "timestamp")?,
        };
        let x: u64 = parse_num(field(&mut fields, line_no, "x")?, line_no, "x")?;
        let y: u64 = parse_num(field(&mut fields, line_no, "y")?, line_no, "y")?;
        let p = match field(&mut fields, line_no, "p")? {
            "1" | "+1" => true,
            "0" | "-1" => false,
            other => return Err(EventIoError::Parse { line: line_no, msg: format!("invalid polarity `{other}`") }),
        };
        if let Some(extra) = fields.next() {
            return Err(EventIoError::Parse { line: line_no, msg: format!("unexpected field `{extra}`") });
        }
        let SensorDims { width, height } = opts.sensor;
        if x >= u64::from(width) || y >= u64::from(height) {
            return Err(EventIoError::OutOfBounds { line: line_no, x, y, width, height });
        }
        if let Some(prev) = events.last().map(|e: &Event| e.t) {
            if t < prev {
                match opts.order {
                    OrderPolicy::Reject => return Err(EventIoError::Unordered { line: line_no, prev, t }),
                    OrderPolicy::WarnAndSort => {
                        log::warn!("line {line_no}: timestamp {t}us precedes {prev}us");
                        warnings.push(ParseWarning {
                            line: line_no,
                            message: format!("timestamp {t}us precedes {prev}us"),
                        });
                        unsorted = true;
                    }
                }
            }
        }
        events.push(Event { t, x: x as u16, y: y as u16, p });
    }
    if unsorted {
        events.sort_by_key(|e| e.t);
    }
    Ok(ParseOutcome { items: events, warnings })
}

/// Parses `t px py pz qx qy qz qw` lines. Quaternions further than 1e-3 from
/// unit norm are renormalized with a warning.
pub fn parse_pose_file<R: BufRead>(source: R) -> Result<ParseOutcome<PoseSample>, EventIoError> {
    let mut poses: Vec<PoseSample> = Vec::new();
    let mut warnings = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let Some(body) = significant(&line) else {
            continue;
        };
        let mut fields = body.split_whitespace();
        let t_str = field(&mut fields, line_no, "t")?;
        let t = parse_seconds_to_us(t_str)
            .ok_or_else(|| EventIoError::Parse { line: line_no, msg: format!("invalid timestamp `{t_str}`") })?;
        let mut vals = [0.0f64; 7];
        for (v, name) in vals.iter_mut().zip(["px", "py", "pz", "qx", "qy", "qz", "qw"]) {
            *v = parse_num(field(&mut fields, line_no, name)?, line_no, name)?;
            if !v.is_finite() {
                return Err(EventIoError::Parse { line: line_no, msg: format!("non-finite {name}") });
            }
        }
        if let Some(extra) = fields.next() {
            return Err(EventIoError::Parse { line: line_no, msg: format!("unexpected field `{extra}`") });
        }
        if let Some(prev) = poses.last() {
            if t <= prev.t {
                return Err(EventIoError::DuplicatePoseTimestamp { line: line_no, t });
            }
        }
        let mut q = Quaternion::new(vals[6], vals[3], vals[4], vals[5]);
        let norm = q.norm();
        if norm == 0.0 {
            return Err(EventIoError::Parse { line: line_no, msg: "zero quaternion".into() });
        }
        if (norm - 1.0).abs() > 1e-3 {
            log::warn!("line {line_no}: quaternion norm {norm} renormalized");
            warnings.push(ParseWarning { line: line_no, message: format!("quaternion norm {norm} renormalized") });
        }
        // Already-unit quaternions are kept bit-for-bit.
        if (norm - 1.0).abs() > 1e-12 {
            q = q.normalized();
        }
        poses.push(PoseSample { t, p: [vals[0], vals[1], vals[2]], q });
    }
    Ok(ParseOutcome { items: poses, warnings })
}

pub fn write_events<W: Write>(mut out: W, events: &[Event], unit: TimeUnit) -> std::io::Result<()> {
    for e in events {
        let t = match unit {
            TimeUnit::Seconds => format_seconds(e.t),
            TimeUnit::Micros => e.t.to_string(),
        };
        writeln!(out, "{} {} {} {}", t, e.x, e.y, u8::from(e.p))?;
    }
    Ok(())
}

pub fn write_poses<W: Write>(mut out: W, poses: &[PoseSample]) -> std::io::Result<()> {
    for s in poses {
        writeln!(
            out,
            "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            format_seconds(s.t),
            s.p[0],
            s.p[1],
            s.p[2],
            s.q.x,
            s.q.y,
            s.q.z,
            s.q.w
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> EventParseOptions {
        EventParseOptions::default()
    }

    #[test]
    fn empty_input_gives_no_events() {
        let out = parse_event_stream("".as_bytes(), &opts()).unwrap();
        assert!(out.items.is_empty());
    }

    #[test]
    fn seconds_are_converted_to_micros() {
        let out = parse_event_stream("0.000001 5 7 1\n0.000002 6 7 0".as_bytes(), &opts()).unwrap();
        assert_eq!(out.items, vec![Event { t: 1, x: 5, y: 7, p: true }, Event { t: 2, x: 6, y: 7, p: false }]);
    }

    #[test]
    fn nanosecond_digits_round_to_nearest_micro() {
        assert_eq!(parse_seconds_to_us("1.0000004"), Some(1_000_000));
        assert_eq!(parse_seconds_to_us("1.0000005"), Some(1_000_001));
        assert_eq!(parse_seconds_to_us("12"), Some(12_000_000));
        assert_eq!(parse_seconds_to_us(".5"), Some(500_000));
        assert_eq!(parse_seconds_to_us("-1.0"), None);
        assert_eq!(parse_seconds_to_us("1e-3"), Some(1000));
    }

    #[test]
    fn comments_and_trailing_whitespace_are_tolerated() {
        let src = "# header\n\n10 1 2 1   \n  # another\n20 3 4 0\t\n";
        let o = EventParseOptions { time_unit: TimeUnit::Micros, ..opts() };
        let out = parse_event_stream(src.as_bytes(), &o).unwrap();
        assert_eq!(out.items.len(), 2);
        assert_eq!(out.items[1].t, 20);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_event_stream("0.1 1 2 1\n0.2 x 2 1\n".as_bytes(), &opts()).unwrap_err();
        assert!(matches!(err, EventIoError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        let err = parse_event_stream("0.1 240 2 1\n".as_bytes(), &opts()).unwrap_err();
        assert!(matches!(err, EventIoError::OutOfBounds { line: 1, x: 240, .. }));
    }

    #[test]
    fn decreasing_timestamps_follow_policy() {
        let src = "0.2 1 1 1\n0.1 2 2 0\n";
        let err = parse_event_stream(src.as_bytes(), &opts()).unwrap_err();
        assert!(matches!(err, EventIoError::Unordered { line: 2, .. }));

        let o = EventParseOptions { order: OrderPolicy::WarnAndSort, ..opts() };
        let out = parse_event_stream(src.as_bytes(), &o).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.items[0].t, 100_000);
        assert_eq!(out.items[1].t, 200_000);
    }

    #[test]
    fn identity_pose_line() {
        let out = parse_pose_file("0.0 0 0 0 0 0 0 1".as_bytes()).unwrap();
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.items[0].t, 0);
        assert_eq!(out.items[0].q, Quaternion::IDENTITY);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn non_unit_quaternion_is_renormalized_with_warning() {
        let out = parse_pose_file("0.0 0 0 0 0 0 0 2".as_bytes()).unwrap();
        assert_eq!(out.items[0].q, Quaternion::IDENTITY);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn duplicate_pose_timestamp_is_an_error() {
        let err = parse_pose_file("0.0 0 0 0 0 0 0 1\n0.0 1 0 0 0 0 0 1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, EventIoError::DuplicatePoseTimestamp { line: 2, .. }));
    }
}
