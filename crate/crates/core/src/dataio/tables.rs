use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkTrajectory, Point, DERIVED_POINTS, INPUT_POINTS};
use crate::ppg::PpgRecord;

/// Largest tolerated deviation of a timestamp step from the mean step, seconds.
pub const TIMESTAMP_JITTER: f64 = 1e-6;

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn parse_cell(path: &Path, row: usize, column: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        message: if cell.is_empty() {
            format!("missing value for {column}")
        } else {
            format!("'{cell}' in column {column} is not a number")
        },
    })
}

/// Reads `frame,x0,y0,...` CSV with 68 or 128 points per row. Rows are
/// numbered from 1 after the header in error messages.
pub fn load_landmark_trajectory(path: &Path, fps: f64) -> Result<LandmarkTrajectory> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::Usage(format!("fps must be positive, got {fps}")));
    }
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let columns: Vec<&str> = header.iter().collect();
    let points = match columns.len().checked_sub(1).map(|c| (c / 2, c % 2)) {
        Some((p, 0)) if p == INPUT_POINTS || p == DERIVED_POINTS => p,
        _ => {
            return Err(Error::Format(format!(
                "{}: header must be frame followed by x/y pairs for {INPUT_POINTS} or {DERIVED_POINTS} points, found {} columns",
                path.display(),
                columns.len()
            )))
        }
    };
    if columns[0] != "frame" {
        return Err(Error::Format(format!(
            "{}: first column must be 'frame', found '{}'",
            path.display(),
            columns[0]
        )));
    }
    for j in 0..points {
        let (x, y) = (columns[1 + 2 * j], columns[2 + 2 * j]);
        if x != format!("x{j}") || y != format!("y{j}") {
            return Err(Error::Format(format!(
                "{}: expected columns x{j},y{j}, found {x},{y}",
                path.display()
            )));
        }
    }

    let mut frames = Vec::new();
    let mut last_frame: Option<f64> = None;
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != columns.len() {
            return Err(Error::Format(format!(
                "{}: row {row} has {} columns, header has {}",
                path.display(),
                record.len(),
                columns.len()
            )));
        }
        let frame = parse_cell(path, row, "frame", &record[0])?;
        if last_frame.is_some_and(|prev| frame <= prev) {
            return Err(Error::Format(format!(
                "{}: row {row}: frame index {frame} is not increasing",
                path.display()
            )));
        }
        last_frame = Some(frame);
        let mut pts = Vec::with_capacity(points);
        for j in 0..points {
            let x = parse_cell(path, row, columns[1 + 2 * j], &record[1 + 2 * j])?;
            let y = parse_cell(path, row, columns[2 + 2 * j], &record[2 + 2 * j])?;
            pts.push(Point::new(x, y));
        }
        frames.push(pts);
    }
    if frames.is_empty() {
        return Err(Error::Format(format!("{}: no frames", path.display())));
    }
    LandmarkTrajectory::from_frames(frames)
}

pub fn write_landmark_trajectory(path: &Path, traj: &LandmarkTrajectory) -> Result<()> {
    let mut out = String::from("frame");
    for j in 0..traj.points_per_frame() {
        let _ = write!(out, ",x{j},y{j}");
    }
    out.push('\n');
    for (i, frame) in traj.frames().enumerate() {
        let _ = write!(out, "{i}");
        for p in frame {
            let _ = write!(out, ",{},{}", p.x, p.y);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a PPG CSV with columns `t,value` or a single `value` column.
///
/// A single column needs `rate`. With timestamps the rate is inferred from
/// the mean step and every step must match it within [`TIMESTAMP_JITTER`];
/// a supplied `rate` must agree with the timestamps and is then used as is.
pub fn load_ppg(path: &Path, rate: Option<f64>) -> Result<PpgRecord> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let columns: Vec<&str> = header.iter().collect();
    let timed = match columns.as_slice() {
        ["t", "value"] => true,
        ["value"] => false,
        [] | [""] => return Err(Error::Format(format!("{}: empty file", path.display()))),
        other => {
            return Err(Error::Format(format!(
                "{}: expected header 't,value' or 'value', found '{}'",
                path.display(),
                other.join(",")
            )))
        }
    };
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != columns.len() {
            return Err(Error::Format(format!(
                "{}: row {row} has {} columns, header has {}",
                path.display(),
                record.len(),
                columns.len()
            )));
        }
        if timed {
            times.push(parse_cell(path, row, "t", &record[0])?);
            samples.push(parse_cell(path, row, "value", &record[1])?);
        } else {
            samples.push(parse_cell(path, row, "value", &record[0])?);
        }
    }
    if samples.is_empty() {
        return Err(Error::Format(format!("{}: no samples", path.display())));
    }
    if !timed {
        let rate = rate.ok_or_else(|| {
            Error::Usage(format!(
                "{}: single-column PPG needs an explicit sampling rate",
                path.display()
            ))
        })?;
        return PpgRecord::new(samples, rate, 0.0);
    }
    if samples.len() < 2 {
        return Err(Error::Format(format!(
            "{}: need at least 2 samples",
            path.display()
        )));
    }
    let n = times.len();
    let step = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(step > 0.0) {
        return Err(Error::Sampling(format!(
            "{}: timestamps are not increasing",
            path.display()
        )));
    }
    for (k, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > TIMESTAMP_JITTER {
            return Err(Error::Sampling(format!(
                "{}: step of {} s before row {} deviates from the mean step {step} s",
                path.display(),
                w[1] - w[0],
                k + 2
            )));
        }
    }
    let rate = match rate {
        Some(r) if (1.0 / r - step).abs() <= TIMESTAMP_JITTER => r,
        Some(r) => {
            return Err(Error::Sampling(format!(
                "{}: timestamps imply {} samples/s, expected {r}",
                path.display(),
                1.0 / step
            )))
        }
        None => 1.0 / step,
    };
    PpgRecord::new(samples, rate, times[0])
}

/// Writes a PPG record, with a `t` column when `with_time` is set.
pub fn write_ppg(path: &Path, ppg: &PpgRecord, with_time: bool) -> Result<()> {
    let mut out = String::from(if with_time { "t,value\n" } else { "value\n" });
    for (i, v) in ppg.samples().iter().enumerate() {
        if with_time {
            let t = ppg.t0() + i as f64 / ppg.rate();
            let _ = writeln!(out, "{t},{v}");
        } else {
            let _ = writeln!(out, "{v}");
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
