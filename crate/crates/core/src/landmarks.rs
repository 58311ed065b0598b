//! Facial landmark trajectories and the per-landmark average-movement features.
//!
//! Input trajectories use the 68-point iBUG layout (jaw 0-16, brows 17-26,
//! nose 27-35, eyes 36-47, mouth 48-67). Sixty cheek points are derived from
//! those anchors, giving the 128-point layout the movement features are
//! computed on. "Left" and "right" refer to image sides, matching the
//! direction of the iBUG numbering (jaw point 0 and eye 36-41 are image-left).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{self, Summary};

pub const INPUT_POINTS: usize = 68;
pub const DERIVED_POINTS: usize = 128;
pub const CHEEK_POINTS: usize = 30;
pub const CHEEK_COLUMNS: usize = 6;
pub const CHEEK_ROWS: usize = 5;

const LEFT_CHEEK_START: usize = 68;
const RIGHT_CHEEK_START: usize = 98;

// Upper boundary: lower eyelid from outer to inner corner, then nose wing.
const LEFT_UPPER: [usize; 5] = [36, 41, 40, 39, 31];
const RIGHT_UPPER: [usize; 5] = [45, 46, 47, 42, 35];
// Lower boundary: jaw segment, outer to inner.
const LEFT_LOWER: [usize; 6] = [1, 2, 3, 4, 5, 6];
const RIGHT_LOWER: [usize; 6] = [15, 14, 13, 12, 11, 10];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    fn lerp(self, other: Point, t: f64) -> Point {
        Point {
            x: self.x + t * (other.x - self.x),
            y: self.y + t * (other.y - self.y),
        }
    }
}

/// Per-frame 2D landmark positions in pixels, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTrajectory {
    points_per_frame: usize,
    points: Vec<Point>,
}

impl LandmarkTrajectory {
    /// Builds a trajectory from whole frames. Every frame must carry 68 or 128
    /// points and all frames must agree.
    pub fn from_frames(frames: Vec<Vec<Point>>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InsufficientData(
                "trajectory must contain at least one frame".into(),
            ));
        };
        let points_per_frame = first.len();
        if points_per_frame != INPUT_POINTS && points_per_frame != DERIVED_POINTS {
            return Err(Error::Format(format!(
                "expected {INPUT_POINTS} or {DERIVED_POINTS} points per frame, got {points_per_frame}"
            )));
        }
        let mut points = Vec::with_capacity(frames.len() * points_per_frame);
        for (i, frame) in frames.into_iter().enumerate() {
            if frame.len() != points_per_frame {
                return Err(Error::Format(format!(
                    "frame {i} has {} points, expected {points_per_frame}",
                    frame.len()
                )));
            }
            points.extend(frame);
        }
        Ok(LandmarkTrajectory {
            points_per_frame,
            points,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.points.len() / self.points_per_frame
    }

    pub fn points_per_frame(&self) -> usize {
        self.points_per_frame
    }

    pub fn frame(&self, i: usize) -> &[Point] {
        let start = i * self.points_per_frame;
        &self.points[start..start + self.points_per_frame]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Point]> {
        self.points.chunks_exact(self.points_per_frame)
    }

    /// Returns the 128-point trajectory, deriving cheek points if needed.
    pub fn to_derived(&self) -> Result<LandmarkTrajectory> {
        if self.points_per_frame == DERIVED_POINTS {
            return Ok(self.clone());
        }
        let mut points = Vec::with_capacity(self.n_frames() * DERIVED_POINTS);
        for frame in self.frames() {
            points.extend(derive_cheek_landmarks(frame)?);
        }
        Ok(LandmarkTrajectory {
            points_per_frame: DERIVED_POINTS,
            points,
        })
    }
}

/// Drops the first `floor(drop_seconds * fps)` frames.
pub fn trim_trajectory(
    traj: &LandmarkTrajectory,
    drop_seconds: f64,
    fps: f64,
) -> Result<LandmarkTrajectory> {
    if !(drop_seconds >= 0.0) || !drop_seconds.is_finite() {
        return Err(Error::Usage(format!(
            "drop window must be a non-negative number of seconds, got {drop_seconds}"
        )));
    }
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::Usage(format!("fps must be positive, got {fps}")));
    }
    let drop = (drop_seconds * fps).floor() as usize;
    let n = traj.n_frames();
    if n <= drop {
        return Err(Error::InsufficientData(format!(
            "trajectory has {n} frames, cannot drop {drop} ({drop_seconds} s at {fps} fps)"
        )));
    }
    Ok(LandmarkTrajectory {
        points_per_frame: traj.points_per_frame,
        points: traj.points[drop * traj.points_per_frame..].to_vec(),
    })
}

/// Resamples a polyline at `count` parameters equally spaced in arc length,
/// including both endpoints.
fn resample_polyline(anchors: &[Point], count: usize) -> Vec<Point> {
    let mut cumulative = Vec::with_capacity(anchors.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for pair in anchors.windows(2) {
        total += pair[0].distance(pair[1]);
        cumulative.push(total);
    }
    let last = anchors.len() - 1;
    (0..count)
        .map(|k| {
            if total == 0.0 {
                return anchors[0];
            }
            if k == count - 1 {
                return anchors[last];
            }
            let target = total * k as f64 / (count - 1) as f64;
            // first segment whose end reaches the target
            let seg = (1..=last)
                .find(|&s| cumulative[s] >= target)
                .unwrap_or(last);
            let len = cumulative[seg] - cumulative[seg - 1];
            let t = if len > 0.0 {
                (target - cumulative[seg - 1]) / len
            } else {
                0.0
            };
            anchors[seg - 1].lerp(anchors[seg], t)
        })
        .collect()
}

fn cheek_grid(frame: &[Point], upper: &[usize], lower: &[usize]) -> Vec<Point> {
    let upper: Vec<Point> = upper.iter().map(|&i| frame[i]).collect();
    let lower: Vec<Point> = lower.iter().map(|&i| frame[i]).collect();
    let top = resample_polyline(&upper, CHEEK_COLUMNS);
    let bottom = resample_polyline(&lower, CHEEK_COLUMNS);
    let mut grid = Vec::with_capacity(CHEEK_POINTS);
    for (u, l) in top.iter().zip(&bottom) {
        for r in 1..=CHEEK_ROWS {
            grid.push(u.lerp(*l, r as f64 / (CHEEK_ROWS + 1) as f64));
        }
    }
    grid
}

/// Extends a 68-point frame with 30 points on each cheek.
///
/// Each cheek is a 6-column, 5-row grid. Column `c` joins the `c`-th of six
/// arc-length samples on the upper boundary (lower eyelid then nose wing) to
/// the `c`-th sample on the jaw segment below it; the rows sit at 1/6..5/6 of
/// the way down. Points 68..98 are the image-left cheek, 98..128 the
/// image-right cheek, each stored column by column.
pub fn derive_cheek_landmarks(frame: &[Point]) -> Result<Vec<Point>> {
    if frame.len() != INPUT_POINTS {
        return Err(Error::Format(format!(
            "cheek derivation needs {INPUT_POINTS} input points, got {}",
            frame.len()
        )));
    }
    let mut out = Vec::with_capacity(DERIVED_POINTS);
    out.extend_from_slice(frame);
    out.extend(cheek_grid(frame, &LEFT_UPPER, &LEFT_LOWER));
    out.extend(cheek_grid(frame, &RIGHT_UPPER, &RIGHT_LOWER));
    debug_assert_eq!(out.len(), DERIVED_POINTS);
    debug_assert_eq!(out.len() - CHEEK_POINTS, RIGHT_CHEEK_START);
    debug_assert_eq!(LEFT_CHEEK_START, INPUT_POINTS);
    Ok(out)
}

/// Average movement of each of the 128 landmarks, one value per landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementFeatures(Vec<f64>);

impl MovementFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != DERIVED_POINTS {
            return Err(Error::Shape(format!(
                "movement features need {DERIVED_POINTS} values, got {}",
                values.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "movement feature d{j} = {} is not a finite non-negative value",
                values[j]
            )));
        }
        Ok(MovementFeatures(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MovementOptions {
    /// Divide every feature by the first frame's interocular distance.
    pub normalize_interocular: bool,
}

/// Mean distance of each landmark from its first-frame position, averaged
/// over all `n` frames (the first frame contributes zero).
pub fn average_movement(traj: &LandmarkTrajectory) -> Result<MovementFeatures> {
    average_movement_with(traj, MovementOptions::default())
}

pub fn average_movement_with(
    traj: &LandmarkTrajectory,
    options: MovementOptions,
) -> Result<MovementFeatures> {
    if traj.points_per_frame() != DERIVED_POINTS {
        return Err(Error::Shape(format!(
            "average movement needs {DERIVED_POINTS}-point frames, got {}",
            traj.points_per_frame()
        )));
    }
    for (i, frame) in traj.frames().enumerate() {
        if let Some(j) = frame
            .iter()
            .position(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::Numeric(format!(
                "non-finite coordinate at frame {i}, landmark {j}"
            )));
        }
    }
    let origin = traj.frame(0);
    let mut sums = vec![0.0; DERIVED_POINTS];
    for frame in traj.frames() {
        for ((sum, p), o) in sums.iter_mut().zip(frame).zip(origin) {
            *sum += p.distance(*o);
        }
    }
    let n = traj.n_frames() as f64;
    let mut scale = 1.0;
    if options.normalize_interocular {
        let iod = interocular_distance(origin);
        if !(iod > 0.0) {
            return Err(Error::Numeric(
                "interocular distance is zero in the first frame".into(),
            ));
        }
        scale = iod;
    }
    MovementFeatures::new(sums.into_iter().map(|s| s / n / scale).collect())
}

fn interocular_distance(frame: &[Point]) -> f64 {
    let centre = |range: std::ops::Range<usize>| {
        let k = range.len() as f64;
        let (sx, sy) = frame[range]
            .iter()
            .fold((0.0, 0.0), |(x, y), p| (x + p.x, y + p.y));
        Point::new(sx / k, sy / k)
    };
    centre(36..42).distance(centre(42..48))
}

/// The seven anatomical landmark groups of the 128-point layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LandmarkGroup {
    Contour,
    LeftEyeBrow,
    RightEyeBrow,
    Nose,
    Lips,
    LeftCheek,
    RightCheek,
}

impl LandmarkGroup {
    pub const ALL: [LandmarkGroup; 7] = [
        LandmarkGroup::Contour,
        LandmarkGroup::LeftEyeBrow,
        LandmarkGroup::RightEyeBrow,
        LandmarkGroup::Nose,
        LandmarkGroup::Lips,
        LandmarkGroup::LeftCheek,
        LandmarkGroup::RightCheek,
    ];

    /// 1-based group number used in reports.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            LandmarkGroup::Contour => "contour",
            LandmarkGroup::LeftEyeBrow => "left eye + brow",
            LandmarkGroup::RightEyeBrow => "right eye + brow",
            LandmarkGroup::Nose => "nose",
            LandmarkGroup::Lips => "lips",
            LandmarkGroup::LeftCheek => "left cheek",
            LandmarkGroup::RightCheek => "right cheek",
        }
    }

    pub fn indices(self) -> Vec<usize> {
        match self {
            LandmarkGroup::Contour => (0..17).collect(),
            LandmarkGroup::LeftEyeBrow => (17..22).chain(36..42).collect(),
            LandmarkGroup::RightEyeBrow => (22..27).chain(42..48).collect(),
            LandmarkGroup::Nose => (27..36).collect(),
            LandmarkGroup::Lips => (48..68).collect(),
            LandmarkGroup::LeftCheek => (LEFT_CHEEK_START..RIGHT_CHEEK_START).collect(),
            LandmarkGroup::RightCheek => (RIGHT_CHEEK_START..DERIVED_POINTS).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: LandmarkGroup,
    pub summary: Summary,
}

/// Summary statistics of the movement features within each landmark group,
/// in group order 1..=7.
pub fn group_movement_stats(features: &MovementFeatures) -> Vec<GroupStats> {
    let d = features.as_slice();
    LandmarkGroup::ALL
        .iter()
        .map(|&group| {
            let values: Vec<f64> = group.indices().into_iter().map(|j| d[j]).collect();
            GroupStats {
                group,
                summary: stats::summarize(&values).expect("landmark groups are non-empty"),
            }
        })
        .collect()
}
