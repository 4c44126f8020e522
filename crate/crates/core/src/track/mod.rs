//! Closed-loop tracks with a piecewise-linear centerline, episode rules and
//! scripted bot cars.

mod bots;
mod builtin;
mod rules;

pub use bots::{lane_offset, step_bots, BotCar, LANE_BLEND_SECONDS};
pub use builtin::{builtin_names, builtin_track, complex_b, loop_a, oval};
pub use rules::{
    is_crashed, is_off_track, is_off_track_any_wheel, reward_centerline, reward_whiteline,
    EpisodeOutcome, EpisodeStatus, ProgressTracker, RewardKind, RewardScale,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{normalize_angle, VehicleState};

/// Position relative to the centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPose {
    /// Arclength along the centerline, in `[0, total_length)`.
    pub progress: f64,
    /// Signed perpendicular distance, left positive.
    pub lateral: f64,
    /// Vehicle heading minus centerline heading, in (−π, π].
    pub heading_error: f64,
}

/// On-disk track description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    pub name: String,
    pub width: f64,
    pub lane_count: usize,
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct Track {
    name: String,
    centerline: Vec<(f64, f64)>,
    width: f64,
    lane_count: usize,
    /// Arclength at each waypoint; `arclength[0] == 0`.
    arclength: Vec<f64>,
    total_length: f64,
    index: SegmentIndex,
}

impl Track {
    /// Builds and validates a closed track. A trailing waypoint equal to the
    /// first is dropped.
    pub fn new(
        name: impl Into<String>,
        mut waypoints: Vec<(f64, f64)>,
        width: f64,
        lane_count: usize,
    ) -> Result<Self> {
        if waypoints.len() > 1 && waypoints.first() == waypoints.last() {
            waypoints.pop();
        }
        validate(&waypoints, width, lane_count)?;
        let n = waypoints.len();
        let mut arclength = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            arclength.push(acc);
            let (a, b) = (waypoints[i], waypoints[(i + 1) % n]);
            acc += (b.0 - a.0).hypot(b.1 - a.1);
        }
        let index = SegmentIndex::build(&waypoints, width / 2.0 + INDEX_MARGIN);
        Ok(Self {
            name: name.into(),
            centerline: waypoints,
            width,
            lane_count,
            arclength,
            total_length: acc,
            index,
        })
    }

    pub fn from_file(file: &TrackFile) -> Result<Self> {
        Self::new(
            file.name.clone(),
            file.waypoints.iter().map(|p| (p[0], p[1])).collect(),
            file.width,
            file.lane_count,
        )
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: TrackFile = serde_json::from_str(s)
            .map_err(|e| Error::InvalidTrack(format!("malformed track JSON: {e}")))?;
        Self::from_file(&file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_file(&self) -> TrackFile {
        TrackFile {
            name: self.name.clone(),
            width: self.width,
            lane_count: self.lane_count,
            waypoints: self.centerline.iter().map(|&(x, y)| [x, y]).collect(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn lane_count(&self) -> usize {
        self.lane_count
    }

    pub fn centerline(&self) -> &[(f64, f64)] {
        &self.centerline
    }

    pub fn arclengths(&self) -> &[f64] {
        &self.arclength
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// Checks the vehicle fits on the road.
    pub fn check_vehicle_fits(&self, vehicle_track_width: f64) -> Result<()> {
        if self.width <= vehicle_track_width {
            return Err(Error::InvalidTrack(format!(
                "width {} must exceed the vehicle track width {vehicle_track_width}",
                self.width
            )));
        }
        Ok(())
    }

    fn segment(&self, i: usize) -> ((f64, f64), (f64, f64)) {
        let n = self.centerline.len();
        (self.centerline[i], self.centerline[(i + 1) % n])
    }

    fn segment_length(&self, i: usize) -> f64 {
        let next = if i + 1 == self.centerline.len() {
            self.total_length
        } else {
            self.arclength[i + 1]
        };
        next - self.arclength[i]
    }

    fn pose_on_segment(&self, i: usize, p: (f64, f64)) -> (f64, f64, f64) {
        let ((ax, ay), (bx, by)) = self.segment(i);
        let (sx, sy) = (bx - ax, by - ay);
        let len2 = sx * sx + sy * sy;
        let t = (((p.0 - ax) * sx + (p.1 - ay) * sy) / len2).clamp(0.0, 1.0);
        let (fx, fy) = (ax + t * sx, ay + t * sy);
        let (dx, dy) = (p.0 - fx, p.1 - fy);
        let dist = dx.hypot(dy);
        let len = len2.sqrt();
        let cross = (sx * dy - sy * dx) / len;
        let lateral = if cross < 0.0 { -dist } else { dist };
        (dist, lateral, self.arclength[i] + t * self.segment_length(i))
    }

    fn wrap_progress(&self, s: f64) -> f64 {
        let w = s.rem_euclid(self.total_length);
        if w >= self.total_length {
            0.0
        } else {
            w
        }
    }

    /// Nearest point on the centerline; ties go to the lower arclength.
    pub fn project(&self, point: (f64, f64)) -> TrackPose {
        let mut best = (f64::INFINITY, 0.0, 0.0, 0usize);
        for i in 0..self.centerline.len() {
            let (dist, lateral, s) = self.pose_on_segment(i, point);
            if dist < best.0 {
                best = (dist, lateral, s, i);
            }
        }
        TrackPose {
            progress: self.wrap_progress(best.2),
            lateral: best.1,
            heading_error: 0.0,
        }
    }

    /// [`Track::project`] of the vehicle position, with heading error filled in.
    pub fn project_state(&self, state: &VehicleState) -> TrackPose {
        let pose = self.project(state.position());
        let (_, _, heading) = self.point_at(pose.progress, 0.0);
        TrackPose {
            heading_error: normalize_angle(state.psi - heading),
            ..pose
        }
    }

    /// Fast lateral offset and progress for points within `width/2 + margin`
    /// of the centerline; `None` farther out.
    pub fn nearby(&self, point: (f64, f64)) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64, f64)> = None;
        for &i in self.index.candidates(point) {
            let (dist, lateral, s) = self.pose_on_segment(i as usize, point);
            if best.is_none_or(|b| dist < b.0) {
                best = Some((dist, lateral, s));
            }
        }
        best.filter(|b| b.0 <= self.index.band)
            .map(|(_, lateral, s)| (lateral, self.wrap_progress(s)))
    }

    /// World position at `progress` offset `lateral` to the left, plus the
    /// centerline heading there.
    pub fn point_at(&self, progress: f64, lateral: f64) -> (f64, f64, f64) {
        let s = self.wrap_progress(progress);
        let i = match self.arclength.binary_search_by(|a| a.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let ((ax, ay), (bx, by)) = self.segment(i);
        let len = self.segment_length(i);
        let t = (s - self.arclength[i]) / len;
        let heading = (by - ay).atan2(bx - ax);
        let (nx, ny) = (-heading.sin(), heading.cos());
        (
            ax + t * (bx - ax) + lateral * nx,
            ay + t * (by - ay) + lateral * ny,
            heading,
        )
    }

    /// Vehicle state sitting at `progress` with offset `lateral`, aligned with
    /// the centerline plus `heading_offset`.
    pub fn state_at(&self, progress: f64, lateral: f64, heading_offset: f64, v: f64) -> VehicleState {
        let (x, y, h) = self.point_at(progress, lateral);
        VehicleState::new(x, y, h + heading_offset, v)
    }

    /// Axis-aligned bounds of the road, `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let m = self.width / 2.0;
        self.centerline.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x - m), b.min(y - m), c.max(x + m), d.max(y + m)),
        )
    }
}

/// Extra distance beyond the road edge served by [`Track::nearby`].
const INDEX_MARGIN: f64 = 0.05;
const INDEX_CELL: f64 = 0.25;

/// Uniform grid over the track bounding box listing, per cell, every segment
/// that can be the nearest one for a point within `band` of the centerline.
#[derive(Debug, Clone)]
struct SegmentIndex {
    origin: (f64, f64),
    cols: usize,
    rows: usize,
    band: f64,
    cells: Vec<Vec<u32>>,
}

impl SegmentIndex {
    fn build(points: &[(f64, f64)], band: f64) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for &(x, y) in points {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        let origin = (lo.0 - band - INDEX_CELL, lo.1 - band - INDEX_CELL);
        let cols = ((hi.0 - origin.0 + band) / INDEX_CELL).ceil() as usize + 2;
        let rows = ((hi.1 - origin.1 + band) / INDEX_CELL).ceil() as usize + 2;
        let reach = band + INDEX_CELL * std::f64::consts::SQRT_2 / 2.0;
        let n = points.len();
        let mut cells = vec![Vec::new(); cols * rows];
        for (ci, cell) in cells.iter_mut().enumerate() {
            let cx = origin.0 + (ci % cols) as f64 * INDEX_CELL + INDEX_CELL / 2.0;
            let cy = origin.1 + (ci / cols) as f64 * INDEX_CELL + INDEX_CELL / 2.0;
            for i in 0..n {
                if point_segment_distance((cx, cy), points[i], points[(i + 1) % n]) <= reach {
                    cell.push(i as u32);
                }
            }
        }
        Self {
            origin,
            cols,
            rows,
            band,
            cells,
        }
    }

    fn candidates(&self, p: (f64, f64)) -> &[u32] {
        let fx = ((p.0 - self.origin.0) / INDEX_CELL).floor();
        let fy = ((p.1 - self.origin.1) / INDEX_CELL).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.cols as f64 || fy >= self.rows as f64 {
            return &[];
        }
        &self.cells[fy as usize * self.cols + fx as usize]
    }
}

pub(crate) fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (sx, sy) = (b.0 - a.0, b.1 - a.1);
    let len2 = sx * sx + sy * sy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * sx + (p.1 - a.1) * sy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * sx).hypot(p.1 - a.1 - t * sy)
}

fn validate(points: &[(f64, f64)], width: f64, lane_count: usize) -> Result<()> {
    if points.len() < 8 {
        return Err(Error::InvalidTrack(format!(
            "needs at least 8 waypoints, got {}",
            points.len()
        )));
    }
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::InvalidTrack(format!("width must be positive, got {width}")));
    }
    if !(1..=2).contains(&lane_count) {
        return Err(Error::InvalidTrack(format!(
            "lane_count must be 1 or 2, got {lane_count}"
        )));
    }
    let n = points.len();
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        if !(a.0.is_finite() && a.1.is_finite()) {
            return Err(Error::InvalidTrack(format!("waypoint {i} is not finite")));
        }
        if (b.0 - a.0).hypot(b.1 - a.1) < 1e-9 {
            return Err(Error::InvalidTrack(format!(
                "waypoints {i} and {} coincide",
                (i + 1) % n
            )));
        }
    }
    for (side, sign) in [("left", 1.0), ("right", -1.0)] {
        let offset = offset_polyline(points, sign * width / 2.0);
        if let Some((i, j)) = first_self_intersection(&offset) {
            return Err(Error::InvalidTrack(format!(
                "{side} edge self-intersects between segments {i} and {j}"
            )));
        }
    }
    Ok(())
}

/// Closed polyline offset by `d` along the vertex normals (left positive).
fn offset_polyline(points: &[(f64, f64)], d: f64) -> Vec<(f64, f64)> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let p = points[i];
            let prev = points[(i + n - 1) % n];
            let next = points[(i + 1) % n];
            let h1 = (p.1 - prev.1).atan2(p.0 - prev.0);
            let h2 = (next.1 - p.1).atan2(next.0 - p.0);
            let (n1, n2) = ((-h1.sin(), h1.cos()), (-h2.sin(), h2.cos()));
            let (mx, my) = (n1.0 + n2.0, n1.1 + n2.1);
            let len = mx.hypot(my);
            if len < 1e-9 {
                // hairpin reversal: offset along the incoming normal
                return (p.0 + d * n1.0, p.1 + d * n1.1);
            }
            // miter length so both offset segments sit at distance |d|
            let cos_half = len / 2.0;
            let scale = d / cos_half.max(0.2);
            (p.0 + scale * mx / len, p.1 + scale * my / len)
        })
        .collect()
}

fn segments_intersect(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| {
        (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0)
    };
    let (d1, d2) = (orient(c, d, a), orient(c, d, b));
    let (d3, d4) = (orient(a, b, c), orient(a, b, d));
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0) && d1 != 0.0 && d2 != 0.0 && d3 != 0.0 && d4 != 0.0
}

fn first_self_intersection(poly: &[(f64, f64)]) -> Option<(usize, usize)> {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a, b, poly[j], poly[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}
