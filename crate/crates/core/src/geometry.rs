//! Planar ground geometry: camera footprints, convex polygons, areas and IOU.
//!
//! All coordinates live in a local east/north frame measured in meters. The
//! camera looks along its body `+x` axis; with zero attitude that is level
//! flight towards east. Attitude is applied as yaw about `z`, then pitch
//! (positive raises the nose), then roll about the optical axis, so a pitch of
//! `-90` degrees looks straight down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Collinearity and duplicate-vertex tolerance, in meters.
pub const LINEAR_TOL: f64 = 1e-9;

/// Unions below this area (square meters) make an IOU meaningless.
pub const AREA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPoint {
    pub x_east: f64,
    pub y_north: f64,
}

impl GeoPoint {
    pub const fn new(x_east: f64, y_north: f64) -> Self {
        Self { x_east, y_north }
    }

    pub fn distance(&self, other: &GeoPoint) -> f64 {
        (self.x_east - other.x_east).hypot(self.y_north - other.y_north)
    }

    pub fn is_finite(&self) -> bool {
        self.x_east.is_finite() && self.y_north.is_finite()
    }

    fn sub(self, o: GeoPoint) -> (f64, f64) {
        (self.x_east - o.x_east, self.y_north - o.y_north)
    }
}

fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

/// Wraps an angle in degrees into `[-180, 180]`.
pub fn normalize_degrees(angle: f64) -> f64 {
    // in-range values pass through bit-exactly
    if (-180.0..=180.0).contains(&angle) {
        return angle;
    }
    let wrapped = (angle + 180.0).rem_euclid(360.0) - 180.0;
    // keep +180 as given rather than folding it onto -180
    if wrapped == -180.0 && angle > 0.0 {
        180.0
    } else {
        wrapped
    }
}

/// Drone position and attitude. Angles are in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub ground_point: GeoPoint,
    pub altitude: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl CameraPose {
    /// Builds a pose with angles wrapped into `[-180, 180]`.
    pub fn new(ground_point: GeoPoint, altitude: f64, roll: f64, pitch: f64, yaw: f64) -> Result<Self> {
        if !ground_point.is_finite() || ![altitude, roll, pitch, yaw].iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("camera pose has non-finite fields".into()));
        }
        if altitude <= 0.0 {
            return Err(Error::Degenerate(format!("altitude {altitude} must be positive")));
        }
        Ok(Self {
            ground_point,
            altitude,
            roll: normalize_degrees(roll),
            pitch: normalize_degrees(pitch),
            yaw: normalize_degrees(yaw),
        })
    }

    /// Straight-down pose with zero roll and yaw.
    pub fn nadir(ground_point: GeoPoint, altitude: f64) -> Result<Self> {
        Self::new(ground_point, altitude, 0.0, -90.0, 0.0)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut p = *self;
        p.ground_point = GeoPoint::new(p.ground_point.x_east + dx, p.ground_point.y_north + dy);
        p
    }

    /// Rotates a camera-frame direction into the world frame.
    pub fn camera_to_world(&self, dir: [f64; 3]) -> [f64; 3] {
        let (sr, cr) = self.roll.to_radians().sin_cos();
        let (sp, cp) = self.pitch.to_radians().sin_cos();
        let (sy, cy) = self.yaw.to_radians().sin_cos();
        // roll about the optical (x) axis
        let [x, y, z] = dir;
        let (x, y, z) = (x, cr * y - sr * z, sr * y + cr * z);
        // pitch: positive angle lifts +x towards +z
        let (x, y, z) = (cp * x - sp * z, y, sp * x + cp * z);
        // yaw about the vertical axis, counter-clockwise from east
        [cy * x - sy * y, sy * x + cy * y, z]
    }
}

/// Horizontal and vertical field of view, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub hfov: f64,
    pub vfov: f64,
}

impl CameraIntrinsics {
    pub fn new(hfov: f64, vfov: f64) -> Result<Self> {
        for (name, v) in [("hfov", hfov), ("vfov", vfov)] {
            if !(v > 0.0 && v < 180.0) {
                return Err(Error::Domain(format!("{name} {v} outside (0, 180) degrees")));
            }
        }
        Ok(Self { hfov, vfov })
    }

    /// Corner view directions in the camera frame (forward, left, up).
    pub fn corner_directions(&self) -> [[f64; 3]; 4] {
        let th = (self.hfov.to_radians() / 2.0).tan();
        let tv = (self.vfov.to_radians() / 2.0).tan();
        [[1.0, th, tv], [1.0, -th, tv], [1.0, -th, -tv], [1.0, th, -tv]]
    }
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    vertices: Vec<GeoPoint>,
}

impl ConvexPolygon {
    /// Validates and stores a convex polygon. Clockwise input is reversed.
    pub fn new(mut vertices: Vec<GeoPoint>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!("{} vertices, need at least 3", vertices.len())));
        }
        if !vertices.iter().all(GeoPoint::is_finite) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        let mut turning = 0.0;
        for i in 0..n {
            let prev = vertices[(i + n - 1) % n];
            let cur = vertices[i];
            let next = vertices[(i + 1) % n];
            if cur.distance(&next) <= LINEAR_TOL {
                return Err(Error::InvalidPolygon(format!("repeated vertex at index {i}")));
            }
            let e0 = cur.sub(prev);
            let e1 = next.sub(cur);
            let chord = next.sub(prev);
            let chord_len = chord.0.hypot(chord.1);
            // signed distance of `cur` to the left of the prev->next chord is
            // negative for a convex left turn
            let offset = if chord_len > 0.0 { cross(chord, cur.sub(prev)) / chord_len } else { 0.0 };
            if offset >= -LINEAR_TOL {
                return Err(Error::InvalidPolygon(format!("vertex {i} is collinear or reflex")));
            }
            turning += cross(e0, e1).atan2(e0.0 * e1.0 + e0.1 * e1.1);
        }
        if (turning - std::f64::consts::TAU).abs() > 1e-6 {
            return Err(Error::InvalidPolygon("polygon winds more than once".into()));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![
            GeoPoint::new(x0, y0),
            GeoPoint::new(x1, y0),
            GeoPoint::new(x1, y1),
            GeoPoint::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.x_east), b.min(p.y_north), c.max(p.x_east), d.max(p.y_north)),
        )
    }

    pub fn centroid(&self) -> GeoPoint {
        let n = self.vertices.len();
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        let o = self.vertices[0];
        for i in 0..n {
            let p = self.vertices[i].sub(o);
            let q = self.vertices[(i + 1) % n].sub(o);
            let c = cross(p, q);
            a2 += c;
            cx += (p.0 + q.0) * c;
            cy += (p.1 + q.1) * c;
        }
        GeoPoint::new(o.x_east + cx / (3.0 * a2), o.y_north + cy / (3.0 * a2))
    }

    /// Whether `p` lies inside or on the boundary.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            cross(b.sub(a), p.sub(a)) >= 0.0
        })
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|p| GeoPoint::new(p.x_east + dx, p.y_north + dy))
                .collect(),
        }
    }

    /// Builds a polygon from clipper output, dropping duplicate and collinear
    /// vertices. Returns `None` when nothing with positive area remains.
    fn from_clipped(points: Vec<GeoPoint>) -> Option<Self> {
        let mut pts: Vec<GeoPoint> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q| q.distance(&p) > LINEAR_TOL) {
                pts.push(p);
            }
        }
        while pts.len() > 1 && pts[0].distance(pts.last().unwrap()) <= LINEAR_TOL {
            pts.pop();
        }
        loop {
            let n = pts.len();
            if n < 3 {
                return None;
            }
            let drop = (0..n).find(|&i| {
                let prev = pts[(i + n - 1) % n];
                let next = pts[(i + 1) % n];
                let chord = next.sub(prev);
                let len = chord.0.hypot(chord.1);
                len <= LINEAR_TOL || cross(chord, pts[i].sub(prev)) / len >= -LINEAR_TOL
            });
            match drop {
                Some(i) => {
                    pts.remove(i);
                }
                None => break,
            }
        }
        if signed_area(&pts) <= 0.0 {
            return None;
        }
        Some(Self { vertices: pts })
    }
}

/// Exactly four-vertex convex ground footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintQuad(ConvexPolygon);

impl FootprintQuad {
    pub fn polygon(&self) -> &ConvexPolygon {
        &self.0
    }

    pub fn into_polygon(self) -> ConvexPolygon {
        self.0
    }
}

impl std::ops::Deref for FootprintQuad {
    type Target = ConvexPolygon;
    fn deref(&self) -> &ConvexPolygon {
        &self.0
    }
}

fn signed_area(v: &[GeoPoint]) -> f64 {
    let n = v.len();
    let o = v[0];
    let mut s = 0.0;
    for i in 1..n.saturating_sub(1) {
        s += cross(v[i].sub(o), v[i + 1].sub(o));
    }
    s / 2.0
}

/// Intersects the four corner rays of the camera with the ground plane.
pub fn project_footprint(pose: &CameraPose, intr: &CameraIntrinsics) -> Result<FootprintQuad> {
    if !(pose.altitude > 0.0) {
        return Err(Error::Degenerate(format!("altitude {} must be positive", pose.altitude)));
    }
    let mut corners = Vec::with_capacity(4);
    for (i, dir) in intr.corner_directions().into_iter().enumerate() {
        let [dx, dy, dz] = pose.camera_to_world(dir);
        if !(dz < 0.0) {
            return Err(Error::Horizon(format!("corner ray {i} does not hit the ground (dz = {dz:e})")));
        }
        let t = pose.altitude / -dz;
        corners.push(GeoPoint::new(
            pose.ground_point.x_east + t * dx,
            pose.ground_point.y_north + t * dy,
        ));
    }
    let poly = ConvexPolygon::new(corners).map_err(|e| Error::Degenerate(format!("footprint: {e}")))?;
    Ok(FootprintQuad(poly))
}

/// Shoelace area.
pub fn polygon_area(p: &ConvexPolygon) -> f64 {
    signed_area(&p.vertices).abs()
}

/// Clips `subject` against the half-plane left of the directed edge `a -> b`.
fn clip_half_plane(subject: &[GeoPoint], a: GeoPoint, b: GeoPoint) -> Vec<GeoPoint> {
    let edge = b.sub(a);
    let side = |p: &GeoPoint| cross(edge, p.sub(a));
    let mut out = Vec::with_capacity(subject.len() + 1);
    let Some(&last) = subject.last() else {
        return out;
    };
    let mut prev = last;
    let mut prev_side = side(&prev);
    for &cur in subject {
        let cur_side = side(&cur);
        if cur_side >= 0.0 {
            if prev_side < 0.0 {
                out.push(edge_crossing(prev, cur, prev_side, cur_side));
            }
            out.push(cur);
        } else if prev_side >= 0.0 {
            out.push(edge_crossing(prev, cur, prev_side, cur_side));
        }
        prev = cur;
        prev_side = cur_side;
    }
    out
}

fn edge_crossing(p: GeoPoint, q: GeoPoint, sp: f64, sq: f64) -> GeoPoint {
    let t = sp / (sp - sq);
    GeoPoint::new(
        p.x_east + t * (q.x_east - p.x_east),
        p.y_north + t * (q.y_north - p.y_north),
    )
}

/// Exact intersection of two convex polygons by successive half-plane
/// clipping. `None` when the overlap has no area.
pub fn convex_intersection(a: &ConvexPolygon, b: &ConvexPolygon) -> Option<ConvexPolygon> {
    let (ax0, ay0, ax1, ay1) = a.bounding_box();
    let (bx0, by0, bx1, by1) = b.bounding_box();
    if ax1 <= bx0 || bx1 <= ax0 || ay1 <= by0 || by1 <= ay0 {
        return None;
    }
    let mut subject = a.vertices.clone();
    let n = b.vertices.len();
    for i in 0..n {
        subject = clip_half_plane(&subject, b.vertices[i], b.vertices[(i + 1) % n]);
        if subject.len() < 3 {
            return None;
        }
    }
    ConvexPolygon::from_clipped(subject)
}

/// Area of `a ∩ b`, zero when disjoint.
pub fn intersection_area(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    convex_intersection(a, b).map_or(0.0, |p| p.area())
}

/// Intersection over union, clamped to `[0, 1]`.
pub fn iou(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= AREA_TOL {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IOU that rejects a degenerate union instead of returning zero.
pub fn checked_iou(a: &ConvexPolygon, b: &ConvexPolygon) -> Result<f64> {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= AREA_TOL {
        return Err(Error::Degenerate(format!("union area {union:e} too small for IOU")));
    }
    Ok((inter / union).clamp(0.0, 1.0))
}
