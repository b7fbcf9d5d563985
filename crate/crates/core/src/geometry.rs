//! Oriented-box geometry: projection into the image, corner generation and
//! the IoU kernels (rotated BEV, axis-aligned 2D, upright 3D).
//!
//! Boxes live in the LiDAR frame (x forward, y left, z up). `Box3D::center`
//! is the geometric center, `dims` are the extents along the box's own
//! x/y/z axes and `yaw` rotates about +z.

use std::f64::consts::PI;

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::kitti_io::CalibrationSet;

/// Projections with depth at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Self {
        Self {
            center,
            dims,
            yaw: normalize_yaw(yaw),
        }
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.dims.iter().all(|d| *d > 0.0 && d.is_finite()))
    }

    pub fn z_range(&self) -> (f64, f64) {
        let h = self.dims[2] / 2.0;
        (self.center[2] - h, self.center[2] + h)
    }

    /// Footprint in the ground plane as a counter-clockwise quadrilateral.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hx = self.dims[0] / 2.0;
        let hy = self.dims[1] / 2.0;
        let local = [[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]];
        local.map(|[x, y]| [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])
    }

    /// Whether a point lies inside the (closed) box.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let local = self.to_local(p);
        (0..3).all(|i| local[i].abs() <= self.dims[i] / 2.0)
    }

    /// Express a world point in the box frame (origin at center, yaw removed).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    /// Inverse of [`Box3D::to_local`].
    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.center[0] + c * p[0] - s * p[1],
            self.center[1] + s * p[0] + c * p[1],
            self.center[2] + p[2],
        ]
    }
}

/// Wrap an angle into (-π, π].
pub fn normalize_yaw(yaw: f64) -> f64 {
    if yaw > -PI && yaw <= PI {
        return yaw;
    }
    let mut y = yaw.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Axis-aligned image rectangle in pixels, `[u_min, v_min, u_max, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl Box2D {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        Self {
            u_min,
            v_min,
            u_max,
            v_max,
        }
    }

    pub fn width(&self) -> f64 {
        (self.u_max - self.u_min).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.v_max - self.v_min).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Box2D) -> f64 {
        let w = self.u_max.min(other.u_max) - self.u_min.max(other.u_min);
        let h = self.v_max.min(other.v_max) - self.v_min.max(other.v_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Pixel position and camera depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Project a LiDAR point into the image: `P · T · p`, then divide by depth.
///
/// Returns `None` when the point is at or behind the camera plane.
pub fn lidar_to_image(p: [f64; 3], calib: &CalibrationSet) -> Option<ImagePoint> {
    lidar_to_image_homogeneous([p[0], p[1], p[2], 1.0], calib)
}

/// Same as [`lidar_to_image`] for a homogeneous input. Scaling the input by a
/// positive factor leaves `(u, v)` unchanged.
pub fn lidar_to_image_homogeneous(p: [f64; 4], calib: &CalibrationSet) -> Option<ImagePoint> {
    let q = calib.img_from_cam * (calib.cam_from_lidar * Vector4::from(p));
    let depth = q[2];
    if !(depth > MIN_DEPTH) {
        return None;
    }
    Some(ImagePoint {
        u: q[0] / depth,
        v: q[1] / depth,
        depth,
    })
}

/// The 8 corners of a box.
///
/// Order: bottom face (z−) then top face (z+); each face counter-clockwise
/// seen from above starting at local (+x, +y): (+,+), (−,+), (−,−), (+,−).
pub fn box3d_corners(b: &Box3D) -> [[f64; 3]; 8] {
    const SIGNS: [[f64; 2]; 4] = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]];
    let half = [b.dims[0] / 2.0, b.dims[1] / 2.0, b.dims[2] / 2.0];
    let mut out = [[0.0; 3]; 8];
    for (face, sz) in [-1.0, 1.0].into_iter().enumerate() {
        for (k, [sx, sy]) in SIGNS.into_iter().enumerate() {
            out[face * 4 + k] = b.to_world([sx * half[0], sy * half[1], sz * half[2]]);
        }
    }
    out
}

/// Corner index pairs forming the 12 box edges (for wireframes).
pub const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Project a 3D box to an image rectangle.
///
/// Corners behind the camera are dropped; the axis-aligned bounds of the
/// rest are clipped to `[0, width] × [0, height]`. `None` if fewer than two
/// corners survive or the clipped rectangle has zero area.
pub fn project_box3d_to_2d(b: &Box3D, calib: &CalibrationSet, image_size: (usize, usize)) -> Option<Box2D> {
    let (width, height) = (image_size.0 as f64, image_size.1 as f64);
    let projected: Vec<ImagePoint> = box3d_corners(b)
        .iter()
        .filter_map(|c| lidar_to_image(*c, calib))
        .collect();
    if projected.len() < 2 {
        return None;
    }
    let mut r = Box2D::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &projected {
        r.u_min = r.u_min.min(p.u);
        r.v_min = r.v_min.min(p.v);
        r.u_max = r.u_max.max(p.u);
        r.v_max = r.v_max.max(p.v);
    }
    let clipped = Box2D::new(
        r.u_min.clamp(0.0, width),
        r.v_min.clamp(0.0, height),
        r.u_max.clamp(0.0, width),
        r.v_max.clamp(0.0, height),
    );
    (clipped.area() > 0.0).then_some(clipped)
}

/// Standard axis-aligned intersection over union.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let inter = a.intersection_area(b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area of a simple polygon (positive for counter-clockwise).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc / 2.0
}

/// Sutherland–Hodgman: clip `subject` by the convex counter-clockwise `clip`.
pub fn clip_convex_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let d_cur = cross(e0, e1, cur);
            let d_prev = cross(e0, e1, prev);
            if d_cur >= 0.0 {
                if d_prev < 0.0 {
                    output.push(segment_at(prev, cur, d_prev, d_cur));
                }
                output.push(cur);
            } else if d_prev >= 0.0 {
                output.push(segment_at(prev, cur, d_prev, d_cur));
            }
        }
    }
    output
}

fn segment_at(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn axis_aligned(poly: &[[f64; 2]; 4]) -> bool {
    (0..4).all(|i| {
        let p = poly[i];
        let q = poly[(i + 1) % 4];
        p[0] == q[0] || p[1] == q[1]
    })
}

fn bounds(poly: &[[f64; 2]; 4]) -> Box2D {
    let mut r = Box2D::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        r.u_min = r.u_min.min(p[0]);
        r.v_min = r.v_min.min(p[1]);
        r.u_max = r.u_max.max(p[0]);
        r.v_max = r.v_max.max(p[1]);
    }
    r
}

/// Intersection area of the two ground-plane footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let fa = a.footprint();
    let fb = b.footprint();
    if axis_aligned(&fa) && axis_aligned(&fb) {
        return bounds(&fa).intersection_area(&bounds(&fb));
    }
    let inter = polygon_area(&clip_convex_polygon(&fa, &fb)).max(0.0);
    let cap = (a.dims[0] * a.dims[1]).min(b.dims[0] * b.dims[1]);
    inter.min(cap)
}

fn same_up_to_flip(a: &Box3D, b: &Box3D) -> bool {
    if a.center != b.center || a.dims != b.dims {
        return false;
    }
    let d = normalize_yaw(a.yaw - b.yaw);
    d == 0.0 || d == PI || a.yaw == b.yaw
}

/// IoU of the yaw-rotated footprints in the ground plane.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let area_a = a.dims[0] * a.dims[1];
    let area_b = b.dims[0] * b.dims[1];
    if !(area_a > 0.0) || !(area_b > 0.0) {
        return 0.0;
    }
    if same_up_to_flip(a, b) {
        return 1.0;
    }
    let fa = a.footprint();
    let fb = b.footprint();
    if axis_aligned(&fa) && axis_aligned(&fb) {
        return iou_2d(&bounds(&fa), &bounds(&fb));
    }
    let inter = bev_intersection_area(a, b);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of two upright boxes: footprint intersection times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    if a.is_degenerate() || b.is_degenerate() {
        return 0.0;
    }
    if same_up_to_flip(a, b) {
        return 1.0;
    }
    let (a_lo, a_hi) = a.z_range();
    let (b_lo, b_hi) = b.z_range();
    let overlap_z = (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);
    if overlap_z == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * overlap_z;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Row-major `|a| × |b|` table of BEV IoUs.
pub fn bev_iou_table(a: &[Box3D], b: &[Box3D], exec: Execution) -> Vec<Vec<f64>> {
    exec.map(a, |x| b.iter().map(|y| bev_iou(x, y)).collect())
}

/// Row-major `|a| × |b|` table of image-plane IoUs.
pub fn iou_2d_table(a: &[Box2D], b: &[Box2D], exec: Execution) -> Vec<Vec<f64>> {
    exec.map(a, |x| b.iter().map(|y| iou_2d(x, y)).collect())
}

/// Row-major `|a| × |b|` table of 3D IoUs.
pub fn iou_3d_table(a: &[Box3D], b: &[Box3D], exec: Execution) -> Vec<Vec<f64>> {
    exec.map(a, |x| b.iter().map(|y| iou_3d(x, y)).collect())
}

/// Rotation about +z applied to a point.
pub fn rotate_z(p: [f64; 3], angle: f64) -> [f64; 3] {
    let v = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), angle) * Vector3::from(p);
    [v.x, v.y, v.z]
}
