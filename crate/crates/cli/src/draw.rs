//! Raster helpers for the projection overlay.

use fusion3d::geometry::{box3d_corners, lidar_to_image, BOX_EDGES};
use fusion3d::kitti_io::{CalibrationSet, RgbImage};
use fusion3d::Box3D;

/// Marker colors for scales 0, 1, 2, …; wraps around past the end.
pub const SCALE_COLORS: [[u8; 3]; 5] = [[255, 32, 32], [255, 200, 0], [32, 220, 32], [0, 160, 255], [200, 64, 255]];
pub const BOX_COLOR: [u8; 3] = [255, 255, 255];

pub fn scale_color(level: usize) -> [u8; 3] {
    SCALE_COLORS[level % SCALE_COLORS.len()]
}

/// Pixel holding image coordinate `(u, v)`, if it lies in the image.
pub fn pixel_of(img: &RgbImage, u: f64, v: f64) -> Option<(usize, usize)> {
    if u >= 0.0 && v >= 0.0 && u < img.width as f64 && v < img.height as f64 {
        Some((u.floor() as usize, v.floor() as usize))
    } else {
        None
    }
}

/// Bresenham line, clipped per pixel. Endpoints far outside the image are
/// first pulled in so the walk stays bounded.
pub fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), rgb: [u8; 3]) {
    let Some((a, b)) = clip_segment(a, b, img.width as f64, img.height as f64) else {
        return;
    };
    let (mut x0, mut y0) = (a.0.floor() as i64, a.1.floor() as i64);
    let (x1, y1) = (b.0.floor() as i64, b.1.floor() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        img.put_clipped(x0, y0, rgb);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Liang-Barsky clip of a segment to `[0, w) x [0, h)`.
fn clip_segment(a: (f64, f64), b: (f64, f64), w: f64, h: f64) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let hi_x = w - 1e-9;
    let hi_y = h - 1e-9;
    for (p, q) in [(-dx, a.0), (dx, hi_x - a.0), (-dy, a.1), (dy, hi_y - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    Some(((a.0 + t0 * dx, a.1 + t0 * dy), (a.0 + t1 * dx, a.1 + t1 * dy)))
}

/// Draw the twelve edges of a LiDAR-frame box. Edges with an endpoint
/// behind the camera are skipped.
pub fn draw_box_wireframe(img: &mut RgbImage, b: &Box3D, calib: &CalibrationSet, rgb: [u8; 3]) {
    let corners = box3d_corners(b).map(|c| lidar_to_image(c, calib));
    for (i, j) in BOX_EDGES {
        if let (Some(p), Some(q)) = (corners[i], corners[j]) {
            draw_line(img, (p.u, p.v), (q.u, q.v), rgb);
        }
    }
}
