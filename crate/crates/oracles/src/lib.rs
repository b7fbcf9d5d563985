//! Slow, independent reference implementations for testing.
//!
//! Nothing here depends on `fusion3d`; every oracle works on plain arrays
//! and is written the obvious way rather than the fast way.


use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

/// Oriented box: center, (length, width, height), yaw about +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OBox {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl OBox {
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.yaw.sin_cos();
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= self.dims[0] / 2.0 && across.abs() <= self.dims[1] / 2.0
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (p[2] - self.center[2]).abs() <= self.dims[2] / 2.0 && self.contains_xy(p[0], p[1])
    }

    /// Radius of the circle around the center enclosing the footprint.
    fn radius(&self) -> f64 {
        self.dims[0].hypot(self.dims[1]) / 2.0
    }
}

fn joint_bounds(a: &OBox, b: &OBox) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for bx in [a, b] {
        let r = bx.radius();
        for k in 0..2 {
            lo[k] = lo[k].min(bx.center[k] - r);
            hi[k] = hi[k].max(bx.center[k] + r);
        }
        lo[2] = lo[2].min(bx.center[2] - bx.dims[2] / 2.0);
        hi[2] = hi[2].max(bx.center[2] + bx.dims[2] / 2.0);
    }
    (lo, hi)
}

fn mc_ratio(n: usize, rng: &mut impl Rng, mut sample: impl FnMut(&mut dyn FnMut() -> f64) -> (bool, bool)) -> f64 {
    let (mut ia, mut ib, mut both) = (0u64, 0u64, 0u64);
    let mut uniform = || rng.random::<f64>();
    for _ in 0..n {
        let (a, b) = sample(&mut uniform);
        ia += a as u64;
        ib += b as u64;
        both += (a && b) as u64;
    }
    let union = ia + ib - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

/// Monte-Carlo BEV IoU from `n` uniform samples over a joint bounding square.
pub fn mc_bev_iou(a: &OBox, b: &OBox, n: usize, rng: &mut impl Rng) -> f64 {
    let (lo, hi) = joint_bounds(a, b);
    mc_ratio(n, rng, |u| {
        let x = lo[0] + (hi[0] - lo[0]) * u();
        let y = lo[1] + (hi[1] - lo[1]) * u();
        (a.contains_xy(x, y), b.contains_xy(x, y))
    })
}

/// Monte-Carlo 3D IoU.
pub fn mc_iou_3d(a: &OBox, b: &OBox, n: usize, rng: &mut impl Rng) -> f64 {
    let (lo, hi) = joint_bounds(a, b);
    mc_ratio(n, rng, |u| {
        let p = [0, 1, 2].map(|k| lo[k] + (hi[k] - lo[k]) * u());
        (a.contains(p), b.contains(p))
    })
}

/// KITTI projection written out with plain loops:
/// `P2 · R0_rect · Tr_velo_to_cam · [x y z 1]ᵀ`. Returns `(u, v, depth)`.
pub fn kitti_project(p2: &[f64; 12], r0: &[f64; 9], tr: &[f64; 12], p: [f64; 3]) -> Option<(f64, f64, f64)> {
    let mut cam = [0.0; 3];
    for r in 0..3 {
        cam[r] = tr[r * 4] * p[0] + tr[r * 4 + 1] * p[1] + tr[r * 4 + 2] * p[2] + tr[r * 4 + 3];
    }
    let mut rect = [0.0; 3];
    for r in 0..3 {
        rect[r] = r0[r * 3] * cam[0] + r0[r * 3 + 1] * cam[1] + r0[r * 3 + 2] * cam[2];
    }
    let mut img = [0.0; 3];
    for r in 0..3 {
        img[r] = p2[r * 4] * rect[0] + p2[r * 4 + 1] * rect[1] + p2[r * 4 + 2] * rect[2] + p2[r * 4 + 3];
    }
    if img[2] <= 1e-6 {
        return None;
    }
    Some((img[0] / img[2], img[1] / img[2], img[2]))
}

/// Closed-form bilinear interpolation on an `h × w × c` grid (channels
/// innermost) whose cell `(i, j)` sits at pixel `((j+½)s, (i+½)s)`.
/// Queries outside the outermost centers use the nearest edge value.
pub fn bilinear_4term(data: &[f64], h: usize, w: usize, c: usize, stride: usize, u: f64, v: f64) -> Vec<f64> {
    let gx = u / stride as f64 - 0.5;
    let gy = v / stride as f64 - 0.5;
    let gx = gx.max(0.0).min((w - 1) as f64);
    let gy = gy.max(0.0).min((h - 1) as f64);
    let (j0, i0) = (gx.floor() as usize, gy.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(w - 1), (i0 + 1).min(h - 1));
    let (a, b) = (gx - j0 as f64, gy - i0 as f64);
    let at = |i: usize, j: usize, k: usize| data[(i * w + j) * c + k];
    (0..c)
        .map(|k| {
            (1.0 - a) * (1.0 - b) * at(i0, j0, k)
                + a * (1.0 - b) * at(i0, j1, k)
                + (1.0 - a) * b * at(i1, j0, k)
                + a * b * at(i1, j1, k)
        })
        .collect()
}

/// The four grid cells that `bilinear_4term` mixes at `(u, v)`.
pub fn bilinear_neighbours(h: usize, w: usize, stride: usize, u: f64, v: f64) -> [(usize, usize); 4] {
    let gx = (u / stride as f64 - 0.5).max(0.0).min((w - 1) as f64);
    let gy = (v / stride as f64 - 0.5).max(0.0).min((h - 1) as f64);
    let (j0, i0) = (gx.floor() as usize, gy.floor() as usize);
    let (j1, i1) = ((j0 + 1).min(w - 1), (i0 + 1).min(h - 1));
    [(i0, j0), (i0, j1), (i1, j0), (i1, j1)]
}

/// Hash-bucket voxelization: per occupied cell, the point count and the sum
/// of `(x, y, z, intensity)`. Half-open range `[min, min + n·size)`.
pub fn voxel_buckets(points: &[[f32; 4]], min: [f64; 3], size: [f64; 3], extents: [u32; 3]) -> BTreeMap<[u32; 3], (usize, [f64; 4])> {
    let mut out: BTreeMap<[u32; 3], (usize, [f64; 4])> = BTreeMap::new();
    'points: for p in points {
        let mut idx = [0u32; 3];
        for k in 0..3 {
            let t = (p[k] as f64 - min[k]) / size[k];
            if !(t >= 0.0) || t.floor() >= extents[k] as f64 {
                continue 'points;
            }
            idx[k] = t.floor() as u32;
        }
        let e = out.entry(idx).or_insert((0, [0.0; 4]));
        e.0 += 1;
        for k in 0..4 {
            e.1[k] += p[k] as f64;
        }
    }
    out
}

/// Support of a 3×3×3 stride-2 convolution with padding 1, by enumerating
/// every (input, offset) pair.
pub fn dilate(occupied: &BTreeSet<[u32; 3]>, coarse_extents: [u32; 3]) -> BTreeSet<[u32; 3]> {
    let mut out = BTreeSet::new();
    for v in occupied {
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    let t = [v[0] as i64 + dx, v[1] as i64 + dy, v[2] as i64 + dz];
                    if t.iter().any(|x| *x < 0) {
                        continue;
                    }
                    let c = [t[0] / 2, t[1] / 2, t[2] / 2];
                    if (0..3).all(|k| c[k] < coarse_extents[k] as i64) {
                        out.insert([c[0] as u32, c[1] as u32, c[2] as u32]);
                    }
                }
            }
        }
    }
    out
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Relative error with a floor on the denominator.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Interpolated AP by brute force: for each anchor scan every operating
/// point and take the best precision with recall at or above the anchor.
pub fn ap_bruteforce(entries: &[(f64, bool)], gt_count: usize, anchors: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[b].0.partial_cmp(&entries[a].0).unwrap().then(a.cmp(&b)));
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, &i) in order.iter().enumerate() {
        tp += entries[i].1 as usize;
        points.push((tp as f64 / gt_count as f64, tp as f64 / (k + 1) as f64));
    }
    let mut total = 0.0;
    for &r in anchors {
        let mut best: f64 = 0.0;
        for &(rec, prec) in &points {
            if rec >= r - 1e-12 {
                best = best.max(prec);
            }
        }
        total += best;
    }
    total / anchors.len() as f64
}

pub fn anchors_11() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn anchors_40() -> Vec<f64> {
    (1..=40).map(|i| i as f64 / 40.0).collect()
}

/// Occlusion-aware selection, recomputing every count from scratch on each
/// round. `ss[i][j]` flags sample/sample conflicts, `sg[i][k]` sample/GT.
pub fn ogs_reference(ss: &[Vec<bool>], sg: &[Vec<bool>]) -> Vec<usize> {
    let n = ss.len();
    let mut alive: Vec<bool> = vec![true; n];
    loop {
        let counts: Vec<usize> = (0..n)
            .map(|i| {
                if !alive[i] {
                    return 0;
                }
                let s = (0..n).filter(|&j| j != i && alive[j] && ss[i][j]).count();
                s + sg[i].iter().filter(|x| **x).count()
            })
            .collect();
        let max = counts.iter().copied().max().unwrap_or(0);
        if max == 0 {
            break;
        }
        let worst = counts.iter().position(|&c| c == max).unwrap();
        alive[worst] = false;
    }
    (0..n).filter(|&i| alive[i]).collect()
}

/// Decode a velodyne blob into float quadruples, byte by byte.
pub fn decode_velodyne(bytes: &[u8]) -> Vec<[f32; 4]> {
    bytes
        .chunks(16)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]);
            [f(0), f(4), f(8), f(12)]
        })
        .collect()
}

/// One label line split into its fifteen columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLabel {
    pub class: String,
    pub truncation: f64,
    pub occlusion: i64,
    pub alpha: f64,
    pub bbox: [f64; 4],
    pub hwl: [f64; 3],
    pub xyz: [f64; 3],
    pub ry: f64,
}

pub fn parse_label_file(text: &str) -> Vec<RawLabel> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let t: Vec<&str> = l.split(' ').filter(|s| !s.is_empty()).collect();
            assert_eq!(t.len(), 15, "label line has {} columns", t.len());
            let f = |i: usize| t[i].parse::<f64>().unwrap();
            RawLabel {
                class: t[0].to_string(),
                truncation: f(1),
                occlusion: t[2].parse().unwrap(),
                alpha: f(3),
                bbox: [f(4), f(5), f(6), f(7)],
                hwl: [f(8), f(9), f(10)],
                xyz: [f(11), f(12), f(13)],
                ry: f(14),
            }
        })
        .collect()
}

/// Calibration file as `key → values`.
pub fn parse_calib_file(text: &str) -> BTreeMap<String, Vec<f64>> {
    text.lines()
        .filter_map(|l| {
            let colon = l.find(':')?;
            let vals = l[colon + 1..].split_whitespace().map(|s| s.parse::<f64>().unwrap()).collect();
            Some((l[..colon].trim().to_string(), vals))
        })
        .collect()
}
