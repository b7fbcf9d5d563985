//! Procedural KITTI-format scenes.
//!
//! Scenes hold a flat ground, a handful of boxed objects filled with points
//! and a painted image in which nearer objects overwrite farther ones. With
//! `chain_prob > 0` some objects are placed directly behind an earlier one
//! along the same line of sight, which produces strong image overlap
//! without any BEV overlap.

use std::f64::consts::PI;

use nalgebra::{Matrix3x4, Matrix4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{bev_intersection_area, box3d_corners, lidar_to_image, project_box3d_to_2d, Box2D, Box3D};
use crate::kitti_io::{box3d_to_label, CalibrationSet, LabelRecord, ObjectClass, PointCloud, RgbImage, SampleDatabase, Scene};
use crate::rng::SplitMix64;

pub const GROUND_Z: f64 = -1.73;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Camera intrinsics are the KITTI ones multiplied by this factor.
    pub image_scale: f64,
    pub objects: usize,
    pub chain_prob: f64,
    pub ground_points: usize,
    pub dont_care_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_scale: 0.25,
            objects: 6,
            chain_prob: 0.5,
            ground_points: 1500,
            dont_care_prob: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn image_size(&self) -> (usize, usize) {
        (
            (1242.0 * self.image_scale).round() as usize,
            (375.0 * self.image_scale).round() as usize,
        )
    }
}

/// KITTI 2011_09_26 style calibration with the image plane scaled by `scale`.
pub fn scaled_calibration(scale: f64) -> CalibrationSet {
    let t = Matrix4::new(
        7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03, //
        1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02, //
        9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01, //
        0.0, 0.0, 0.0, 1.0,
    );
    let r0 = Matrix4::new(
        9.999239e-01, 9.837760e-03, -7.445048e-03, 0.0, //
        -9.869795e-03, 9.999421e-01, -4.278459e-03, 0.0, //
        7.402527e-03, 4.351614e-03, 9.999631e-01, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    );
    let mut p = Matrix3x4::new(
        7.215377e+02, 0.0, 6.095593e+02, 4.485728e+01, //
        0.0, 7.215377e+02, 1.728540e+02, 2.163791e-01, //
        0.0, 0.0, 1.0, 2.745884e-03,
    );
    for r in 0..2 {
        for c in 0..4 {
            p[(r, c)] *= scale;
        }
    }
    CalibrationSet::new(r0 * t, p)
}

fn class_dims(class: &ObjectClass, rng: &mut SplitMix64) -> [f64; 3] {
    match class {
        ObjectClass::Pedestrian => [rng.random_range(0.6..1.0), rng.random_range(0.5..0.7), rng.random_range(1.55..1.9)],
        ObjectClass::Cyclist => [rng.random_range(1.6..1.9), rng.random_range(0.5..0.7), rng.random_range(1.6..1.8)],
        _ => [rng.random_range(3.5..4.5), rng.random_range(1.5..1.8), rng.random_range(1.4..1.7)],
    }
}

fn class_color(class: &ObjectClass) -> [u8; 3] {
    match class {
        ObjectClass::Pedestrian => [200, 60, 60],
        ObjectClass::Cyclist => [60, 170, 60],
        _ => [60, 80, 200],
    }
}

/// Every corner strictly in front of the camera and inside the image.
fn fully_visible(b: &Box3D, calib: &CalibrationSet, (w, h): (usize, usize)) -> bool {
    box3d_corners(b).iter().all(|c| {
        lidar_to_image(*c, calib).is_some_and(|p| p.depth > 1.0 && p.u >= 0.0 && p.v >= 0.0 && p.u < w as f64 && p.v < h as f64)
    })
}

fn place_object(
    class: &ObjectClass,
    placed: &[Box3D],
    cfg: &SynthConfig,
    calib: &CalibrationSet,
    rng: &mut SplitMix64,
) -> Option<Box3D> {
    let size = cfg.image_size();
    for _ in 0..50 {
        let dims = class_dims(class, rng);
        let yaw = rng.random_range(-PI..PI);
        let (x, y) = match placed.last() {
            Some(prev) if rng.random_bool(cfg.chain_prob.clamp(0.0, 1.0)) => {
                // Same bearing as the previous object, a few meters farther.
                let bearing = prev.center[1] / prev.center[0];
                let x = prev.center[0] + rng.random_range(4.0..9.0);
                (x, (bearing + rng.random_range(-0.02..0.02)) * x)
            }
            _ => {
                let x = rng.random_range(7.0..40.0);
                (x, rng.random_range(-0.3..0.3) * x)
            }
        };
        let b = Box3D::new([x, y, GROUND_Z + dims[2] / 2.0], dims, yaw);
        let clear = placed.iter().all(|q| bev_intersection_area(&b, q) == 0.0);
        if clear && fully_visible(&b, calib, size) {
            return Some(b);
        }
    }
    None
}

fn fill_points(b: &Box3D, rng: &mut SplitMix64, out: &mut Vec<[f32; 4]>) {
    let range = b.center[0].hypot(b.center[1]);
    let n = ((3000.0 / (range * range)) * b.dims[0] * b.dims[1] * 10.0).clamp(25.0, 400.0) as usize;
    let reflect = rng.random_range(0.2..0.9f32);
    for _ in 0..n {
        let local = [0, 1, 2].map(|k| rng.random_range(-0.48..0.48) * b.dims[k]);
        let w = b.to_world(local);
        out.push([w[0] as f32, w[1] as f32, w[2] as f32, (reflect + rng.random_range(-0.1..0.1f32)).clamp(0.0, 1.0)]);
    }
}

fn background(width: usize, height: usize, rng: &mut SplitMix64) -> RgbImage {
    let mut img = RgbImage::new(width, height);
    let horizon = height * 2 / 5;
    for y in 0..height {
        for x in 0..width {
            let n: i32 = rng.random_range(-12..=12);
            let base: [i32; 3] = if y < horizon {
                [120 + (y * 60 / horizon.max(1)) as i32, 160, 220]
            } else {
                [90, 90, 95 + ((x / 8) % 2) as i32 * 10]
            };
            img.put(x, y, base.map(|c| (c + n).clamp(0, 255) as u8));
        }
    }
    img
}

fn paint_object(img: &mut RgbImage, owner: &mut [Option<usize>], id: usize, rect: &Box2D, color: [u8; 3], shade: i32) {
    let x0 = rect.u_min.floor().max(0.0) as usize;
    let y0 = rect.v_min.floor().max(0.0) as usize;
    let x1 = (rect.u_max.ceil().max(0.0) as usize).min(img.width);
    let y1 = (rect.v_max.ceil().max(0.0) as usize).min(img.height);
    for y in y0..y1 {
        for x in x0..x1 {
            let stripe = if (x - x0) % 6 < 3 { 0 } else { 25 };
            let rim = if y == y0 || y + 1 == y1 || x == x0 || x + 1 == x1 { -40 } else { 0 };
            img.put(x, y, color.map(|c| (c as i32 + shade + stripe + rim).clamp(0, 255) as u8));
            owner[y * img.width + x] = Some(id);
        }
    }
}

fn occlusion_level(visible: f64) -> i32 {
    if visible >= 0.9 {
        0
    } else if visible >= 0.5 {
        1
    } else {
        2
    }
}

/// Generate one scene.
pub fn synth_scene(id: &str, cfg: &SynthConfig, rng: &mut SplitMix64) -> Scene {
    let calib = scaled_calibration(cfg.image_scale);
    let (width, height) = cfg.image_size();

    let mut objects: Vec<(ObjectClass, Box3D)> = Vec::new();
    for _ in 0..cfg.objects {
        let class = match rng.random_range(0..10) {
            0..=5 => ObjectClass::Car,
            6..=7 => ObjectClass::Pedestrian,
            _ => ObjectClass::Cyclist,
        };
        let boxes: Vec<Box3D> = objects.iter().map(|(_, b)| *b).collect();
        if let Some(b) = place_object(&class, &boxes, cfg, &calib, rng) {
            objects.push((class, b));
        }
    }

    let mut points = Vec::with_capacity(cfg.ground_points + 400 * objects.len());
    for _ in 0..cfg.ground_points {
        let x = rng.random_range(2.0..60.0);
        let y = rng.random_range(-0.6..0.6) * x;
        let z = GROUND_Z + rng.random_range(-0.02..0.0);
        points.push([x as f32, y as f32, z as f32, rng.random_range(0.05..0.3f32)]);
    }
    for (_, b) in &objects {
        fill_points(b, rng, &mut points);
    }

    let mut image = background(width, height, rng);
    let mut owner = vec![None; width * height];
    let rects: Vec<Box2D> = objects
        .iter()
        .map(|(_, b)| project_box3d_to_2d(b, &calib, (width, height)).expect("placed objects are visible"))
        .collect();
    // Far to near so that nearer objects cover farther ones.
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| objects[b].1.center[0].total_cmp(&objects[a].1.center[0]));
    for &k in &order {
        let shade = rng.random_range(-30..30);
        paint_object(&mut image, &mut owner, k, &rects[k], class_color(&objects[k].0), shade);
    }

    let mut labels: Vec<LabelRecord> = objects
        .iter()
        .enumerate()
        .map(|(k, (class, b))| {
            let r = &rects[k];
            let (x0, y0) = (r.u_min.floor().max(0.0) as usize, r.v_min.floor().max(0.0) as usize);
            let (x1, y1) = ((r.u_max.ceil() as usize).min(width), (r.v_max.ceil() as usize).min(height));
            let total = ((x1 - x0) * (y1 - y0)).max(1);
            let mine = (y0..y1)
                .flat_map(|y| (x0..x1).map(move |x| (x, y)))
                .filter(|&(x, y)| owner[y * width + x] == Some(k))
                .count();
            let mut label = box3d_to_label(b, *r, class.clone(), &calib);
            label.occlusion = occlusion_level(mine as f64 / total as f64);
            label
        })
        .collect();

    if rng.random_bool(cfg.dont_care_prob.clamp(0.0, 1.0)) {
        let u = rng.random_range(0.0..width as f64 * 0.8);
        let v = rng.random_range(height as f64 * 0.3..height as f64 * 0.6);
        labels.push(LabelRecord {
            class: ObjectClass::DontCare,
            truncation: -1.0,
            occlusion: -1,
            alpha: -10.0,
            bbox2d: Box2D::new(u.round(), v.round(), (u + 12.0).round(), (v + 8.0).round()),
            dims: [-1.0; 3],
            location: [-1000.0; 3],
            yaw: -10.0,
        });
    }

    Scene {
        id: id.to_string(),
        cloud: PointCloud { points },
        image,
        labels,
        calib,
    }
}

/// `n` scenes named `000000`, `000001`, … from one seed.
pub fn synth_corpus(n: usize, cfg: &SynthConfig, seed: u64) -> Vec<Scene> {
    (0..n)
        .map(|i| {
            let mut rng = SplitMix64::derive(seed, i as u64);
            synth_scene(&format!("{i:06}"), cfg, &mut rng)
        })
        .collect()
}

/// Sample database harvested from a set of scenes.
pub fn database_from_scenes(scenes: &[Scene]) -> SampleDatabase {
    SampleDatabase {
        entries: scenes.iter().flat_map(SampleDatabase::extract_from_scene).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_consistent() {
        let cfg = SynthConfig::default();
        let a = synth_corpus(3, &cfg, 5);
        let b = synth_corpus(3, &cfg, 5);
        assert_eq!(a, b);
        for s in &a {
            assert_eq!(s.image_size(), cfg.image_size());
            assert!(s.calib.orthonormality_error() < 1e-6);
            for (_, b3, b2) in s.gt_boxes() {
                let p = project_box3d_to_2d(&b3, &s.calib, s.image_size()).unwrap();
                assert!((p.u_min - b2.u_min).abs() < 1e-6 && (p.v_max - b2.v_max).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn objects_do_not_overlap_in_bev() {
        for s in synth_corpus(10, &SynthConfig::default(), 9) {
            let boxes: Vec<Box3D> = s.gt_boxes().into_iter().map(|(_, b, _)| b).collect();
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    assert!(bev_intersection_area(&boxes[i], &boxes[j]) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn database_entries_pass_containment() {
        let db = database_from_scenes(&synth_corpus(4, &SynthConfig::default(), 1));
        assert!(!db.entries.is_empty());
        for e in &db.entries {
            e.check().unwrap();
            assert!(!e.points.is_empty());
        }
    }
}
