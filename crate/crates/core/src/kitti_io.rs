//! KITTI-format I/O: velodyne point clouds, calibration, labels, P6 images,
//! whole scenes and the GT-sampling object database.
//!
//! Scene layout under a split directory (e.g. `training/`):
//!
//! ```text
//! velodyne/<id>.bin   little-endian f32 (x, y, z, intensity) per point
//! calib/<id>.txt      P0..P3, R0_rect, Tr_velo_to_cam, ...
//! label_2/<id>.txt    15 whitespace-separated fields per object
//! image_2/<id>.ppm    8-bit binary pixmap (P6)
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `parse(write(x)) == x` holds exactly for every parsed value.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_yaw, Box2D, Box3D};

/// Tolerance on `RᵀR − I` for the LiDAR-to-camera rotation block.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Point clouds

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f32; 4]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xyz(&self, i: usize) -> [f64; 3] {
        let p = self.points[i];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for p in &self.points {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// Decode a KITTI velodyne blob.
pub fn parse_point_cloud(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::format(
            "point cloud",
            None,
            format!("length {} is not a multiple of 16", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for (index, chunk) in bytes.chunks_exact(16).enumerate() {
        let mut p = [0f32; 4];
        for (k, word) in chunk.chunks_exact(4).enumerate() {
            p[k] = f32::from_le_bytes([word[0], word[1], word[2], word[3]]);
        }
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !(0.0..=1.0).contains(&p[3]) {
            return Err(Error::format(
                "point cloud",
                None,
                format!("intensity {} of point {index} outside [0, 1]", p[3]),
            ));
        }
        points.push(p);
    }
    Ok(PointCloud { points })
}

// ---------------------------------------------------------------------------
// Calibration

/// The two transforms needed to take a LiDAR point to pixels.
///
/// `cam_from_lidar` already contains the rectifying rotation, so
/// `img_from_cam · cam_from_lidar · p` is the full projection.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub cam_from_lidar: Matrix4<f64>,
    pub img_from_cam: Matrix3x4<f64>,
    /// Raw `key: values` entries in file order, kept for lossless writing.
    pub entries: Vec<(String, Vec<f64>)>,
}

impl CalibrationSet {
    /// Build from matrices; the raw entries describe them as `P2`,
    /// identity `R0_rect` and `Tr_velo_to_cam`.
    pub fn new(cam_from_lidar: Matrix4<f64>, img_from_cam: Matrix3x4<f64>) -> Self {
        let p2: Vec<f64> = row_major(&img_from_cam);
        let r0 = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let tr: Vec<f64> = (0..3)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| cam_from_lidar[(r, c)])
            .collect();
        Self {
            cam_from_lidar,
            img_from_cam,
            entries: vec![
                ("P2".to_string(), p2),
                ("R0_rect".to_string(), r0),
                ("Tr_velo_to_cam".to_string(), tr),
            ],
        }
    }

    pub fn lidar_from_cam(&self) -> Matrix4<f64> {
        self.cam_from_lidar
            .try_inverse()
            .expect("rigid transform is invertible")
    }

    pub fn cam_to_lidar(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.lidar_from_cam() * Vector4::new(p[0], p[1], p[2], 1.0);
        [q[0], q[1], q[2]]
    }

    pub fn lidar_to_cam(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.cam_from_lidar * Vector4::new(p[0], p[1], p[2], 1.0);
        [q[0], q[1], q[2]]
    }

    /// Largest entry of `|RᵀR − I|` for the rotation block of `cam_from_lidar`.
    pub fn orthonormality_error(&self) -> f64 {
        let r: Matrix3<f64> = self.cam_from_lidar.fixed_view::<3, 3>(0, 0).into_owned();
        (r.transpose() * r - Matrix3::identity()).abs().max()
    }
}

fn row_major(m: &Matrix3x4<f64>) -> Vec<f64> {
    (0..3)
        .flat_map(|r| (0..4).map(move |c| (r, c)))
        .map(|(r, c)| m[(r, c)])
        .collect()
}

/// Lift a 3×3 or 3×4 row-major block into a 4×4 homogeneous matrix.
fn lift4(values: &[f64]) -> Matrix4<f64> {
    let cols = values.len() / 3;
    let mut m = Matrix4::identity();
    for r in 0..3 {
        for c in 0..cols {
            m[(r, c)] = values[r * cols + c];
        }
    }
    m
}

/// Parse a KITTI object calibration file.
pub fn parse_calibration(text: &str) -> Result<CalibrationSet> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| Error::format("calibration", Some(i + 1), "expected `key: values`"))?;
        let values = rest
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::format("calibration", Some(i + 1), format!("malformed float `{tok}`"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.push((key.trim().to_string(), values));
    }

    let lookup = |key: &str, len: usize| -> Result<&[f64]> {
        let values = entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::MissingKey(key.to_string()))?;
        if values.len() != len {
            return Err(Error::format(
                "calibration",
                None,
                format!("{key} has {} values, expected {len}", values.len()),
            ));
        }
        Ok(values)
    };

    let p2 = lookup("P2", 12)?;
    let r0 = lookup("R0_rect", 9)?;
    let tr = lookup("Tr_velo_to_cam", 12)?;

    let img_from_cam = Matrix3x4::from_row_slice(p2);
    let cam_from_lidar = lift4(r0) * lift4(tr);
    let calib = CalibrationSet {
        cam_from_lidar,
        img_from_cam,
        entries,
    };
    let err = calib.orthonormality_error();
    if !(err <= ORTHONORMAL_TOL) {
        return Err(Error::format(
            "calibration",
            None,
            format!("LiDAR-to-camera rotation is not orthonormal (|RᵀR − I| = {err:e})"),
        ));
    }
    Ok(calib)
}

pub fn format_calibration(calib: &CalibrationSet) -> String {
    let mut out = String::new();
    for (key, values) in &calib.entries {
        let _ = write!(out, "{key}:");
        for v in values {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Labels

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
    DontCare,
    Other(String),
}

impl ObjectClass {
    pub fn as_str(&self) -> &str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::DontCare => "DontCare",
            ObjectClass::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "Car" => ObjectClass::Car,
            "Pedestrian" => ObjectClass::Pedestrian,
            "Cyclist" => ObjectClass::Cyclist,
            "DontCare" => ObjectClass::DontCare,
            other => ObjectClass::Other(other.to_string()),
        }
    }

    /// The three evaluated classes.
    pub fn evaluated() -> [ObjectClass; 3] {
        [ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist]
    }
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ObjectClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ObjectClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(ObjectClass::parse(&s))
    }
}

/// One object line of a KITTI label file (camera frame).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class: ObjectClass,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub bbox2d: Box2D,
    /// (height, width, length) in meters.
    pub dims: [f64; 3],
    /// Bottom-center of the box in the rectified camera frame.
    pub location: [f64; 3],
    /// Rotation about the camera y axis.
    pub yaw: f64,
}

impl LabelRecord {
    pub fn is_dont_care(&self) -> bool {
        self.class == ObjectClass::DontCare
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let lineno = Some(i + 1);
        if fields.len() != 15 {
            return Err(Error::format(
                "labels",
                lineno,
                format!("expected 15 fields, found {}", fields.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| Error::format("labels", lineno, format!("malformed number `{}`", fields[k])))
        };
        let occlusion = fields[2]
            .parse::<i32>()
            .map_err(|_| Error::format("labels", lineno, format!("malformed occlusion `{}`", fields[2])))?;
        let record = LabelRecord {
            class: ObjectClass::parse(fields[0]),
            truncation: num(1)?,
            occlusion,
            alpha: num(3)?,
            bbox2d: Box2D::new(num(4)?, num(5)?, num(6)?, num(7)?),
            dims: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            yaw: num(14)?,
        };
        if !record.is_dont_care() {
            if record.dims.iter().any(|d| *d < 0.0) {
                return Err(Error::format("labels", lineno, "negative dimension"));
            }
            if !(-PI..=PI).contains(&record.yaw) {
                return Err(Error::format("labels", lineno, format!("yaw {} outside [-π, π]", record.yaw)));
            }
            if !(0..=3).contains(&record.occlusion) {
                return Err(Error::format("labels", lineno, format!("occlusion level {}", record.occlusion)));
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn format_labels(labels: &[LabelRecord]) -> String {
    let mut out = String::new();
    for l in labels {
        let b = &l.bbox2d;
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            l.class,
            l.truncation,
            l.occlusion,
            l.alpha,
            b.u_min,
            b.v_min,
            b.u_max,
            b.v_max,
            l.dims[0],
            l.dims[1],
            l.dims[2],
            l.location[0],
            l.location[1],
            l.location[2],
            l.yaw
        );
    }
    out
}

/// Convert a camera-frame label into a LiDAR-frame box.
///
/// The camera y axis points down and `location` is the bottom center; the
/// LiDAR yaw follows the usual `−ry − π/2` convention.
pub fn label_to_box3d(label: &LabelRecord, calib: &CalibrationSet) -> Box3D {
    let [h, w, l] = label.dims;
    let loc = label.location;
    let center = calib.cam_to_lidar([loc[0], loc[1] - h / 2.0, loc[2]]);
    Box3D::new(center, [l, w, h], -label.yaw - PI / 2.0)
}

/// Inverse of [`label_to_box3d`]; `bbox2d` supplies the image rectangle.
pub fn box3d_to_label(b: &Box3D, bbox2d: Box2D, class: ObjectClass, calib: &CalibrationSet) -> LabelRecord {
    let [l, w, h] = b.dims;
    let c = calib.lidar_to_cam(b.center);
    let location = [c[0], c[1] + h / 2.0, c[2]];
    let yaw = normalize_yaw(-b.yaw - PI / 2.0);
    let alpha = normalize_yaw(yaw - location[0].atan2(location[2]));
    LabelRecord {
        class,
        truncation: 0.0,
        occlusion: 0,
        alpha,
        bbox2d,
        dims: [h, w, l],
        location,
        yaw,
    }
}

// ---------------------------------------------------------------------------
// Images

/// Interleaved 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Put a pixel given signed coordinates; out-of-bounds writes are ignored.
    pub fn put_clipped(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.put(x as usize, y as usize, rgb);
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> RgbImage {
        let mut out = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                out.put(x, y, self.get((x0 + x).min(self.width - 1), (y0 + y).min(self.height - 1)));
            }
        }
        out
    }
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let err = |msg: &str| Error::format("pixmap", None, msg.to_string());
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("non-ASCII header"))?);
    }
    if tokens[0] != "P6" {
        return Err(err("not a binary P6 pixmap"));
    }
    let parse = |t: &str| t.parse::<usize>().map_err(|_| err("bad header number"));
    let (width, height, maxval) = (parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
    if maxval != 255 {
        return Err(err("only 8-bit pixmaps are supported"));
    }
    if width == 0 || height == 0 {
        return Err(err("empty image"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(err("truncated raster"));
    }
    Ok(RgbImage {
        width,
        height,
        data: bytes[pos..pos + need].to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Scenes

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub cloud: PointCloud,
    pub image: RgbImage,
    pub labels: Vec<LabelRecord>,
    pub calib: CalibrationSet,
}

impl Scene {
    pub fn image_size(&self) -> (usize, usize) {
        (self.image.width, self.image.height)
    }

    /// LiDAR-frame boxes of all non-DontCare labels, in label order.
    pub fn gt_boxes(&self) -> Vec<(ObjectClass, Box3D, Box2D)> {
        self.labels
            .iter()
            .filter(|l| !l.is_dont_care())
            .map(|l| (l.class.clone(), label_to_box3d(l, &self.calib), l.bbox2d))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ScenePaths {
    pub velodyne: PathBuf,
    pub calib: PathBuf,
    pub label: PathBuf,
    pub image: PathBuf,
}

pub fn scene_paths(root: &Path, id: &str) -> ScenePaths {
    ScenePaths {
        velodyne: root.join("velodyne").join(format!("{id}.bin")),
        calib: root.join("calib").join(format!("{id}.txt")),
        label: root.join("label_2").join(format!("{id}.txt")),
        image: root.join("image_2").join(format!("{id}.ppm")),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Load scene `id` from a split directory. A missing label file yields no labels.
pub fn load_scene(root: &Path, id: &str) -> Result<Scene> {
    let paths = scene_paths(root, id);
    let cloud = parse_point_cloud(&read(&paths.velodyne)?)?;
    let calib = parse_calibration(&read_text(&paths.calib)?)?;
    let labels = if paths.label.exists() {
        parse_labels(&read_text(&paths.label)?)?
    } else {
        Vec::new()
    };
    let image = decode_ppm(&read(&paths.image)?)?;
    Ok(Scene {
        id: id.to_string(),
        cloud,
        image,
        labels,
        calib,
    })
}

/// Write a scene in KITTI layout under `root`.
pub fn write_scene(scene: &Scene, root: &Path) -> Result<()> {
    let paths = scene_paths(root, &scene.id);
    write_file(&paths.velodyne, &scene.cloud.to_bytes())?;
    write_file(&paths.calib, format_calibration(&scene.calib).as_bytes())?;
    write_file(&paths.label, format_labels(&scene.labels).as_bytes())?;
    write_file(&paths.image, &encode_ppm(&scene.image))
}

/// Scene ids present under `root/velodyne`, sorted.
pub fn list_scene_ids(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("velodyne");
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|e| e == "bin") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

// ---------------------------------------------------------------------------
// Sample database

/// Slack allowed when checking that database points lie inside their box.
pub const DB_CONTAINMENT_TOL: f64 = 1e-4;

/// One pasteable object: points in the box frame plus the image patch it
/// occupied in its source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    pub id: String,
    pub class: ObjectClass,
    /// Points expressed in the box frame (center at origin, yaw 0).
    pub points: PointCloud,
    /// Pose of the object in its source scene (LiDAR frame).
    pub box3d: Box3D,
    pub patch: RgbImage,
    pub box2d: Box2D,
}

impl DbEntry {
    pub fn check(&self) -> Result<()> {
        let canonical = Box3D {
            center: [0.0; 3],
            yaw: 0.0,
            ..self.box3d
        };
        for (i, p) in self.points.points.iter().enumerate() {
            let local = [p[0] as f64, p[1] as f64, p[2] as f64];
            if (0..3).any(|k| local[k].abs() > canonical.dims[k] / 2.0 + DB_CONTAINMENT_TOL) {
                return Err(Error::format(
                    "sample database",
                    None,
                    format!("entry {} point {i} lies outside its box", self.id),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DbIndexRecord {
    id: String,
    class_name: ObjectClass,
    box3d: Box3D,
    box2d: Box2D,
    num_points: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleDatabase {
    pub entries: Vec<DbEntry>,
}

impl SampleDatabase {
    pub fn by_class(&self, class: &ObjectClass) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| &self.entries[i].class == class)
            .collect()
    }

    pub fn find(&self, id: &str) -> Option<&DbEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Extract every labelled, non-DontCare object of a scene.
    pub fn extract_from_scene(scene: &Scene) -> Vec<DbEntry> {
        let mut out = Vec::new();
        for (k, (class, b, rect)) in scene.gt_boxes().into_iter().enumerate() {
            let points = scene
                .cloud
                .points
                .iter()
                .filter(|p| b.contains([p[0] as f64, p[1] as f64, p[2] as f64]))
                .map(|p| {
                    let l = b.to_local([p[0] as f64, p[1] as f64, p[2] as f64]);
                    [l[0] as f32, l[1] as f32, l[2] as f32, p[3]]
                })
                .collect();
            let x0 = rect.u_min.max(0.0).floor() as usize;
            let y0 = rect.v_min.max(0.0).floor() as usize;
            let x1 = (rect.u_max.ceil() as usize).min(scene.image.width).max(x0 + 1);
            let y1 = (rect.v_max.ceil() as usize).min(scene.image.height).max(y0 + 1);
            let patch = scene.image.crop(x0.min(scene.image.width - 1), y0.min(scene.image.height - 1), x1 - x0, y1 - y0);
            out.push(DbEntry {
                id: format!("{}_{}_{k}", scene.id, class),
                class,
                points: PointCloud { points },
                box3d: b,
                patch,
                box2d: rect,
            });
        }
        out
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let mut classes: Vec<&ObjectClass> = self.entries.iter().map(|e| &e.class).collect();
        classes.sort();
        classes.dedup();
        for class in classes {
            let dir = root.join(class.as_str());
            let mut index = Vec::new();
            for e in self.entries.iter().filter(|e| &e.class == class) {
                write_file(&dir.join(format!("{}.bin", e.id)), &e.points.to_bytes())?;
                write_file(&dir.join(format!("{}.ppm", e.id)), &encode_ppm(&e.patch))?;
                index.push(DbIndexRecord {
                    id: e.id.clone(),
                    class_name: e.class.clone(),
                    box3d: e.box3d,
                    box2d: e.box2d,
                    num_points: e.points.len(),
                });
            }
            let path = dir.join("index.json");
            let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Json {
                path: path.clone(),
                source: e,
            })?;
            write_file(&path, json.as_bytes())?;
        }
        Ok(())
    }

    /// Load every `<class>/index.json` under `root`, classes in sorted order.
    pub fn load(root: &Path) -> Result<Self> {
        let mut dirs = Vec::new();
        for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
            let path = entry.map_err(|e| Error::io(root, e))?.path();
            if path.join("index.json").is_file() {
                dirs.push(path);
            }
        }
        dirs.sort();
        let mut entries = Vec::new();
        for dir in dirs {
            let path = dir.join("index.json");
            let index: Vec<DbIndexRecord> =
                serde_json::from_str(&read_text(&path)?).map_err(|e| Error::Json { path: path.clone(), source: e })?;
            for rec in index {
                let points = parse_point_cloud(&read(&dir.join(format!("{}.bin", rec.id)))?)?;
                if points.len() != rec.num_points {
                    return Err(Error::format(
                        "sample database",
                        None,
                        format!("entry {} has {} points, index says {}", rec.id, points.len(), rec.num_points),
                    ));
                }
                let patch = decode_ppm(&read(&dir.join(format!("{}.ppm", rec.id)))?)?;
                let entry = DbEntry {
                    id: rec.id,
                    class: rec.class_name,
                    points,
                    box3d: rec.box3d,
                    patch,
                    box2d: rec.box2d,
                };
                entry.check()?;
                entries.push(entry);
            }
        }
        Ok(Self { entries })
    }
}
