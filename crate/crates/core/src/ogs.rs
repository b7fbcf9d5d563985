//! Occlusion-aware GT sampling and the greedy cross-modal baseline.
//!
//! Two boxes *conflict* when their BEV IoU exceeds `tau_bev` or (by default)
//! their image IoU exceeds `tau_image`. The occlusion count of a sampled
//! object is the number of distinct other boxes (samples or ground truths)
//! it conflicts with. [`ogs_select`] repeatedly drops the sampled object with
//! the highest count until none is left in conflict; [`vanilla_select`]
//! accepts samples greedily in input order.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, iou_2d, project_box3d_to_2d, Box2D, Box3D};
use crate::kitti_io::{box3d_to_label, ObjectClass, PointCloud, RgbImage, SampleDatabase, Scene};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledObject {
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub source_id: String,
    pub class: ObjectClass,
}

/// A box taking part in the conflict test: ground truths and samples alike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacedBox {
    pub box3d: Box3D,
    pub box2d: Box2D,
}

impl From<&SampledObject> for PlacedBox {
    fn from(s: &SampledObject) -> Self {
        PlacedBox {
            box3d: s.box3d,
            box2d: s.box2d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    Or,
    And,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OgsConfig {
    pub tau_bev: f64,
    pub tau_image: f64,
    #[serde(default)]
    pub combine: Combine,
    /// Target number of objects per class after sampling.
    #[serde(default = "default_max_samples")]
    pub max_samples: BTreeMap<String, usize>,
}

fn default_max_samples() -> BTreeMap<String, usize> {
    [("Car", 15), ("Pedestrian", 10), ("Cyclist", 10)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

impl Default for OgsConfig {
    fn default() -> Self {
        Self {
            tau_bev: 0.05,
            tau_image: 0.5,
            combine: Combine::Or,
            max_samples: default_max_samples(),
        }
    }
}

impl OgsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("tau_bev", self.tau_bev), ("tau_image", self.tau_image)] {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::contract(format!("{name} = {t} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn conflict(&self, a: &PlacedBox, b: &PlacedBox) -> bool {
        let bev = bev_iou(&a.box3d, &b.box3d) > self.tau_bev;
        let img = iou_2d(&a.box2d, &b.box2d) > self.tau_image;
        match self.combine {
            Combine::Or => bev || img,
            Combine::And => bev && img,
        }
    }
}

/// Conflict flags of every sample against samples (`|S|×|S|`, diagonal
/// false) and against ground truths (`|S|×|G|`).
struct ConflictTables {
    samples: Vec<Vec<bool>>,
    gts: Vec<Vec<bool>>,
}

fn conflict_tables(s: &[SampledObject], g: &[PlacedBox], cfg: &OgsConfig) -> ConflictTables {
    let placed: Vec<PlacedBox> = s.iter().map(PlacedBox::from).collect();
    let mut samples = vec![vec![false; s.len()]; s.len()];
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            let c = cfg.conflict(&placed[i], &placed[j]);
            samples[i][j] = c;
            samples[j][i] = c;
        }
    }
    let gts = placed
        .iter()
        .map(|p| g.iter().map(|q| cfg.conflict(p, q)).collect())
        .collect();
    ConflictTables { samples, gts }
}

/// Number of distinct other boxes each sample conflicts with.
pub fn occlusion_counts(s: &[SampledObject], g: &[PlacedBox], cfg: &OgsConfig) -> Vec<usize> {
    let t = conflict_tables(s, g, cfg);
    (0..s.len())
        .map(|i| t.samples[i].iter().filter(|c| **c).count() + t.gts[i].iter().filter(|c| **c).count())
        .collect()
}

/// Indices kept by occlusion-aware selection, in input order.
pub fn ogs_select_indices(s: &[SampledObject], g: &[PlacedBox], cfg: &OgsConfig) -> Vec<usize> {
    let t = conflict_tables(s, g, cfg);
    let mut counts: Vec<usize> = (0..s.len())
        .map(|i| t.samples[i].iter().filter(|c| **c).count() + t.gts[i].iter().filter(|c| **c).count())
        .collect();
    let mut alive = vec![true; s.len()];
    loop {
        // Strictly-greater comparison keeps the lowest index on ties.
        let mut worst: Option<usize> = None;
        for i in (0..s.len()).filter(|&i| alive[i] && counts[i] > 0) {
            if worst.is_none_or(|w| counts[i] > counts[w]) {
                worst = Some(i);
            }
        }
        let Some(w) = worst else { break };
        alive[w] = false;
        for j in 0..s.len() {
            if alive[j] && t.samples[w][j] {
                counts[j] -= 1;
            }
        }
    }
    (0..s.len()).filter(|&i| alive[i]).collect()
}

pub fn ogs_select(s: &[SampledObject], g: &[PlacedBox], cfg: &OgsConfig) -> Vec<SampledObject> {
    ogs_select_indices(s, g, cfg).into_iter().map(|i| s[i].clone()).collect()
}

/// Indices kept by greedy selection: a sample is accepted iff it conflicts
/// with no ground truth and no previously accepted sample.
pub fn vanilla_select_indices(s: &[SampledObject], g: &[PlacedBox], cfg: &OgsConfig) -> Vec<usize> {
    let mut accepted: Vec<usize> = Vec::new();
    for (i, cand) in s.iter().enumerate() {
        let p = PlacedBox::from(cand);
        let clash = g.iter().any(|q| cfg.conflict(&p, q))
            || accepted.iter().any(|&j| cfg.conflict(&p, &PlacedBox::from(&s[j])));
        if !clash {
            accepted.push(i);
        }
    }
    accepted
}

pub fn vanilla_select(s: &[SampledObject], g: &[PlacedBox], cfg: &OgsConfig) -> Vec<SampledObject> {
    vanilla_select_indices(s, g, cfg).into_iter().map(|i| s[i].clone()).collect()
}

/// Draw sampled objects for a scene.
///
/// For each class with a quota, `quota − existing` database entries are
/// drawn without replacement and placed at their recorded pose; entries that
/// do not project into the scene image are skipped.
pub fn draw_samples(scene: &Scene, db: &SampleDatabase, cfg: &OgsConfig, rng: &mut SplitMix64) -> Vec<SampledObject> {
    let existing = scene.gt_boxes();
    let mut out = Vec::new();
    for (class_name, quota) in &cfg.max_samples {
        let class = ObjectClass::parse(class_name);
        let have = existing.iter().filter(|(c, _, _)| *c == class).count();
        let pool = db.by_class(&class);
        let want = quota.saturating_sub(have).min(pool.len());
        if want == 0 {
            continue;
        }
        for k in sample(rng, pool.len(), want).into_iter() {
            let entry = &db.entries[pool[k]];
            if let Some(box2d) = project_box3d_to_2d(&entry.box3d, &scene.calib, scene.image_size()) {
                out.push(SampledObject {
                    box3d: entry.box3d,
                    box2d,
                    source_id: entry.id.clone(),
                    class: class.clone(),
                });
            }
        }
    }
    out
}

/// Ground-truth boxes of a scene in the form the conflict test needs.
pub fn scene_placed_boxes(scene: &Scene) -> Vec<PlacedBox> {
    scene
        .gt_boxes()
        .into_iter()
        .map(|(_, box3d, box2d)| PlacedBox { box3d, box2d })
        .collect()
}

/// Paste retained samples into a scene.
///
/// Scene points inside any pasted box are removed, the object points are
/// moved to their pose and appended, the database patch is resized
/// (nearest neighbour) onto `box2d` and clipped to the image, and a label
/// is appended per object.
pub fn paste_samples(scene: &Scene, retained: &[SampledObject], db: &SampleDatabase) -> Result<Scene> {
    let mut out = scene.clone();
    if retained.is_empty() {
        return Ok(out);
    }
    let entries = retained
        .iter()
        .map(|s| {
            db.find(&s.source_id)
                .ok_or_else(|| Error::contract(format!("sample {} not in database", s.source_id)))
        })
        .collect::<Result<Vec<_>>>()?;

    out.cloud.points.retain(|p| {
        let q = [p[0] as f64, p[1] as f64, p[2] as f64];
        !retained.iter().any(|s| s.box3d.contains(q))
    });
    for (s, entry) in retained.iter().zip(&entries) {
        transform_points_into(&entry.points, &s.box3d, &mut out.cloud);
        composite_patch(&mut out.image, &entry.patch, &s.box2d);
        out.labels.push(box3d_to_label(&s.box3d, s.box2d, s.class.clone(), &scene.calib));
    }
    Ok(out)
}

fn transform_points_into(local: &PointCloud, pose: &Box3D, dst: &mut PointCloud) {
    for p in &local.points {
        let w = pose.to_world([p[0] as f64, p[1] as f64, p[2] as f64]);
        dst.points.push([w[0] as f32, w[1] as f32, w[2] as f32, p[3]]);
    }
}

fn composite_patch(image: &mut RgbImage, patch: &RgbImage, at: &Box2D) {
    let x0 = at.u_min.floor().max(0.0) as usize;
    let y0 = at.v_min.floor().max(0.0) as usize;
    let x1 = (at.u_max.ceil().max(0.0) as usize).min(image.width);
    let y1 = (at.v_max.ceil().max(0.0) as usize).min(image.height);
    if x1 <= x0 || y1 <= y0 || patch.width == 0 || patch.height == 0 {
        return;
    }
    let (w, h) = (at.u_max - at.u_min, at.v_max - at.v_min);
    for y in y0..y1 {
        for x in x0..x1 {
            let fx = ((x as f64 + 0.5 - at.u_min) / w * patch.width as f64).floor();
            let fy = ((y as f64 + 0.5 - at.v_min) / h * patch.height as f64).floor();
            let px = (fx.max(0.0) as usize).min(patch.width - 1);
            let py = (fy.max(0.0) as usize).min(patch.height - 1);
            image.put(x, y, patch.get(px, py));
        }
    }
}

/// Outcome of augmenting one scene with both selection rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentStats {
    pub requested: BTreeMap<String, usize>,
    pub ogs_retained: BTreeMap<String, usize>,
    pub vanilla_retained: BTreeMap<String, usize>,
}

fn count_by_class(objs: &[SampledObject]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for o in objs {
        *m.entry(o.class.to_string()).or_insert(0) += 1;
    }
    m
}

/// Draw, select with both rules, and paste the occlusion-aware selection.
pub fn augment_scene(scene: &Scene, db: &SampleDatabase, cfg: &OgsConfig, rng: &mut SplitMix64) -> Result<(Scene, AugmentStats)> {
    cfg.validate()?;
    let sampled = draw_samples(scene, db, cfg, rng);
    let gts = scene_placed_boxes(scene);
    let ogs = ogs_select(&sampled, &gts, cfg);
    let vanilla = vanilla_select(&sampled, &gts, cfg);
    let mut stats = AugmentStats {
        requested: count_by_class(&sampled),
        ogs_retained: count_by_class(&ogs),
        vanilla_retained: count_by_class(&vanilla),
    };
    for class in cfg.max_samples.keys() {
        for m in [&mut stats.requested, &mut stats.ogs_retained, &mut stats.vanilla_retained] {
            m.entry(class.clone()).or_insert(0);
        }
    }
    Ok((paste_samples(scene, &ogs, db)?, stats))
}

/// Random horizontal flip about the LiDAR x axis (y → −y).
pub fn flip_y(cloud: &mut PointCloud) {
    cloud.points.iter_mut().for_each(|p| p[1] = -p[1]);
}

/// Global scaling of point coordinates.
pub fn scale_points(cloud: &mut PointCloud, factor: f32) {
    cloud.points.iter_mut().for_each(|p| {
        p[0] *= factor;
        p[1] *= factor;
        p[2] *= factor;
    });
}

/// Global rotation about the up axis.
pub fn rotate_points(cloud: &mut PointCloud, angle: f64) {
    let (s, c) = angle.sin_cos();
    cloud.points.iter_mut().for_each(|p| {
        let (x, y) = (p[0] as f64, p[1] as f64);
        p[0] = (c * x - s * y) as f32;
        p[1] = (s * x + c * y) as f32;
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj(k: usize, x: f64, rect: Box2D) -> SampledObject {
        SampledObject {
            box3d: Box3D::new([x, 0.0, 0.0], [1.0; 3], 0.0),
            box2d: rect,
            source_id: format!("s{k}"),
            class: ObjectClass::Car,
        }
    }

    fn cfg() -> OgsConfig {
        OgsConfig {
            tau_bev: 0.05,
            tau_image: 0.5,
            ..Default::default()
        }
    }

    fn three() -> Vec<SampledObject> {
        vec![
            obj(1, 0.0, Box2D::new(0.0, 0.0, 10.0, 10.0)),
            obj(2, 10.0, Box2D::new(0.0, 0.0, 6.0, 10.0)),
            obj(3, 20.0, Box2D::new(4.0, 0.0, 10.0, 10.0)),
        ]
    }

    #[test]
    fn disjoint_counts_zero() {
        let s: Vec<_> = (0..4)
            .map(|k| obj(k, 5.0 * k as f64, Box2D::new(20.0 * k as f64, 0.0, 20.0 * k as f64 + 10.0, 10.0)))
            .collect();
        assert_eq!(occlusion_counts(&s, &[], &cfg()), vec![0; 4]);
        assert_eq!(ogs_select(&s, &[], &cfg()), s);
        assert_eq!(vanilla_select(&s, &[], &cfg()), s);
    }

    #[test]
    fn identical_pair() {
        let a = obj(0, 0.0, Box2D::new(0.0, 0.0, 5.0, 5.0));
        let s = vec![a.clone(), SampledObject { source_id: "b".into(), ..a }];
        assert_eq!(occlusion_counts(&s, &[], &cfg()), vec![1, 1]);
        assert_eq!(ogs_select_indices(&s, &[], &cfg()), vec![1]);
    }

    #[test]
    fn three_object_chain() {
        let s = three();
        assert_eq!(occlusion_counts(&s, &[], &cfg()), vec![2, 1, 1]);
        assert_eq!(ogs_select_indices(&s, &[], &cfg()), vec![1, 2]);
        assert_eq!(vanilla_select_indices(&s, &[], &cfg()), vec![0]);
    }

    #[test]
    fn everything_hits_a_gt() {
        let s = three();
        let g: Vec<PlacedBox> = s.iter().map(|o| PlacedBox { box3d: o.box3d, box2d: Box2D::new(100.0, 0.0, 110.0, 10.0) }).collect();
        assert!(vanilla_select(&s, &g, &cfg()).is_empty());
        assert!(ogs_select(&s, &g, &cfg()).is_empty());
    }

    #[test]
    fn and_rule_is_looser() {
        let s = three();
        let and = OgsConfig { combine: Combine::And, ..cfg() };
        // BEV footprints are disjoint, so nothing conflicts under AND.
        assert_eq!(occlusion_counts(&s, &[], &and), vec![0, 0, 0]);
    }

    #[test]
    fn threshold_validation() {
        assert!(OgsConfig { tau_bev: 1.0, ..cfg() }.validate().is_err());
        assert!(OgsConfig { tau_image: -0.1, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }
}
