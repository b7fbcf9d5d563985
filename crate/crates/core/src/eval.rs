//! KITTI-protocol evaluation: matching, interpolated AP at 11 or 40 recall
//! positions, difficulty buckets, RoI recall and 3D NMS.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, Box2D, Box3D};
use crate::kitti_io::{LabelRecord, ObjectClass};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub box3d: Box3D,
    pub score: f64,
}

/// Scored detections with their TP flag, best score first, plus the number
/// of ground truths they compete for.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PRCurve {
    pub entries: Vec<(f64, bool)>,
    pub gt_count: usize,
}

impl PRCurve {
    pub fn new(mut entries: Vec<(f64, bool)>, gt_count: usize) -> Self {
        sort_desc(&mut entries, |e| e.0);
        Self { entries, gt_count }
    }

    pub fn true_positives(&self) -> usize {
        self.entries.iter().filter(|e| e.1).count()
    }

    /// Pool several curves (e.g. one per frame) into one.
    pub fn merge<'a>(curves: impl IntoIterator<Item = &'a PRCurve>) -> PRCurve {
        let mut entries = Vec::new();
        let mut gt_count = 0;
        for c in curves {
            entries.extend_from_slice(&c.entries);
            gt_count += c.gt_count;
        }
        PRCurve::new(entries, gt_count)
    }

    /// `(recall, precision)` after each detection, in score order.
    pub fn operating_points(&self) -> Vec<(f64, f64)> {
        let mut tp = 0usize;
        let gt = self.gt_count.max(1) as f64;
        self.entries
            .iter()
            .enumerate()
            .map(|(i, &(_, is_tp))| {
                tp += is_tp as usize;
                (tp as f64 / gt, tp as f64 / (i + 1) as f64)
            })
            .collect()
    }
}

/// Stable descending sort on a score key; equal scores keep input order.
fn sort_desc<T>(items: &mut [T], key: impl Fn(&T) -> f64) {
    items.sort_by(|a, b| key(b).total_cmp(&key(a)));
}

/// Greedy matching: detections in descending score take the unmatched GT of
/// highest 3D IoU at or above `iou_thresh`; each GT matches at most once.
pub fn match_detections(dets: &[ScoredBox], gts: &[Box3D], iou_thresh: f64) -> PRCurve {
    let evaluated: Vec<EvalGt> = gts.iter().map(|b| EvalGt { box3d: *b, ignore: false }).collect();
    let dets: Vec<EvalDet> = dets
        .iter()
        .map(|d| EvalDet {
            box3d: d.box3d,
            score: d.score,
            ignore: false,
        })
        .collect();
    match_with_ignores(&dets, &evaluated, iou_thresh)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalGt {
    pub box3d: Box3D,
    /// Matches against ignored GTs are neither TP nor FP.
    pub ignore: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalDet {
    pub box3d: Box3D,
    pub score: f64,
    /// Unmatched ignored detections (DontCare overlap, too small) are dropped instead of counted as FP.
    pub ignore: bool,
}

/// Matching with KITTI-style ignore semantics. Valid GTs are preferred over
/// ignored ones; `gt_count` counts valid GTs only.
pub fn match_with_ignores(dets: &[EvalDet], gts: &[EvalGt], iou_thresh: f64) -> PRCurve {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    sort_desc(&mut order, |&i| dets[i].score);
    let mut taken = vec![false; gts.len()];
    let mut entries = Vec::with_capacity(dets.len());
    for i in order {
        let d = &dets[i];
        let best = |want_ignored: bool, taken: &[bool]| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] || g.ignore != want_ignored {
                    continue;
                }
                let iou = iou_3d(&d.box3d, &g.box3d);
                if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            best.map(|(j, _)| j)
        };
        if let Some(j) = best(false, &taken) {
            taken[j] = true;
            entries.push((d.score, true));
        } else if let Some(j) = best(true, &taken) {
            taken[j] = true;
        } else if !d.ignore {
            entries.push((d.score, false));
        }
    }
    PRCurve {
        entries,
        gt_count: gts.iter().filter(|g| !g.ignore).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum RecallPositions {
    Eleven,
    Forty,
}

impl RecallPositions {
    pub fn count(self) -> u32 {
        match self {
            RecallPositions::Eleven => 11,
            RecallPositions::Forty => 40,
        }
    }

    /// 11-point: {0, 0.1, …, 1}; 40-point: {1/40, …, 1}.
    pub fn anchors(self) -> Vec<f64> {
        match self {
            RecallPositions::Eleven => (0..=10).map(|k| k as f64 / 10.0).collect(),
            RecallPositions::Forty => (1..=40).map(|k| k as f64 / 40.0).collect(),
        }
    }
}

impl TryFrom<u32> for RecallPositions {
    type Error = String;

    fn try_from(n: u32) -> std::result::Result<Self, String> {
        match n {
            11 => Ok(RecallPositions::Eleven),
            40 => Ok(RecallPositions::Forty),
            other => Err(format!("recall positions must be 11 or 40, got {other}")),
        }
    }
}

impl From<RecallPositions> for u32 {
    fn from(p: RecallPositions) -> u32 {
        p.count()
    }
}

/// Slack on recall comparisons against the anchors.
const RECALL_EPS: f64 = 1e-12;

/// Mean interpolated precision over the recall anchors; `None` without GTs.
pub fn average_precision(curve: &PRCurve, positions: RecallPositions) -> Option<f64> {
    if curve.gt_count == 0 {
        return None;
    }
    let points = curve.operating_points();
    // Suffix maximum of precision so p(r) is a lookup.
    let mut best = vec![0.0f64; points.len() + 1];
    for i in (0..points.len()).rev() {
        best[i] = best[i + 1].max(points[i].1);
    }
    let anchors = positions.anchors();
    let total: f64 = anchors
        .iter()
        .map(|&r| {
            let first = points.partition_point(|&(rec, _)| rec < r - RECALL_EPS);
            best[first]
        })
        .sum();
    Some(total / anchors.len() as f64)
}

// ---------------------------------------------------------------------------
// Difficulty

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

impl Difficulty {
    pub fn levels() -> [Difficulty; 3] {
        [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
            Difficulty::Ignored => "ignored",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRule {
    pub min_height: f64,
    pub max_occlusion: i32,
    pub max_truncation: f64,
}

impl DifficultyRule {
    fn admits(&self, label: &LabelRecord) -> bool {
        label.bbox2d.height() >= self.min_height
            && label.occlusion <= self.max_occlusion
            && label.truncation <= self.max_truncation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRules {
    pub easy: DifficultyRule,
    pub moderate: DifficultyRule,
    pub hard: DifficultyRule,
}

impl Default for DifficultyRules {
    fn default() -> Self {
        Self {
            easy: DifficultyRule {
                min_height: 40.0,
                max_occlusion: 0,
                max_truncation: 0.15,
            },
            moderate: DifficultyRule {
                min_height: 25.0,
                max_occlusion: 1,
                max_truncation: 0.30,
            },
            hard: DifficultyRule {
                min_height: 25.0,
                max_occlusion: 2,
                max_truncation: 0.50,
            },
        }
    }
}

impl DifficultyRules {
    pub fn rule(&self, d: Difficulty) -> Option<&DifficultyRule> {
        match d {
            Difficulty::Easy => Some(&self.easy),
            Difficulty::Moderate => Some(&self.moderate),
            Difficulty::Hard => Some(&self.hard),
            Difficulty::Ignored => None,
        }
    }
}

/// Strictest difficulty whose rule the label satisfies.
pub fn assign_difficulty(label: &LabelRecord, rules: &DifficultyRules) -> Difficulty {
    Difficulty::levels()
        .into_iter()
        .find(|d| rules.rule(*d).is_some_and(|r| r.admits(label)))
        .unwrap_or(Difficulty::Ignored)
}

// ---------------------------------------------------------------------------
// Recall and NMS

/// Fraction of GTs covered by at least one RoI with 3D IoU ≥ `tau`.
pub fn roi_recall(rois: &[Box3D], gts: &[Box3D], tau: f64) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let hit = gts
        .iter()
        .filter(|g| rois.iter().any(|r| iou_3d(r, g) >= tau))
        .count();
    Some(hit as f64 / gts.len() as f64)
}

/// Greedy 3D NMS; returns the kept boxes best-first.
pub fn nms_3d(dets: &[ScoredBox], iou_thresh: f64) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    sort_desc(&mut order, |&i| dets[i].score);
    let mut kept: Vec<ScoredBox> = Vec::new();
    for i in order {
        let d = dets[i];
        if kept.iter().all(|k| iou_3d(&k.box3d, &d.box3d) <= iou_thresh) {
            kept.push(d);
        }
    }
    kept
}

// ---------------------------------------------------------------------------
// Frame-level evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_thresholds: BTreeMap<String, f64>,
    pub recall_positions: RecallPositions,
    #[serde(default)]
    pub difficulty: DifficultyRules,
    /// A detection whose 2D box is covered by a DontCare region beyond this
    /// fraction of its own area is dropped.
    #[serde(default = "default_dont_care_overlap")]
    pub dont_care_overlap: f64,
}

fn default_dont_care_overlap() -> f64 {
    0.5
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_thresholds: [("Car", 0.7), ("Pedestrian", 0.5), ("Cyclist", 0.5)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            recall_positions: RecallPositions::Eleven,
            difficulty: DifficultyRules::default(),
            dont_care_overlap: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (class, t) in &self.iou_thresholds {
            if !(*t > 0.0 && *t <= 1.0) {
                return Err(Error::contract(format!("IoU threshold for {class} must be in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn threshold(&self, class: &ObjectClass) -> Option<f64> {
        self.iou_thresholds.get(class.as_str()).copied()
    }
}

/// A detection as it enters evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetection {
    pub class: ObjectClass,
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub score: f64,
}

/// A labelled object with its LiDAR-frame box.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObject {
    pub label: LabelRecord,
    pub box3d: Box3D,
}

/// Build the curve of one frame for one class at one difficulty.
///
/// GTs of the class that are harder than `difficulty` are ignored, as are
/// detections lying on DontCare regions or shorter than the level's minimum
/// 2D height.
pub fn evaluate_frame(
    dets: &[FrameDetection],
    objects: &[FrameObject],
    class: &ObjectClass,
    difficulty: Difficulty,
    cfg: &EvalConfig,
) -> Result<PRCurve> {
    let thresh = cfg
        .threshold(class)
        .ok_or_else(|| Error::contract(format!("no IoU threshold configured for {class}")))?;
    let rule = cfg
        .difficulty
        .rule(difficulty)
        .ok_or_else(|| Error::contract("cannot evaluate the ignored bucket"))?;
    let gts: Vec<EvalGt> = objects
        .iter()
        .filter(|o| &o.label.class == class)
        .map(|o| {
            let d = assign_difficulty(&o.label, &cfg.difficulty);
            EvalGt {
                box3d: o.box3d,
                ignore: d > difficulty,
            }
        })
        .collect();
    let dont_care: Vec<Box2D> = objects
        .iter()
        .filter(|o| o.label.is_dont_care())
        .map(|o| o.label.bbox2d)
        .collect();
    let evaluated: Vec<EvalDet> = dets
        .iter()
        .filter(|d| &d.class == class)
        .map(|d| {
            let area = d.box2d.area();
            let on_dont_care = area > 0.0
                && dont_care
                    .iter()
                    .any(|r| d.box2d.intersection_area(r) / area > cfg.dont_care_overlap);
            EvalDet {
                box3d: d.box3d,
                score: d.score,
                ignore: on_dont_care || d.box2d.height() < rule.min_height,
            }
        })
        .collect();
    Ok(match_with_ignores(&evaluated, &gts, thresh))
}

/// GT boxes of a class admitted at `difficulty` (cumulative buckets).
pub fn gts_at_difficulty(objects: &[FrameObject], class: &ObjectClass, difficulty: Difficulty, rules: &DifficultyRules) -> Vec<Box3D> {
    objects
        .iter()
        .filter(|o| &o.label.class == class && assign_difficulty(&o.label, rules) <= difficulty)
        .map(|o| o.box3d)
        .collect()
}

// ---------------------------------------------------------------------------
// Result tables

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub class: String,
    pub difficulty: String,
    pub metric: String,
    pub positions: Option<u32>,
    pub value: Option<f64>,
}

/// CSV with header `class,difficulty,metric,positions,value`; undefined
/// values are written as `nan`, missing positions as an empty field.
pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("class,difficulty,metric,positions,value\n");
    for r in rows {
        let positions = r.positions.map(|p| p.to_string()).unwrap_or_default();
        let value = r.value.map(|v| format!("{v:.6}")).unwrap_or_else(|| "nan".to_string());
        let _ = writeln!(out, "{},{},{},{},{}", r.class, r.difficulty, r.metric, positions, value);
    }
    out
}
