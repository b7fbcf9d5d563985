//! Confidence rectification of detection candidates.
//!
//! Each candidate pairs a 3D RoI with its image projection. The rectified
//! score is computed from three pieces:
//!
//! 1. `roi  = concat(avgpool(feat3d), avgpool(feat2d))`
//! 2. `lift = score_lift(concat(s_3d, s_2d))`
//! 3. `s_rect = rectifier(concat(roi, lift))`, whose last layer is a sigmoid.
//!
//! Box geometry is never touched; only `score_rect` is written.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{average_precision, match_detections, PRCurve, RecallPositions, ScoredBox};
use crate::exec::Execution;
use crate::geometry::{iou_2d, iou_3d, project_box3d_to_2d, Box2D, Box3D};
use crate::kitti_io::{CalibrationSet, ObjectClass};
use crate::rng::SplitMix64;
use crate::tinynet::{Activation, DenseNet, Gradients};

/// Positive-label IoU for training (the Car evaluation threshold).
pub const POSITIVE_IOU: f64 = 0.7;
pub const DEFAULT_SCORE_LIFT_WIDTH: usize = 16;
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCandidate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_id: Option<String>,
    pub class_name: ObjectClass,
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub score_3d: f64,
    pub score_2d: f64,
    #[serde(default)]
    pub feat3d: Vec<Vec<f64>>,
    #[serde(default)]
    pub feat2d: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_rect: Option<f64>,
}

impl DetectionCandidate {
    /// Rectified score when present, otherwise the LiDAR score.
    pub fn final_score(&self) -> f64 {
        self.score_rect.unwrap_or(self.score_3d)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("score_3d", self.score_3d), ("score_2d", self.score_2d)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::contract(format!("{name} = {s} outside [0, 1]")));
            }
        }
        if let Some(s) = self.score_rect {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::contract(format!("score_rect = {s} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Vec<f64>,
    /// Set when there were no rows to pool; `values` is then all zero.
    pub empty: bool,
}

/// Column means of an `m × c` matrix given as rows.
pub fn pool_roi_features(rows: &[Vec<f64>], channels: usize) -> Result<Pooled> {
    let mut values = vec![0.0; channels];
    if rows.is_empty() {
        return Ok(Pooled { values, empty: true });
    }
    for (r, row) in rows.iter().enumerate() {
        if row.len() != channels {
            return Err(Error::contract(format!(
                "feature row {r} has {} channels, expected {channels}",
                row.len()
            )));
        }
        for (acc, x) in values.iter_mut().zip(row) {
            *acc += x;
        }
    }
    let m = rows.len() as f64;
    values.iter_mut().for_each(|v| *v /= m);
    Ok(Pooled { values, empty: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcrHead {
    pub feat3d_channels: usize,
    pub feat2d_channels: usize,
    /// `2 → d_s`.
    pub score_lift: DenseNet,
    /// `c3 + c2 + d_s → 1`, sigmoid output.
    pub rectifier: DenseNet,
}

struct HeadPass {
    roi: Vec<f64>,
    scores: [f64; 2],
    lift_trace: crate::tinynet::Trace,
    rect_trace: crate::tinynet::Trace,
}

impl FcrHead {
    pub fn new(feat3d_channels: usize, feat2d_channels: usize, lift_width: usize, hidden: usize, seed: u64) -> Self {
        let score_lift = DenseNet::mlp(&[2, hidden, lift_width], Activation::Relu, seed);
        let rectifier = DenseNet::mlp(
            &[feat3d_channels + feat2d_channels + lift_width, hidden, 1],
            Activation::Sigmoid,
            seed.wrapping_add(1),
        );
        Self {
            feat3d_channels,
            feat2d_channels,
            score_lift,
            rectifier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let last = self.rectifier.layers.last().expect("non-empty");
        if last.activation != Activation::Sigmoid || last.outputs != 1 {
            return Err(Error::contract("rectifier must end in a single sigmoid unit"));
        }
        if self.score_lift.input_dim() != 2 {
            return Err(Error::contract("score lift takes exactly two scores"));
        }
        let want = self.feat3d_channels + self.feat2d_channels + self.score_lift.output_dim();
        if self.rectifier.input_dim() != want {
            return Err(Error::contract(format!(
                "rectifier takes {} inputs, expected {want}",
                self.rectifier.input_dim()
            )));
        }
        Ok(())
    }

    /// Zero the output layer of the rectifier, making `s_rect` exactly 0.5
    /// for every input while hidden units stay trainable.
    pub fn zero_rectifier(&mut self) {
        let last = self.rectifier.layers.last_mut().expect("non-empty");
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    fn pass(&self, cand: &DetectionCandidate) -> Result<HeadPass> {
        let p3 = pool_roi_features(&cand.feat3d, self.feat3d_channels)?;
        let p2 = pool_roi_features(&cand.feat2d, self.feat2d_channels)?;
        let mut roi = p3.values;
        roi.extend(p2.values);
        let scores = [cand.score_3d, cand.score_2d];
        let lift_trace = self.score_lift.forward_trace(&scores)?;
        let mut input = roi.clone();
        input.extend_from_slice(lift_trace.output());
        let rect_trace = self.rectifier.forward_trace(&input)?;
        Ok(HeadPass {
            roi,
            scores,
            lift_trace,
            rect_trace,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("head serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let head: FcrHead = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        head.validate()?;
        Ok(head)
    }
}

/// Rectified confidence of one candidate.
pub fn rectify(cand: &DetectionCandidate, head: &FcrHead) -> Result<f64> {
    let pass = head.pass(cand)?;
    Ok(pass.rect_trace.output()[0])
}

/// Copies of `cands` with `score_rect` filled in.
pub fn rectify_all(cands: &[DetectionCandidate], head: &FcrHead, exec: Execution) -> Result<Vec<DetectionCandidate>> {
    exec.map(cands, |c| {
        rectify(c, head).map(|s| DetectionCandidate {
            score_rect: Some(s),
            ..c.clone()
        })
    })
    .into_iter()
    .collect()
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            batch_size: Some(48),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub head: FcrHead,
    /// Mean binary cross-entropy per epoch.
    pub loss_trace: Vec<f64>,
}

const PROB_FLOOR: f64 = 1e-12;

pub fn bce(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Loss and gradients of one sample.
fn sample_gradients(head: &FcrHead, cand: &DetectionCandidate, y: bool) -> Result<(f64, Gradients, Gradients)> {
    let pass = head.pass(cand)?;
    let p = pass.rect_trace.output()[0];
    let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let target = if y { 1.0 } else { 0.0 };
    let d_out = (pc - target) / (pc * (1.0 - pc));
    let g_rect = head.rectifier.backward_from_trace(&pass.rect_trace, &[d_out])?;
    let lift_upstream = &g_rect.input[pass.roi.len()..];
    let g_lift = head.score_lift.backward_from_trace(&pass.lift_trace, lift_upstream)?;
    debug_assert_eq!(pass.scores.len(), 2);
    Ok((bce(p, y), g_rect, g_lift))
}

/// Minimize binary cross-entropy between `s_rect` and the labels by SGD.
pub fn train_fcr(
    samples: &[DetectionCandidate],
    labels: &[bool],
    head: &FcrHead,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainedHead> {
    if samples.is_empty() {
        return Err(Error::contract("cannot train on an empty candidate set"));
    }
    if samples.len() != labels.len() {
        return Err(Error::contract("one label per candidate required"));
    }
    head.validate()?;
    let mut head = head.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let batch = cfg.batch_size.unwrap_or(samples.len()).max(1);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.batch_size.is_some() {
            order.shuffle(&mut SplitMix64::derive(cfg.seed, epoch as u64));
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let per_sample = exec.map(chunk, |&i| sample_gradients(&head, &samples[i], labels[i]));
            let mut g_rect = Gradients::zeros_like(&head.rectifier);
            let mut g_lift = Gradients::zeros_like(&head.score_lift);
            let scale = 1.0 / chunk.len() as f64;
            for r in per_sample {
                let (loss, gr, gl) = r?;
                epoch_loss += loss;
                g_rect.accumulate(&gr, scale);
                g_lift.accumulate(&gl, scale);
            }
            head.rectifier.step(&g_rect, cfg.lr);
            head.score_lift.step(&g_lift, cfg.lr);
        }
        loss_trace.push(epoch_loss / samples.len() as f64);
    }
    Ok(TrainedHead { head, loss_trace })
}

/// Training labels: positive iff the candidate overlaps some GT at 3D IoU ≥ 0.7.
pub fn label_candidates(cands: &[DetectionCandidate], gts: &[Box3D]) -> Vec<bool> {
    cands
        .iter()
        .map(|c| gts.iter().any(|g| iou_3d(&c.box3d, g) >= POSITIVE_IOU))
        .collect()
}

// ---------------------------------------------------------------------------
// Synthetic candidates

/// A world of Car ground truths and noisy proposals around them.
///
/// Features are deterministic functions of the true overlap plus noise:
/// channel `c` of every 3D feature row is `iou_3d^(c+1) + N(0, feat_noise)`,
/// and likewise for the 2D rows with the image IoU. Scores are
/// `clamp(iou + N(0, σ))` with independent noise per modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub n_gt: usize,
    pub k_jitter: usize,
    pub k_noise: usize,
    pub center_jitter: f64,
    pub yaw_jitter: f64,
    pub dim_jitter: f64,
    pub noise_3d: f64,
    pub noise_2d: f64,
    pub feat_rows: usize,
    pub feat3d_channels: usize,
    pub feat2d_channels: usize,
    pub feat_noise: f64,
    pub image_size: (usize, usize),
}

impl Default for SyntheticWorld {
    fn default() -> Self {
        Self {
            n_gt: 6,
            k_jitter: 8,
            k_noise: 6,
            center_jitter: 0.35,
            yaw_jitter: 0.15,
            dim_jitter: 0.05,
            noise_3d: 0.15,
            noise_2d: 0.15,
            feat_rows: 8,
            feat3d_channels: 4,
            feat2d_channels: 4,
            feat_noise: 0.25,
            image_size: (1242, 375),
        }
    }
}

impl SyntheticWorld {
    pub fn without_noise(mut self) -> Self {
        self.center_jitter = 0.0;
        self.yaw_jitter = 0.0;
        self.dim_jitter = 0.0;
        self.noise_3d = 0.0;
        self.noise_2d = 0.0;
        self.feat_noise = 0.0;
        self
    }
}

/// KITTI-like front camera: x forward/y left/z up LiDAR, 721.5 px focal length.
pub fn kitti_like_calibration() -> CalibrationSet {
    let t = nalgebra::Matrix4::new(
        0.0, -1.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, -0.08, //
        1.0, 0.0, 0.0, -0.27, //
        0.0, 0.0, 0.0, 1.0,
    );
    let p = nalgebra::Matrix3x4::new(
        721.5377, 0.0, 609.5593, 44.85728, //
        0.0, 721.5377, 172.854, 0.2163791, //
        0.0, 0.0, 1.0, 0.002745884,
    );
    CalibrationSet::new(t, p)
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub candidates: Vec<DetectionCandidate>,
    pub gt_boxes: Vec<Box3D>,
    pub gt_box2d: Vec<Box2D>,
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite sigma")
}

fn random_car(rng: &mut SplitMix64) -> Box3D {
    let x = rng.random_range(8.0..45.0);
    let y = rng.random_range(-0.45..0.45) * x;
    let dims = [rng.random_range(3.5..4.5), rng.random_range(1.5..1.8), rng.random_range(1.4..1.7)];
    Box3D::new([x, y, -1.7 + dims[2] / 2.0], dims, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
}

/// Jittered GT copies then pure-noise boxes; `n_gt·k_jitter + k_noise` candidates.
pub fn make_candidates(world: &SyntheticWorld, seed: u64) -> CandidateSet {
    let mut rng = SplitMix64::new(seed);
    let calib = kitti_like_calibration();
    let project = |b: &Box3D| project_box3d_to_2d(b, &calib, world.image_size).unwrap_or(Box2D::new(0.0, 0.0, 0.0, 0.0));

    let gt_boxes: Vec<Box3D> = (0..world.n_gt).map(|_| random_car(&mut rng)).collect();
    let gt_box2d: Vec<Box2D> = gt_boxes.iter().map(project).collect();

    let mut boxes = Vec::with_capacity(world.n_gt * world.k_jitter + world.k_noise);
    let (c_n, y_n, d_n) = (normal(world.center_jitter), normal(world.yaw_jitter), normal(world.dim_jitter));
    for g in &gt_boxes {
        for _ in 0..world.k_jitter {
            let center = [
                g.center[0] + c_n.sample(&mut rng),
                g.center[1] + c_n.sample(&mut rng),
                g.center[2] + c_n.sample(&mut rng) * 0.3,
            ];
            let dims = g.dims.map(|d| d * (1.0 + d_n.sample(&mut rng)).max(0.5));
            boxes.push(Box3D::new(center, dims, g.yaw + y_n.sample(&mut rng)));
        }
    }
    for _ in 0..world.k_noise {
        boxes.push(random_car(&mut rng));
    }

    let (s3_n, s2_n, f_n) = (normal(world.noise_3d), normal(world.noise_2d), normal(world.feat_noise));
    let candidates = boxes
        .into_iter()
        .map(|b| {
            let box2d = project(&b);
            let iou3 = gt_boxes.iter().map(|g| iou_3d(&b, g)).fold(0.0, f64::max);
            let iou2 = gt_box2d.iter().map(|g| iou_2d(&box2d, g)).fold(0.0, f64::max);
            let score_3d = (iou3 + s3_n.sample(&mut rng)).clamp(0.0, 1.0);
            let score_2d = (iou2 + s2_n.sample(&mut rng)).clamp(0.0, 1.0);
            let mut rows = |iou: f64, channels: usize| -> Vec<Vec<f64>> {
                (0..world.feat_rows)
                    .map(|_| (0..channels).map(|c| iou.powi(c as i32 + 1) + f_n.sample(&mut rng)).collect())
                    .collect()
            };
            let feat3d = rows(iou3, world.feat3d_channels);
            let feat2d = rows(iou2, world.feat2d_channels);
            DetectionCandidate {
                frame_id: None,
                class_name: ObjectClass::Car,
                box3d: b,
                box2d,
                score_3d,
                score_2d,
                feat3d,
                feat2d,
                score_rect: None,
            }
        })
        .collect();
    CandidateSet {
        candidates,
        gt_boxes,
        gt_box2d,
    }
}

/// Detection AP of a group of candidate sets under a chosen score.
pub fn candidate_ap(
    sets: &[CandidateSet],
    score: impl Fn(&DetectionCandidate) -> f64,
    positions: RecallPositions,
) -> Option<f64> {
    let curves: Vec<PRCurve> = sets
        .iter()
        .map(|s| {
            let dets: Vec<ScoredBox> = s
                .candidates
                .iter()
                .map(|c| ScoredBox {
                    box3d: c.box3d,
                    score: score(c),
                })
                .collect();
            match_detections(&dets, &s.gt_boxes, POSITIVE_IOU)
        })
        .collect();
    average_precision(&PRCurve::merge(&curves), positions)
}

// ---------------------------------------------------------------------------
// Demo run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcrDemoConfig {
    pub world: SyntheticWorld,
    pub train_frames: usize,
    pub test_frames: usize,
    pub train: TrainConfig,
    pub positions: RecallPositions,
    pub lift_width: usize,
    pub hidden: usize,
}

impl Default for FcrDemoConfig {
    fn default() -> Self {
        Self {
            world: SyntheticWorld::default(),
            train_frames: 40,
            test_frames: 40,
            train: TrainConfig::default(),
            positions: RecallPositions::Eleven,
            lift_width: DEFAULT_SCORE_LIFT_WIDTH,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcrDemoReport {
    pub ap_3d: Option<f64>,
    pub ap_2d: Option<f64>,
    pub ap_rect: Option<f64>,
    /// AP when every candidate gets the same score.
    pub ap_constant: Option<f64>,
    pub loss_trace: Vec<f64>,
    pub train_candidates: usize,
    pub test_candidates: usize,
}

/// Train on one group of synthetic frames and score a disjoint held-out group.
///
/// The head starts with a zeroed output layer, so with no epochs `s_rect`
/// is the constant 0.5.
pub fn run_fcr_demo(cfg: &FcrDemoConfig, seed: u64, exec: Execution) -> Result<FcrDemoReport> {
    let frame = |i: usize| make_candidates(&cfg.world, SplitMix64::derive(seed, i as u64).next_u64());
    let train_sets: Vec<CandidateSet> = (0..cfg.train_frames).map(frame).collect();
    let test_sets: Vec<CandidateSet> = (cfg.train_frames..cfg.train_frames + cfg.test_frames).map(frame).collect();

    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for s in &train_sets {
        labels.extend(label_candidates(&s.candidates, &s.gt_boxes));
        samples.extend(s.candidates.iter().cloned());
    }
    let mut head = FcrHead::new(
        cfg.world.feat3d_channels,
        cfg.world.feat2d_channels,
        cfg.lift_width,
        cfg.hidden,
        seed,
    );
    head.zero_rectifier();
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let trained = if samples.is_empty() {
        TrainedHead { head, loss_trace: Vec::new() }
    } else {
        train_fcr(&samples, &labels, &head, &train_cfg, exec)?
    };

    let mut rectified = Vec::with_capacity(test_sets.len());
    for s in &test_sets {
        rectified.push(CandidateSet {
            candidates: rectify_all(&s.candidates, &trained.head, exec)?,
            gt_boxes: s.gt_boxes.clone(),
            gt_box2d: s.gt_box2d.clone(),
        });
    }
    Ok(FcrDemoReport {
        ap_3d: candidate_ap(&rectified, |c| c.score_3d, cfg.positions),
        ap_2d: candidate_ap(&rectified, |c| c.score_2d, cfg.positions),
        ap_rect: candidate_ap(&rectified, |c| c.final_score(), cfg.positions),
        ap_constant: candidate_ap(&rectified, |_| 0.5, cfg.positions),
        loss_trace: trained.loss_trace,
        train_candidates: samples.len(),
        test_candidates: rectified.iter().map(|s| s.candidates.len()).sum(),
    })
}

// ---------------------------------------------------------------------------
// Candidate files

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateFile {
    pub candidates: Vec<DetectionCandidate>,
}

/// Parse a candidate file, naming the offending record on schema errors.
pub fn parse_candidate_file(text: &str) -> Result<CandidateFile> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format("candidate file", Some(e.line()), e.to_string()))?;
    let records = value
        .get("candidates")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::format("candidate file", None, "expected an object with a `candidates` array"))?;
    let mut candidates = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let cand: DetectionCandidate = serde_json::from_value(rec.clone())
            .map_err(|e| Error::format("candidate file", None, format!("record {i}: {e}")))?;
        cand.validate()
            .map_err(|e| Error::format("candidate file", None, format!("record {i}: {e}")))?;
        candidates.push(cand);
    }
    Ok(CandidateFile { candidates })
}

pub fn candidate_file_to_json(file: &CandidateFile) -> String {
    serde_json::to_string_pretty(file).expect("candidates serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head() -> FcrHead {
        FcrHead::new(4, 4, DEFAULT_SCORE_LIFT_WIDTH, DEFAULT_HIDDEN, 11)
    }

    #[test]
    fn pooling_examples() {
        let p = pool_roi_features(&[vec![1.0, 2.0, 3.0]], 3).unwrap();
        assert_eq!(p.values, vec![1.0, 2.0, 3.0]);
        let p = pool_roi_features(&[vec![0.0, 2.0], vec![2.0, 0.0]], 2).unwrap();
        assert_eq!(p.values, vec![1.0, 1.0]);
        let p = pool_roi_features(&[], 3).unwrap();
        assert!(p.empty);
        assert_eq!(p.values, vec![0.0; 3]);
        assert!(pool_roi_features(&[vec![1.0]], 2).is_err());
    }

    #[test]
    fn zero_rectifier_gives_half() {
        let mut h = head();
        h.zero_rectifier();
        let set = make_candidates(&SyntheticWorld::default(), 3);
        for c in &set.candidates {
            assert_eq!(rectify(c, &h).unwrap(), 0.5);
        }
    }

    #[test]
    fn rectified_scores_in_open_interval() {
        let h = head();
        let set = make_candidates(&SyntheticWorld::default(), 4);
        let out = rectify_all(&set.candidates, &h, Execution::Parallel).unwrap();
        for (before, after) in set.candidates.iter().zip(&out) {
            let s = after.score_rect.unwrap();
            assert!(s > 0.0 && s < 1.0);
            assert_eq!(before.box3d, after.box3d);
            assert_eq!(before.box2d, after.box2d);
            assert_eq!(before.score_3d, after.score_3d);
        }
    }

    #[test]
    fn noiseless_world_scores_one_on_gt() {
        let world = SyntheticWorld::default().without_noise();
        let set = make_candidates(&world, 9);
        for (k, g) in set.gt_boxes.iter().enumerate() {
            for c in &set.candidates[k * world.k_jitter..(k + 1) * world.k_jitter] {
                assert_eq!(c.box3d, *g);
                assert_eq!(c.score_3d, 1.0);
            }
        }
    }

    #[test]
    fn candidate_generation_is_deterministic_and_counted() {
        let world = SyntheticWorld::default();
        let a = make_candidates(&world, 5);
        let b = make_candidates(&world, 5);
        assert_eq!(a.candidates, b.candidates);
        assert_eq!(a.candidates.len(), world.n_gt * world.k_jitter + world.k_noise);
        let odd = SyntheticWorld { n_gt: 3, k_jitter: 2, k_noise: 5, ..world };
        assert_eq!(make_candidates(&odd, 1).candidates.len(), 11);
    }

    #[test]
    fn training_edge_cases() {
        let set = make_candidates(&SyntheticWorld::default(), 6);
        let labels = label_candidates(&set.candidates, &set.gt_boxes);
        let h = head();
        let none = train_fcr(&set.candidates, &labels, &h, &TrainConfig { epochs: 0, ..Default::default() }, Execution::Sequential).unwrap();
        assert_eq!(none.head, h);
        assert!(none.loss_trace.is_empty());
        let frozen = train_fcr(&set.candidates, &labels, &h, &TrainConfig { epochs: 5, lr: 0.0, ..Default::default() }, Execution::Sequential).unwrap();
        assert!(frozen.loss_trace.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-12 * w[0]));
        assert!(train_fcr(&[], &[], &h, &TrainConfig::default(), Execution::Sequential).is_err());
    }

    #[test]
    fn candidate_file_round_trip_and_errors() {
        let set = make_candidates(&SyntheticWorld { n_gt: 1, k_jitter: 2, k_noise: 1, ..Default::default() }, 2);
        let file = CandidateFile { candidates: set.candidates };
        let back = parse_candidate_file(&candidate_file_to_json(&file)).unwrap();
        assert_eq!(back, file);
        let err = parse_candidate_file(r#"{"candidates":[{"class_name":"Car"}]}"#).unwrap_err();
        assert!(err.to_string().contains("record 0"), "{err}");
        assert!(parse_candidate_file("[]").is_err());
    }
}
