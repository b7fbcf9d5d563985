use std::collections::BTreeMap;
use std::path::Path;

use fusion3d::eval::{
    average_precision, evaluate_frame, gts_at_difficulty, results_to_csv, Difficulty, FrameDetection, FrameObject, PRCurve,
    ResultRow,
};
use fusion3d::fcr::{parse_candidate_file, run_fcr_demo, DetectionCandidate};
use fusion3d::feature_maps::{build_pyramid, IMAGE_CHANNELS};
use fusion3d::geometry::{iou_3d, lidar_to_image};
use fusion3d::kitti_io::{label_to_box3d, load_scene, scene_paths, write_scene, ObjectClass, SampleDatabase, Scene};
use fusion3d::mvi::{distinct_sample_positions, fuse_all, FusionNets, DEFAULT_HIDDEN};
use fusion3d::ogs::{augment_scene, AugmentStats, Combine};
use fusion3d::rng::SplitMix64;
use fusion3d::sparse_voxel::{build_multiscale, voxel_centers};
use fusion3d::synth::{database_from_scenes, synth_scene};
use fusion3d::{Box3D, Execution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draw::{draw_box_wireframe, pixel_of, scale_color, BOX_COLOR};
use crate::{input_error, write_bytes, write_json, ManifestHeader, Outcome, RunConfig};

pub const AUGMENT_MANIFEST: &str = "augment_manifest.json";
pub const SAMPLE_NUM_CSV: &str = "sample_num.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const FCR_CSV: &str = "fcr_demo.csv";
pub const VOXEL_STATS_CSV: &str = "voxel_stats.csv";

/// RoI recall thresholds reported by `eval`.
pub const RECALL_TAUS: [f64; 2] = [0.5, 0.7];

fn outcome(failed: usize) -> Outcome {
    if failed == 0 {
        Outcome::Success
    } else {
        Outcome::Partial
    }
}

fn load_checked(root: &Path, id: &str) -> anyhow::Result<Scene> {
    if !scene_paths(root, id).velodyne.is_file() {
        return Err(input_error(format!("scene {id} not found under {}", root.display())));
    }
    load_scene(root, id).map_err(|e| input_error(format!("scene {id}: {e}")))
}

// ---------------------------------------------------------------------------
// augment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub id: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<AugmentStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    #[serde(flatten)]
    pub header: ManifestHeader,
    pub tau_bev: f64,
    pub tau_image: f64,
    pub combine: Combine,
    pub scenes: Vec<SceneRecord>,
    pub failed: usize,
    pub mean_requested: BTreeMap<String, f64>,
    pub mean_ogs: BTreeMap<String, f64>,
    pub mean_vanilla: BTreeMap<String, f64>,
}

impl AugmentManifest {
    pub fn total_mean_ogs(&self) -> f64 {
        self.mean_ogs.values().sum()
    }

    pub fn total_mean_vanilla(&self) -> f64 {
        self.mean_vanilla.values().sum()
    }
}

fn class_means<'a>(stats: impl Iterator<Item = &'a BTreeMap<String, usize>>) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, usize> = BTreeMap::new();
    let mut n = 0usize;
    for m in stats {
        n += 1;
        for (k, v) in m {
            *sums.entry(k.clone()).or_insert(0) += v;
        }
    }
    sums.into_iter().map(|(k, v)| (k, v as f64 / n as f64)).collect()
}

/// Augment every configured scene. Augmented scenes go to `<out>/augmented`
/// in KITTI layout, the manifest and per-class means to `<out>`.
pub fn cmd_augment(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    cfg.ogs.validate().map_err(|e| input_error(e.to_string()))?;
    let root = cfg.dataset_root()?;
    let db_root = cfg.database_root()?;
    if !db_root.is_dir() {
        return Err(input_error(format!("sample database not found at {}", db_root.display())));
    }
    let db = SampleDatabase::load(&db_root).map_err(|e| input_error(format!("sample database: {e}")))?;
    let ids = cfg.scene_ids()?;
    let out_root = cfg.output_dir.join("augmented");
    log::info!("augmenting {} scenes with {} database entries", ids.len(), db.entries.len());

    let records: Vec<SceneRecord> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let work = || -> fusion3d::Result<AugmentStats> {
                let scene = load_scene(root, id)?;
                let (augmented, stats) = augment_scene(&scene, &db, &cfg.ogs, &mut SplitMix64::derive(cfg.seed, i as u64))?;
                write_scene(&augmented, &out_root)?;
                Ok(stats)
            };
            match work() {
                Ok(stats) => SceneRecord { id: id.clone(), status: "ok".into(), error: None, stats: Some(stats) },
                Err(e) => {
                    log::error!("scene {id}: {e}");
                    SceneRecord { id: id.clone(), status: "failed".into(), error: Some(e.to_string()), stats: None }
                }
            }
        })
        .collect();

    let ok: Vec<&AugmentStats> = records.iter().filter_map(|r| r.stats.as_ref()).collect();
    let failed = records.len() - ok.len();
    let manifest = AugmentManifest {
        header: ManifestHeader::new("augment", cfg),
        tau_bev: cfg.ogs.tau_bev,
        tau_image: cfg.ogs.tau_image,
        combine: cfg.ogs.combine,
        mean_requested: class_means(ok.iter().map(|s| &s.requested)),
        mean_ogs: class_means(ok.iter().map(|s| &s.ogs_retained)),
        mean_vanilla: class_means(ok.iter().map(|s| &s.vanilla_retained)),
        scenes: records,
        failed,
    };
    write_json(&cfg.output_dir.join(AUGMENT_MANIFEST), &manifest)?;

    let mut csv = String::from("class,mean_requested,mean_ogs,mean_vanilla\n");
    for (class, ogs) in &manifest.mean_ogs {
        csv.push_str(&format!(
            "{class},{:.6},{ogs:.6},{:.6}\n",
            manifest.mean_requested.get(class).copied().unwrap_or(0.0),
            manifest.mean_vanilla.get(class).copied().unwrap_or(0.0)
        ));
    }
    write_bytes(&cfg.output_dir.join(SAMPLE_NUM_CSV), csv.as_bytes())?;
    Ok(outcome(failed))
}

// ---------------------------------------------------------------------------
// project

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    #[serde(flatten)]
    pub header: ManifestHeader,
    pub scene: String,
    pub image_size: (usize, usize),
    /// Per scale: voxel centers drawn.
    pub drawn: Vec<usize>,
    /// Per scale: centers behind the camera.
    pub behind_camera: Vec<usize>,
    pub boxes: usize,
}

pub fn project_image_name(id: &str) -> String {
    format!("project_{id}.ppm")
}

/// Overlay GT wireframes and scale-colored voxel centers on the scene image.
/// Finer scales are drawn last so they stay visible.
pub fn cmd_project(cfg: &RunConfig, id: &str) -> anyhow::Result<Outcome> {
    let root = cfg.dataset_root()?;
    let scene = load_checked(root, id)?;
    let grid = build_multiscale(&scene.cloud, &cfg.voxel).map_err(|e| input_error(format!("voxel grid: {e}")))?;
    let mut img = scene.image.clone();

    let boxes = scene.gt_boxes();
    for (_, b, _) in &boxes {
        draw_box_wireframe(&mut img, b, &scene.calib, BOX_COLOR);
    }
    let levels = grid.scales.len();
    let mut drawn = vec![0; levels];
    let mut behind = vec![0; levels];
    for level in (0..levels).rev() {
        for c in voxel_centers(&grid, level)? {
            match lidar_to_image(c, &scene.calib) {
                None => behind[level] += 1,
                Some(p) => {
                    if let Some((x, y)) = pixel_of(&img, p.u, p.v) {
                        img.put(x, y, scale_color(level));
                        drawn[level] += 1;
                    }
                }
            }
        }
    }
    write_bytes(&cfg.output_dir.join(project_image_name(id)), &fusion3d::kitti_io::encode_ppm(&img))?;
    let manifest = ProjectManifest {
        header: ManifestHeader::new("project", cfg),
        scene: id.to_string(),
        image_size: (img.width, img.height),
        drawn,
        behind_camera: behind,
        boxes: boxes.len(),
    };
    write_json(&cfg.output_dir.join(format!("project_{id}.json")), &manifest)?;
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    #[serde(flatten)]
    pub header: ManifestHeader,
    pub detections: usize,
    pub frames: usize,
    /// Frame ids in the detections file that match no configured scene.
    pub unknown_frames: Vec<String>,
    pub failed_scenes: Vec<String>,
}

fn to_frame_detection(c: &DetectionCandidate) -> FrameDetection {
    FrameDetection {
        class: c.class_name.clone(),
        box3d: c.box3d,
        box2d: c.box2d,
        score: c.final_score(),
    }
}

fn recall_hits(rois: &[Box3D], gts: &[Box3D], tau: f64) -> usize {
    gts.iter().filter(|g| rois.iter().any(|r| iou_3d(r, g) >= tau)).count()
}

/// AP per class and difficulty plus RoI recall, written to `<out>/eval.csv`.
pub fn cmd_eval(cfg: &RunConfig, detections: &Path) -> anyhow::Result<Outcome> {
    cfg.eval.validate().map_err(|e| input_error(e.to_string()))?;
    let text = std::fs::read_to_string(detections)
        .map_err(|e| input_error(format!("cannot read detections {}: {e}", detections.display())))?;
    let file = parse_candidate_file(&text).map_err(|e| input_error(e.to_string()))?;
    let mut by_frame: BTreeMap<String, Vec<FrameDetection>> = BTreeMap::new();
    for (i, c) in file.candidates.iter().enumerate() {
        let frame = c
            .frame_id
            .as_ref()
            .ok_or_else(|| input_error(format!("detections record {i}: missing frame_id")))?;
        by_frame.entry(frame.clone()).or_default().push(to_frame_detection(c));
    }

    let root = cfg.dataset_root()?;
    let ids = cfg.scene_ids()?;
    let loaded: Vec<(String, Option<Vec<FrameObject>>)> = ids
        .par_iter()
        .map(|id| match load_scene(root, id) {
            Ok(s) => {
                let objects = s
                    .labels
                    .iter()
                    .map(|l| FrameObject { label: l.clone(), box3d: label_to_box3d(l, &s.calib) })
                    .collect();
                (id.clone(), Some(objects))
            }
            Err(e) => {
                log::error!("scene {id}: {e}");
                (id.clone(), None)
            }
        })
        .collect();
    let failed_scenes: Vec<String> = loaded.iter().filter(|(_, o)| o.is_none()).map(|(id, _)| id.clone()).collect();
    let frames: Vec<(&String, &Vec<FrameObject>)> = loaded.iter().filter_map(|(id, o)| o.as_ref().map(|o| (id, o))).collect();
    let unknown_frames: Vec<String> = by_frame.keys().filter(|k| !ids.contains(k)).cloned().collect();
    for f in &unknown_frames {
        log::warn!("detections for unknown frame {f} ignored");
    }

    let empty = Vec::new();
    let positions = cfg.eval.recall_positions;
    let mut rows = Vec::new();
    for class in ObjectClass::evaluated() {
        if cfg.eval.threshold(&class).is_none() {
            continue;
        }
        for d in Difficulty::levels() {
            let per_frame: Vec<(PRCurve, [usize; 2], usize)> = frames
                .par_iter()
                .map(|(id, objects)| {
                    let dets = by_frame.get(*id).unwrap_or(&empty);
                    let curve = evaluate_frame(dets, objects, &class, d, &cfg.eval).expect("threshold checked above");
                    let gts = gts_at_difficulty(objects, &class, d, &cfg.eval.difficulty);
                    let rois: Vec<Box3D> = dets.iter().filter(|x| x.class == class).map(|x| x.box3d).collect();
                    (curve, RECALL_TAUS.map(|t| recall_hits(&rois, &gts, t)), gts.len())
                })
                .collect();
            let merged = PRCurve::merge(per_frame.iter().map(|f| &f.0));
            rows.push(ResultRow {
                class: class.to_string(),
                difficulty: d.as_str().to_string(),
                metric: "ap3d".into(),
                positions: Some(positions.count()),
                value: average_precision(&merged, positions),
            });
            let total: usize = per_frame.iter().map(|f| f.2).sum();
            for (k, tau) in RECALL_TAUS.iter().enumerate() {
                let hits: usize = per_frame.iter().map(|f| f.1[k]).sum();
                rows.push(ResultRow {
                    class: class.to_string(),
                    difficulty: d.as_str().to_string(),
                    metric: format!("roi_recall@{tau:.2}"),
                    positions: None,
                    value: (total > 0).then(|| hits as f64 / total as f64),
                });
            }
        }
    }
    write_bytes(&cfg.output_dir.join(EVAL_CSV), results_to_csv(&rows).as_bytes())?;
    let manifest = EvalManifest {
        header: ManifestHeader::new("eval", cfg),
        detections: file.candidates.len(),
        frames: frames.len(),
        unknown_frames,
        failed_scenes,
    };
    write_json(&cfg.output_dir.join("eval_manifest.json"), &manifest)?;
    Ok(outcome(manifest.failed_scenes.len()))
}

// ---------------------------------------------------------------------------
// fcr-demo

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcrManifest {
    #[serde(flatten)]
    pub header: ManifestHeader,
    pub report: fusion3d::fcr::FcrDemoReport,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "nan".into())
}

/// One `epoch` row per training epoch, then one `summary` row with the APs.
pub fn fcr_report_csv(report: &fusion3d::fcr::FcrDemoReport) -> String {
    let mut out = String::from("kind,epoch,loss,ap_3d,ap_2d,ap_rect,ap_constant\n");
    for (e, loss) in report.loss_trace.iter().enumerate() {
        out.push_str(&format!("epoch,{},{loss:.9},,,,\n", e + 1));
    }
    out.push_str(&format!(
        "summary,{},{},{},{},{},{}\n",
        report.loss_trace.len(),
        cell(report.loss_trace.last().copied()),
        cell(report.ap_3d),
        cell(report.ap_2d),
        cell(report.ap_rect),
        cell(report.ap_constant)
    ));
    out
}

pub fn cmd_fcr_demo(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let report = run_fcr_demo(&cfg.fcr, cfg.seed, Execution::Parallel).map_err(|e| input_error(e.to_string()))?;
    write_bytes(&cfg.output_dir.join(FCR_CSV), fcr_report_csv(&report).as_bytes())?;
    let manifest = FcrManifest { header: ManifestHeader::new("fcr-demo", cfg), report };
    write_json(&cfg.output_dir.join("fcr_demo_manifest.json"), &manifest)?;
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------------------
// voxel-stats

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub level: usize,
    pub voxels: usize,
    /// Voxel centers landing inside the image.
    pub projected: usize,
    /// Distinct image positions sampled at this scale.
    pub distinct: usize,
    /// Distinct image positions sampled by scales 0..=level together.
    pub distinct_cumulative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneVoxelStats {
    pub id: String,
    pub dropped_points: usize,
    pub scales: Vec<ScaleStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelStatsManifest {
    #[serde(flatten)]
    pub header: ManifestHeader,
    pub scenes: Vec<SceneVoxelStats>,
    pub failed_scenes: Vec<String>,
}

fn scene_voxel_stats(scene: &Scene, cfg: &RunConfig) -> fusion3d::Result<SceneVoxelStats> {
    let grid = build_multiscale(&scene.cloud, &cfg.voxel)?;
    let pyramid = build_pyramid(&scene.image)?;
    let channels = grid.scales.first().map(|s| s.channels).unwrap_or(4);
    let nets = FusionNets::shared(channels, IMAGE_CHANNELS, DEFAULT_HIDDEN, cfg.seed);
    let fused = fuse_all(&grid, &pyramid, &scene.calib, &nets, Execution::Parallel)?;
    let scales = fused
        .iter()
        .enumerate()
        .map(|(level, f)| ScaleStats {
            level,
            voxels: f.len(),
            projected: f.valid.iter().filter(|v| **v).count(),
            distinct: distinct_sample_positions(&fused[level..=level]),
            distinct_cumulative: distinct_sample_positions(&fused[..=level]),
        })
        .collect();
    Ok(SceneVoxelStats { id: scene.id.clone(), dropped_points: grid.dropped_points, scales })
}

pub fn cmd_voxel_stats(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    cfg.voxel.extents().map_err(|e| input_error(format!("voxel grid: {e}")))?;
    let root = cfg.dataset_root()?;
    let ids = cfg.scene_ids()?;
    let results: Vec<Result<SceneVoxelStats, String>> = ids
        .par_iter()
        .map(|id| {
            load_scene(root, id).and_then(|s| scene_voxel_stats(&s, cfg)).map_err(|e| {
                log::error!("scene {id}: {e}");
                id.clone()
            })
        })
        .collect();
    let mut scenes = Vec::new();
    let mut failed_scenes = Vec::new();
    for r in results {
        match r {
            Ok(s) => scenes.push(s),
            Err(id) => failed_scenes.push(id),
        }
    }
    let mut csv = String::from("scene,level,voxels,projected,distinct,distinct_cumulative\n");
    for s in &scenes {
        for k in &s.scales {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.id, k.level, k.voxels, k.projected, k.distinct, k.distinct_cumulative
            ));
        }
    }
    write_bytes(&cfg.output_dir.join(VOXEL_STATS_CSV), csv.as_bytes())?;
    let failed = failed_scenes.len();
    let manifest = VoxelStatsManifest { header: ManifestHeader::new("voxel-stats", cfg), scenes, failed_scenes };
    write_json(&cfg.output_dir.join("voxel_stats_manifest.json"), &manifest)?;
    Ok(outcome(failed))
}

// ---------------------------------------------------------------------------
// synth / build-db

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseManifest {
    #[serde(flatten)]
    pub header: ManifestHeader,
    pub scenes: usize,
    pub entries: BTreeMap<String, usize>,
}

fn entry_counts(db: &SampleDatabase) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for e in &db.entries {
        *m.entry(e.class.to_string()).or_insert(0) += 1;
    }
    m
}

/// Stream offset separating database scenes from written scenes.
const DB_STREAM: u64 = 1 << 32;

/// Write `n` synthetic scenes to `<out>` and a database harvested from
/// `n_db` further scenes to `<out>/gt_database`.
pub fn cmd_synth(cfg: &RunConfig, n: usize, n_db: usize) -> anyhow::Result<Outcome> {
    let out = &cfg.output_dir;
    (0..n).into_par_iter().try_for_each(|i| {
        let scene = synth_scene(&format!("{i:06}"), &cfg.synth, &mut SplitMix64::derive(cfg.seed, i as u64));
        write_scene(&scene, out)
    })?;
    let db_scenes: Vec<Scene> = (0..n_db)
        .into_par_iter()
        .map(|i| synth_scene(&format!("db{i:06}"), &cfg.synth, &mut SplitMix64::derive(cfg.seed, DB_STREAM + i as u64)))
        .collect();
    let db = database_from_scenes(&db_scenes);
    db.save(&out.join("gt_database"))?;
    let manifest = DatabaseManifest { header: ManifestHeader::new("synth", cfg), scenes: n, entries: entry_counts(&db) };
    write_json(&out.join("synth_manifest.json"), &manifest)?;
    Ok(Outcome::Success)
}

/// Harvest every labelled object of the configured scenes into `<out>/gt_database`.
pub fn cmd_build_db(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let root = cfg.dataset_root()?;
    let ids = cfg.scene_ids()?;
    let scenes: Vec<Scene> = ids.par_iter().map(|id| load_checked(root, id)).collect::<anyhow::Result<_>>()?;
    let db = database_from_scenes(&scenes);
    db.save(&cfg.output_dir.join("gt_database"))?;
    let manifest = DatabaseManifest { header: ManifestHeader::new("build-db", cfg), scenes: scenes.len(), entries: entry_counts(&db) };
    write_json(&cfg.output_dir.join("build_db_manifest.json"), &manifest)?;
    Ok(Outcome::Success)
}
