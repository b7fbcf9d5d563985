//! KITTI-format parsing checked against an independent parser.
//!
//! The bundled frames under `tests/fixtures/kitti` follow the KITTI object
//! layout (seven-line calibration files, fifteen-column labels, float32
//! velodyne blobs). Set `KITTI_ROOT` to a `training/` directory and run with
//! `--ignored` to repeat the checks on real frames.

use std::path::{Path, PathBuf};

use fusion3d::kitti_io::{
    format_labels, label_to_box3d, list_scene_ids, load_scene, parse_calibration, parse_labels, parse_point_cloud, ObjectClass,
};
use fusion3d_oracles::{decode_velodyne, kitti_project, parse_calib_file, parse_label_file};

fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/kitti")
}

fn check_frame(root: &Path, id: &str) {
    let bin = std::fs::read(root.join("velodyne").join(format!("{id}.bin"))).unwrap();
    let cloud = parse_point_cloud(&bin).unwrap();
    assert_eq!(cloud.len(), bin.len() / 16);
    assert_eq!(cloud.points, decode_velodyne(&bin));
    assert_eq!(cloud.to_bytes(), bin, "{id}: velodyne round trip");

    let calib_text = std::fs::read_to_string(root.join("calib").join(format!("{id}.txt"))).unwrap();
    let calib = parse_calibration(&calib_text).unwrap();
    let raw = parse_calib_file(&calib_text);
    for (key, values) in &calib.entries {
        assert_eq!(&raw[key], values, "{id}: calibration key {key}");
    }
    assert_eq!(calib.entries.len(), raw.len());
    let p2: [f64; 12] = raw["P2"].clone().try_into().unwrap();
    let r0: [f64; 9] = raw["R0_rect"].clone().try_into().unwrap();
    let tr: [f64; 12] = raw["Tr_velo_to_cam"].clone().try_into().unwrap();
    for p in cloud.points.iter().step_by(37) {
        let q = [p[0] as f64, p[1] as f64, p[2] as f64];
        match (fusion3d::geometry::lidar_to_image(q, &calib), kitti_project(&p2, &r0, &tr, q)) {
            (Some(a), Some((u, v, _))) => assert!((a.u - u).abs() < 1e-6 * u.abs().max(1.0) && (a.v - v).abs() < 1e-6 * v.abs().max(1.0)),
            (None, None) => {}
            (a, b) => panic!("{id}: projection disagreement {a:?} vs {b:?}"),
        }
    }

    let label_path = root.join("label_2").join(format!("{id}.txt"));
    let Ok(label_text) = std::fs::read_to_string(&label_path) else {
        return;
    };
    let labels = parse_labels(&label_text).unwrap();
    let raw = parse_label_file(&label_text);
    assert_eq!(labels.len(), raw.len());
    for (l, r) in labels.iter().zip(&raw) {
        assert_eq!(l.class.as_str(), r.class);
        assert_eq!(l.truncation, r.truncation);
        assert_eq!(l.occlusion as i64, r.occlusion);
        assert_eq!(l.alpha, r.alpha);
        assert_eq!([l.bbox2d.u_min, l.bbox2d.v_min, l.bbox2d.u_max, l.bbox2d.v_max], r.bbox);
        assert_eq!(l.dims, r.hwl);
        assert_eq!(l.location, r.xyz);
        assert_eq!(l.yaw, r.ry);
        if l.class != ObjectClass::DontCare {
            // The bottom-center location lies on the bottom face of the LiDAR box.
            let b = label_to_box3d(l, &calib);
            let bottom = calib.cam_to_lidar(l.location);
            assert!((bottom[2] - (b.center[2] - b.dims[2] / 2.0)).abs() < 0.05, "{id}");
        }
    }
    assert_eq!(parse_labels(&format_labels(&labels)).unwrap(), labels);
}

#[test]
fn bundled_frames_match_independent_parser() {
    let root = fixture_root();
    let ids = list_scene_ids(&root).unwrap();
    assert_eq!(ids.len(), 5);
    for id in &ids {
        check_frame(&root, id);
    }
}

#[test]
fn bundled_frames_load_as_scenes() {
    let root = fixture_root();
    for id in list_scene_ids(&root).unwrap() {
        let scene = load_scene(&root, &id).unwrap();
        assert!(!scene.labels.is_empty());
        assert_eq!(scene.image_size(), (311, 94));
        for (_, _, rect) in scene.gt_boxes() {
            assert!(rect.u_min >= 0.0 && rect.u_max <= 311.0 && rect.v_min >= 0.0 && rect.v_max <= 94.0);
        }
    }
}

#[test]
#[ignore = "needs KITTI_ROOT pointing at a KITTI object training split"]
fn real_kitti_frames_match_independent_parser() {
    let root = PathBuf::from(std::env::var("KITTI_ROOT").expect("KITTI_ROOT not set"));
    let ids = list_scene_ids(&root).unwrap();
    assert!(ids.len() >= 5, "need at least five frames under {}", root.display());
    for id in ids.iter().take(50) {
        check_frame(&root, id);
    }
}
