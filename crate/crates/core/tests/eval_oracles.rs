use fusion3d::eval::{
    average_precision, evaluate_frame, match_detections, nms_3d, Difficulty, EvalConfig, FrameDetection, FrameObject, PRCurve,
    RecallPositions, ScoredBox,
};
use fusion3d::geometry::iou_3d;
use fusion3d::kitti_io::{load_scene, ObjectClass};
use fusion3d::rng::SplitMix64;
use fusion3d::{Box2D, Box3D};
use fusion3d_oracles::{anchors_11, anchors_40, ap_bruteforce};
use proptest::prelude::*;
use rand::Rng;

fn random_curve(rng: &mut SplitMix64, n: usize, p_tp: f64) -> PRCurve {
    let entries: Vec<(f64, bool)> = (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_bool(p_tp))).collect();
    let tp = entries.iter().filter(|e| e.1).count();
    PRCurve::new(entries, tp + rng.random_range(0..5))
}

#[test]
fn ap_matches_brute_force_scan() {
    let mut rng = SplitMix64::new(31);
    for _ in 0..300 {
        let n = rng.random_range(1..80);
        let curve = random_curve(&mut rng, n, 0.6);
        let raw: Vec<(f64, bool)> = curve.entries.clone();
        let got11 = average_precision(&curve, RecallPositions::Eleven).unwrap();
        let got40 = average_precision(&curve, RecallPositions::Forty).unwrap();
        assert!((got11 - ap_bruteforce(&raw, curve.gt_count, &anchors_11())).abs() < 1e-12);
        assert!((got40 - ap_bruteforce(&raw, curve.gt_count, &anchors_40())).abs() < 1e-12);
    }
}

#[test]
fn two_gt_hand_case() {
    // TP, FP, TP against two GTs: precision 1 up to recall 0.5, then 2/3.
    let curve = PRCurve::new(vec![(0.9, true), (0.8, false), (0.7, true)], 2);
    let ap = average_precision(&curve, RecallPositions::Eleven).unwrap();
    assert!((ap - 28.0 / 33.0).abs() < 1e-9);
}

#[test]
fn dense_curves_agree_across_anchor_sets() {
    let mut rng = SplitMix64::new(8);
    for _ in 0..20 {
        // A smoothly degrading detector: TP probability falls with rank.
        let n = 600;
        let mut entries = Vec::with_capacity(n);
        for k in 0..n {
            let score = 1.0 - k as f64 / n as f64;
            entries.push((score, rng.random_bool(score.powf(0.7))));
        }
        let tp = entries.iter().filter(|e| e.1).count();
        let curve = PRCurve::new(entries, tp);
        assert!(curve.operating_points().len() >= 400);
        let a11 = average_precision(&curve, RecallPositions::Eleven).unwrap();
        let a40 = average_precision(&curve, RecallPositions::Forty).unwrap();
        assert!((a11 - a40).abs() <= 0.02, "{a11} vs {a40}");
    }
}

#[test]
fn adding_a_true_positive_never_hurts() {
    let mut rng = SplitMix64::new(77);
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let curve = random_curve(&mut rng, n, 0.5);
        if curve.true_positives() >= curve.gt_count {
            continue;
        }
        let mut more = curve.entries.clone();
        more.push((rng.random_range(0.0..1.0), true));
        let more = PRCurve::new(more, curve.gt_count);
        for p in [RecallPositions::Eleven, RecallPositions::Forty] {
            assert!(average_precision(&more, p).unwrap() + 1e-12 >= average_precision(&curve, p).unwrap());
        }
    }
}

#[test]
fn greedy_matching_against_pairwise_table() {
    let mut rng = SplitMix64::new(5);
    for _ in 0..200 {
        let gts: Vec<Box3D> = (0..rng.random_range(0..6))
            .map(|i| Box3D::new([6.0 * i as f64, 0.0, 0.0], [4.0, 1.8, 1.5], rng.random_range(-0.2..0.2)))
            .collect();
        let dets: Vec<ScoredBox> = (0..rng.random_range(0..10))
            .map(|_| ScoredBox {
                box3d: Box3D::new([rng.random_range(-2.0..32.0), rng.random_range(-0.5..0.5), 0.0], [4.0, 1.8, 1.5], 0.0),
                score: rng.random_range(0.0..1.0),
            })
            .collect();
        let curve = match_detections(&dets, &gts, 0.5);
        // Reference: walk detections by descending score, take the best free GT.
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
        let mut taken = vec![false; gts.len()];
        let mut want = Vec::new();
        for i in order {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                let o = iou_3d(&dets[i].box3d, g);
                if !taken[j] && o >= 0.5 && best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            want.push((dets[i].score, best.is_some()));
        }
        assert_eq!(curve.entries, want);
        assert_eq!(curve.gt_count, gts.len());
    }
}

#[test]
fn labels_as_detections_score_one_on_fixture_frames() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/kitti");
    let cfg = EvalConfig {
        difficulty: fusion3d::eval::DifficultyRules {
            // Fixture images are quarter resolution; scale the height rules.
            easy: fusion3d::eval::DifficultyRule { min_height: 10.0, max_occlusion: 0, max_truncation: 0.15 },
            moderate: fusion3d::eval::DifficultyRule { min_height: 6.25, max_occlusion: 1, max_truncation: 0.3 },
            hard: fusion3d::eval::DifficultyRule { min_height: 6.25, max_occlusion: 2, max_truncation: 0.5 },
        },
        ..Default::default()
    };
    let scenes: Vec<_> = (0..5).map(|i| load_scene(&root, &format!("{i:06}")).unwrap()).collect();
    for class in ObjectClass::evaluated() {
        for d in Difficulty::levels() {
            let curves: Vec<PRCurve> = scenes
                .iter()
                .map(|s| {
                    let objects: Vec<FrameObject> = s
                        .labels
                        .iter()
                        .map(|l| FrameObject { label: l.clone(), box3d: fusion3d::kitti_io::label_to_box3d(l, &s.calib) })
                        .collect();
                    let dets: Vec<FrameDetection> = objects
                        .iter()
                        .filter(|o| !o.label.is_dont_care())
                        .map(|o| FrameDetection { class: o.label.class.clone(), box3d: o.box3d, box2d: o.label.bbox2d, score: 1.0 })
                        .collect();
                    evaluate_frame(&dets, &objects, &class, d, &cfg).unwrap()
                })
                .collect();
            let merged = PRCurve::merge(&curves);
            if merged.gt_count > 0 {
                assert_eq!(average_precision(&merged, RecallPositions::Eleven), Some(1.0), "{class} {d:?}");
            }
        }
    }
}

#[test]
fn dont_care_overlap_drops_detection() {
    let mut dc = fusion3d::kitti_io::LabelRecord {
        class: ObjectClass::DontCare,
        truncation: -1.0,
        occlusion: -1,
        alpha: -10.0,
        bbox2d: Box2D::new(0.0, 0.0, 100.0, 100.0),
        dims: [-1.0; 3],
        location: [-1000.0; 3],
        yaw: -10.0,
    };
    let objects = vec![FrameObject { label: dc.clone(), box3d: Box3D::new([0.0; 3], [1.0; 3], 0.0) }];
    let det = FrameDetection {
        class: ObjectClass::Car,
        box3d: Box3D::new([20.0, 0.0, 0.0], [4.0, 1.8, 1.5], 0.0),
        box2d: Box2D::new(40.0, 10.0, 140.0, 90.0),
        score: 0.7,
    };
    let cfg = EvalConfig::default();
    // 60 % of the detection lies on the region: dropped.
    let c = evaluate_frame(std::slice::from_ref(&det), &objects, &ObjectClass::Car, Difficulty::Hard, &cfg).unwrap();
    assert!(c.entries.is_empty());
    // 40 %: counted as a false positive.
    dc.bbox2d = Box2D::new(0.0, 0.0, 80.0, 100.0);
    let objects = vec![FrameObject { label: dc, box3d: Box3D::new([0.0; 3], [1.0; 3], 0.0) }];
    let c = evaluate_frame(&[det], &objects, &ObjectClass::Car, Difficulty::Hard, &cfg).unwrap();
    assert_eq!(c.entries, vec![(0.7, false)]);
}

proptest! {
    #[test]
    fn nms_output_is_pairwise_separated(xs in proptest::collection::vec((0.0..20.0f64, 0.0..1.0f64), 0..25), t in 0.1..0.9f64) {
        let dets: Vec<ScoredBox> = xs.iter().map(|(x, s)| ScoredBox { box3d: Box3D::new([*x, 0.0, 0.0], [4.0, 1.8, 1.5], 0.0), score: *s }).collect();
        let kept = nms_3d(&dets, t);
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                prop_assert!(iou_3d(&kept[i].box3d, &kept[j].box3d) <= t);
            }
            prop_assert!(dets.contains(&kept[i]));
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }
}
