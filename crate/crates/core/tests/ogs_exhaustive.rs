use std::f64::consts::PI;

use fusion3d::geometry::{bev_iou, iou_2d};
use fusion3d::kitti_io::ObjectClass;
use fusion3d::ogs::{
    augment_scene, occlusion_counts, ogs_select_indices, paste_samples, scene_placed_boxes, vanilla_select_indices, Combine,
    OgsConfig, PlacedBox, SampledObject,
};
use fusion3d::rng::SplitMix64;
use fusion3d::synth::{database_from_scenes, synth_corpus, SynthConfig};
use fusion3d::{Box2D, Box3D};
use fusion3d_oracles::ogs_reference;
use rand::Rng;

/// Small random instance on a cramped field so conflicts are common.
fn instance(rng: &mut SplitMix64) -> (Vec<SampledObject>, Vec<PlacedBox>) {
    let placed = |rng: &mut SplitMix64| {
        let b = Box3D::new(
            [rng.random_range(0.0..12.0), rng.random_range(-4.0..4.0), 0.0],
            [rng.random_range(1.0..4.5), rng.random_range(0.6..2.0), 1.5],
            rng.random_range(-PI..PI),
        );
        let u = rng.random_range(0.0..300.0);
        let v = rng.random_range(0.0..60.0);
        let r = Box2D::new(u, v, u + rng.random_range(10.0..80.0), v + rng.random_range(10.0..40.0));
        (b, r)
    };
    let ns = rng.random_range(0..=8);
    let ng = rng.random_range(0..=8);
    let samples = (0..ns)
        .map(|k| {
            let (box3d, box2d) = placed(rng);
            SampledObject {
                box3d,
                box2d,
                source_id: format!("s{k}"),
                class: ObjectClass::Car,
            }
        })
        .collect();
    let gts = (0..ng)
        .map(|_| {
            let (box3d, box2d) = placed(rng);
            PlacedBox { box3d, box2d }
        })
        .collect();
    (samples, gts)
}

fn occluded(cfg: &OgsConfig, a: (&Box3D, &Box2D), b: (&Box3D, &Box2D)) -> bool {
    let bev = bev_iou(a.0, b.0) > cfg.tau_bev;
    let img = iou_2d(a.1, b.1) > cfg.tau_image;
    match cfg.combine {
        Combine::Or => bev || img,
        Combine::And => bev && img,
    }
}

fn tables(s: &[SampledObject], g: &[PlacedBox], cfg: &OgsConfig) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let ss = s
        .iter()
        .enumerate()
        .map(|(i, a)| {
            s.iter()
                .enumerate()
                .map(|(j, b)| i != j && occluded(cfg, (&a.box3d, &a.box2d), (&b.box3d, &b.box2d)))
                .collect()
        })
        .collect();
    let sg = s
        .iter()
        .map(|a| g.iter().map(|b| occluded(cfg, (&a.box3d, &a.box2d), (&b.box3d, &b.box2d))).collect())
        .collect();
    (ss, sg)
}

#[test]
fn thousand_random_instances() {
    let mut rng = SplitMix64::new(2718);
    for combine in [Combine::Or, Combine::And] {
        let cfg = OgsConfig {
            combine,
            ..Default::default()
        };
        for case in 0..1000 {
            let (s, g) = instance(&mut rng);
            let (ss, sg) = tables(&s, &g, &cfg);
            let kept = ogs_select_indices(&s, &g, &cfg);

            // No retained sample conflicts with another retained sample or a GT.
            for &i in &kept {
                assert!(sg[i].iter().all(|c| !c), "case {case}: sample {i} hits a GT");
                for &j in &kept {
                    assert!(!ss[i][j], "case {case}: samples {i} and {j} conflict");
                }
            }
            assert!(kept.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(kept, ogs_reference(&ss, &sg), "case {case}");
            assert_eq!(kept, ogs_select_indices(&s, &g, &cfg));

            let counts = occlusion_counts(&s, &g, &cfg);
            for i in 0..s.len() {
                let want = ss[i].iter().filter(|c| **c).count() + sg[i].iter().filter(|c| **c).count();
                assert_eq!(counts[i], want);
            }

            let greedy = vanilla_select_indices(&s, &g, &cfg);
            for (k, &i) in greedy.iter().enumerate() {
                assert!(sg[i].iter().all(|c| !c));
                assert!(greedy[..k].iter().all(|&j| !ss[i][j]));
            }
            // Every rejected sample clashes with a GT or an earlier accepted one.
            for i in (0..s.len()).filter(|i| !greedy.contains(i)) {
                assert!(sg[i].iter().any(|c| *c) || greedy.iter().any(|&j| j < i && ss[i][j]));
            }
        }
    }
}

#[test]
fn documented_three_object_case() {
    let unit = |x: f64| Box3D::new([x, 0.0, 0.0], [1.0; 3], 0.0);
    let s = vec![
        SampledObject { box3d: unit(0.0), box2d: Box2D::new(0.0, 0.0, 10.0, 10.0), source_id: "s1".into(), class: ObjectClass::Car },
        SampledObject { box3d: unit(10.0), box2d: Box2D::new(0.0, 0.0, 6.0, 10.0), source_id: "s2".into(), class: ObjectClass::Car },
        SampledObject { box3d: unit(20.0), box2d: Box2D::new(4.0, 0.0, 10.0, 10.0), source_id: "s3".into(), class: ObjectClass::Car },
    ];
    let cfg = OgsConfig::default();
    assert_eq!(occlusion_counts(&s, &[], &cfg), vec![2, 1, 1]);
    assert_eq!(ogs_select_indices(&s, &[], &cfg), vec![1, 2]);
    assert_eq!(vanilla_select_indices(&s, &[], &cfg), vec![0]);
}

#[test]
fn occlusion_aware_selection_keeps_more_on_chained_scenes() {
    let synth = SynthConfig {
        chain_prob: 0.8,
        ..Default::default()
    };
    let scenes = synth_corpus(60, &synth, 77);
    let db = database_from_scenes(&scenes[..30]);
    let cfg = OgsConfig::default();
    let (mut ogs, mut vanilla) = (0usize, 0usize);
    for (i, scene) in scenes[30..].iter().enumerate() {
        let (_, stats) = augment_scene(scene, &db, &cfg, &mut SplitMix64::derive(5, i as u64)).unwrap();
        ogs += stats.ogs_retained.values().sum::<usize>();
        vanilla += stats.vanilla_retained.values().sum::<usize>();
    }
    assert!(ogs > vanilla, "ogs {ogs} vanilla {vanilla}");
}

#[test]
fn pasting_moves_points_and_adds_labels() {
    let scenes = synth_corpus(4, &SynthConfig::default(), 3);
    let db = database_from_scenes(&scenes[1..]);
    let target = &scenes[0];
    let cfg = OgsConfig::default();
    let (out, stats) = augment_scene(target, &db, &cfg, &mut SplitMix64::new(1)).unwrap();
    let added: usize = stats.ogs_retained.values().sum();
    assert_eq!(out.labels.len(), target.labels.len() + added);
    assert_eq!(out.image_size(), target.image_size());

    // Pasted objects carry their points in the right place and do not
    // conflict with the original ground truths.
    let originals = scene_placed_boxes(target);
    for (_, b, rect) in out.gt_boxes().into_iter().skip(target.gt_boxes().len()) {
        let inside = out.cloud.points.iter().filter(|p| b.contains([p[0] as f64, p[1] as f64, p[2] as f64])).count();
        assert!(inside > 0);
        for g in &originals {
            assert!(!cfg.conflict(&PlacedBox { box3d: b, box2d: rect }, g));
        }
    }

    // Pasting nothing is the identity.
    assert_eq!(paste_samples(target, &[], &db).unwrap(), *target);
}
