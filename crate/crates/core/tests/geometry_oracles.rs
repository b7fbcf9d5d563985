use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use fusion3d::geometry::{bev_iou, box3d_corners, iou_2d, iou_3d, lidar_to_image, project_box3d_to_2d, BOX_EDGES};
use fusion3d::kitti_io::{parse_calibration, CalibrationSet};
use fusion3d::rng::SplitMix64;
use fusion3d::{Box2D, Box3D};
use fusion3d_oracles::{kitti_project, mc_bev_iou, mc_iou_3d, OBox};
use proptest::prelude::*;
use rand::Rng;

fn obox(b: &Box3D) -> OBox {
    OBox {
        center: b.center,
        dims: b.dims,
        yaw: b.yaw,
    }
}

/// A pair of boxes close enough to overlap most of the time.
fn overlapping_pair(rng: &mut SplitMix64) -> (Box3D, Box3D) {
    let a = Box3D::new(
        [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)],
        [rng.random_range(0.5..5.0), rng.random_range(0.5..3.0), rng.random_range(0.5..2.0)],
        rng.random_range(-PI..PI),
    );
    let b = Box3D::new(
        [
            a.center[0] + rng.random_range(-1.5..1.5),
            a.center[1] + rng.random_range(-1.5..1.5),
            a.center[2] + rng.random_range(-0.8..0.8),
        ],
        [rng.random_range(0.5..5.0), rng.random_range(0.5..3.0), rng.random_range(0.5..2.0)],
        rng.random_range(-PI..PI),
    );
    (a, b)
}

#[test]
fn bev_iou_matches_monte_carlo() {
    let mut rng = SplitMix64::new(101);
    let mut mc_rng = SplitMix64::new(202);
    for _ in 0..40 {
        let (a, b) = overlapping_pair(&mut rng);
        let exact = bev_iou(&a, &b);
        let mc = mc_bev_iou(&obox(&a), &obox(&b), 200_000, &mut mc_rng);
        assert!((exact - mc).abs() <= 0.01, "{a:?} {b:?}: exact {exact} vs mc {mc}");
    }
}

#[test]
fn iou_3d_matches_monte_carlo() {
    let mut rng = SplitMix64::new(303);
    let mut mc_rng = SplitMix64::new(404);
    for _ in 0..40 {
        let (a, b) = overlapping_pair(&mut rng);
        let exact = iou_3d(&a, &b);
        let mc = mc_iou_3d(&obox(&a), &obox(&b), 200_000, &mut mc_rng);
        assert!((exact - mc).abs() <= 0.01, "{a:?} {b:?}: exact {exact} vs mc {mc}");
    }
}

#[test]
fn rotated_square_case() {
    // A unit square against itself turned by 45°: the overlap is a regular
    // octagon of area 2(√2 − 1) and the union is 2 minus that.
    let a = Box3D::new([0.0; 3], [1.0; 3], 0.0);
    let b = Box3D::new([0.0; 3], [1.0; 3], FRAC_PI_4);
    let octagon = 2.0 * (2f64.sqrt() - 1.0);
    let expected = octagon / (2.0 - octagon);
    assert!((bev_iou(&a, &b) - expected).abs() < 1e-12);
    assert!((expected - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert!((iou_3d(&a, &b) - expected).abs() < 1e-12);
}

#[test]
fn analytic_3d_cases() {
    let a = Box3D::new([1.0, 2.0, 0.5], [4.0, 2.0, 1.5], 0.3);
    assert_eq!(iou_3d(&a, &a), 1.0);
    assert_eq!(bev_iou(&a, &a), 1.0);
    let half = Box3D {
        center: [1.0, 2.0, 0.5 + 0.75],
        ..a
    };
    assert!((iou_3d(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
    let flipped = Box3D::new(a.center, a.dims, a.yaw + PI);
    assert_eq!(iou_3d(&a, &flipped), 1.0);
    let quarter = Box3D::new(a.center, [2.0, 4.0, 1.5], a.yaw + FRAC_PI_2);
    assert!((iou_3d(&a, &quarter) - 1.0).abs() < 1e-12);
}

fn fixture_calib(id: &str) -> (String, CalibrationSet) {
    let path = format!("{}/tests/fixtures/kitti/calib/{id}.txt", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(path).unwrap();
    let calib = parse_calibration(&text).unwrap();
    (text, calib)
}

fn raw_matrices(text: &str) -> ([f64; 12], [f64; 9], [f64; 12]) {
    let raw = fusion3d_oracles::parse_calib_file(text);
    (
        raw["P2"].clone().try_into().unwrap(),
        raw["R0_rect"].clone().try_into().unwrap(),
        raw["Tr_velo_to_cam"].clone().try_into().unwrap(),
    )
}

#[test]
fn projection_matches_three_matrix_oracle() {
    let (text, calib) = fixture_calib("000000");
    let (p2, r0, tr) = raw_matrices(&text);
    let mut rng = SplitMix64::new(5);
    let mut seen_behind = false;
    for _ in 0..2000 {
        let p = [rng.random_range(-20.0..60.0), rng.random_range(-30.0..30.0), rng.random_range(-3.0..3.0)];
        match (lidar_to_image(p, &calib), kitti_project(&p2, &r0, &tr, p)) {
            (Some(got), Some((u, v, d))) => {
                assert!((got.u - u).abs() < 1e-6 * u.abs().max(1.0), "{p:?}");
                assert!((got.v - v).abs() < 1e-6 * v.abs().max(1.0), "{p:?}");
                assert!((got.depth - d).abs() < 1e-9 * d.abs().max(1.0));
            }
            (None, None) => seen_behind = true,
            (a, b) => panic!("disagreement at {p:?}: {a:?} vs {b:?}"),
        }
    }
    assert!(seen_behind);
}

#[test]
fn projected_box_is_hull_of_densely_sampled_edges() {
    let (_, calib) = fixture_calib("000001");
    let size = (310, 94);
    let mut rng = SplitMix64::new(17);
    let mut checked = 0;
    for _ in 0..300 {
        let b = Box3D::new(
            [rng.random_range(4.0..50.0), rng.random_range(-15.0..15.0), rng.random_range(-2.0..1.0)],
            [rng.random_range(0.5..5.0), rng.random_range(0.5..3.0), rng.random_range(0.5..2.0)],
            rng.random_range(-PI..PI),
        );
        let corners = box3d_corners(&b);
        let all_front = corners.iter().all(|c| lidar_to_image(*c, &calib).is_some());
        if !all_front {
            continue;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for (i, j) in BOX_EDGES {
            for k in 0..=200 {
                let t = k as f64 / 200.0;
                let p = [0, 1, 2].map(|a| corners[i][a] * (1.0 - t) + corners[j][a] * t);
                let q = lidar_to_image(p, &calib).unwrap();
                lo = [lo[0].min(q.u), lo[1].min(q.v)];
                hi = [hi[0].max(q.u), hi[1].max(q.v)];
            }
        }
        let clip = |x: f64, m: usize| x.clamp(0.0, m as f64);
        let want = Box2D::new(clip(lo[0], size.0), clip(lo[1], size.1), clip(hi[0], size.0), clip(hi[1], size.1));
        match project_box3d_to_2d(&b, &calib, size) {
            Some(got) => {
                for (g, w) in [(got.u_min, want.u_min), (got.v_min, want.v_min), (got.u_max, want.u_max), (got.v_max, want.v_max)] {
                    assert!((g - w).abs() < 1e-6, "{got:?} vs {want:?}");
                }
                checked += 1;
            }
            None => assert!(want.area() == 0.0, "box dropped but visible: {want:?}"),
        }
    }
    assert!(checked > 50);
}

fn arb_box() -> impl Strategy<Value = Box3D> {
    (-10.0..10.0f64, -10.0..10.0f64, -2.0..2.0f64, 0.2..5.0f64, 0.2..5.0f64, 0.2..3.0f64, -PI..PI)
        .prop_map(|(x, y, z, l, w, h, yaw)| Box3D::new([x, y, z], [l, w, h], yaw))
}

fn moved(b: &Box3D, angle: f64, shift: [f64; 3]) -> Box3D {
    let c = fusion3d::geometry::rotate_z(b.center, angle);
    Box3D::new([c[0] + shift[0], c[1] + shift[1], c[2] + shift[2]], b.dims, b.yaw + angle)
}

proptest! {
    #[test]
    fn iou_kernels_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        for f in [bev_iou, iou_3d] {
            let (ab, ba) = (f(&a, &b), f(&b, &a));
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn iou_kernels_invariant_under_rigid_motion(
        a in arb_box(),
        b in arb_box(),
        angle in -PI..PI,
        shift in proptest::array::uniform3(-20.0..20.0f64),
    ) {
        let (ma, mb) = (moved(&a, angle, shift), moved(&b, angle, shift));
        prop_assert!((bev_iou(&a, &b) - bev_iou(&ma, &mb)).abs() < 1e-6);
        prop_assert!((iou_3d(&a, &b) - iou_3d(&ma, &mb)).abs() < 1e-6);
    }

    #[test]
    fn axis_aligned_bev_equals_rect_iou(a in arb_box(), b in arb_box()) {
        let a = Box3D { yaw: 0.0, ..a };
        let b = Box3D { yaw: 0.0, ..b };
        let rect = |x: &Box3D| Box2D::new(
            x.center[0] - x.dims[0] / 2.0,
            x.center[1] - x.dims[1] / 2.0,
            x.center[0] + x.dims[0] / 2.0,
            x.center[1] + x.dims[1] / 2.0,
        );
        prop_assert_eq!(bev_iou(&a, &b), iou_2d(&rect(&a), &rect(&b)));
    }

    #[test]
    fn distinct_boxes_have_iou_below_one(a in arb_box(), dx in 0.05..3.0f64) {
        let b = Box3D { center: [a.center[0] + dx, a.center[1], a.center[2]], ..a };
        prop_assert!(iou_3d(&a, &b) < 1.0);
        prop_assert!(bev_iou(&a, &b) < 1.0);
    }
}
