use std::collections::BTreeSet;

use fusion3d::kitti_io::PointCloud;
use fusion3d::rng::SplitMix64;
use fusion3d::sparse_voxel::{build_multiscale, downsample_dilate, voxel_centers, voxelize, VoxelGridConfig};
use fusion3d_oracles::{dilate, voxel_buckets};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn cfg() -> VoxelGridConfig {
    VoxelGridConfig {
        range_min: [0.0, -3.2, -1.6],
        range_max: [6.4, 3.2, 1.6],
        voxel_size: [0.2, 0.2, 0.1],
        num_scales: 4,
    }
}

fn random_cloud(rng: &mut SplitMix64, n: usize) -> PointCloud {
    // Points clustered around a few blobs so that occupancy has interiors,
    // plus some strays outside the range.
    let blobs: Vec<[f64; 3]> = (0..4)
        .map(|_| [rng.random_range(0.5..6.0), rng.random_range(-2.8..2.8), rng.random_range(-1.2..1.2)])
        .collect();
    let points = (0..n)
        .map(|_| {
            if rng.random_bool(0.05) {
                return [rng.random_range(-2.0..9.0f32), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0), 0.5];
            }
            let b = blobs[rng.random_range(0..blobs.len())];
            [
                (b[0] + rng.random_range(-0.6..0.6)) as f32,
                (b[1] + rng.random_range(-0.6..0.6)) as f32,
                (b[2] + rng.random_range(-0.3..0.3)) as f32,
                rng.random_range(0.0..1.0f32),
            ]
        })
        .collect();
    PointCloud { points }
}

#[test]
fn voxelize_matches_hash_buckets() {
    let c = cfg();
    let extents = c.extents().unwrap();
    for seed in 0..20 {
        let cloud = random_cloud(&mut SplitMix64::new(seed), 3000);
        let grid = voxelize(&cloud, &c).unwrap();
        let oracle = voxel_buckets(&cloud.points, c.range_min, c.voxel_size, extents);
        let s0 = &grid.scales[0];
        assert_eq!(s0.indices, oracle.keys().copied().collect::<Vec<_>>());
        let kept: usize = oracle.values().map(|(n, _)| n).sum();
        assert_eq!(grid.dropped_points, cloud.len() - kept);
        for (row, (n, sums)) in oracle.values().enumerate() {
            for k in 0..4 {
                let want = sums[k] / *n as f64;
                assert!((s0.feature(row)[k] - want).abs() < 1e-9 * want.abs().max(1.0));
            }
        }
    }
}

#[test]
fn every_scale_matches_brute_force_dilation() {
    let c = cfg();
    for seed in 0..20 {
        let grid = build_multiscale(&random_cloud(&mut SplitMix64::new(100 + seed), 2000), &c).unwrap();
        for k in 0..3 {
            let fine: BTreeSet<[u32; 3]> = grid.scales[k].indices.iter().copied().collect();
            let coarse: BTreeSet<[u32; 3]> = grid.scales[k + 1].indices.iter().copied().collect();
            assert_eq!(coarse, dilate(&fine, grid.scales[k + 1].extents));
        }
    }
}

#[test]
fn coarse_features_average_contributors() {
    let c = cfg();
    let grid = voxelize(&random_cloud(&mut SplitMix64::new(3), 500), &c).unwrap();
    let fine = &grid.scales[0];
    let coarse = downsample_dilate(fine);
    for (row, target) in coarse.indices.iter().enumerate() {
        let mut sum = [0.0; 4];
        let mut n = 0;
        for (i, v) in fine.indices.iter().enumerate() {
            let hits = dilate(&BTreeSet::from([*v]), coarse.extents);
            if hits.contains(target) {
                n += 1;
                for k in 0..4 {
                    sum[k] += fine.feature(i)[k];
                }
            }
        }
        for k in 0..4 {
            assert!((coarse.feature(row)[k] - sum[k] / n as f64).abs() < 1e-9);
        }
    }
}

#[test]
fn centers_lie_inside_their_cells_and_the_range() {
    let c = cfg();
    let grid = build_multiscale(&random_cloud(&mut SplitMix64::new(8), 1500), &c).unwrap();
    for level in 0..4 {
        let size = c.scale_voxel_size(level);
        for (center, idx) in voxel_centers(&grid, level).unwrap().iter().zip(&grid.scales[level].indices) {
            for k in 0..3 {
                let lo = c.range_min[k] + idx[k] as f64 * size[k];
                assert!(center[k] > lo && center[k] < lo + size[k]);
                assert!(center[k] > c.range_min[k] && center[k] < c.range_max[k]);
            }
        }
    }
}

fn small_cloud() -> impl Strategy<Value = Vec<[f32; 4]>> {
    proptest::collection::vec((0.0f32..6.4, -3.2f32..3.2, -1.6f32..1.6, 0.0f32..1.0), 1..300)
        .prop_map(|v| v.into_iter().map(|(x, y, z, i)| [x, y, z, i]).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn coverage_and_growth(points in small_cloud()) {
        let grid = build_multiscale(&PointCloud { points }, &cfg()).unwrap();
        for k in 0..3 {
            let coarse: BTreeSet<[u32; 3]> = grid.scales[k + 1].indices.iter().copied().collect();
            let parents: BTreeSet<[u32; 3]> = grid.scales[k].indices.iter().map(|v| v.map(|x| x / 2)).collect();
            prop_assert!(parents.is_subset(&coarse));
            prop_assert!(coarse.len() >= parents.len());
        }
    }

    #[test]
    fn point_order_does_not_matter(points in small_cloud(), seed in any::<u64>()) {
        let mut shuffled = points.clone();
        shuffled.shuffle(&mut SplitMix64::new(seed));
        let a = build_multiscale(&PointCloud { points }, &cfg()).unwrap();
        let b = build_multiscale(&PointCloud { points: shuffled }, &cfg()).unwrap();
        for (sa, sb) in a.scales.iter().zip(&b.scales) {
            prop_assert_eq!(&sa.indices, &sb.indices);
            for (x, y) in sa.features.iter().zip(&sb.features) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn growth_is_strict_with_an_interior_voxel() {
    // A solid 4×4×4 block of occupied voxels has interior cells whose
    // neighbours spill into extra coarse cells.
    let c = cfg();
    let mut points = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            for l in 0..4 {
                points.push([1.1 + 0.2 * i as f32, 0.1 + 0.2 * j as f32, 0.05 + 0.1 * l as f32, 0.5]);
            }
        }
    }
    let grid = build_multiscale(&PointCloud { points }, &c).unwrap();
    let parents: BTreeSet<[u32; 3]> = grid.scales[0].indices.iter().map(|v| v.map(|x| x / 2)).collect();
    assert_eq!(grid.scales[0].len(), 64);
    assert!(grid.scales[1].len() > parents.len());
}
