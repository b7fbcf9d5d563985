//! Multi-scale voxel/image fusion.
//!
//! For every occupied voxel of a scale: take its center, project it into the
//! image, bilinearly sample the finest feature map there, concatenate with
//! the voxel feature and map back to the voxel width with an MLP. Voxels that
//! project behind the camera or outside the image get an all-zero image
//! feature and are flagged invalid.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::feature_maps::{bilinear_sample_into, FeaturePyramid};
use crate::geometry::lidar_to_image;
use crate::kitti_io::CalibrationSet;
use crate::sparse_voxel::{voxel_center, SparseVoxelGrid};
use crate::tinynet::{Activation, DenseNet};

/// Default hidden width of the fusion MLP.
pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedScale {
    pub level: usize,
    pub channels: usize,
    pub image_channels: usize,
    /// `N × channels`.
    pub fused: Vec<f64>,
    /// `N × image_channels`; zero rows where `valid` is false.
    pub image_features: Vec<f64>,
    pub valid: Vec<bool>,
    /// Pixel position sampled for each valid voxel.
    pub positions: Vec<Option<(f64, f64)>>,
}

impl FusedScale {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn fused_row(&self, i: usize) -> &[f64] {
        &self.fused[i * self.channels..(i + 1) * self.channels]
    }

    pub fn image_row(&self, i: usize) -> &[f64] {
        &self.image_features[i * self.image_channels..(i + 1) * self.image_channels]
    }
}

/// Fusion networks: one shared across scales or one per scale.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionNets {
    Shared(DenseNet),
    PerScale(Vec<DenseNet>),
}

impl FusionNets {
    /// `(C_voxel + C_image) → hidden → C_voxel`, identity output.
    pub fn shared(voxel_channels: usize, image_channels: usize, hidden: usize, seed: u64) -> Self {
        FusionNets::Shared(DenseNet::mlp(
            &[voxel_channels + image_channels, hidden, voxel_channels],
            Activation::Identity,
            seed,
        ))
    }

    pub fn for_scale(&self, level: usize) -> Result<&DenseNet> {
        match self {
            FusionNets::Shared(net) => Ok(net),
            FusionNets::PerScale(nets) => nets
                .get(level)
                .ok_or_else(|| Error::contract(format!("no fusion net for scale {level}"))),
        }
    }
}

/// Fuse one scale of the grid with the finest level of the pyramid.
/// Fused features, sampled image features and sample position of one voxel.
type FusedRow = (Vec<f64>, Vec<f64>, Option<(f64, f64)>);

pub fn fuse_scale(
    grid: &SparseVoxelGrid,
    level: usize,
    pyramid: &FeaturePyramid,
    calib: &CalibrationSet,
    net: &DenseNet,
    exec: Execution,
) -> Result<FusedScale> {
    let scale = grid
        .scale(level)
        .ok_or_else(|| Error::contract(format!("scale {level} not built")))?;
    let c_vox = scale.channels;
    let c_img = pyramid.channels();
    if net.input_dim() != c_vox + c_img || net.output_dim() != c_vox {
        return Err(Error::contract(format!(
            "fusion net is {}→{}, scale {level} needs {}→{}",
            net.input_dim(),
            net.output_dim(),
            c_vox + c_img,
            c_vox
        )));
    }
    let finest = pyramid.finest();
    let (width, height) = pyramid.image_size();

    let rows: Vec<FusedRow> = exec.map_range(scale.len(), |i| {
        let center = voxel_center(&grid.config, level, scale.indices[i]);
        let mut img = vec![0.0; c_img];
        let pos = lidar_to_image(center, calib)
            .filter(|p| p.u >= 0.0 && p.v >= 0.0 && p.u < width as f64 && p.v < height as f64)
            .map(|p| (p.u, p.v));
        if let Some((u, v)) = pos {
            bilinear_sample_into(finest, u, v, &mut img);
        }
        let mut input = Vec::with_capacity(c_vox + c_img);
        input.extend_from_slice(scale.feature(i));
        input.extend_from_slice(&img);
        let fused = net.forward(&input).expect("dimensions checked above");
        (fused, img, pos)
    });

    let mut out = FusedScale {
        level,
        channels: c_vox,
        image_channels: c_img,
        fused: Vec::with_capacity(scale.len() * c_vox),
        image_features: Vec::with_capacity(scale.len() * c_img),
        valid: Vec::with_capacity(scale.len()),
        positions: Vec::with_capacity(scale.len()),
    };
    for (fused, img, pos) in rows {
        out.fused.extend(fused);
        out.image_features.extend(img);
        out.valid.push(pos.is_some());
        out.positions.push(pos);
    }
    Ok(out)
}

/// Fuse every built scale.
pub fn fuse_all(
    grid: &SparseVoxelGrid,
    pyramid: &FeaturePyramid,
    calib: &CalibrationSet,
    nets: &FusionNets,
    exec: Execution,
) -> Result<Vec<FusedScale>> {
    (0..grid.scales.len())
        .map(|k| fuse_scale(grid, k, pyramid, calib, nets.for_scale(k)?, exec))
        .collect()
}

/// Number of distinct sampled pixel positions across the given scales.
///
/// Positions are compared bit-exactly.
pub fn distinct_sample_positions<'a>(scales: impl IntoIterator<Item = &'a FusedScale>) -> usize {
    let mut set = std::collections::HashSet::new();
    for s in scales {
        for (u, v) in s.positions.iter().flatten() {
            set.insert((u.to_bits(), v.to_bits()));
        }
    }
    set.len()
}
