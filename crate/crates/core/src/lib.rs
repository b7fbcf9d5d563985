//! Building blocks for LiDAR-camera fusion 3D object detection.
//!
//! The crate covers the geometric and evaluative core of a two-modality
//! detector at desk scale:
//!
//! - [`kitti_io`]: KITTI-format scenes, calibration, labels and the GT-sampling database.
//! - [`geometry`]: oriented boxes, LiDAR-to-image projection and the IoU kernels.
//! - [`sparse_voxel`]: voxelization and the occupancy dilation of strided sparse convolutions.
//! - [`feature_maps`]: a procedural image feature pyramid and the bilinear grid sampler.
//! - [`tinynet`]: a small dense network with exact backprop and SGD.
//! - [`mvi`]: multi-scale voxel/image feature fusion.
//! - [`fcr`]: score rectification of detection candidates from pooled RoI features.
//! - [`ogs`]: occlusion-aware GT sampling and the greedy cross-modal baseline.
//! - [`eval`]: KITTI-protocol matching, 11/40-point AP, RoI recall and 3D NMS.
//!
//! Data-parallel loops go through [`exec::Execution`]; with the `parallel`
//! feature (default) they run on rayon, otherwise sequentially.


pub mod error;
pub mod eval;
pub mod exec;
pub mod fcr;
pub mod feature_maps;
pub mod geometry;
pub mod kitti_io;
pub mod mvi;
pub mod ogs;
pub mod rng;
pub mod sparse_voxel;
pub mod synth;
pub mod tinynet;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{Box2D, Box3D};
