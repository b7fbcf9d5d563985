//! Image feature pyramid and the bilinear grid sampler.
//!
//! Level 0 has one cell per pixel with six channels:
//! `[R, G, B, gray, |∂gray/∂u|, |∂gray/∂v|]`, all in `[0, 1]`. Coarser levels
//! are 2×2 average pools. Cell `(i, j)` of a level with stride `s` is centered
//! at pixel `((j + 0.5)·s, (i + 0.5)·s)`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kitti_io::RgbImage;

pub const PYRAMID_LEVELS: usize = 5;
pub const IMAGE_CHANNELS: usize = 6;

/// Sobel kernels on a `[0, 1]` image respond with at most 4 in magnitude.
const SOBEL_MAX: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stride: usize,
    /// `height × width × channels`, row-major, channels innermost.
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize, stride: usize) -> Self {
        Self {
            height,
            width,
            channels,
            stride,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.width + j) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = (i * self.width + j) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Pixel coordinates of the center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((j as f64 + 0.5) * s, (i as f64 + 0.5) * s)
    }

    pub fn channel_means(&self) -> Vec<f64> {
        let n = (self.height * self.width) as f64;
        let mut m = vec![0.0; self.channels];
        for cell in self.data.chunks_exact(self.channels) {
            for (acc, x) in m.iter_mut().zip(cell) {
                *acc += x;
            }
        }
        m.iter_mut().for_each(|x| *x /= n);
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    /// Finest first.
    pub levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn finest(&self) -> &FeatureMap {
        &self.levels[0]
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels
    }

    /// Input image size `(width, height)` implied by the finest level.
    pub fn image_size(&self) -> (usize, usize) {
        let f = self.finest();
        (f.width * f.stride, f.height * f.stride)
    }

    /// Stack an externally computed finest map with pooled coarser levels.
    pub fn from_finest(finest: FeatureMap) -> Self {
        let mut levels = vec![finest];
        while levels.len() < PYRAMID_LEVELS {
            let next = avg_pool_2x2(levels.last().expect("non-empty"));
            levels.push(next);
        }
        Self { levels }
    }
}

fn gray(rgb: [u8; 3]) -> f64 {
    (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64) / 255.0
}

/// Build the 5-level procedural pyramid from an RGB image.
pub fn build_pyramid(image: &RgbImage) -> Result<FeaturePyramid> {
    if image.width < 2 || image.height < 2 {
        return Err(Error::contract("image must be at least 2×2"));
    }
    let (w, h) = (image.width, image.height);
    let g: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| gray(image.get(x, y)))
        .collect();
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        g[yc * w + xc]
    };
    let mut level0 = FeatureMap::zeros(h, w, IMAGE_CHANNELS, 1);
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let gx = (at(xi + 1, yi - 1) + 2.0 * at(xi + 1, yi) + at(xi + 1, yi + 1))
                - (at(xi - 1, yi - 1) + 2.0 * at(xi - 1, yi) + at(xi - 1, yi + 1));
            let gy = (at(xi - 1, yi + 1) + 2.0 * at(xi, yi + 1) + at(xi + 1, yi + 1))
                - (at(xi - 1, yi - 1) + 2.0 * at(xi, yi - 1) + at(xi + 1, yi - 1));
            let rgb = image.get(x, y);
            let cell = level0.cell_mut(y, x);
            cell[0] = rgb[0] as f64 / 255.0;
            cell[1] = rgb[1] as f64 / 255.0;
            cell[2] = rgb[2] as f64 / 255.0;
            cell[3] = g[y * w + x];
            cell[4] = gx.abs() / SOBEL_MAX;
            cell[5] = gy.abs() / SOBEL_MAX;
        }
    }
    Ok(FeaturePyramid::from_finest(level0))
}

/// 2×2 average pooling with ceiling output size; edge windows average the
/// cells that exist.
pub fn avg_pool_2x2(fine: &FeatureMap) -> FeatureMap {
    let h = fine.height.div_ceil(2);
    let w = fine.width.div_ceil(2);
    let mut out = FeatureMap::zeros(h, w, fine.channels, fine.stride * 2);
    for i in 0..h {
        for j in 0..w {
            let mut n = 0.0;
            let mut acc = vec![0.0; fine.channels];
            for di in 0..2 {
                for dj in 0..2 {
                    let (fi, fj) = (2 * i + di, 2 * j + dj);
                    if fi < fine.height && fj < fine.width {
                        for (a, x) in acc.iter_mut().zip(fine.cell(fi, fj)) {
                            *a += x;
                        }
                        n += 1.0;
                    }
                }
            }
            for (o, a) in out.cell_mut(i, j).iter_mut().zip(acc) {
                *o = a / n;
            }
        }
    }
    out
}

/// Bilinear sample at image pixel `(u, v)`; coordinates are clamped to the
/// outermost cell centers, so the function is total.
pub fn bilinear_sample(map: &FeatureMap, u: f64, v: f64) -> Vec<f64> {
    let mut out = vec![0.0; map.channels];
    bilinear_sample_into(map, u, v, &mut out);
    out
}

pub fn bilinear_sample_into(map: &FeatureMap, u: f64, v: f64, out: &mut [f64]) {
    let s = map.stride as f64;
    let x = (u / s - 0.5).clamp(0.0, (map.width - 1) as f64);
    let y = (v / s - 0.5).clamp(0.0, (map.height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(map.width - 1);
    let y1 = (y0 + 1).min(map.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let (c00, c01, c10, c11) = (map.cell(y0, x0), map.cell(y0, x1), map.cell(y1, x0), map.cell(y1, x1));
    for c in 0..map.channels {
        let top = c00[c] * (1.0 - fx) + c01[c] * fx;
        let bottom = c10[c] * (1.0 - fx) + c11[c] * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
}

// ---------------------------------------------------------------------------
// Feature-tensor files: 16-byte header (H, W, C, level as u32 LE), then
// H·W·C little-endian f32 values, channels innermost.

pub fn encode_feature_tensor(map: &FeatureMap) -> Vec<u8> {
    let level = map.stride.trailing_zeros();
    let mut out = Vec::with_capacity(16 + map.data.len() * 4);
    for v in [map.height as u32, map.width as u32, map.channels as u32, level] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_tensor(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 16 {
        return Err(Error::format("feature tensor", None, "missing 16-byte header"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().expect("4 bytes"));
    let (h, w, c, level) = (word(0) as usize, word(1) as usize, word(2) as usize, word(3));
    if h == 0 || w == 0 || c == 0 || level > 16 {
        return Err(Error::format("feature tensor", None, "invalid header"));
    }
    let n = h * w * c;
    if bytes.len() != 16 + n * 4 {
        return Err(Error::format(
            "feature tensor",
            None,
            format!("expected {} payload bytes, found {}", n * 4, bytes.len() - 16),
        ));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok(FeatureMap {
        height: h,
        width: w,
        channels: c,
        stride: 1 << level,
        data,
    })
}

pub fn read_feature_tensor(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_tensor(&bytes)
}
