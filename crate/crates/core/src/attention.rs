//! Pixel-wise attention maps and attention-guided image enhancement.
//!
//! A feature block `[C, H, W]` is reduced to a single spatial map by weighting
//! each channel with its own global average and summing over channels:
//!
//!   A[h][w] = sum_c gap(F)[c] * F[c][h][w]
//!
//! High values mark the positions the network's channels respond to most. The
//! map is min-max normalized at feature resolution, bilinearly upsampled to
//! image resolution, and added onto the image scaled by a small weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// A `W x H` importance grid. Stored row-major as `values[h * width + w]`;
/// the logical `(w, h)` accessor matches the tensor layout notes. `scale`
/// records which branch produced the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub scale: usize,
}

impl AttentionMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, scale: usize) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::ShapeMismatch {
                op: "AttentionMap::new",
                expected: format!("{width}x{height} = {} values", width * height),
                got: format!("{} values", values.len()),
            });
        }
        Ok(AttentionMap {
            width,
            height,
            values,
            scale,
        })
    }

    pub fn at(&self, w: usize, h: usize) -> f64 {
        self.values[h * self.width + w]
    }
}

/// Raw (unnormalized) attention map of a feature block.
pub fn attention_map(feature: &Tensor, scale: usize) -> Result<AttentionMap> {
    let gap = ops::global_average_pool(feature)?;
    let (c, h, w) = (feature.shape()[0], feature.shape()[1], feature.shape()[2]);
    let f = feature.data();
    let g = gap.data();
    let mut values = vec![0.0; h * w];
    for ci in 0..c {
        let gc = g[ci];
        let plane = &f[ci * h * w..(ci + 1) * h * w];
        for (a, &v) in values.iter_mut().zip(plane) {
            *a += gc * v;
        }
    }
    AttentionMap::new(w, h, values, scale)
}

/// Min-max rescale to [0, 1]. A constant map normalizes to all zeros so a
/// non-informative map cannot perturb the image.
pub fn normalize_attention(map: &AttentionMap) -> AttentionMap {
    let min = map.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let values = if span == 0.0 {
        vec![0.0; map.values.len()]
    } else {
        map.values.iter().map(|&v| (v - min) / span).collect()
    };
    AttentionMap {
        width: map.width,
        height: map.height,
        values,
        scale: map.scale,
    }
}

/// Bilinear upsampling with aligned corners: source position for output index
/// i is `i * (src - 1) / (dst - 1)`, so the four map corners land exactly on
/// the image corners. Identity when extents already match.
pub fn upsample_attention(
    map: &AttentionMap,
    target_w: usize,
    target_h: usize,
) -> Result<AttentionMap> {
    if target_w < map.width || target_h < map.height {
        return Err(Error::invalid(format!(
            "upsample_attention: target {target_w}x{target_h} smaller than source {}x{}",
            map.width, map.height
        )));
    }
    if target_w == map.width && target_h == map.height {
        return Ok(map.clone());
    }

    let src_pos = |i: usize, dst: usize, src: usize| -> f64 {
        if dst <= 1 || src <= 1 {
            0.0
        } else {
            i as f64 * (src - 1) as f64 / (dst - 1) as f64
        }
    };
    let mut values = vec![0.0; target_w * target_h];
    for oy in 0..target_h {
        let sy = src_pos(oy, target_h, map.height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(map.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..target_w {
            let sx = src_pos(ox, target_w, map.width);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(map.width - 1);
            let fx = sx - x0 as f64;
            let top = map.at(x0, y0) * (1.0 - fx) + map.at(x1, y0) * fx;
            let bot = map.at(x0, y1) * (1.0 - fx) + map.at(x1, y1) * fx;
            values[oy * target_w + ox] = top * (1.0 - fy) + bot * fy;
        }
    }
    AttentionMap::new(target_w, target_h, values, map.scale)
}

/// Weighted superposition `X' = X + lambda * A`, the map broadcast across all
/// image channels. No clamping: with a normalized map, values exceed 1 by at
/// most `lambda`.
pub fn enhance_image(image: &Tensor, map: &AttentionMap, lambda: f64) -> Result<Tensor> {
    if image.shape().len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "enhance_image",
            expected: "[C, H, W] image".into(),
            got: format!("{:?}", image.shape()),
        });
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if map.width != w || map.height != h {
        return Err(Error::ShapeMismatch {
            op: "enhance_image",
            expected: format!("attention map {w}x{h}"),
            got: format!("{}x{}", map.width, map.height),
        });
    }
    if lambda == 0.0 {
        return Ok(image.clone());
    }
    let mut data = image.data().to_vec();
    for ci in 0..c {
        let plane = &mut data[ci * h * w..(ci + 1) * h * w];
        for (p, &a) in plane.iter_mut().zip(&map.values) {
            *p += lambda * a;
        }
    }
    Tensor::new(image.shape(), data)
}

/// Enhance a batch, each image with its own map.
pub fn enhance_batch(images: &[Tensor], maps: &[AttentionMap], lambda: f64) -> Result<Vec<Tensor>> {
    if images.len() != maps.len() {
        return Err(Error::ShapeMismatch {
            op: "enhance_batch",
            expected: format!("{} maps", images.len()),
            got: format!("{}", maps.len()),
        });
    }
    images
        .iter()
        .zip(maps)
        .map(|(img, map)| enhance_image(img, map, lambda))
        .collect()
}

/// 8-bit PGM (P5) bytes for a normalized map: 0.0 -> 0, 1.0 -> 255, linear in
/// between, rounded to nearest and clamped.
pub fn attention_to_pgm(map: &AttentionMap) -> Vec<u8> {
    let pixels: Vec<u8> = map
        .values
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    crate::pgm::encode_pgm(map.width, map.height, &pixels)
}
