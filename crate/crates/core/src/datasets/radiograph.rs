//! Chest radiograph and histopathology patch preprocessing.

use image::{GrayImage, RgbImage};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::resample::{resize_bilinear, split_remainder, to_u8};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiographConfig {
    pub version: u32,
    pub output_size: usize,
}

impl Default for RadiographConfig {
    fn default() -> Self {
        Self {
            version: 1,
            output_size: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchConfig {
    pub version: u32,
    pub input_size: usize,
    pub output_size: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            version: 1,
            input_size: 96,
            output_size: 512,
        }
    }
}

fn gray_to_array(img: &GrayImage) -> Array2<f32> {
    let (w, h) = img.dimensions();
    Array2::from_shape_fn((h as usize, w as usize), |(y, x)| img.get_pixel(x as u32, y as u32)[0] as f32)
}

/// Bounding box `(y0, y1, x0, x1)` (exclusive ends) of non-zero pixels.
pub fn nonzero_bbox(img: &GrayImage) -> Option<(usize, usize, usize, usize)> {
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for (x, y, p) in img.enumerate_pixels() {
        if p[0] != 0 {
            let (x, y) = (x as usize, y as usize);
            bbox = Some(match bbox {
                None => (y, y + 1, x, x + 1),
                Some((y0, y1, x0, x1)) => (y0.min(y), y1.max(y + 1), x0.min(x), x1.max(x + 1)),
            });
        }
    }
    bbox
}

/// Output size of an aspect-preserving resize whose longest edge is `target`.
pub fn fit_longest_edge(height: usize, width: usize, target: usize) -> (usize, usize) {
    let longest = height.max(width) as f64;
    let scale = |n: usize| (((n as f64) * target as f64 / longest).round() as usize).clamp(1, target);
    (scale(height), scale(width))
}

/// Crop to the non-zero content, resize the longest edge to the output size,
/// and zero-pad symmetrically to a square.
pub fn chexpert_preprocess(img: &GrayImage, config: &RadiographConfig) -> Result<GrayImage> {
    let (y0, y1, x0, x1) = nonzero_bbox(img).ok_or(Error::Empty("radiograph has no non-zero pixels"))?;
    let full = gray_to_array(img);
    let crop = full.slice(ndarray::s![y0..y1, x0..x1]).to_owned();
    let n = config.output_size;
    let (h, w) = fit_longest_edge(crop.nrows(), crop.ncols(), n);
    let resized = resize_bilinear(&crop, h, w);
    let (top, _) = split_remainder(n - h);
    let (left, _) = split_remainder(n - w);
    let mut out = GrayImage::new(n as u32, n as u32);
    for y in 0..h {
        for x in 0..w {
            out.put_pixel((left + x) as u32, (top + y) as u32, image::Luma([to_u8(resized[[y, x]])]));
        }
    }
    Ok(out)
}

/// Bilinear upsample of a square patch, per channel.
pub fn pcam_preprocess(patch: &RgbImage, config: &PatchConfig) -> Result<RgbImage> {
    let (w, h) = patch.dimensions();
    let n_in = config.input_size as u32;
    if (w, h) != (n_in, n_in) {
        return Err(Error::invalid(format!(
            "patch must be {n_in}x{n_in}, got {w}x{h}"
        )));
    }
    let n = config.output_size;
    let channels: Vec<Array2<f32>> = (0..3)
        .map(|c| {
            let a = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
                patch.get_pixel(x as u32, y as u32)[c] as f32
            });
            resize_bilinear(&a, n, n)
        })
        .collect();
    Ok(RgbImage::from_fn(n as u32, n as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([0, 1, 2].map(|c| to_u8(channels[c][[y, x]])))
    }))
}
