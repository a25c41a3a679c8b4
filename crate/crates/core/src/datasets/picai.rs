//! Prostate MRI slice extraction: resample, centre-crop, pick one axial slice,
//! upsample and pack T2W/ADC/DWI into RGB.

use image::RgbImage;
use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::resample::{
    center_crop_pad, percentile_normalize, resize_bilinear, resize_linear3, resize_nearest3, to_u8, voxel_count,
};
use super::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    T2W,
    ADC,
    DWI,
}

/// Intensity volume in `(depth, height, width)` order with spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub data: Array3<f32>,
    pub spacing: [f32; 3],
}

/// Binary segmentation volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub data: Array3<u8>,
    pub spacing: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeCase {
    pub id: String,
    pub t2w: Option<Volume>,
    pub adc: Option<Volume>,
    pub dwi: Option<Volume>,
    pub prostate: Option<Segmentation>,
    pub tumor: Option<Segmentation>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicaiConfig {
    pub version: u32,
    pub target_spacing: [f32; 3],
    pub crop_mm: [f32; 3],
    pub output_size: usize,
    pub clip_percentiles: [f64; 2],
}

impl Default for PicaiConfig {
    fn default() -> Self {
        Self {
            version: 1,
            target_spacing: [3.0, 0.5, 0.5],
            crop_mm: [90.0, 150.0, 150.0],
            output_size: 512,
            clip_percentiles: [0.5, 99.5],
        }
    }
}

impl PicaiConfig {
    /// Crop size in target voxels.
    pub fn crop_voxels(&self) -> [usize; 3] {
        std::array::from_fn(|a| (self.crop_mm[a] / self.target_spacing[a]).round() as usize)
    }
}

fn check_spacing(spacing: [f32; 3]) -> Result<()> {
    if spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("voxel spacing must be positive, got {spacing:?}")))
    }
}

fn target_shape(shape: &[usize], spacing: [f32; 3], target: [f32; 3]) -> [usize; 3] {
    std::array::from_fn(|a| voxel_count(shape[a], spacing[a], target[a]))
}

/// Resamples to `config.target_spacing` then centre-crops/pads to the crop box.
pub fn resample_and_crop(volume: &Volume, config: &PicaiConfig) -> Result<Array3<f32>> {
    check_spacing(volume.spacing)?;
    let shape = target_shape(volume.data.shape(), volume.spacing, config.target_spacing);
    let r = resize_linear3(&volume.data, shape);
    Ok(center_crop_pad(&r, config.crop_voxels()))
}

pub fn resample_and_crop_mask(mask: &Segmentation, config: &PicaiConfig) -> Result<Array3<u8>> {
    check_spacing(mask.spacing)?;
    let shape = target_shape(mask.data.shape(), mask.spacing, config.target_spacing);
    let r = resize_nearest3(&mask.data, shape);
    Ok(center_crop_pad(&r, config.crop_voxels()))
}

fn slice_areas(mask: &Array3<u8>) -> Vec<usize> {
    mask.axis_iter(Axis(0)).map(|s| s.iter().filter(|&&v| v != 0).count()).collect()
}

/// Median index of slices with a non-empty mask, ties broken downward.
pub fn median_mask_slice(mask: &Array3<u8>) -> Result<usize> {
    let idx: Vec<usize> = slice_areas(mask)
        .into_iter()
        .enumerate()
        .filter(|&(_, a)| a > 0)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::Empty("prostate segmentation"));
    }
    Ok(idx[(idx.len() - 1) / 2])
}

/// Slice with the largest mask area; the first one wins ties.
pub fn max_area_slice(mask: &Array3<u8>) -> Result<usize> {
    let areas = slice_areas(mask);
    let best = areas.iter().copied().max().unwrap_or(0);
    if best == 0 {
        return Err(Error::Empty("tumor segmentation"));
    }
    Ok(areas.iter().position(|&a| a == best).expect("max exists"))
}

fn channel(slice: &Array2<f32>, config: &PicaiConfig) -> Result<Vec<u8>> {
    let up = resize_bilinear(slice, config.output_size, config.output_size);
    let flat: Vec<f32> = up.iter().copied().collect();
    let [lo, hi] = config.clip_percentiles;
    Ok(percentile_normalize(&flat, lo, hi)?.into_iter().map(to_u8).collect())
}

/// Full extraction for one case.
pub fn picai_extract(case: &VolumeCase, config: &PicaiConfig) -> Result<RgbImage> {
    let missing = |what: &str| Error::invalid(format!("case `{}` is missing {what}", case.id));
    let t2w = case.t2w.as_ref().ok_or_else(|| missing("T2W"))?;
    let adc = case.adc.as_ref().ok_or_else(|| missing("ADC"))?;
    let dwi = case.dwi.as_ref().ok_or_else(|| missing("DWI"))?;
    let index = match case.label {
        Label::Negative => {
            let m = case.prostate.as_ref().ok_or_else(|| missing("a prostate segmentation"))?;
            median_mask_slice(&resample_and_crop_mask(m, config)?)?
        }
        Label::Positive => {
            let m = case.tumor.as_ref().ok_or_else(|| missing("a tumor segmentation"))?;
            max_area_slice(&resample_and_crop_mask(m, config)?)?
        }
    };
    let mut channels = Vec::with_capacity(3);
    for v in [t2w, adc, dwi] {
        let vol = resample_and_crop(v, config)?;
        channels.push(channel(&vol.slice(s![index, .., ..]).to_owned(), config)?);
    }
    let n = config.output_size as u32;
    Ok(RgbImage::from_fn(n, n, |x, y| {
        let i = (y * n + x) as usize;
        image::Rgb([channels[0][i], channels[1][i], channels[2][i]])
    }))
}
