use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{frechet_distance, stats_from_features, FeatureExtractor, GaussianStats};
use crate::datasets::io::load_tensor_png;
use crate::datasets::DatasetManifest;
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub fid: f64,
    pub n_real: usize,
    pub n_generated: usize,
    pub extractor_id: String,
    pub feature_dim: usize,
}

/// Features for each image, in input order.
pub fn extract_all<E: FeatureExtractor + ?Sized>(images: &[LatentTensor], extractor: &E) -> Result<Vec<Vec<f64>>> {
    images.par_iter().map(|img| extractor.extract(img)).collect()
}

pub fn compute_stats<E: FeatureExtractor + ?Sized>(images: &[LatentTensor], extractor: &E) -> Result<GaussianStats> {
    if images.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 images, got {}", images.len())));
    }
    stats_from_features(&extract_all(images, extractor)?)
}

pub fn fid_tensors<E: FeatureExtractor + ?Sized>(
    real: &[LatentTensor],
    generated: &[LatentTensor],
    extractor: &E,
) -> Result<FidReport> {
    let a = compute_stats(real, extractor)?;
    let b = compute_stats(generated, extractor)?;
    Ok(FidReport {
        fid: frechet_distance(&a, &b)?,
        n_real: real.len(),
        n_generated: generated.len(),
        extractor_id: extractor.id(),
        feature_dim: extractor.feature_dim(),
    })
}

/// Sorted `*.png` files directly inside `dir`.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    files.sort();
    Ok(files)
}

pub fn load_manifest_images(manifest: &DatasetManifest, manifest_dir: &Path, channels: usize) -> Result<Vec<LatentTensor>> {
    manifest
        .records
        .iter()
        .map(|r| load_tensor_png(&manifest.resolve(r, manifest_dir), channels))
        .collect()
}

/// FID between the images of a manifest and every PNG in `generated_dir`.
pub fn fid<E: FeatureExtractor + ?Sized>(
    real: &DatasetManifest,
    real_dir: &Path,
    generated_dir: &Path,
    channels: usize,
    extractor: &E,
) -> Result<FidReport> {
    if real.is_empty() {
        return Err(Error::Empty("real image set"));
    }
    let generated: Vec<LatentTensor> = png_files(generated_dir)?
        .iter()
        .map(|p| load_tensor_png(p, channels))
        .collect::<Result<_>>()?;
    if generated.is_empty() {
        return Err(Error::Empty("generated image set"));
    }
    let real = load_manifest_images(real, real_dir, channels)?;
    fid_tensors(&real, &generated, extractor)
}
