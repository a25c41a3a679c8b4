use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use medti_core::classifier::LabeledImage;
use medti_core::datasets::io::{grid, load_tensor_png, save_tensor_png};
use medti_core::datasets::{DatasetManifest, Label, Split};
use medti_core::diffusion::{sample, GuidanceSpec, NoiseSchedule};
use medti_core::evaluation::RandomConvExtractor;
use medti_core::textual_inversion::{load_embedding, ConceptEmbedding, TextConditioner, Token};
use medti_core::toy::{load_base, BaseModel};
use medti_core::LatentTensor;
use rayon::prelude::*;

use crate::config::RunConfig;

/// Resolved configuration plus the data root for relative input paths.
pub struct Ctx {
    pub config: RunConfig,
    pub data_root: Option<PathBuf>,
}

impl Ctx {
    /// Relative input paths are taken from the data root when one is set.
    pub fn input(&self, path: &Path) -> PathBuf {
        match &self.data_root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn base(&self, path: &Path) -> Result<BaseModel> {
        let path = self.input(path);
        load_base(&path).with_context(|| format!("loading base model {}", path.display()))
    }

    pub fn embedding(&self, path: &Path) -> Result<ConceptEmbedding> {
        let path = self.input(path);
        load_embedding(&path).with_context(|| format!("loading embedding {}", path.display()))
    }

    pub fn manifest(&self, path: &Path) -> Result<(DatasetManifest, PathBuf)> {
        let path = self.input(path);
        let manifest = DatasetManifest::load(&path).with_context(|| format!("loading manifest {}", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate(&dir)?;
        Ok((manifest, dir))
    }

    pub fn extractor(&self, channels: usize) -> Result<RandomConvExtractor> {
        match self.config.fid.extractor.as_str() {
            "toy" => Ok(RandomConvExtractor::new(channels, self.config.fid.extractor_seed)),
            other => bail!("unknown feature extractor `{other}` (available: toy)"),
        }
    }
}

pub fn parse_label(text: &str) -> Result<Label> {
    match text {
        "negative" | "healthy" => Ok(Label::Negative),
        "positive" | "diseased" => Ok(Label::Positive),
        other => bail!("unknown label `{other}` (expected negative or positive)"),
    }
}

pub fn parse_split(text: &str) -> Result<Split> {
    match text {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => bail!("unknown split `{other}` (expected train, val or test)"),
    }
}

pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("bad list item `{s}`: {e}")))
        .collect()
}

/// Manifest records optionally narrowed to one label and one split.
pub fn select(manifest: &DatasetManifest, label: Option<Label>, split: Option<Split>) -> DatasetManifest {
    manifest.filter(|r| label.is_none_or(|l| r.label == l) && split.is_none_or(|s| r.split == Some(s)))
}

pub fn load_labeled(manifest: &DatasetManifest, dir: &Path, channels: usize) -> Result<Vec<LabeledImage>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let path = manifest.resolve(r, dir);
            Ok(LabeledImage {
                id: r.id.clone(),
                image: load_tensor_png(&path, channels).with_context(|| format!("loading {}", path.display()))?,
                label: r.label,
                synthetic: r.synthetic,
            })
        })
        .collect()
}

pub fn concept_guidance(base: &BaseModel, embedding: &ConceptEmbedding, cfg_scale: f32) -> Result<GuidanceSpec> {
    let context = base.conditioner.encode(&[Token::Concept(embedding)])?;
    Ok(GuidanceSpec::single(context, cfg_scale))
}

/// One sample per seed, in seed order.
pub fn sample_seeds(base: &BaseModel, schedule: &NoiseSchedule, guidance: &GuidanceSpec, seeds: &[u64]) -> Result<Vec<LatentTensor>> {
    seeds
        .par_iter()
        .map(|&s| Ok(sample(&base.denoiser, schedule, guidance, s, base.shape())?))
        .collect()
}

/// Writes each image as `<dir>/<name>` and returns the relative paths.
pub fn save_all(dir: &Path, items: &[(String, LatentTensor)]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    items
        .iter()
        .map(|(name, img)| {
            let path = dir.join(name);
            save_tensor_png(img, &path)?;
            Ok(path)
        })
        .collect()
}

pub fn save_grid(path: &Path, tiles: &[LatentTensor], cols: usize) -> Result<()> {
    save_tensor_png(&grid(tiles, cols)?, path)?;
    Ok(())
}

pub fn seeds(start: u64, n: usize) -> Vec<u64> {
    (start..start + n as u64).collect()
}
