use std::io::BufRead;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use medti_core::datasets::picai::{Segmentation, Volume};
use medti_core::datasets::{
    chexpert_preprocess, config_hash, pcam_preprocess, picai_extract, split_manifest, toy_generate, DatasetManifest,
    Label, SliceRecord, SplitCounts, VolumeCase,
};
use medti_core::toy::{pretrain_base, save_base};
use ndarray::Array3;
use ndarray_npy::read_npy;
use rayon::prelude::*;
use serde::Deserialize;

use crate::common::{parse_list, Ctx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dataset {
    Picai,
    Chexpert,
    Pcam,
}

/// Turn source cases into training PNGs plus a manifest.
#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long, value_enum)]
    pub dataset: Dataset,
    /// JSON Lines case list; relative paths resolve against the data root.
    #[arg(long)]
    pub cases: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-class train,val,test counts, e.g. `100,100,100`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Deserialize)]
struct VolumeRef {
    path: PathBuf,
    spacing: [f32; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PicaiCase {
    id: String,
    label: Label,
    t2w: Option<VolumeRef>,
    adc: Option<VolumeRef>,
    dwi: Option<VolumeRef>,
    prostate: Option<VolumeRef>,
    tumor: Option<VolumeRef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageCase {
    id: String,
    label: Label,
    path: PathBuf,
}

fn read_cases<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening case list {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    if out.is_empty() {
        bail!("case list {} is empty", path.display());
    }
    Ok(out)
}

fn read_volume(ctx: &Ctx, r: &Option<VolumeRef>) -> Result<Option<Volume>> {
    r.as_ref()
        .map(|r| {
            let path = ctx.input(&r.path);
            let data: Array3<f32> = read_npy(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(Volume { data, spacing: r.spacing })
        })
        .transpose()
}

fn read_mask(ctx: &Ctx, r: &Option<VolumeRef>) -> Result<Option<Segmentation>> {
    r.as_ref()
        .map(|r| {
            let path = ctx.input(&r.path);
            let data: Array3<u8> = read_npy(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(Segmentation { data, spacing: r.spacing })
        })
        .transpose()
}

fn record(id: &str, label: Label, dataset: &str, hash: &str) -> SliceRecord {
    SliceRecord {
        id: id.to_owned(),
        path: Path::new("images").join(format!("{id}.png")),
        label,
        split: None,
        dataset: dataset.to_owned(),
        config_hash: hash.to_owned(),
        synthetic: false,
    }
}

fn parse_counts(text: &str) -> Result<SplitCounts> {
    match parse_list::<usize>(text)?.as_slice() {
        &[train, val, test] => Ok(SplitCounts { train, val, test }),
        _ => bail!("--split expects three counts: train,val,test"),
    }
}

fn finish(manifest: DatasetManifest, split: Option<&str>, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let manifest = match split {
        Some(s) => split_manifest(&manifest, parse_counts(s)?, seed)?,
        None => manifest,
    };
    manifest.save(&out.join("manifest.jsonl"))?;
    Ok(manifest)
}

pub fn preprocess(args: PreprocessArgs, ctx: Ctx) -> Result<()> {
    let images = args.out.join("images");
    std::fs::create_dir_all(&images)?;
    let cases_path = ctx.input(&args.cases);
    let records: Vec<SliceRecord> = match args.dataset {
        Dataset::Picai => {
            let cfg = &ctx.config.picai;
            let hash = config_hash(cfg)?;
            let cases: Vec<PicaiCase> = read_cases(&cases_path)?;
            cases
                .par_iter()
                .map(|c| {
                    let case = VolumeCase {
                        id: c.id.clone(),
                        t2w: read_volume(&ctx, &c.t2w)?,
                        adc: read_volume(&ctx, &c.adc)?,
                        dwi: read_volume(&ctx, &c.dwi)?,
                        prostate: read_mask(&ctx, &c.prostate)?,
                        tumor: read_mask(&ctx, &c.tumor)?,
                        label: c.label,
                    };
                    let img = picai_extract(&case, cfg).with_context(|| format!("case {}", c.id))?;
                    img.save(images.join(format!("{}.png", c.id)))?;
                    Ok(record(&c.id, c.label, "picai", &hash))
                })
                .collect::<Result<_>>()?
        }
        Dataset::Chexpert => {
            let cfg = &ctx.config.radiograph;
            let hash = config_hash(cfg)?;
            let cases: Vec<ImageCase> = read_cases(&cases_path)?;
            cases
                .par_iter()
                .map(|c| {
                    let path = ctx.input(&c.path);
                    let src = image::open(&path).with_context(|| format!("reading {}", path.display()))?;
                    let img = chexpert_preprocess(&src.to_luma8(), cfg).with_context(|| format!("case {}", c.id))?;
                    img.save(images.join(format!("{}.png", c.id)))?;
                    Ok(record(&c.id, c.label, "chexpert", &hash))
                })
                .collect::<Result<_>>()?
        }
        Dataset::Pcam => {
            let cfg = &ctx.config.patch;
            let hash = config_hash(cfg)?;
            let cases: Vec<ImageCase> = read_cases(&cases_path)?;
            cases
                .par_iter()
                .map(|c| {
                    let path = ctx.input(&c.path);
                    let src = image::open(&path).with_context(|| format!("reading {}", path.display()))?;
                    let img = pcam_preprocess(&src.to_rgb8(), cfg).with_context(|| format!("case {}", c.id))?;
                    img.save(images.join(format!("{}.png", c.id)))?;
                    Ok(record(&c.id, c.label, "pcam", &hash))
                })
                .collect::<Result<_>>()?
        }
    };
    let manifest = finish(DatasetManifest::new(records), args.split.as_deref(), args.split_seed, &args.out)?;
    let hash = ctx.config.persist(&args.out)?;
    println!("{} records written to {} (config {hash})", manifest.len(), args.out.display());
    Ok(())
}

/// Render the synthetic organ dataset.
#[derive(Debug, Args)]
pub struct ToyDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Per-class train,val,test counts, e.g. `100,100,100`.
    #[arg(long)]
    pub split: Option<String>,
}

pub fn toy_data(args: ToyDataArgs, mut ctx: Ctx) -> Result<()> {
    if let Some(r) = args.resolution {
        ctx.config.toy.resolution = r;
    }
    let manifest = toy_generate(args.n_per_class, args.seed, &ctx.config.toy, &args.out)?;
    let manifest = finish(manifest, args.split.as_deref(), args.seed, &args.out)?;
    let hash = ctx.config.persist(&args.out)?;
    println!("{} toy records written to {} (config {hash})", manifest.len(), args.out.display());
    Ok(())
}

/// Pretrain the frozen toy text-to-image base model.
#[derive(Debug, Args)]
pub struct PretrainBaseArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn pretrain(args: PretrainBaseArgs, mut ctx: Ctx) -> Result<()> {
    if let Some(s) = args.steps {
        ctx.config.base.steps = s;
    }
    if let Some(s) = args.seed {
        ctx.config.base.seed = s;
    }
    let hash = ctx.config.persist(&args.out)?;
    let model = pretrain_base(&ctx.config.base, |step, ema| log::info!("pretrain step {step}: loss ema {ema:.4}"))?;
    let path = args.out.join("base.tibm");
    save_base(&model, &path)?;
    println!("base model written to {} (config {hash})", path.display());
    Ok(())
}
