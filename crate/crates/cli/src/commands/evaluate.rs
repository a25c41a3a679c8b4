use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use medti_core::datasets::io::load_tensor_png;
use medti_core::datasets::{DatasetManifest, Label, Split};
use medti_core::evaluation::{
    compute_stats, frechet_distance, load_manifest_images, load_stats, png_files, save_stats, CachedStats,
    FeatureExtractor, FidReport, GaussianStats,
};
use medti_core::diffusion::ScheduleParams;
use medti_core::textual_inversion::ConceptEmbedding;
use medti_core::toy::BaseModel;
use medti_core::LatentTensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::embed::{subset, train_and_save};
use crate::common::{concept_guidance, parse_label, parse_list, parse_split, sample_seeds, save_all, save_grid, seeds, select, Ctx};
use crate::config::GridCell;

/// Real-set statistics, read from or written to `cache` when given.
fn real_stats<E: FeatureExtractor>(
    manifest: &DatasetManifest,
    dir: &Path,
    channels: usize,
    extractor: &E,
    cache: Option<&Path>,
) -> Result<GaussianStats> {
    let input_hash = manifest.hash()?;
    let id = extractor.id();
    let cached = cache.map(|c| c.join(format!("{id}-{input_hash}.gstc")));
    if let Some(path) = &cached {
        if path.exists() {
            let c = load_stats(path)?;
            if c.extractor_id == id && c.input_hash == input_hash {
                log::info!("using cached statistics {}", path.display());
                return Ok(c.stats);
            }
        }
    }
    let stats = compute_stats(&load_manifest_images(manifest, dir, channels)?, extractor)?;
    if let Some(path) = &cached {
        std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
        save_stats(
            &CachedStats {
                extractor_id: id,
                input_hash,
                stats: stats.clone(),
            },
            path,
        )?;
    }
    Ok(stats)
}

fn fid_against<E: FeatureExtractor>(real: &GaussianStats, n_real: usize, generated: &[LatentTensor], extractor: &E) -> Result<FidReport> {
    let g = compute_stats(generated, extractor)?;
    Ok(FidReport {
        fid: frechet_distance(real, &g)?,
        n_real,
        n_generated: generated.len(),
        extractor_id: extractor.id(),
        feature_dim: extractor.feature_dim(),
    })
}

/// Which real images to compare against.
#[derive(Debug, Args)]
pub struct RealSet {
    /// Manifest of real images.
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long = "real-label", value_parser = parse_label)]
    pub real_label: Option<Label>,
    #[arg(long = "real-split", value_parser = parse_split)]
    pub real_split: Option<Split>,
    /// Directory for cached real-set statistics.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

/// FID between a manifest and a directory of generated PNGs.
#[derive(Debug, Args)]
pub struct FidArgs {
    #[command(flatten)]
    pub real: RealSet,
    /// Directory of generated PNGs; an `images/` subdirectory is used if present.
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub extractor: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn fid(args: FidArgs, mut ctx: Ctx) -> Result<()> {
    if let Some(e) = &args.extractor {
        ctx.config.fid.extractor = e.clone();
    }
    let extractor = ctx.extractor(args.channels)?;
    let (manifest, dir) = ctx.manifest(&args.real.real)?;
    let manifest = select(&manifest, args.real.real_label, args.real.real_split);
    let stats = real_stats(&manifest, &dir, args.channels, &extractor, args.real.cache.as_deref())?;
    let gen_dir = ctx.input(&args.generated);
    let gen_dir = if gen_dir.join("images").is_dir() { gen_dir.join("images") } else { gen_dir };
    let generated = png_files(&gen_dir)?
        .iter()
        .map(|p| load_tensor_png(p, args.channels).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let report = fid_against(&stats, manifest.len(), &generated, &extractor)?;
    let hash = ctx.config.persist(&args.out)?;
    std::fs::write(args.out.join("fid.json"), serde_json::to_string_pretty(&report)?)?;
    println!("FID {:.4} ({} real, {} generated, {}) (config {hash})", report.fid, report.n_real, report.n_generated, report.extractor_id);
    Ok(())
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: Vec<String>,
    pub fid: f64,
    pub dir: PathBuf,
}

/// A sweep's rows plus the headers for its markdown rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| {} | FID |", self.headers.join(" | "));
        let _ = writeln!(s, "|{}---:|", "---:|".repeat(self.headers.len()));
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {:.3} |", r.setting.join(" | "), r.fid);
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(format!("{}.json", self.name)), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join(format!("{}.md", self.name)), self.markdown())?;
        Ok(())
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        bail!("sweep workers must be at least 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

pub fn parse_grid(text: &str) -> Result<Vec<GridCell>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|cell| {
            let (steps, cfg) = cell
                .trim()
                .split_once('x')
                .with_context(|| format!("grid cell `{cell}` is not STEPSxCFG"))?;
            Ok(GridCell {
                steps: steps.parse().with_context(|| format!("bad steps in `{cell}`"))?,
                cfg_scale: cfg.parse().with_context(|| format!("bad cfg scale in `{cell}`"))?,
            })
        })
        .collect()
}

/// Samples `n` images of `embedding` into `dir/images` and returns them.
fn sample_cell(base: &BaseModel, embedding: &ConceptEmbedding, params: ScheduleParams, cell: GridCell, seed: u64, n: usize, dir: &Path) -> Result<Vec<LatentTensor>> {
    let schedule = params.build(cell.steps)?;
    let guidance = concept_guidance(base, embedding, cell.cfg_scale)?;
    let seeds = seeds(seed, n);
    let images = sample_seeds(base, &schedule, &guidance, &seeds)?;
    let named: Vec<_> = seeds.iter().zip(&images).map(|(s, i)| (format!("s{s}.png"), i.clone())).collect();
    save_all(&dir.join("images"), &named)?;
    Ok(images)
}

/// FID over a grid of sampling steps and guidance scales.
#[derive(Debug, Args)]
pub struct SweepInferenceArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub embedding: PathBuf,
    #[command(flatten)]
    pub real: RealSet,
    /// Cells as `STEPSxCFG`, e.g. `25x2,50x2,100x3`.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sweep_inference(args: SweepInferenceArgs, mut ctx: Ctx) -> Result<()> {
    if let Some(g) = &args.grid {
        ctx.config.sweep.inference_grid = parse_grid(g)?;
    }
    if let Some(v) = args.samples {
        ctx.config.sweep.samples_per_cell = v;
    }
    if let Some(v) = args.seed {
        ctx.config.sampler.seed = v;
    }
    if let Some(v) = args.workers {
        ctx.config.sweep.workers = v;
    }
    let grid = ctx.config.sweep.inference_grid.clone();
    if grid.is_empty() {
        bail!("inference grid is empty");
    }
    let base = ctx.base(&args.base)?;
    let embedding = ctx.embedding(&args.embedding)?;
    let channels = base.shape().channels;
    let extractor = ctx.extractor(channels)?;
    let (manifest, dir) = ctx.manifest(&args.real.real)?;
    let manifest = select(&manifest, args.real.real_label, args.real.real_split);
    let stats = real_stats(&manifest, &dir, channels, &extractor, args.real.cache.as_deref())?;
    let hash = ctx.config.persist(&args.out)?;
    let (seed, n) = (ctx.config.sampler.seed, ctx.config.sweep.samples_per_cell);

    let results = pool(ctx.config.sweep.workers)?.install(|| {
        grid.par_iter()
            .map(|&cell| {
                let cell_dir = args.out.join(format!("cell-{}x{}", cell.steps, cell.cfg_scale));
                let images = sample_cell(&base, &embedding, ctx.config.sampler.schedule_params(), cell, seed, n, &cell_dir)?;
                let report = fid_against(&stats, manifest.len(), &images, &extractor)?;
                std::fs::write(cell_dir.join("fid.json"), serde_json::to_string_pretty(&report)?)?;
                log::info!("cell {}x{}: FID {:.4}", cell.steps, cell.cfg_scale, report.fid);
                Ok((report.fid, cell_dir, images[0].clone()))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let table = SweepTable {
        name: "sweep_inference".into(),
        headers: vec!["Sampling steps".into(), "CFG scale".into()],
        rows: grid
            .iter()
            .zip(&results)
            .map(|(cell, (fid, dir, _))| SweepRow {
                setting: vec![cell.steps.to_string(), cell.cfg_scale.to_string()],
                fid: *fid,
                dir: dir.strip_prefix(&args.out).unwrap_or(dir).to_path_buf(),
            })
            .collect(),
    };
    table.save(&args.out)?;
    let firsts: Vec<LatentTensor> = results.iter().map(|(_, _, img)| img.clone()).collect();
    save_grid(&args.out.join("grid.png"), &firsts, firsts.len())?;
    print!("{}", table.markdown());
    println!("(config {hash})");
    Ok(())
}

/// FID of embeddings trained with varying size or case count.
#[derive(Debug, Args)]
pub struct SweepEmbeddingArgs {
    #[arg(long)]
    pub base: PathBuf,
    /// Training manifest; also the real set for FID unless `--real` is given.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_label)]
    pub label: Option<Label>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Vectors per token, e.g. `8,16,32,64`; empty to skip.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Training case counts, e.g. `5,10,50,100`; empty to skip.
    #[arg(long)]
    pub cases: Option<String>,
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

struct Setting {
    table: usize,
    label: String,
    n_vectors: usize,
    cases: Option<usize>,
    dir: PathBuf,
}

pub fn sweep_embedding(args: SweepEmbeddingArgs, mut ctx: Ctx) -> Result<()> {
    if let Some(s) = &args.sizes {
        ctx.config.sweep.sizes = parse_list(s)?;
    }
    if let Some(s) = &args.cases {
        ctx.config.sweep.case_counts = parse_list(s)?;
    }
    if let Some(v) = args.samples {
        ctx.config.sweep.samples_per_cell = v;
    }
    if let Some(v) = args.workers {
        ctx.config.sweep.workers = v;
    }
    let sweep = ctx.config.sweep.clone();
    if sweep.sizes.is_empty() && sweep.case_counts.is_empty() {
        bail!("embedding sweep grid is empty: give --sizes and/or --cases");
    }
    let base = ctx.base(&args.base)?;
    let channels = base.shape().channels;
    let extractor = ctx.extractor(channels)?;
    let (manifest, dir) = ctx.manifest(&args.manifest)?;
    let train_set = select(&manifest, args.label, args.split);
    if train_set.is_empty() {
        bail!("no manifest records match the requested label and split");
    }
    let (real, real_dir) = match &args.real {
        Some(p) => ctx.manifest(p)?,
        None => (train_set.clone(), dir.clone()),
    };
    let stats = real_stats(&real, &real_dir, channels, &extractor, None)?;
    let hash = ctx.config.persist(&args.out)?;

    let mut settings = Vec::new();
    for &n in &sweep.sizes {
        settings.push(Setting {
            table: 0,
            label: n.to_string(),
            n_vectors: n,
            cases: None,
            dir: args.out.join(format!("size-{n}")),
        });
    }
    for &c in &sweep.case_counts {
        settings.push(Setting {
            table: 1,
            label: c.to_string(),
            n_vectors: ctx.config.ti.n_vectors,
            cases: Some(c),
            dir: args.out.join(format!("cases-{c}")),
        });
    }
    let sampler = ctx.config.sampler;
    let cell = GridCell {
        steps: sampler.steps,
        cfg_scale: sampler.cfg_scale,
    };
    let results = pool(sweep.workers)?.install(|| {
        settings
            .par_iter()
            .map(|s| {
                let ti = medti_core::textual_inversion::TIConfig {
                    n_vectors: s.n_vectors,
                    ..ctx.config.ti.clone()
                };
                let chosen = subset(&train_set, s.cases, ti.seed)?;
                let images: Vec<LatentTensor> = crate::common::load_labeled(&chosen, &dir, channels)?
                    .into_iter()
                    .map(|x| x.image)
                    .collect();
                let (outcome, _) = train_and_save(&base, "concept", &images, &ti, &s.dir)?;
                let samples = sample_cell(&base, &outcome.embedding, sampler.schedule_params(), cell, sampler.seed, sweep.samples_per_cell, &s.dir)?;
                let report = fid_against(&stats, real.len(), &samples, &extractor)?;
                std::fs::write(s.dir.join("fid.json"), serde_json::to_string_pretty(&report)?)?;
                log::info!("{} {}: FID {:.4}", ["size", "cases"][s.table], s.label, report.fid);
                Ok(report.fid)
            })
            .collect::<Result<Vec<f64>>>()
    })?;

    for (table, name, header) in [(0, "sweep_size", "Vectors per token"), (1, "sweep_cases", "Training cases")] {
        let rows: Vec<SweepRow> = settings
            .iter()
            .zip(&results)
            .filter(|(s, _)| s.table == table)
            .map(|(s, fid)| SweepRow {
                setting: vec![s.label.clone()],
                fid: *fid,
                dir: s.dir.strip_prefix(&args.out).unwrap_or(&s.dir).to_path_buf(),
            })
            .collect();
        if rows.is_empty() {
            continue;
        }
        let t = SweepTable {
            name: name.into(),
            headers: vec![header.into()],
            rows,
        };
        t.save(&args.out)?;
        print!("{}\n", t.markdown());
    }
    println!("(config {hash})");
    Ok(())
}
