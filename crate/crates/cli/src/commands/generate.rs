use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use medti_core::composition::{inpaint, interpolation_sweep, parse_prompt, EmbeddingRegistry, InpaintMask};
use medti_core::datasets::io::load_tensor_png;
use medti_core::datasets::{DatasetManifest, Label, SliceRecord};
use medti_core::diffusion::sample;
use medti_core::LatentTensor;
use rayon::prelude::*;

use crate::common::{concept_guidance, parse_label, parse_list, sample_seeds, save_all, save_grid, seeds, Ctx};

/// Shared sampling flags.
#[derive(Debug, Args)]
pub struct SampleOpts {
    #[arg(long)]
    pub base: PathBuf,
    /// First seed; consecutive seeds are used for further samples.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub cfg: Option<f32>,
    #[arg(long)]
    pub out: PathBuf,
}

impl SampleOpts {
    fn apply(&self, ctx: &mut Ctx) {
        let s = &mut ctx.config.sampler;
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.steps {
            s.steps = v;
        }
        if let Some(v) = self.cfg {
            s.cfg_scale = v;
        }
    }
}

fn registry(ctx: &Ctx, paths: &[PathBuf]) -> Result<EmbeddingRegistry> {
    let mut reg = EmbeddingRegistry::new();
    for p in paths {
        reg.insert(ctx.embedding(p)?);
    }
    Ok(reg)
}

/// Sample images of one learned concept.
#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub opts: SampleOpts,
    #[arg(long)]
    pub embedding: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Label written into the synthetic manifest.
    #[arg(long, value_parser = parse_label)]
    pub label: Option<Label>,
}

pub fn generate(args: GenerateArgs, mut ctx: Ctx) -> Result<()> {
    args.opts.apply(&mut ctx);
    let base = ctx.base(&args.opts.base)?;
    let embedding = ctx.embedding(&args.embedding)?;
    let hash = ctx.config.persist(&args.opts.out)?;
    let cfg = &ctx.config.sampler;
    let guidance = concept_guidance(&base, &embedding, cfg.cfg_scale)?;
    let seeds = seeds(cfg.seed, args.n);
    let images = sample_seeds(&base, &cfg.schedule()?, &guidance, &seeds)?;
    let names: Vec<(String, LatentTensor)> = seeds
        .iter()
        .zip(&images)
        .map(|(s, img)| (format!("{}-s{s}.png", embedding.name()), img.clone()))
        .collect();
    save_all(&args.opts.out.join("images"), &names)?;
    save_grid(&args.opts.out.join("grid.png"), &images, images.len().min(8))?;
    if let Some(label) = args.label {
        let records = names
            .iter()
            .map(|(file, _)| SliceRecord {
                id: file.trim_end_matches(".png").to_owned(),
                path: Path::new("images").join(file),
                label,
                split: None,
                dataset: "synthetic".into(),
                config_hash: hash.clone(),
                synthetic: true,
            })
            .collect();
        DatasetManifest::new(records).save(&args.opts.out.join("manifest.jsonl"))?;
    }
    println!("{} samples of <{}> written to {} (config {hash})", images.len(), embedding.name(), args.opts.out.display());
    Ok(())
}

/// Sample from an `AND` composition of learned concepts.
#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[command(flatten)]
    pub opts: SampleOpts,
    /// Embedding files making up the concept registry.
    #[arg(long = "embedding", required = true)]
    pub embeddings: Vec<PathBuf>,
    /// e.g. `0.5*<healthy> AND 0.5*<diseased>`.
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
}

pub fn compose(args: ComposeArgs, mut ctx: Ctx) -> Result<()> {
    args.opts.apply(&mut ctx);
    let base = ctx.base(&args.opts.base)?;
    let reg = registry(&ctx, &args.embeddings)?;
    let mut prompt = parse_prompt(&args.prompt, &reg)?;
    if let Some(c) = args.opts.cfg {
        prompt = prompt.with_cfg(c);
    }
    let hash = ctx.config.persist(&args.opts.out)?;
    let cfg = &ctx.config.sampler;
    let guidance = prompt.guidance(&reg, &base.conditioner, cfg.cfg_scale)?;
    let seeds = seeds(cfg.seed, args.n);
    let images = sample_seeds(&base, &cfg.schedule()?, &guidance, &seeds)?;
    let named: Vec<_> = seeds.iter().zip(&images).map(|(s, i)| (format!("s{s}.png"), i.clone())).collect();
    save_all(&args.opts.out.join("images"), &named)?;
    save_grid(&args.opts.out.join("grid.png"), &images, images.len().min(8))?;
    std::fs::write(args.opts.out.join("prompt.txt"), format!("{prompt}\ncfg_scale = {}\n", guidance.cfg_scale))?;
    println!("{} samples of `{prompt}` written to {} (config {hash})", images.len(), args.opts.out.display());
    Ok(())
}

/// Sweep the weight between two concepts.
#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub opts: SampleOpts,
    #[arg(long = "embedding", required = true)]
    pub embeddings: Vec<PathBuf>,
    /// Concept at alpha = 0.
    #[arg(long)]
    pub from: String,
    /// Concept at alpha = 1.
    #[arg(long)]
    pub to: String,
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    pub alphas: String,
    /// Number of seeds, one grid row each.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
}

pub fn interpolate(args: InterpolateArgs, mut ctx: Ctx) -> Result<()> {
    args.opts.apply(&mut ctx);
    let base = ctx.base(&args.opts.base)?;
    let reg = registry(&ctx, &args.embeddings)?;
    let alphas: Vec<f32> = parse_list(&args.alphas)?;
    let prompts = interpolation_sweep(&args.from, &args.to, &alphas)?;
    let hash = ctx.config.persist(&args.opts.out)?;
    let cfg = &ctx.config.sampler;
    let schedule = cfg.schedule()?;
    let guidances = prompts
        .iter()
        .map(|p| Ok(p.guidance(&reg, &base.conditioner, cfg.cfg_scale)?))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(u64, usize)> = seeds(cfg.seed, args.n)
        .into_iter()
        .flat_map(|s| (0..alphas.len()).map(move |a| (s, a)))
        .collect();
    let images = cells
        .par_iter()
        .map(|&(s, a)| Ok(sample(&base.denoiser, &schedule, &guidances[a], s, base.shape())?))
        .collect::<Result<Vec<_>>>()?;
    let named: Vec<_> = cells
        .iter()
        .zip(&images)
        .map(|(&(s, a), img)| (format!("s{s}-a{}.png", alphas[a]), img.clone()))
        .collect();
    save_all(&args.opts.out.join("images"), &named)?;
    save_grid(&args.opts.out.join("grid.png"), &images, alphas.len())?;
    println!(
        "{} x {} interpolation grid written to {} (config {hash})",
        args.n,
        alphas.len(),
        args.opts.out.display()
    );
    Ok(())
}

/// Regenerate the masked region of a reference image.
#[derive(Debug, Args)]
pub struct InpaintArgs {
    #[command(flatten)]
    pub opts: SampleOpts,
    #[arg(long = "embedding", required = true)]
    pub embeddings: Vec<PathBuf>,
    #[arg(long)]
    pub reference: PathBuf,
    /// White marks pixels to regenerate.
    #[arg(long)]
    pub mask: PathBuf,
    /// Concept name or full `AND` prompt.
    #[arg(long)]
    pub concept: String,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
}

pub fn run_inpaint(args: InpaintArgs, mut ctx: Ctx) -> Result<()> {
    args.opts.apply(&mut ctx);
    let base = ctx.base(&args.opts.base)?;
    let reg = registry(&ctx, &args.embeddings)?;
    let text = if args.concept.contains('<') { args.concept.clone() } else { format!("<{}>", args.concept) };
    let mut prompt = parse_prompt(&text, &reg)?;
    if let Some(c) = args.opts.cfg {
        prompt = prompt.with_cfg(c);
    }
    let ref_path = ctx.input(&args.reference);
    let reference = load_tensor_png(&ref_path, base.shape().channels)
        .with_context(|| format!("loading reference {}", ref_path.display()))?;
    let mask_path = ctx.input(&args.mask);
    let mask = InpaintMask::load_png(&mask_path, reference.clone())
        .with_context(|| format!("loading mask {}", mask_path.display()))?;
    let hash = ctx.config.persist(&args.opts.out)?;
    let cfg = &ctx.config.sampler;
    let guidance = prompt.guidance(&reg, &base.conditioner, cfg.cfg_scale)?;
    let schedule = cfg.schedule()?;
    let seeds = seeds(cfg.seed, args.n);
    let images = seeds
        .par_iter()
        .map(|&s| Ok(inpaint(&base.denoiser, &schedule, &guidance, &mask, s)?))
        .collect::<Result<Vec<_>>>()?;
    let named: Vec<_> = seeds.iter().zip(&images).map(|(s, i)| (format!("s{s}.png"), i.clone())).collect();
    save_all(&args.opts.out.join("images"), &named)?;
    let mask_tile = LatentTensor::from_fn(reference.shape(), |_, y, x| if mask.is_masked(y, x) { 1.0 } else { -1.0 });
    let mut tiles = vec![reference, mask_tile];
    tiles.extend(images.iter().cloned());
    save_grid(&args.opts.out.join("grid.png"), &tiles, tiles.len())?;
    println!("{} inpainted samples written to {} (config {hash})", images.len(), args.opts.out.display());
    Ok(())
}
