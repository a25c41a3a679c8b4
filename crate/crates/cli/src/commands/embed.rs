use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use medti_core::datasets::{DatasetManifest, Label, Split};
use medti_core::textual_inversion::{save_embedding, train_embedding, TIConfig, TrainOutcome};
use medti_core::toy::BaseModel;
use medti_core::LatentTensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{load_labeled, parse_label, parse_split, select, Ctx};

/// Learn a concept embedding against the frozen base model.
#[derive(Debug, Args)]
pub struct TrainEmbeddingArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub name: String,
    /// Keep only records with this label.
    #[arg(long, value_parser = parse_label)]
    pub label: Option<Label>,
    /// Keep only records in this split.
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Train on a seeded random subset of this many cases.
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub vectors: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Seeded subset of `n` records, or all of them.
pub fn subset(manifest: &DatasetManifest, n: Option<usize>, seed: u64) -> Result<DatasetManifest> {
    let Some(n) = n else { return Ok(manifest.clone()) };
    if n == 0 || n > manifest.len() {
        bail!("requested {n} cases but {} are available", manifest.len());
    }
    let mut records = manifest.records.clone();
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    records.truncate(n);
    Ok(DatasetManifest::new(records))
}

/// Trains `name` and writes `<name>.tiem`, its JSON sidecar, the loss trace
/// and any retained checkpoints into `out`.
pub fn train_and_save(
    base: &BaseModel,
    name: &str,
    images: &[LatentTensor],
    config: &TIConfig,
    out: &Path,
) -> Result<(TrainOutcome, PathBuf)> {
    let outcome = train_embedding(name, images, config, &base.denoiser, &base.conditioner)?;
    if outcome.frozen_hash_before != outcome.frozen_hash_after {
        bail!("frozen model parameters changed during embedding training");
    }
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("{name}.tiem"));
    save_embedding(&outcome.embedding, &path)?;
    std::fs::write(
        out.join(format!("{name}.tiem.json")),
        serde_json::to_string_pretty(&outcome.embedding.metadata)?,
    )?;
    let mut trace = String::from("step,loss_ema\n");
    for (step, ema) in &outcome.state.ema_trace {
        let _ = writeln!(trace, "{step},{ema}");
    }
    std::fs::write(out.join(format!("{name}.loss.csv")), trace)?;
    if !outcome.state.checkpoints.is_empty() {
        let dir = out.join("checkpoints");
        std::fs::create_dir_all(&dir)?;
        for c in &outcome.state.checkpoints {
            save_embedding(&c.embedding, &dir.join(format!("{name}-{}.tiem", c.step)))?;
        }
    }
    Ok((outcome, path))
}

pub fn run(args: TrainEmbeddingArgs, mut ctx: Ctx) -> Result<()> {
    let ti = &mut ctx.config.ti;
    if let Some(v) = args.vectors {
        ti.n_vectors = v;
    }
    if let Some(v) = args.steps {
        ti.steps = v;
    }
    if let Some(v) = args.lr {
        ti.learning_rate = v;
    }
    if let Some(v) = args.seed {
        ti.seed = v;
    }
    let base = ctx.base(&args.base)?;
    let (manifest, dir) = ctx.manifest(&args.manifest)?;
    let chosen = subset(&select(&manifest, args.label, args.split), args.cases, ctx.config.ti.seed)?;
    if chosen.is_empty() {
        bail!("no manifest records match the requested label and split");
    }
    let images: Vec<LatentTensor> = load_labeled(&chosen, &dir, base.shape().channels)?
        .into_iter()
        .map(|x| x.image)
        .collect();
    let hash = ctx.config.persist(&args.out)?;
    chosen.save(&args.out.join("training_cases.jsonl"))?;
    let (outcome, path) = train_and_save(&base, &args.name, &images, &ctx.config.ti, &args.out)?;
    println!(
        "embedding <{}> ({}x{}) written to {} after {} steps, loss ema {:.4} (config {hash})",
        args.name,
        outcome.embedding.n_vectors(),
        outcome.embedding.dim(),
        path.display(),
        outcome.state.step,
        outcome.state.loss_ema.unwrap_or(f64::NAN),
    );
    Ok(())
}
