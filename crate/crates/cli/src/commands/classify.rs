use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use medti_core::classifier::{build_mix, study_table, train_classifier, LabeledImage, MixSpec, StudyRow, TrainReport};
use medti_core::datasets::{DatasetManifest, Split};
use rayon::prelude::*;

use crate::common::{load_labeled, Ctx};

/// Augmentation study: classifiers trained on mixes of real and synthetic cases.
#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    /// Real manifest with train, val and test splits.
    #[arg(long)]
    pub real: PathBuf,
    /// Synthetic manifests drawn on by `synth=` in a mix. Repeatable.
    #[arg(long)]
    pub synthetic: Vec<PathBuf>,
    /// Alternative synthetic manifests drawn on by `synth*=`. Repeatable.
    #[arg(long)]
    pub synthetic_alt: Vec<PathBuf>,
    /// Total training cases, split evenly over classes, e.g. `real=200,synth=2000`. Repeatable.
    #[arg(long, required = true)]
    pub mix: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub repeats: u64,
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mix {
    pub spec: MixSpec,
    pub alt: bool,
}

fn per_class(key: &str, total: usize) -> Result<usize> {
    if total % 2 != 0 {
        bail!("`{key}={total}` must be even to split over two classes");
    }
    Ok(total / 2)
}

pub fn parse_mix(text: &str) -> Result<Mix> {
    let mut mix = Mix {
        spec: MixSpec { n_real: 0, n_synthetic: 0 },
        alt: false,
    };
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = part.split_once('=').with_context(|| format!("mix entry `{part}` is not key=count"))?;
        let (key, total) = (key.trim(), value.trim().parse::<usize>().with_context(|| format!("bad count in `{part}`"))?);
        match key {
            "real" => mix.spec.n_real = per_class(key, total)?,
            "synth" => mix.spec.n_synthetic = per_class(key, total)?,
            "synth*" => {
                mix.spec.n_synthetic = per_class(key, total)?;
                mix.alt = true;
            }
            other => bail!("unknown mix key `{other}` (expected real, synth or synth*)"),
        }
    }
    mix.spec.validate()?;
    Ok(mix)
}

fn note(mix: &Mix) -> String {
    if mix.alt && mix.spec.n_synthetic > 0 {
        "*".into()
    } else {
        String::new()
    }
}

fn load_pool(manifest: &DatasetManifest, dir: &std::path::Path, channels: usize, synthetic: bool, pool: &mut BTreeMap<String, LabeledImage>) -> Result<()> {
    for mut img in load_labeled(manifest, dir, channels)? {
        img.synthetic = synthetic;
        if let Some(prev) = pool.insert(img.id.clone(), img) {
            bail!("case id `{}` appears twice across the real and synthetic manifests", prev.id);
        }
    }
    Ok(())
}

/// Concatenates `paths` into one manifest and loads their images into `pool`.
fn synthetic_source(
    ctx: &Ctx,
    paths: &[PathBuf],
    flag: &str,
    needed: bool,
    channels: usize,
    pool: &mut BTreeMap<String, LabeledImage>,
) -> Result<DatasetManifest> {
    if paths.is_empty() && needed {
        bail!("a mix uses synthetic cases but {flag} was not given");
    }
    let mut records = Vec::new();
    for p in paths {
        let (m, d) = ctx.manifest(p)?;
        load_pool(&m, &d, channels, true, pool)?;
        records.extend(m.records);
    }
    Ok(DatasetManifest::new(records))
}

pub fn run(args: TrainClassifierArgs, mut ctx: Ctx) -> Result<()> {
    if let Some(b) = &args.backbone {
        ctx.config.classifier.backbone = b.clone();
    }
    if let Some(n) = args.batches {
        ctx.config.classifier.total_batches = n;
    }
    ctx.config.classifier.validate()?;
    if args.repeats == 0 {
        bail!("--repeats must be at least 1");
    }
    let mixes = args.mix.iter().map(|m| parse_mix(m)).collect::<Result<Vec<_>>>()?;
    let needs = |alt: bool| mixes.iter().any(|m| m.alt == alt && m.spec.n_synthetic > 0);

    let (real, real_dir) = ctx.manifest(&args.real)?;
    let first = real.records.first().context("real manifest is empty")?;
    let channels = image_channels(&real.resolve(first, &real_dir))?;
    let [train, val, test] = [Split::Train, Split::Val, Split::Test].map(|s| real.split(s));
    for (name, set) in [("train", &train), ("val", &val), ("test", &test)] {
        if set.is_empty() {
            bail!("real manifest has no {name} split; run toy-data or preprocess with --split");
        }
    }
    let val = load_labeled(&val, &real_dir, channels)?;
    let test = load_labeled(&test, &real_dir, channels)?;
    let mut pool = BTreeMap::new();
    load_pool(&train, &real_dir, channels, false, &mut pool)?;
    let sources = [
        synthetic_source(&ctx, &args.synthetic, "--synthetic", needs(false), channels, &mut pool)?,
        synthetic_source(&ctx, &args.synthetic_alt, "--synthetic-alt", needs(true), channels, &mut pool)?,
    ];
    let hash = ctx.config.persist(&args.out)?;

    let jobs: Vec<(usize, u64)> = (0..mixes.len()).flat_map(|i| (0..args.repeats).map(move |r| (i, r))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(i, rep)| {
            let mix = &mixes[i];
            let chosen = build_mix(mix.spec, &train, &sources[mix.alt as usize], rep)?;
            let set: Vec<LabeledImage> = chosen.records.iter().map(|r| pool[&r.id].clone()).collect();
            let cfg = medti_core::classifier::ClassifierConfig {
                seed: rep,
                ..ctx.config.classifier.clone()
            };
            let report = train_classifier(&set, &val, &test, &cfg)?;
            let dir = args.out.join(format!("row-{i}"));
            std::fs::create_dir_all(&dir)?;
            report.save(&dir.join(format!("run-{rep}.json")))?;
            log::info!("mix {} repeat {rep}: test AUC {:.4}", args.mix[i], report.test_auc);
            Ok(report)
        })
        .collect::<Result<Vec<TrainReport>>>()?;

    let rows: Vec<StudyRow> = mixes
        .iter()
        .enumerate()
        .map(|(i, m)| StudyRow {
            n_real: 2 * m.spec.n_real,
            n_synthetic: 2 * m.spec.n_synthetic,
            note: note(m),
            test_aucs: jobs
                .iter()
                .zip(&reports)
                .filter(|((j, _), _)| *j == i)
                .map(|(_, r)| r.test_auc)
                .collect(),
        })
        .collect();
    std::fs::write(args.out.join("study.json"), serde_json::to_string_pretty(&rows)?)?;
    let table = study_table(&rows);
    std::fs::write(args.out.join("study.md"), &table)?;
    print!("{table}");
    println!("(config {hash})");
    Ok(())
}

fn image_channels(path: &std::path::Path) -> Result<usize> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(if img.color().has_color() { 3 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixes_are_split_per_class() {
        let m = parse_mix("real=200,synth=2000").unwrap();
        assert_eq!(m.spec, MixSpec { n_real: 100, n_synthetic: 1000 });
        assert!(!m.alt);
        assert!(parse_mix("real=0,synth*=2000").unwrap().alt);
        assert!(parse_mix("real=3").is_err());
        assert!(parse_mix("real=0").is_err());
        assert!(parse_mix("fake=2").is_err());
    }
}
