use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use medti_core::classifier::{study_table, StudyRow};
use medti_core::evaluation::FidReport;
use sha2::{Digest, Sha256};

use super::evaluate::SweepTable;
use crate::common::Ctx;
use crate::config::{RunConfig, CONFIG_FILE, HASH_FILE};

/// Consolidate run directories into one markdown report.
#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run output directories, in report order.
    #[arg(long = "run")]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The run's config hash, checked against the persisted config.
fn run_hash(dir: &Path) -> Result<String> {
    let hash_path = dir.join(HASH_FILE);
    let recorded = std::fs::read_to_string(&hash_path)
        .with_context(|| format!("missing run artifact {}", hash_path.display()))?
        .trim()
        .to_owned();
    let config_path = dir.join(CONFIG_FILE);
    if !config_path.is_file() {
        bail!("missing run artifact {}", config_path.display());
    }
    let actual = RunConfig::resolve(Some(&config_path), false, &[])?.hash()?;
    if actual != recorded {
        bail!("{} records hash {recorded} but the config hashes to {actual}", hash_path.display());
    }
    Ok(recorded)
}

/// Every file under `dir` worth reporting, sorted.
fn artifacts(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let keep = name == "study.json" || name == "fid.json" || name == "grid.png" || (name.starts_with("sweep_") && name.ends_with(".json"));
        if path.is_file() && keep {
            found.push(path);
        }
    }
    found.sort();
    Ok(found)
}

fn section(dir: &Path, out: &mut String, provenance: &mut Vec<(String, String)>) -> Result<()> {
    let hash = run_hash(dir)?;
    let name = dir.display().to_string();
    let _ = writeln!(out, "## {name}\n\nConfig hash: `{hash}`\n");
    let files = artifacts(dir)?;
    if files.is_empty() {
        bail!("run {name} has no reportable artifacts (study, sweep, fid or grid)");
    }
    for path in files {
        let bytes = std::fs::read(&path)?;
        let file = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_owned();
        provenance.push((format!("{name}/{file}"), sha256_hex(&bytes)));
        match file.as_str() {
            "study.json" => {
                let rows: Vec<StudyRow> = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
                let runs = rows.iter().map(|r| r.test_aucs.len()).max().unwrap_or(0);
                let _ = writeln!(out, "Mean test AUC ± std over {runs} training runs:\n\n{}", study_table(&rows));
            }
            "fid.json" => {
                let r: FidReport = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
                let _ = writeln!(
                    out,
                    "FID {:.3} ({} real, {} generated, extractor `{}`)\n",
                    r.fid, r.n_real, r.n_generated, r.extractor_id
                );
            }
            "grid.png" => {
                let _ = writeln!(out, "![{name} grid]({name}/grid.png)\n");
            }
            _ => {
                let t: SweepTable = serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))?;
                let _ = writeln!(out, "{}", t.markdown());
            }
        }
    }
    Ok(())
}

/// Renders the report body; identical inputs give identical bytes.
pub fn render(runs: &[PathBuf]) -> Result<String> {
    if runs.is_empty() {
        bail!("report needs at least one run directory");
    }
    let mut body = String::from("# Experiment report\n\n");
    let mut provenance = Vec::new();
    for dir in runs {
        section(dir, &mut body, &mut provenance)?;
    }
    body.push_str("## Provenance\n\n| Artifact | SHA-256 |\n|:---|:---|\n");
    for (file, hash) in &provenance {
        let _ = writeln!(body, "| {file} | `{hash}` |");
    }
    Ok(body)
}

pub fn run(args: ReportArgs, ctx: Ctx) -> Result<()> {
    let body = render(&args.runs)?;
    let hash = sha256_hex(body.as_bytes());
    ctx.config.persist(&args.out)?;
    std::fs::write(args.out.join("report.md"), &body)?;
    std::fs::write(args.out.join("report.hash"), format!("{hash}\n"))?;
    println!("report written to {} (report hash {hash})", args.out.join("report.md").display());
    Ok(())
}
