use std::path::Path;

use anyhow::{bail, Context, Result};
use medti_core::classifier::ClassifierConfig;
use medti_core::datasets::{config_hash, PatchConfig, PicaiConfig, RadiographConfig, ToyConfig};
use medti_core::diffusion::SamplerConfig;
use medti_core::textual_inversion::TIConfig;
use medti_core::toy::BaseConfig;
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "run_config.toml";
pub const HASH_FILE: &str = "run_config.hash";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub steps: usize,
    pub cfg_scale: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub samples_per_cell: usize,
    /// Upper bound on concurrently running sweep cells.
    pub workers: usize,
    pub inference_grid: Vec<GridCell>,
    pub sizes: Vec<usize>,
    pub case_counts: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let mut grid: Vec<GridCell> = [25, 50, 75, 100]
            .into_iter()
            .map(|steps| GridCell { steps, cfg_scale: 2.0 })
            .collect();
        grid.extend([1.0, 3.0, 4.0, 5.0].into_iter().map(|cfg_scale| GridCell { steps: 100, cfg_scale }));
        Self {
            samples_per_cell: 50,
            workers: 2,
            inference_grid: grid,
            sizes: vec![8, 16, 32, 64],
            case_counts: vec![5, 10, 50, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidConfig {
    pub extractor: String,
    pub extractor_seed: u64,
}

impl Default for FidConfig {
    fn default() -> Self {
        Self {
            extractor: "toy".into(),
            extractor_seed: medti_core::evaluation::RandomConvExtractor::DEFAULT_SEED,
        }
    }
}

/// Every setting a command may read, persisted next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sampler: SamplerConfig,
    pub ti: TIConfig,
    pub classifier: ClassifierConfig,
    pub toy: ToyConfig,
    pub base: BaseConfig,
    pub picai: PicaiConfig,
    pub radiograph: RadiographConfig,
    pub patch: PatchConfig,
    pub fid: FidConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

impl RunConfig {
    pub fn desk_scale() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            ti: TIConfig::desk_scale(),
            classifier: ClassifierConfig::desk_scale(),
            toy: ToyConfig::default(),
            base: BaseConfig::default(),
            picai: PicaiConfig::default(),
            radiograph: RadiographConfig::default(),
            patch: PatchConfig::default(),
            fid: FidConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    /// The full published recipe: 50,000 TI steps, 6,250 classifier batches
    /// at lr 1e-4 and 100 samples per sweep cell.
    pub fn paper_scale() -> Self {
        let mut c = Self::desk_scale();
        c.ti = TIConfig::default();
        c.classifier = ClassifierConfig::default();
        c.sweep.samples_per_cell = 100;
        c
    }

    /// Defaults, then the optional file, then `key=value` overrides.
    pub fn resolve(file: Option<&Path>, paper_scale: bool, sets: &[String]) -> Result<Self> {
        let base = if paper_scale { Self::paper_scale() } else { Self::desk_scale() };
        let mut table = toml::Table::try_from(&base).context("serialising default config")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let layer: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut table, layer, "")?;
        }
        for set in sets {
            let (key, value) = set
                .split_once('=')
                .with_context(|| format!("override `{set}` is not key=value"))?;
            merge(&mut table, dotted(key.trim(), parse_value(value.trim()))?, "")?;
        }
        let config: RunConfig = toml::Value::Table(table).try_into().context("invalid resolved config")?;
        Ok(config)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(config_hash(self)?)
    }

    /// Writes `run_config.toml` and `run_config.hash` into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<String> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let hash = self.hash()?;
        std::fs::write(dir.join(CONFIG_FILE), toml::to_string(self)?)?;
        std::fs::write(dir.join(HASH_FILE), format!("{hash}\n"))?;
        Ok(hash)
    }
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_owned()))
}

fn dotted(key: &str, value: toml::Value) -> Result<toml::Table> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed config key `{key}`");
    }
    let mut value = value;
    for part in parts.iter().skip(1).rev() {
        let mut t = toml::Table::new();
        t.insert((*part).to_owned(), value);
        value = toml::Value::Table(t);
    }
    let mut top = toml::Table::new();
    top.insert(parts[0].to_owned(), value);
    Ok(top)
}

/// Overlays `layer` on `base`. Keys must already exist in `base`.
fn merge(base: &mut toml::Table, layer: toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in layer {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (None, _) => bail!("unknown config key `{path}`"),
            (Some(toml::Value::Table(b)), toml::Value::Table(l)) => merge(b, l, &path)?,
            (Some(toml::Value::Table(_)), _) => bail!("config key `{path}` is a section"),
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "[sampler]\nsteps = 40\ncfg_scale = 3.0\n[ti]\nsteps = 10\n").unwrap();
        let c = RunConfig::resolve(Some(&file), false, &["sampler.steps=60".into()]).unwrap();
        assert_eq!(c.sampler.steps, 60);
        assert_eq!(c.sampler.cfg_scale, 3.0);
        assert_eq!(c.ti.steps, 10);
        assert_eq!(c.ti.learning_rate, 0.005);
    }

    #[test]
    fn paper_scale_restores_full_counts() {
        let c = RunConfig::resolve(None, true, &[]).unwrap();
        assert_eq!(c.ti.steps, 50_000);
        assert_eq!(c.classifier.total_batches, 6250);
        assert_eq!(RunConfig::resolve(None, false, &[]).unwrap().ti.steps, 2_000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::resolve(None, false, &["sampler.stepz=3".into()]).is_err());
        assert!(RunConfig::resolve(None, false, &["ti=3".into()]).is_err());
        assert!(RunConfig::resolve(None, false, &["nonsense".into()]).is_err());
    }

    #[test]
    fn persisted_config_reloads_to_the_same_hash() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::resolve(None, false, &["classifier.backbone=\"pixel-mlp\"".into()]).unwrap();
        let hash = c.persist(dir.path()).unwrap();
        let back = RunConfig::resolve(Some(&dir.path().join(CONFIG_FILE)), false, &[]).unwrap();
        assert_eq!(back.hash().unwrap(), hash);
        assert_eq!(std::fs::read_to_string(dir.path().join(HASH_FILE)).unwrap().trim(), hash);
    }
}
