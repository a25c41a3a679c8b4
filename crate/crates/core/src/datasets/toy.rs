//! Synthetic single-channel "organ" images standing in for gated medical data.
//!
//! Healthy images show a textured ellipse on a dark background. Diseased
//! images add one or more small bright elliptical lesions inside the organ.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::io::save_tensor_png;
use super::manifest::{config_hash, DatasetManifest, Label, SliceRecord};
use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub version: u32,
    pub resolution: usize,
    pub background: f32,
    pub organ_intensity: f32,
    /// Per-image organ intensity offset, uniform in `[-j, j]`.
    pub intensity_jitter: f32,
    /// Organ semi-axes as fractions of the image size.
    pub organ_radius: [f32; 2],
    pub texture_std: f32,
    /// Blur passes applied to the texture noise.
    pub texture_smoothing: usize,
    pub lesion_contrast: f32,
    /// Inclusive range of lesions per diseased image.
    pub lesion_count: [usize; 2],
    /// Lesion semi-axis range as fractions of the image size.
    pub lesion_radius: [f32; 2],
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            version: 1,
            resolution: 64,
            background: -0.8,
            organ_intensity: 0.0,
            intensity_jitter: 0.25,
            organ_radius: [0.34, 0.27],
            texture_std: 0.10,
            texture_smoothing: 2,
            lesion_contrast: 0.7,
            lesion_count: [1, 3],
            lesion_radius: [0.07, 0.12],
        }
    }
}

impl ToyConfig {
    pub fn with_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(1, self.resolution, self.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::invalid("toy resolution must be at least 8"));
        }
        let [lo, hi] = self.lesion_count;
        if lo == 0 || lo > hi {
            return Err(Error::invalid("lesion count range must be 1 <= lo <= hi"));
        }
        if !(self.intensity_jitter >= 0.0 && self.texture_std >= 0.0) {
            return Err(Error::invalid("intensity jitter and texture std must be non-negative"));
        }
        Ok(())
    }
}

/// Ground truth for one lesion, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center: [f32; 2],
    pub radii: [f32; 2],
    pub angle: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub image: LatentTensor,
    pub label: Label,
    pub lesions: Vec<Lesion>,
}

/// Smooth 0..1 inside-indicator of a rotated ellipse with a ~1px soft edge.
fn ellipse(y: f32, x: f32, cy: f32, cx: f32, ry: f32, rx: f32, angle: f32) -> f32 {
    let (s, c) = angle.sin_cos();
    let (dy, dx) = (y - cy, x - cx);
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    let d = ((u / rx).powi(2) + (v / ry).powi(2)).sqrt();
    let edge = 1.0 / rx.min(ry);
    1.0 / (1.0 + ((d - 1.0) / edge).exp())
}

fn box_blur(data: &mut [f32], n: usize) {
    let src = data.to_vec();
    for y in 0..n {
        for x in 0..n {
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < n && (xx as usize) < n {
                        acc += src[yy as usize * n + xx as usize];
                        cnt += 1.0;
                    }
                }
            }
            data[y * n + x] = acc / cnt;
        }
    }
}

fn texture<R: Rng>(rng: &mut R, n: usize, std: f32, passes: usize) -> Vec<f32> {
    let mut t: Vec<f32> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    for _ in 0..passes {
        box_blur(&mut t, n);
    }
    let var = t.iter().map(|v| v * v).sum::<f32>() / t.len() as f32;
    let k = if var > 0.0 { std / var.sqrt() } else { 0.0 };
    t.iter_mut().for_each(|v| *v *= k);
    t
}

/// Renders one image; every random choice comes from `rng`.
pub fn render_toy<R: Rng>(label: Label, config: &ToyConfig, rng: &mut R) -> ToySample {
    let n = config.resolution;
    let nf = n as f32;
    let cy = nf / 2.0 + rng.random_range(-0.05..0.05) * nf;
    let cx = nf / 2.0 + rng.random_range(-0.05..0.05) * nf;
    let ry = config.organ_radius[0] * nf * rng.random_range(0.9..1.1);
    let rx = config.organ_radius[1] * nf * rng.random_range(0.9..1.1);
    let angle = rng.random_range(-0.4..0.4f32);
    let j = config.intensity_jitter;
    let level = config.organ_intensity + if j > 0.0 { rng.random_range(-j..j) } else { 0.0 };
    let tex = texture(rng, n, config.texture_std, config.texture_smoothing);

    let mut lesions = Vec::new();
    if label.is_positive() {
        let count = rng.random_range(config.lesion_count[0]..=config.lesion_count[1]);
        let (s, c) = angle.sin_cos();
        for _ in 0..count {
            // Uniform in a disc of 0.55 organ radii, mapped through the organ's frame.
            let r = 0.55 * rng.random_range(0.0..1.0f32).sqrt();
            let t = rng.random_range(0.0..std::f32::consts::TAU);
            let (u, v) = (r * t.cos() * rx, r * t.sin() * ry);
            let [lo, hi] = config.lesion_radius;
            lesions.push(Lesion {
                center: [cy + s * u + c * v, cx + c * u - s * v],
                radii: [rng.random_range(lo..hi) * nf, rng.random_range(lo..hi) * nf],
                angle: rng.random_range(0.0..std::f32::consts::PI),
            });
        }
    }

    let image = LatentTensor::from_fn(config.shape(), |_, y, x| {
        let (yf, xf) = (y as f32, x as f32);
        let organ = ellipse(yf, xf, cy, cx, ry, rx, angle);
        let mut v = config.background + organ * (level - config.background + tex[y * n + x]);
        for l in &lesions {
            v += config.lesion_contrast * organ * ellipse(yf, xf, l.center[0], l.center[1], l.radii[0], l.radii[1], l.angle);
        }
        v.clamp(-1.0, 1.0)
    });
    ToySample { image, label, lesions }
}

/// Per-record generator so each image depends only on `(seed, index)`.
fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn toy_id(seed: u64, label: Label, i: usize) -> String {
    format!("toy{seed}-{}{i:04}", &label.as_str()[..3])
}

/// `n_per_class` negatives then `n_per_class` positives, deterministic in `seed`.
pub fn toy_samples(n_per_class: usize, seed: u64, config: &ToyConfig) -> Result<Vec<(String, ToySample)>> {
    config.validate()?;
    if n_per_class == 0 {
        return Err(Error::invalid("n_per_class must be at least 1"));
    }
    let mut out = Vec::with_capacity(2 * n_per_class);
    for (k, label) in Label::ALL.into_iter().enumerate() {
        for i in 0..n_per_class {
            let mut rng = record_rng(seed, (k * n_per_class + i) as u64);
            out.push((toy_id(seed, label, i), render_toy(label, config, &mut rng)));
        }
    }
    Ok(out)
}

/// Writes `images/*.png`, `lesions.json`, `toy_config.toml` and
/// `manifest.jsonl` into `out_dir` and returns the manifest.
pub fn toy_generate(n_per_class: usize, seed: u64, config: &ToyConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let samples = toy_samples(n_per_class, seed, config)?;
    let hash = config_hash(config)?;
    std::fs::create_dir_all(out_dir.join("images"))?;
    let mut records = Vec::with_capacity(samples.len());
    let mut truth = BTreeMap::new();
    for (id, s) in &samples {
        let rel = Path::new("images").join(format!("{id}.png"));
        save_tensor_png(&s.image, &out_dir.join(&rel))?;
        truth.insert(id.clone(), s.lesions.clone());
        records.push(SliceRecord {
            id: id.clone(),
            path: rel,
            label: s.label,
            split: None,
            dataset: "toy".into(),
            config_hash: hash.clone(),
            synthetic: false,
        });
    }
    std::fs::write(out_dir.join("lesions.json"), serde_json::to_string_pretty(&truth)?)?;
    std::fs::write(out_dir.join("toy_config.toml"), toml::to_string(config)?)?;
    let manifest = DatasetManifest::new(records);
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
