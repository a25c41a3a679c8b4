//! A small captioned corpus and the pretrained base model built from it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::toy::render_toy;
use crate::datasets::{Label, ToyConfig};
use crate::diffusion::{forward_diffuse, ConditioningVector, ToyDenoiser, ToyDenoiserConfig};
use crate::error::{Error, FormatError, Result};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::tensor::LatentTensor;
use crate::textual_inversion::{TextConditioner, Token, ToyConditioner};

pub const VOCAB: [&str; 4] = ["organ", "spots", "bright", "dark"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseConfig {
    pub world: ToyConfig,
    pub denoiser: ToyDenoiserConfig,
    pub vocab_seed: u64,
    pub vocab_std: f32,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Probability of training on the empty (all-zeros) context.
    pub caption_dropout: f32,
    /// Training sigmas are log-normal with these parameters, clamped to `sigma_range`.
    pub log_sigma_mean: f32,
    pub log_sigma_std: f32,
    pub sigma_range: [f32; 2],
    /// Organ intensity offset for the "bright" and "dark" captions.
    pub intensity_shift: f32,
    pub spots_probability: f32,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            world: ToyConfig::with_resolution(32),
            denoiser: ToyDenoiserConfig {
                context_scale: 10.0,
                ..ToyDenoiserConfig::default()
            },
            vocab_seed: 7,
            vocab_std: 0.1,
            seed: 0,
            steps: 10_000,
            batch_size: 4,
            learning_rate: 2e-3,
            caption_dropout: 0.15,
            log_sigma_mean: -1.0,
            log_sigma_std: 1.4,
            sigma_range: [0.02, 10.0],
            intensity_shift: 0.3,
            spots_probability: 0.5,
        }
    }
}

/// One captioned corpus image.
pub fn corpus_sample<R: Rng>(config: &BaseConfig, rng: &mut R) -> (LatentTensor, Vec<&'static str>) {
    let mut words = vec!["organ"];
    let mut world = config.world.clone();
    match rng.random_range(0..4) {
        0 => {
            words.push("bright");
            world.organ_intensity += config.intensity_shift;
        }
        1 => {
            words.push("dark");
            world.organ_intensity -= config.intensity_shift;
        }
        _ => {}
    }
    let spots = rng.random::<f32>() < config.spots_probability;
    if spots {
        words.push("spots");
        world.lesion_contrast *= rng.random_range(0.7..1.3f32);
    }
    let label = if spots { Label::Positive } else { Label::Negative };
    (render_toy(label, &world, rng).image, words)
}

/// Frozen denoiser plus the conditioner whose vocabulary it was trained with.
#[derive(Debug, Clone)]
pub struct BaseModel {
    pub config: BaseConfig,
    pub denoiser: ToyDenoiser,
    pub conditioner: ToyConditioner,
}

impl BaseModel {
    pub fn shape(&self) -> crate::Shape {
        self.config.world.shape()
    }

    /// Context for a prompt of vocabulary words.
    pub fn caption(&self, words: &[&str]) -> Result<ConditioningVector> {
        let tokens: Vec<Token<'_>> = words.iter().map(|w| Token::Vocab(w)).collect();
        self.conditioner.encode(&tokens)
    }
}

/// Loss weight making the epsilon error equivalent to an error on the raw
/// network output under the denoiser's preconditioning.
fn output_weight(sigma: f32, sigma_data: f32) -> f32 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma_data * sigma_data)
}

/// Trains a fresh denoiser on the captioned corpus, then freezes it.
/// `progress` is called every 100 steps with the step count and loss EMA.
pub fn pretrain_base(config: &BaseConfig, mut progress: impl FnMut(usize, f64)) -> Result<BaseModel> {
    config.world.validate()?;
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::invalid("pretraining steps and batch size must be positive"));
    }
    let conditioner = ToyConditioner::random_vocab_with_std(config.denoiser.cond_dim, &VOCAB, config.vocab_std, config.vocab_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut denoiser = ToyDenoiser::new(config.denoiser.clone(), &mut rng)?;
    let mut grads = denoiser.zero_grads();
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), grads.param_count());
    let shape = config.world.shape();
    let n = shape.numel() as f32;
    let [lo, hi] = config.sigma_range;
    let mut ema: Option<f64> = None;

    for step in 0..config.steps {
        grads.zero();
        let mut loss = 0.0f64;
        for _ in 0..config.batch_size {
            let (x0, words) = corpus_sample(config, &mut rng);
            let context = if rng.random::<f32>() < config.caption_dropout {
                ConditioningVector::unconditional(config.denoiser.cond_dim)
            } else {
                let tokens: Vec<Token<'_>> = words.iter().map(|w| Token::Vocab(w)).collect();
                conditioner.encode(&tokens)?
            };
            let z: f32 = rng.sample(StandardNormal);
            let sigma = (config.log_sigma_mean + config.log_sigma_std * z).exp().clamp(lo, hi);
            let eps = LatentTensor::randn(shape, &mut rng);
            let noisy = forward_diffuse(&x0, sigma, &eps)?;
            let (pred, trace) = denoiser.forward_trace(&noisy, sigma, &context)?;
            let w = output_weight(sigma, config.denoiser.sigma_data);
            let scale = w / config.batch_size as f32;
            let g = pred.zip_map(&eps, |p, e| 2.0 * scale * (p - e) / n)?;
            loss += w as f64 * pred.mse(&eps)? / config.batch_size as f64;
            denoiser.backward(&trace, &context, &g, Some(&mut grads))?;
        }
        if !loss.is_finite() {
            return Err(Error::numeric(Some(step), "pretraining loss is not finite"));
        }
        adam.step(denoiser.params_mut()?, &grads);
        let e = ema.map_or(loss, |e| 0.99 * e + 0.01 * loss);
        ema = Some(e);
        if (step + 1) % 100 == 0 {
            progress(step + 1, e);
        }
    }
    denoiser.freeze();
    Ok(BaseModel {
        config: config.clone(),
        denoiser,
        conditioner,
    })
}

const BASE_MAGIC: [u8; 4] = *b"TIBM";
const BASE_VERSION: u16 = 1;

/// Binary checkpoint: magic, version, JSON config header, f32 parameters,
/// f32 vocabulary vectors, CRC32.
pub fn encode_base(model: &BaseModel) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&model.config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&BASE_MAGIC);
    buf.extend_from_slice(&BASE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in model.denoiser.params().flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for w in VOCAB {
        let v = model
            .conditioner
            .word(w)
            .ok_or_else(|| Error::UnknownConcept(w.to_owned()))?;
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn decode_base(bytes: &[u8]) -> Result<BaseModel> {
    if bytes.len() < 14 {
        return Err(FormatError::Truncated {
            needed: 14,
            available: bytes.len(),
        }
        .into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != BASE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: BASE_MAGIC,
            found: magic,
        }
        .into());
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != BASE_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            supported: BASE_VERSION,
        }
        .into());
    }
    let body = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let hend = 10 + hlen;
    if hend > body {
        return Err(FormatError::Truncated {
            needed: hend,
            available: body,
        }
        .into());
    }
    let config: BaseConfig = serde_json::from_slice(&bytes[10..hend])?;
    let mut floats = bytes[hend..body]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));

    let mut denoiser = ToyDenoiser::new(config.denoiser.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let dim = config.denoiser.cond_dim;
    let expected = denoiser.params().param_count() + VOCAB.len() * dim;
    if (body - hend) != expected * 4 {
        return Err(FormatError::Malformed(format!(
            "expected {expected} floats, found {}",
            (body - hend) / 4
        ))
        .into());
    }
    denoiser.params_mut()?.visit_mut(&mut |buf| {
        for v in buf.iter_mut() {
            *v = floats.next().expect("length checked");
        }
    });
    denoiser.freeze();
    let vocab: BTreeMap<String, Vec<f32>> = VOCAB
        .iter()
        .map(|w| ((*w).to_owned(), floats.by_ref().take(dim).collect()))
        .collect();
    Ok(BaseModel {
        conditioner: ToyConditioner::from_vocab(dim, vocab)?,
        config,
        denoiser,
    })
}

pub fn save_base(model: &BaseModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_base(model)?)?;
    Ok(())
}

pub fn load_base(path: &Path) -> Result<BaseModel> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    decode_base(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::DenoiserBackbone;

    fn tiny() -> BaseConfig {
        BaseConfig {
            world: ToyConfig::with_resolution(12),
            denoiser: ToyDenoiserConfig {
                hidden: 4,
                cond_dim: 4,
                dilations: vec![1, 2, 1],
                ..Default::default()
            },
            steps: 20,
            batch_size: 2,
            ..BaseConfig::default()
        }
    }

    #[test]
    fn pretraining_freezes_and_checkpoints_roundtrip() {
        let mut seen = Vec::new();
        let cfg = BaseConfig { steps: 200, ..tiny() };
        let m = pretrain_base(&cfg, |s, l| seen.push((s, l))).unwrap();
        assert!(m.denoiser.is_frozen());
        assert_eq!(seen.len(), 2);
        assert!(seen[1].1.is_finite());
        let back = decode_base(&encode_base(&m).unwrap()).unwrap();
        assert_eq!(back.denoiser.parameter_hash(), m.denoiser.parameter_hash());
        assert_eq!(back.conditioner.parameter_hash(), m.conditioner.parameter_hash());
        assert_eq!(back.config, m.config);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let m = pretrain_base(&tiny(), |_, _| {}).unwrap();
        let mut bytes = encode_base(&m).unwrap();
        let k = bytes.len() - 9;
        bytes[k] ^= 4;
        assert!(matches!(decode_base(&bytes), Err(Error::Format(FormatError::Checksum { .. }))));
        assert!(matches!(decode_base(b"nope-nope-nope"), Err(Error::Format(FormatError::BadMagic { .. }))));
    }

    #[test]
    fn captions_follow_the_rendered_attributes() {
        let cfg = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spots = 0;
        for _ in 0..200 {
            let (img, words) = corpus_sample(&cfg, &mut rng);
            assert_eq!(img.shape(), cfg.world.shape());
            assert_eq!(words[0], "organ");
            spots += words.contains(&"spots") as usize;
        }
        assert!((60..140).contains(&spots));
    }
}
