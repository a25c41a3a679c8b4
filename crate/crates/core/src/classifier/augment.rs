use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::LatentTensor;

/// Probabilities and ranges of the training-time augmentations.
///
/// Images live in `[-1, 1]`; "zero" in pixel terms is `-1.0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_p: f32,
    pub noise_p: f32,
    /// Upper bound on the noise standard deviation as a fraction of the value range.
    pub noise_std_max: f32,
    pub intensity_p: f32,
    pub gamma_range: [f32; 2],
    pub affine_p: f32,
    /// Maximum shift as a fraction of the image size.
    pub translate_max: f32,
    pub scale_range: [f32; 2],
    pub rotate_max_deg: f32,
    /// Only applies to inputs with more than one channel.
    pub channel_dropout_p: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_p: 0.5,
            noise_p: 0.5,
            noise_std_max: 0.05,
            intensity_p: 0.5,
            gamma_range: [0.8, 1.25],
            affine_p: 0.5,
            translate_max: 0.1,
            scale_range: [0.9, 1.1],
            rotate_max_deg: 10.0,
            channel_dropout_p: 0.1,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn none() -> Self {
        Self {
            flip_p: 0.0,
            noise_p: 0.0,
            intensity_p: 0.0,
            affine_p: 0.0,
            channel_dropout_p: 0.0,
            ..Self::default()
        }
    }
}

const RANGE: f32 = 2.0;
const FILL: f32 = -1.0;

pub fn hflip(image: &LatentTensor) -> LatentTensor {
    let s = image.shape();
    LatentTensor::from_fn(s, |c, y, x| image.get(c, y, s.width - 1 - x))
}

/// Inverse-mapped affine warp about the image centre with bilinear sampling.
fn affine(image: &LatentTensor, angle: f32, scale: f32, ty: f32, tx: f32) -> LatentTensor {
    let s = image.shape();
    let (cy, cx) = ((s.height as f32 - 1.0) / 2.0, (s.width as f32 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    LatentTensor::from_fn(s, |c, y, x| {
        let (dy, dx) = (y as f32 - cy - ty, x as f32 - cx - tx);
        let sx = (cos * dx + sin * dy) / scale + cx;
        let sy = (-sin * dx + cos * dy) / scale + cy;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let px = |yy: f32, xx: f32| {
            if yy < 0.0 || xx < 0.0 || yy >= s.height as f32 || xx >= s.width as f32 {
                FILL
            } else {
                image.get(c, yy as usize, xx as usize)
            }
        };
        let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1.0) * fx;
        let bottom = px(y0 + 1.0, x0) * (1.0 - fx) + px(y0 + 1.0, x0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Applies flip, affine, intensity, noise and channel dropout in that order.
/// Deterministic in `(image, seed)`.
pub fn augment(image: &LatentTensor, seed: u64, config: &AugmentConfig) -> LatentTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    if rng.random::<f32>() < config.flip_p {
        out = hflip(&out);
    }
    if rng.random::<f32>() < config.affine_p {
        let s = out.shape();
        let angle = rng.random_range(-1.0..=1.0f32) * config.rotate_max_deg.to_radians();
        let scale = rng.random_range(config.scale_range[0]..=config.scale_range[1]);
        let ty = rng.random_range(-1.0..=1.0f32) * config.translate_max * s.height as f32;
        let tx = rng.random_range(-1.0..=1.0f32) * config.translate_max * s.width as f32;
        out = affine(&out, angle, scale, ty, tx);
    }
    if rng.random::<f32>() < config.intensity_p {
        let [lo, hi] = config.gamma_range;
        let gamma = (rng.random_range(lo.ln()..=hi.ln())).exp();
        out = out.map(|v| ((v + 1.0) / RANGE).clamp(0.0, 1.0).powf(gamma) * RANGE - 1.0);
    }
    if rng.random::<f32>() < config.noise_p {
        let std = rng.random_range(0.0..=config.noise_std_max) * RANGE;
        for v in out.data_mut() {
            *v += std * rng.sample::<f32, _>(StandardNormal);
        }
    }
    let channels = out.shape().channels;
    if channels > 1 && rng.random::<f32>() < config.channel_dropout_p {
        let c = rng.random_range(0..channels);
        out.channel_mut(c).fill(FILL);
    }
    out
}
