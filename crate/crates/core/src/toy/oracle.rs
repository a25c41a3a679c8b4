//! A fixed lesion classifier for toy images, independent of any diffusion model.
//!
//! Features come from a difference-of-Gaussians blob response restricted to
//! the organ interior. A logistic regression on those features is fitted once
//! on held-out rendered images.

use serde::{Deserialize, Serialize};

use crate::datasets::{Label, ToyConfig};
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

pub const N_FEATURES: usize = 3;

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f32 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &[f32], height: usize, width: usize, sigma: f32) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * img[y * width + clamp(x as isize + i as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * tmp[clamp(y as isize + i as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// Pixels whose whole `(2r+1)^2` neighbourhood lies inside `mask`.
pub fn erode(mask: &[bool], height: usize, width: usize, r: usize) -> Vec<bool> {
    let mut rows = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            rows[y * width + x] =
                x >= r && x + r < width && (x - r..=x + r).all(|xx| mask[y * width + xx]);
        }
    }
    let mut out = vec![false; mask.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] =
                y >= r && y + r < height && (y - r..=y + r).all(|yy| rows[yy * width + x]);
        }
    }
    out
}

/// Scales for a given resolution: blob sigma, surround sigma, organ blur, erosion radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleScales {
    pub blob_sigma: f32,
    pub surround_sigma: f32,
    pub organ_sigma: f32,
    pub erosion: usize,
}

impl OracleScales {
    pub fn for_resolution(res: usize) -> Self {
        let r = res as f32;
        Self {
            blob_sigma: 0.035 * r,
            surround_sigma: 0.105 * r,
            organ_sigma: 0.06 * r,
            erosion: (0.1 * r).round() as usize,
        }
    }
}

/// Blob response map and organ-interior mask of the first channel.
#[derive(Debug, Clone)]
pub struct BlobMap {
    pub response: Vec<f32>,
    pub interior: Vec<bool>,
}

pub fn blob_map(image: &LatentTensor, scales: &OracleScales, organ_threshold: f32) -> BlobMap {
    let s = image.shape();
    let (h, w) = (s.height, s.width);
    let img = image.channel(0);
    let fine = gaussian_blur(img, h, w, scales.blob_sigma);
    let coarse = gaussian_blur(img, h, w, scales.surround_sigma);
    let organ = gaussian_blur(img, h, w, scales.organ_sigma);
    let inside: Vec<bool> = organ.iter().map(|&v| v > organ_threshold).collect();
    BlobMap {
        response: fine.iter().zip(&coarse).map(|(a, b)| a - b).collect(),
        interior: erode(&inside, h, w, scales.erosion),
    }
}

/// Logistic-regression lesion classifier plus a max-response lesion detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionOracle {
    pub scales: OracleScales,
    pub organ_threshold: f32,
    pub mean: [f64; N_FEATURES],
    pub std: [f64; N_FEATURES],
    pub weights: [f64; N_FEATURES],
    pub bias: f64,
    /// Peak blob response above which a region is said to contain a lesion.
    pub detect_threshold: f64,
}

impl LesionOracle {
    fn raw_features(scales: &OracleScales, threshold: f32, image: &LatentTensor) -> [f64; N_FEATURES] {
        let map = blob_map(image, scales, threshold);
        let mut vals: Vec<f32> = map
            .response
            .iter()
            .zip(&map.interior)
            .filter(|(_, &m)| m)
            .map(|(&r, _)| r)
            .collect();
        if vals.is_empty() {
            return [0.0; N_FEATURES];
        }
        vals.sort_by(|a, b| b.total_cmp(a));
        let top = vals.len().min(6);
        let top_mean = vals[..top].iter().map(|&v| v as f64).sum::<f64>() / top as f64;
        let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
        [vals[0] as f64, top_mean, top_mean - mean]
    }

    /// Fits on labelled images; `config` supplies the organ/background levels.
    pub fn fit(images: &[(LatentTensor, Label)], config: &ToyConfig) -> Result<Self> {
        let npos = images.iter().filter(|(_, l)| l.is_positive()).count();
        if npos == 0 || npos == images.len() {
            return Err(Error::invalid("oracle fitting needs both classes"));
        }
        let scales = OracleScales::for_resolution(config.resolution);
        let organ_threshold = 0.5 * (config.background + config.organ_intensity);
        let feats: Vec<[f64; N_FEATURES]> = images
            .iter()
            .map(|(img, _)| Self::raw_features(&scales, organ_threshold, img))
            .collect();
        let n = feats.len() as f64;
        let mut mean = [0.0; N_FEATURES];
        let mut std = [0.0; N_FEATURES];
        for j in 0..N_FEATURES {
            mean[j] = feats.iter().map(|f| f[j]).sum::<f64>() / n;
            std[j] = (feats.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9);
        }
        let z: Vec<[f64; N_FEATURES]> = feats
            .iter()
            .map(|f| std::array::from_fn(|j| (f[j] - mean[j]) / std[j]))
            .collect();
        let y: Vec<f64> = images.iter().map(|(_, l)| l.is_positive() as u8 as f64).collect();

        let mut w = [0.0; N_FEATURES];
        let mut b = 0.0;
        for _ in 0..2000 {
            let mut gw = [0.0; N_FEATURES];
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(&y) {
                let logit = b + (0..N_FEATURES).map(|j| w[j] * zi[j]).sum::<f64>();
                let err = 1.0 / (1.0 + (-logit).exp()) - yi;
                gb += err;
                for j in 0..N_FEATURES {
                    gw[j] += err * zi[j];
                }
            }
            b -= 0.5 * gb / n;
            for j in 0..N_FEATURES {
                w[j] -= 0.5 * (gw[j] / n + 1e-3 * w[j]);
            }
        }

        let mut peaks: Vec<(f64, bool)> = feats.iter().zip(&y).map(|(f, &yi)| (f[0], yi > 0.5)).collect();
        peaks.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best = (0usize, f64::NEG_INFINITY);
        // Threshold between peaks[i-1] and peaks[i]: below is negative.
        let mut correct = peaks.iter().filter(|p| p.1).count();
        for i in 0..=peaks.len() {
            if i > 0 {
                correct = if peaks[i - 1].1 { correct - 1 } else { correct + 1 };
            }
            let c = if i == 0 { peaks.iter().filter(|p| p.1).count() } else { correct };
            if c as f64 > best.1 {
                best = (i, c as f64);
            }
        }
        let i = best.0;
        let detect_threshold = match i {
            0 => peaks[0].0 - 1e-6,
            i if i == peaks.len() => peaks[i - 1].0 + 1e-6,
            i => 0.5 * (peaks[i - 1].0 + peaks[i].0),
        };

        Ok(Self {
            scales,
            organ_threshold,
            mean,
            std,
            weights: w,
            bias: b,
            detect_threshold,
        })
    }

    pub fn features(&self, image: &LatentTensor) -> [f64; N_FEATURES] {
        Self::raw_features(&self.scales, self.organ_threshold, image)
    }

    pub fn logit(&self, image: &LatentTensor) -> f64 {
        let f = self.features(image);
        self.bias + (0..N_FEATURES).map(|j| self.weights[j] * (f[j] - self.mean[j]) / self.std[j]).sum::<f64>()
    }

    pub fn predict(&self, image: &LatentTensor) -> Label {
        if self.logit(image) > 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// Fraction of images classified as their label.
    pub fn accuracy<'a>(&self, images: impl IntoIterator<Item = (&'a LatentTensor, Label)>) -> f64 {
        let (mut hit, mut n) = (0usize, 0usize);
        for (img, l) in images {
            hit += (self.predict(img) == l) as usize;
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    }

    /// Peak interior blob response: the lesion-intensity score.
    pub fn lesion_score(&self, image: &LatentTensor) -> f64 {
        self.features(image)[0]
    }

    /// Peak blob response over `region`, ignoring the organ mask.
    pub fn region_peak(&self, image: &LatentTensor, region: &[bool]) -> f64 {
        let map = blob_map(image, &self.scales, self.organ_threshold);
        map.response
            .iter()
            .zip(region)
            .filter(|(_, &m)| m)
            .map(|(&r, _)| r as f64)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether the detector fires anywhere inside `region`.
    pub fn fires(&self, image: &LatentTensor, region: &[bool]) -> bool {
        self.region_peak(image, region) > self.detect_threshold
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::toy::render_toy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rendered(n: usize, seed: u64, cfg: &ToyConfig) -> Vec<(LatentTensor, Label)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let l = if i % 2 == 0 { Label::Negative } else { Label::Positive };
                (render_toy(l, cfg, &mut rng).image, l)
            })
            .collect()
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let img = vec![0.3; 49];
        assert!(gaussian_blur(&img, 7, 7, 1.5).iter().all(|v| (v - 0.3).abs() < 1e-6));
        let k = gaussian_kernel(2.0);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn erosion_shrinks_a_square() {
        let mut m = vec![false; 100];
        for y in 2..8 {
            for x in 2..8 {
                m[y * 10 + x] = true;
            }
        }
        let e = erode(&m, 10, 10, 1);
        assert_eq!(e.iter().filter(|&&b| b).count(), 16);
        assert!(e[3 * 10 + 3] && !e[2 * 10 + 2]);
    }

    #[test]
    fn oracle_separates_held_out_renders() {
        let cfg = ToyConfig::with_resolution(32);
        let oracle = LesionOracle::fit(&rendered(200, 1, &cfg), &cfg).unwrap();
        let test = rendered(200, 2, &cfg);
        let acc = oracle.accuracy(test.iter().map(|(i, l)| (i, *l)));
        assert!(acc >= 0.9, "accuracy {acc}");
    }

    #[test]
    fn detector_fires_on_lesions_only() {
        let cfg = ToyConfig::with_resolution(32);
        let oracle = LesionOracle::fit(&rendered(200, 1, &cfg), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let all = vec![true; 32 * 32];
        let mut hits = 0;
        for _ in 0..40 {
            let pos = render_toy(Label::Positive, &cfg, &mut rng);
            let neg = render_toy(Label::Negative, &cfg, &mut rng);
            let inside = |img| blob_map(img, &oracle.scales, oracle.organ_threshold).interior;
            hits += oracle.fires(&pos.image, &inside(&pos.image)) as usize;
            hits += !oracle.fires(&neg.image, &inside(&neg.image)) as usize;
        }
        assert!(hits >= 72, "{hits}/80");
        assert!(oracle.region_peak(&LatentTensor::zeros(cfg.shape()), &all).abs() < 1e-6);
    }

    #[test]
    fn fitting_needs_both_classes() {
        let cfg = ToyConfig::with_resolution(16);
        let only_neg: Vec<_> = rendered(4, 0, &cfg).into_iter().filter(|(_, l)| !l.is_positive()).collect();
        assert!(LesionOracle::fit(&only_neg, &cfg).is_err());
    }
}
