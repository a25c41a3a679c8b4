use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{avg_pool2, Conv2d};
use crate::tensor::LatentTensor;

/// Deterministic image-to-feature map used for FID.
pub trait FeatureExtractor: Send + Sync {
    /// Identifier embedded in reports; distances are comparable only within one id.
    fn id(&self) -> String;

    fn feature_dim(&self) -> usize;

    fn extract(&self, image: &LatentTensor) -> Result<Vec<f64>>;
}

/// Frozen two-layer random convolutional projection with global pooling.
///
/// Features are the spatial means and standard deviations of the second
/// layer's ReLU activations.
#[derive(Debug, Clone)]
pub struct RandomConvExtractor {
    seed: u64,
    channels: usize,
    conv1: Conv2d,
    conv2: Conv2d,
}

impl RandomConvExtractor {
    pub const DEFAULT_SEED: u64 = 20_230_901;
    const WIDTH1: usize = 16;
    const WIDTH2: usize = 16;

    pub fn new(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv2d::init(channels, Self::WIDTH1, 3, 1, 1.0, &mut rng);
        let conv2 = Conv2d::init(Self::WIDTH1, Self::WIDTH2, 3, 2, 1.0, &mut rng);
        Self {
            seed,
            channels,
            conv1,
            conv2,
        }
    }

    pub fn toy(channels: usize) -> Self {
        Self::new(channels, Self::DEFAULT_SEED)
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn id(&self) -> String {
        format!("toy-randconv-v1-c{}-seed{}", self.channels, self.seed)
    }

    fn feature_dim(&self) -> usize {
        2 * Self::WIDTH2
    }

    fn extract(&self, image: &LatentTensor) -> Result<Vec<f64>> {
        let s = image.shape();
        image.ensure_shape(crate::Shape::new(self.channels, s.height, s.width))?;
        let (h, w) = (s.height, s.width);
        let mut a = vec![0.0; Self::WIDTH1 * h * w];
        self.conv1.forward(image.data(), h, w, &mut a);
        a.iter_mut().for_each(|v| *v = v.max(0.0));
        let (h2, w2) = (h / 2, w / 2);
        let pooled = avg_pool2(&a, Self::WIDTH1, h, w);
        let mut b = vec![0.0; Self::WIDTH2 * h2 * w2];
        self.conv2.forward(&pooled, h2, w2, &mut b);
        let plane = h2 * w2;
        let mut means = Vec::with_capacity(Self::WIDTH2);
        let mut stds = Vec::with_capacity(Self::WIDTH2);
        for c in b.chunks_exact(plane) {
            let vals = c.iter().map(|&v| v.max(0.0) as f64);
            let mean = vals.clone().sum::<f64>() / plane as f64;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            means.push(mean);
            stds.push(var.sqrt());
        }
        means.extend(stds);
        Ok(means)
    }
}
