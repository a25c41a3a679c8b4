use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{sample_with_hook, DenoiserBackbone, GuidanceSpec, NoiseSchedule};
use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Shape};

/// Grayscale values at or above this become 1 (regenerate).
pub const MASK_THRESHOLD: u8 = 128;

/// Binary regeneration mask over a reference image; 1 = regenerate, 0 = keep.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
    reference: LatentTensor,
}

impl InpaintMask {
    pub fn new(mask: Vec<bool>, reference: LatentTensor) -> Result<Self> {
        let s = reference.shape();
        if mask.len() != s.plane() {
            return Err(Error::invalid(format!(
                "mask has {} pixels, reference is {}x{}",
                mask.len(),
                s.height,
                s.width
            )));
        }
        if !reference.is_finite() {
            return Err(Error::numeric(None, "inpainting reference is not finite"));
        }
        Ok(Self {
            height: s.height,
            width: s.width,
            mask,
            reference,
        })
    }

    /// Thresholds 8-bit grayscale values at [`MASK_THRESHOLD`].
    pub fn from_gray(values: &[u8], height: usize, width: usize, reference: LatentTensor) -> Result<Self> {
        let s = reference.shape();
        if (height, width) != (s.height, s.width) {
            return Err(Error::ShapeMismatch {
                expected: s,
                got: Shape::new(s.channels, height, width),
            });
        }
        Self::new(values.iter().map(|&v| v >= MASK_THRESHOLD).collect(), reference)
    }

    pub fn load_png(path: &Path, reference: LatentTensor) -> Result<Self> {
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        Self::from_gray(img.as_raw(), h as usize, w as usize, reference)
    }

    /// Regenerates a disc of radius `r` centred on `(cy, cx)`.
    pub fn disc(reference: LatentTensor, cy: f32, cx: f32, r: f32) -> Result<Self> {
        let s = reference.shape();
        let mask = (0..s.plane())
            .map(|i| {
                let (y, x) = ((i / s.width) as f32, (i % s.width) as f32);
                (y - cy).powi(2) + (x - cx).powi(2) <= r * r
            })
            .collect();
        Self::new(mask, reference)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_masked(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn values(&self) -> &[bool] {
        &self.mask
    }

    pub fn reference(&self) -> &LatentTensor {
        &self.reference
    }

    /// Keeps `x` where the mask is set and writes `reference + sigma * noise`
    /// elsewhere; at `sigma == 0` the reference is copied verbatim.
    pub fn blend(&self, x: &mut LatentTensor, sigma: f32, noise: &LatentTensor) -> Result<()> {
        x.ensure_shape(self.reference.shape())?;
        let plane = self.height * self.width;
        let refd = self.reference.data();
        let nd = noise.data();
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            if !self.mask[i % plane] {
                *v = if sigma == 0.0 { refd[i] } else { refd[i] + sigma * nd[i] };
            }
        }
        Ok(())
    }
}

/// Replacement-method inpainting on top of [`sample_with_hook`].
///
/// The blend noise comes from a second stream of the seeded generator, so the
/// sampler's own draws are untouched and an all-ones mask reproduces plain
/// sampling exactly.
pub fn inpaint<D: DenoiserBackbone + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    guidance: &GuidanceSpec,
    mask: &InpaintMask,
    seed: u64,
) -> Result<LatentTensor> {
    let shape = mask.reference.shape();
    let mut blend_rng = ChaCha8Rng::seed_from_u64(seed);
    blend_rng.set_stream(1);
    sample_with_hook(denoiser, schedule, guidance, seed, shape, |_, sigma_next, x| {
        let noise = LatentTensor::randn(shape, &mut blend_rng);
        mask.blend(x, sigma_next, &noise)
    })
}
