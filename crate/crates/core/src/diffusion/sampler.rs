use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{guided_noise_prediction, DenoiserBackbone, GuidanceSpec, NoiseSchedule, ScheduleParams};
use crate::error::{Error, Result};
use crate::tensor::{LatentTensor, Shape};

/// Generator driving one sampling run.
///
/// Draw order: the initial field first, then exactly one standard-normal
/// field per ancestral step (including the last, whose draw is unused).
pub type SamplerRng = ChaCha8Rng;

pub fn sampler_rng(seed: u64) -> SamplerRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flat sampler settings, persisted as a key-value TOML file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_scale: f32,
    pub seed: u64,
    pub sigma_min: f32,
    pub sigma_max: f32,
    pub rho: f32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let p = ScheduleParams::default();
        Self {
            steps: 100,
            cfg_scale: 2.0,
            seed: 0,
            sigma_min: p.sigma_min,
            sigma_max: p.sigma_max,
            rho: p.rho,
        }
    }
}

impl SamplerConfig {
    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            rho: self.rho,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule_params().build(self.steps)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }
}

/// Variance-exploding forward process `x0 + sigma * eps`.
pub fn forward_diffuse(x0: &LatentTensor, sigma: f32, eps: &LatentTensor) -> Result<LatentTensor> {
    eps.ensure_shape(x0.shape())?;
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x0.clone());
    }
    x0.zip_map(eps, |x, e| x + sigma * e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncestralCoefficients {
    pub sigma_up: f32,
    pub sigma_down: f32,
}

/// Splits the move `sigma_cur -> sigma_next` into a deterministic part down to
/// `sigma_down` and fresh noise of scale `sigma_up`.
pub fn ancestral_coefficients(sigma_cur: f32, sigma_next: f32) -> Result<AncestralCoefficients> {
    if !(sigma_cur > sigma_next && sigma_next >= 0.0) {
        return Err(Error::invalid(format!(
            "ancestral step needs sigma_cur > sigma_next >= 0, got {sigma_cur} -> {sigma_next}"
        )));
    }
    let (sc, sn) = (sigma_cur as f64, sigma_next as f64);
    let up = (sn * sn * (sc * sc - sn * sn) / (sc * sc)).sqrt();
    let down = (sn * sn - up * up).max(0.0).sqrt();
    Ok(AncestralCoefficients {
        sigma_up: up as f32,
        sigma_down: down as f32,
    })
}

/// `x + (sigma_down - sigma_cur) * noise_pred + sigma_up * rng_noise`.
pub fn euler_ancestral_step(
    x: &LatentTensor,
    sigma_cur: f32,
    sigma_next: f32,
    noise_pred: &LatentTensor,
    rng_noise: &LatentTensor,
) -> Result<LatentTensor> {
    noise_pred.ensure_shape(x.shape())?;
    rng_noise.ensure_shape(x.shape())?;
    let c = ancestral_coefficients(sigma_cur, sigma_next)?;
    let dt = c.sigma_down - sigma_cur;
    let mut out = x.zip_map(noise_pred, |a, e| a + dt * e)?;
    if c.sigma_up > 0.0 {
        out.axpy(c.sigma_up, rng_noise)?;
    }
    Ok(out)
}

/// Guided Euler-ancestral sampling from `sigma_max * N(0, I)` down the ladder.
pub fn sample<D: DenoiserBackbone + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    guidance: &GuidanceSpec,
    seed: u64,
    shape: Shape,
) -> Result<LatentTensor> {
    sample_with_hook(denoiser, schedule, guidance, seed, shape, |_, _, _| Ok(()))
}

/// [`sample`] with a callback run after every step as `(step, sigma_next, x)`.
pub fn sample_with_hook<D, F>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    guidance: &GuidanceSpec,
    seed: u64,
    shape: Shape,
    mut after_step: F,
) -> Result<LatentTensor>
where
    D: DenoiserBackbone + ?Sized,
    F: FnMut(usize, f32, &mut LatentTensor) -> Result<()>,
{
    guidance.validate()?;
    if shape.channels != denoiser.channels() {
        return Err(Error::ShapeMismatch {
            expected: Shape::new(denoiser.channels(), shape.height, shape.width),
            got: shape,
        });
    }
    let mut rng = sampler_rng(seed);
    let mut x = LatentTensor::randn(shape, &mut rng);
    x.scale(schedule.sigma_max());
    for (step, (sigma_cur, sigma_next)) in schedule.pairs().enumerate() {
        let eps = guided_noise_prediction(denoiser, &x, sigma_cur, guidance).map_err(|e| e.at_step(step))?;
        let noise = LatentTensor::randn(shape, &mut rng);
        x = euler_ancestral_step(&x, sigma_cur, sigma_next, &eps, &noise)?;
        after_step(step, sigma_next, &mut x).map_err(|e| e.at_step(step))?;
        if !x.is_finite() {
            return Err(Error::numeric(Some(step), "latent became non-finite"));
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{build_schedule, ConditioningVector};

    /// Predicts `k * x` regardless of context.
    struct Linear(f32);

    impl DenoiserBackbone for Linear {
        fn cond_dim(&self) -> usize {
            2
        }
        fn channels(&self) -> usize {
            1
        }
        fn predict(&self, x: &LatentTensor, _s: f32, _c: &ConditioningVector) -> Result<LatentTensor> {
            Ok(x.map(|v| self.0 * v))
        }
        fn parameter_hash(&self) -> String {
            String::new()
        }
        fn is_frozen(&self) -> bool {
            true
        }
    }

    fn field(v: f32) -> LatentTensor {
        LatentTensor::full(Shape::new(1, 2, 3), v)
    }

    #[test]
    fn forward_diffuse_cases() {
        let mut rng = sampler_rng(1);
        let x0 = LatentTensor::randn(Shape::new(1, 2, 3), &mut rng);
        let eps = LatentTensor::randn(Shape::new(1, 2, 3), &mut rng);
        assert!(forward_diffuse(&x0, 3.0, &field(0.0)).unwrap().bit_eq(&x0));
        assert!(forward_diffuse(&x0, 0.0, &eps).unwrap().bit_eq(&x0));
        let out = forward_diffuse(&field(0.0), 2.0, &field(1.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));
        assert!(forward_diffuse(&x0, 1.0, &LatentTensor::zeros(Shape::new(1, 3, 2))).is_err());
    }

    #[test]
    fn ancestral_coefficients_half_step() {
        let c = ancestral_coefficients(1.0, 0.5).unwrap();
        assert!((c.sigma_up as f64 - (0.25f64 * 0.75).sqrt()).abs() < 1e-7);
        assert!((c.sigma_up - 0.4330127).abs() < 1e-6);
        assert!((c.sigma_down - 0.25).abs() < 1e-7);
    }

    #[test]
    fn final_step_is_pure_denoise() {
        let x = field(1.5);
        let eps = field(0.5);
        let a = euler_ancestral_step(&x, 2.0, 0.0, &eps, &field(7.0)).unwrap();
        let b = euler_ancestral_step(&x, 2.0, 0.0, &eps, &field(f32::INFINITY)).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.data().iter().all(|&v| v == 1.5 - 2.0 * 0.5));
    }

    #[test]
    fn zero_prediction_and_noise_leave_x_fixed() {
        let x = field(0.3);
        let out = euler_ancestral_step(&x, 1.0, 0.5, &field(0.0), &field(0.0)).unwrap();
        assert!(out.bit_eq(&x));
    }

    #[test]
    fn step_rejects_bad_ordering() {
        let x = field(0.0);
        assert!(euler_ancestral_step(&x, 0.5, 0.5, &x, &x).is_err());
        assert!(euler_ancestral_step(&x, 0.5, 1.0, &x, &x).is_err());
        assert!(euler_ancestral_step(&x, 0.5, -0.1, &x, &x).is_err());
    }

    #[test]
    fn one_step_sample_is_init_minus_scaled_prediction() {
        let net = Linear(0.25);
        let schedule = build_schedule(1, 0.02, 10.0, 7.0).unwrap();
        let guidance = GuidanceSpec::single(ConditioningVector::new(vec![1.0, 0.0]), 2.0);
        let shape = Shape::new(1, 2, 3);
        let out = sample(&net, &schedule, &guidance, 9, shape).unwrap();
        let mut init = LatentTensor::randn(shape, &mut sampler_rng(9));
        init.scale(10.0);
        let expected = init.map(|v| v - 10.0 * (0.25 * v));
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-5);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let net = Linear(0.1);
        let schedule = build_schedule(20, 0.02, 10.0, 7.0).unwrap();
        let g = GuidanceSpec::single(ConditioningVector::new(vec![0.0, 1.0]), 2.0);
        let shape = Shape::new(1, 4, 4);
        let a = sample(&net, &schedule, &g, 42, shape).unwrap();
        let b = sample(&net, &schedule, &g, 42, shape).unwrap();
        let c = sample(&net, &schedule, &g, 43, shape).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn sampler_config_roundtrips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sampler.toml");
        let cfg = SamplerConfig {
            steps: 25,
            cfg_scale: 3.0,
            seed: 7,
            ..Default::default()
        };
        cfg.save(&path).unwrap();
        assert_eq!(SamplerConfig::load(&path).unwrap(), cfg);
    }
}
