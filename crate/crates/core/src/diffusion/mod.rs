//! Sigma-parameterised diffusion: schedules, the forward process, the
//! denoiser interface, guidance and Euler-ancestral sampling.

mod conditioning;
mod denoiser;
mod guidance;
mod sampler;
mod schedule;

pub use conditioning::ConditioningVector;
pub use denoiser::{ConditionGradient, DenoiserBackbone, ToyDenoiser, ToyDenoiserConfig, ToyParams, ToyTrace};
pub use guidance::{guided_noise_prediction, GuidanceSpec, GuidanceTerm};
pub use sampler::{
    ancestral_coefficients, euler_ancestral_step, forward_diffuse, sample, sample_with_hook, sampler_rng,
    AncestralCoefficients, SamplerConfig, SamplerRng,
};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleParams};
