use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape parameters of the rho-ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub sigma_min: f32,
    pub sigma_max: f32,
    pub rho: f32,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            sigma_min: 0.02,
            sigma_max: 10.0,
            rho: 7.0,
        }
    }
}

/// Descending noise levels ending in an exact zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f32>,
    params: ScheduleParams,
}

impl NoiseSchedule {
    /// Number of denoising steps (`sigmas.len() - 1`).
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    pub fn sigmas(&self) -> &[f32] {
        &self.sigmas
    }

    pub fn sigma_max(&self) -> f32 {
        self.sigmas[0]
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// `(sigma_cur, sigma_next)` for every step.
    pub fn pairs(&self) -> impl Iterator<Item = (f32, f32)> + '_ {
        self.sigmas.windows(2).map(|w| (w[0], w[1]))
    }

    /// Positive levels only, i.e. every level a denoiser is ever queried at.
    pub fn positive(&self) -> &[f32] {
        &self.sigmas[..self.sigmas.len() - 1]
    }
}

/// Builds the Karras rho-ladder
/// `sigma_i = (max^(1/rho) + i/(steps-1) * (min^(1/rho) - max^(1/rho)))^rho`
/// for `i < steps`, followed by a terminal zero.
pub fn build_schedule(steps: usize, sigma_min: f32, sigma_max: f32, rho: f32) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(sigma_min.is_finite() && sigma_max.is_finite() && sigma_min > 0.0 && sigma_min < sigma_max) {
        return Err(Error::invalid(format!(
            "need 0 < sigma_min < sigma_max, got sigma_min={sigma_min}, sigma_max={sigma_max}"
        )));
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::invalid(format!("rho must be positive, got {rho}")));
    }

    let params = ScheduleParams {
        sigma_min,
        sigma_max,
        rho,
    };
    let mut sigmas = Vec::with_capacity(steps + 1);
    if steps == 1 {
        sigmas.push(sigma_max);
    } else {
        let inv = 1.0 / rho as f64;
        let hi = (sigma_max as f64).powf(inv);
        let lo = (sigma_min as f64).powf(inv);
        for i in 0..steps {
            let t = i as f64 / (steps - 1) as f64;
            sigmas.push((hi + t * (lo - hi)).powf(rho as f64) as f32);
        }
        // Pin the endpoints against powf round-off.
        sigmas[0] = sigma_max;
        sigmas[steps - 1] = sigma_min;
    }
    sigmas.push(0.0);

    if let Some(i) = sigmas.windows(2).position(|w| w[0] <= w[1]) {
        return Err(Error::invalid(format!(
            "ladder is not strictly decreasing at index {i} ({} <= {}); too many steps for this sigma range",
            sigmas[i],
            sigmas[i + 1]
        )));
    }
    Ok(NoiseSchedule { sigmas, params })
}

impl ScheduleParams {
    pub fn build(&self, steps: usize) -> Result<NoiseSchedule> {
        build_schedule(steps, self.sigma_min, self.sigma_max, self.rho)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_step_is_degenerate_ladder() {
        let s = build_schedule(1, 0.02, 10.0, 7.0).unwrap();
        assert_eq!(s.sigmas(), &[10.0, 0.0]);
    }

    #[test]
    fn rho_one_interpolates_linearly() {
        let s = build_schedule(2, 0.1, 10.0, 1.0).unwrap();
        assert_eq!(s.sigmas(), &[10.0, 0.1, 0.0]);
        let s = build_schedule(3, 1.0, 3.0, 1.0).unwrap();
        assert_eq!(s.sigmas(), &[3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn default_hundred_step_ladder() {
        let p = ScheduleParams::default();
        let s = p.build(100).unwrap();
        assert_eq!(s.sigmas().len(), 101);
        assert_eq!(s.sigma_max(), 10.0);
        assert_eq!(s.sigmas()[99], 0.02);
        assert_eq!(*s.sigmas().last().unwrap(), 0.0);
        assert!(s.sigmas().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_schedule(0, 0.02, 10.0, 7.0).is_err());
        assert!(build_schedule(10, 10.0, 0.02, 7.0).is_err());
        assert!(build_schedule(10, 0.0, 10.0, 7.0).is_err());
        assert!(build_schedule(10, 1.0, 1.0, 7.0).is_err());
        assert!(build_schedule(10, 0.02, 10.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn ladder_invariants(
            steps in 1usize..400,
            sigma_min in 1e-3f32..1.0,
            ratio in 1.5f32..200.0,
            rho in 0.5f32..10.0,
        ) {
            let sigma_max = sigma_min * ratio;
            let s = build_schedule(steps, sigma_min, sigma_max, rho).unwrap();
            prop_assert_eq!(s.sigmas().len(), steps + 1);
            prop_assert_eq!(s.sigmas()[0], sigma_max);
            prop_assert_eq!(*s.sigmas().last().unwrap(), 0.0);
            prop_assert!(s.sigmas().windows(2).all(|w| w[0] > w[1]));
        }
    }
}
