use super::{ConditioningVector, DenoiserBackbone};
use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceTerm {
    pub context: ConditioningVector,
    pub weight: f32,
}

/// Weighted conditional terms combined with classifier-free guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSpec {
    pub terms: Vec<GuidanceTerm>,
    pub cfg_scale: f32,
}

impl GuidanceSpec {
    /// Plain single-concept guidance.
    pub fn single(context: ConditioningVector, cfg_scale: f32) -> Self {
        Self {
            terms: vec![GuidanceTerm {
                context,
                weight: 1.0,
            }],
            cfg_scale,
        }
    }

    pub fn weighted(terms: impl IntoIterator<Item = (ConditioningVector, f32)>, cfg_scale: f32) -> Self {
        Self {
            terms: terms
                .into_iter()
                .map(|(context, weight)| GuidanceTerm { context, weight })
                .collect(),
            cfg_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Empty("guidance terms"));
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return Err(Error::invalid(format!("cfg scale must be finite and >= 0, got {}", self.cfg_scale)));
        }
        if let Some(t) = self.terms.iter().find(|t| !t.weight.is_finite()) {
            return Err(Error::invalid(format!("guidance weight {} is not finite", t.weight)));
        }
        Ok(())
    }

    /// Terms whose effective coefficient `cfg * w` is non-zero.
    fn active(&self) -> impl Iterator<Item = (&GuidanceTerm, f32)> {
        let cfg = self.cfg_scale;
        self.terms
            .iter()
            .map(move |t| (t, cfg * t.weight))
            .filter(|(_, k)| *k != 0.0)
    }
}

fn checked(pred: LatentTensor, what: impl FnOnce() -> String) -> Result<LatentTensor> {
    if pred.is_finite() {
        Ok(pred)
    } else {
        Err(Error::numeric(None, format!("{} is not finite", what())))
    }
}

/// `e_u + cfg * sum_i w_i (e_i - e_u)`, evaluated as
/// `(1 - cfg * sum_i w_i) e_u + sum_i (cfg w_i) e_i`.
///
/// Terms with a zero coefficient are never evaluated, and the unconditional
/// branch is skipped when its coefficient vanishes, so a single weight-1 term
/// at scale 1 returns the conditional prediction bit for bit.
pub fn guided_noise_prediction<D: DenoiserBackbone + ?Sized>(
    denoiser: &D,
    x: &LatentTensor,
    sigma: f32,
    guidance: &GuidanceSpec,
) -> Result<LatentTensor> {
    guidance.validate()?;
    let active: Vec<_> = guidance.active().collect();
    let uncond_coef = 1.0 - active.iter().map(|(_, k)| k).sum::<f32>();

    let mut out: Option<LatentTensor> = None;
    if uncond_coef != 0.0 || active.is_empty() {
        let uncond = ConditioningVector::unconditional(denoiser.cond_dim());
        let e_u = checked(denoiser.predict(x, sigma, &uncond)?, || "unconditional prediction".into())?;
        if active.is_empty() {
            return Ok(e_u);
        }
        out = Some(e_u.map(|v| uncond_coef * v));
    }
    for (i, (term, k)) in active.iter().enumerate() {
        let e_i = checked(denoiser.predict(x, sigma, &term.context)?, || {
            format!("conditional prediction for term {i}")
        })?;
        match out.as_mut() {
            Some(acc) => acc.axpy(*k, &e_i)?,
            None => out = Some(e_i.map(|v| k * v)),
        }
    }
    let out = out.expect("at least one branch evaluated");
    checked(out, || "guided prediction".into())
}
