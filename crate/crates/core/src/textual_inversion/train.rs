use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{init_embedding, ConceptEmbedding, EmbeddingMetadata, InitSource, TextConditioner, Token};
use crate::diffusion::{forward_diffuse, ConditionGradient, DenoiserBackbone, ScheduleParams};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TIConfig {
    pub learning_rate: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub n_vectors: usize,
    pub seed: u64,
    pub init_std: f32,
    /// Training sigmas are drawn uniformly from the positive levels of this ladder.
    pub ladder_steps: usize,
    pub schedule: ScheduleParams,
    pub checkpoint_every: usize,
    pub keep_checkpoints: usize,
    pub ema_decay: f64,
    /// Loss EMA is logged every this many steps.
    pub log_every: usize,
}

impl Default for TIConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            steps: 50_000,
            batch_size: 1,
            n_vectors: 64,
            seed: 0,
            init_std: 0.02,
            ladder_steps: 1000,
            schedule: ScheduleParams::default(),
            checkpoint_every: 5_000,
            keep_checkpoints: 3,
            ema_decay: 0.99,
            log_every: 50,
        }
    }
}

impl TIConfig {
    /// Desk-scale run length; everything else as in the full recipe.
    pub fn desk_scale() -> Self {
        Self {
            steps: 2_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.steps == 0 || self.batch_size == 0 || self.n_vectors == 0 || self.ladder_steps == 0 {
            return Err(Error::invalid("steps, batch size, vectors and ladder steps must be positive"));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(Error::invalid("checkpoint and log cadence must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub embedding: ConceptEmbedding,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingState {
    pub step: usize,
    /// Bias-corrected exponential moving average of the loss.
    pub loss_ema: Option<f64>,
    /// `(step, loss_ema)` every `log_every` steps.
    pub ema_trace: Vec<(usize, f64)>,
    pub checkpoints: VecDeque<Checkpoint>,
    ema_raw: f64,
    ema_weight: f64,
}

impl TrainingState {
    pub fn ema_at(&self, step: usize) -> Option<f64> {
        self.ema_trace.iter().find(|(s, _)| *s == step).map(|(_, e)| *e)
    }

    fn record(&mut self, loss: f64, decay: f64) {
        self.step += 1;
        self.ema_raw = decay * self.ema_raw + (1.0 - decay) * loss;
        self.ema_weight = decay * self.ema_weight + (1.0 - decay);
        self.loss_ema = Some(self.ema_raw / self.ema_weight);
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub embedding: ConceptEmbedding,
    pub state: TrainingState,
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
}

/// Hash of everything that must stay frozen during embedding training.
pub fn frozen_parameter_hash<D, C>(denoiser: &D, conditioner: &C) -> String
where
    D: DenoiserBackbone + ?Sized,
    C: TextConditioner + ?Sized,
{
    format!("{}:{}", denoiser.parameter_hash(), conditioner.parameter_hash())
}

/// Noise-matching loss `mean((eps - predict(x0 + sigma eps, sigma, encode([concept])))^2)`.
pub fn ti_loss<D, C>(
    denoiser: &D,
    conditioner: &C,
    embedding: &ConceptEmbedding,
    x0: &LatentTensor,
    sigma: f32,
    eps: &LatentTensor,
) -> Result<f64>
where
    D: DenoiserBackbone + ?Sized,
    C: TextConditioner + ?Sized,
{
    let context = conditioner.encode(&[Token::Concept(embedding)])?;
    let noisy = forward_diffuse(x0, sigma, eps)?;
    denoiser.predict(&noisy, sigma, &context)?.mse(eps)
}

/// [`ti_loss`] together with its gradient w.r.t. the embedding vectors.
pub fn ti_loss_and_grad<D, C>(
    denoiser: &D,
    conditioner: &C,
    embedding: &ConceptEmbedding,
    x0: &LatentTensor,
    sigma: f32,
    eps: &LatentTensor,
) -> Result<(f64, Vec<f32>)>
where
    D: ConditionGradient + ?Sized,
    C: TextConditioner + ?Sized,
{
    let tokens = [Token::Concept(embedding)];
    let context = conditioner.encode(&tokens)?;
    let noisy = forward_diffuse(x0, sigma, eps)?;
    let n = eps.shape().numel() as f32;
    let (pred, context_grad) = denoiser.predict_with_context_grad(&noisy, sigma, &context, &mut |pred| {
        pred.zip_map(eps, |p, e| 2.0 * (p - e) / n).expect("shape checked by forward_diffuse")
    })?;
    let loss = pred.mse(eps)?;
    let grad = conditioner.concept_grad(&tokens, 0, &context_grad)?;
    Ok((loss, grad))
}

/// Optimises a fresh embedding named `name` on `dataset`. Only the embedding
/// vectors are updated; the denoiser and conditioner are borrowed immutably.
pub fn train_embedding<D, C>(
    name: &str,
    dataset: &[LatentTensor],
    config: &TIConfig,
    denoiser: &D,
    conditioner: &C,
) -> Result<TrainOutcome>
where
    D: ConditionGradient + ?Sized,
    C: TextConditioner + ?Sized,
{
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if !denoiser.is_frozen() {
        return Err(Error::invalid("denoiser must be frozen before embedding training"));
    }
    let shape = dataset[0].shape();
    if let Some(bad) = dataset.iter().find(|x| x.shape() != shape) {
        return Err(Error::ShapeMismatch {
            expected: shape,
            got: bad.shape(),
        });
    }

    let frozen_hash_before = frozen_parameter_hash(denoiser, conditioner);
    let ladder = config.schedule.build(config.ladder_steps)?;
    let sigmas = ladder.positive();

    let mut embedding = init_embedding(
        name,
        config.n_vectors,
        conditioner.dim(),
        &InitSource::RandomNormal { std: config.init_std },
        config.seed,
    )?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), embedding.vectors().len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5449_5f54_5241_494e);
    let mut order: Vec<usize> = Vec::new();
    let mut state = TrainingState::default();

    for step in 0..config.steps {
        let mut grad = vec![0.0f32; embedding.vectors().len()];
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            if order.is_empty() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut rng);
            }
            let idx = order.pop().expect("refilled above");
            let sigma = sigmas[rng.random_range(0..sigmas.len())];
            let eps = LatentTensor::randn(shape, &mut rng);
            let (l, g) = ti_loss_and_grad(denoiser, conditioner, &embedding, &dataset[idx], sigma, &eps)
                .map_err(|e| e.at_step(step))?;
            loss += l / config.batch_size as f64;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b / config.batch_size as f32;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(Some(step), "embedding loss is not finite"));
        }
        adam.step_slice(embedding.vectors_mut(), &grad);
        state.record(loss, config.ema_decay);

        let done = step + 1;
        if done % config.log_every == 0 {
            state.ema_trace.push((done, state.loss_ema.unwrap_or(loss)));
        }
        if done % config.checkpoint_every == 0 && config.keep_checkpoints > 0 {
            if state.checkpoints.len() == config.keep_checkpoints {
                state.checkpoints.pop_front();
            }
            state.checkpoints.push_back(Checkpoint {
                step: done,
                embedding: embedding.clone(),
            });
        }
    }

    let frozen_hash_after = frozen_parameter_hash(denoiser, conditioner);
    embedding.metadata = Some(EmbeddingMetadata {
        learning_rate: config.learning_rate,
        steps: config.steps,
        batch_size: config.batch_size,
        n_vectors: config.n_vectors,
        seed: config.seed,
        training_images: dataset.len(),
        sigma_sampling: format!(
            "uniform over {}-step ladder (sigma_min={}, sigma_max={}, rho={})",
            config.ladder_steps, config.schedule.sigma_min, config.schedule.sigma_max, config.schedule.rho
        ),
        denoiser_hash: denoiser.parameter_hash(),
        conditioner_hash: conditioner.parameter_hash(),
        final_loss_ema: state.loss_ema.unwrap_or(f64::NAN),
    });
    Ok(TrainOutcome {
        embedding,
        state,
        frozen_hash_before,
        frozen_hash_after,
    })
}
