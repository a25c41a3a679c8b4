use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on vectors per token, the context limit of the text encoder.
pub const MAX_VECTORS: usize = 75;

/// Snapshot of how an embedding was trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMetadata {
    pub learning_rate: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub n_vectors: usize,
    pub seed: u64,
    pub training_images: usize,
    pub sigma_sampling: String,
    pub denoiser_hash: String,
    pub conditioner_hash: String,
    pub final_loss_ema: f64,
}

/// A named learnable `(n_vectors, dim)` token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptEmbedding {
    name: String,
    n_vectors: usize,
    dim: usize,
    vectors: Vec<f32>,
    pub metadata: Option<EmbeddingMetadata>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSource {
    /// i.i.d. `N(0, std^2)` entries.
    RandomNormal { std: f32 },
    /// Every row starts as a copy of an existing token vector.
    CopyToken(Vec<f32>),
}

impl Default for InitSource {
    fn default() -> Self {
        InitSource::RandomNormal { std: 0.02 }
    }
}

/// Strips one pair of surrounding angle brackets: `<healthy>` -> `healthy`.
pub fn bare_name(token: &str) -> &str {
    token
        .strip_prefix('<')
        .and_then(|t| t.strip_suffix('>'))
        .unwrap_or(token)
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.len() > u16::MAX as usize {
        return Err(Error::invalid("concept name must be 1..=65535 bytes"));
    }
    if name.contains(['<', '>', '*']) || name.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!(
            "concept name `{name}` may not contain whitespace, `<`, `>` or `*`"
        )));
    }
    Ok(())
}

impl ConceptEmbedding {
    pub fn from_vectors(name: &str, n_vectors: usize, dim: usize, vectors: Vec<f32>) -> Result<Self> {
        let name = bare_name(name);
        validate_name(name)?;
        if n_vectors == 0 || n_vectors > MAX_VECTORS {
            return Err(Error::invalid(format!(
                "n_vectors must be in 1..={MAX_VECTORS}, got {n_vectors}"
            )));
        }
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be positive"));
        }
        if vectors.len() != n_vectors * dim {
            return Err(Error::invalid(format!(
                "expected {} values for {n_vectors}x{dim}, got {}",
                n_vectors * dim,
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(None, "embedding contains non-finite values"));
        }
        Ok(Self {
            name: name.to_owned(),
            n_vectors,
            dim,
            vectors,
            metadata: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The prompt token, `<name>`.
    pub fn token(&self) -> String {
        format!("<{}>", self.name)
    }

    pub fn n_vectors(&self) -> usize {
        self.n_vectors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut [f32] {
        &mut self.vectors
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.n_vectors == other.n_vectors
            && self.dim == other.dim
            && self
                .vectors
                .iter()
                .zip(&other.vectors)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Creates a fresh embedding; deterministic in `seed`.
pub fn init_embedding(
    name: &str,
    n_vectors: usize,
    dim: usize,
    init: &InitSource,
    seed: u64,
) -> Result<ConceptEmbedding> {
    if n_vectors == 0 || n_vectors > MAX_VECTORS {
        return Err(Error::invalid(format!(
            "n_vectors must be in 1..={MAX_VECTORS}, got {n_vectors}"
        )));
    }
    let vectors = match init {
        InitSource::RandomNormal { std } => {
            let normal = Normal::new(0.0f32, *std).map_err(|e| Error::invalid(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n_vectors * dim).map(|_| normal.sample(&mut rng)).collect()
        }
        InitSource::CopyToken(v) => {
            if v.len() != dim {
                return Err(Error::invalid(format!(
                    "init token has dim {}, expected {dim}",
                    v.len()
                )));
            }
            v.iter().copied().cycle().take(n_vectors * dim).collect()
        }
    };
    ConceptEmbedding::from_vectors(name, n_vectors, dim, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_too_many_vectors() {
        assert!(init_embedding("x", 76, 8, &InitSource::default(), 0).is_err());
        assert!(init_embedding("x", 0, 8, &InitSource::default(), 0).is_err());
        assert!(init_embedding("x", 75, 8, &InitSource::default(), 0).is_ok());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = init_embedding("<healthy>", 64, 32, &InitSource::default(), 9).unwrap();
        let b = init_embedding("healthy", 64, 32, &InitSource::default(), 9).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(a.name(), "healthy");
        assert_eq!(a.token(), "<healthy>");
        let std = (a.vectors().iter().map(|v| v * v).sum::<f32>() / a.vectors().len() as f32).sqrt();
        assert!((std - 0.02).abs() < 0.003, "{std}");
    }

    #[test]
    fn copy_token_init_repeats_the_row() {
        let e = init_embedding("c", 3, 2, &InitSource::CopyToken(vec![1.0, -2.0]), 0).unwrap();
        assert_eq!(e.vectors(), &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0]);
        assert!(init_embedding("c", 3, 2, &InitSource::CopyToken(vec![1.0]), 0).is_err());
    }

    #[test]
    fn names_are_validated() {
        assert!(ConceptEmbedding::from_vectors("a b", 1, 1, vec![0.0]).is_err());
        assert!(ConceptEmbedding::from_vectors("", 1, 1, vec![0.0]).is_err());
        assert!(ConceptEmbedding::from_vectors("ok-name", 1, 1, vec![f32::NAN]).is_err());
    }
}
