use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ConceptEmbedding;
use crate::diffusion::ConditioningVector;
use crate::error::{Error, Result};
use crate::nn::hex;

/// One prompt element handed to a text conditioner.
#[derive(Debug, Clone, Copy)]
pub enum Token<'a> {
    /// A frozen vocabulary word.
    Vocab(&'a str),
    /// A learnable concept embedding.
    Concept(&'a ConceptEmbedding),
}

/// Maps token sequences to conditioning vectors. Vocabulary embeddings are frozen.
pub trait TextConditioner: Send + Sync {
    fn dim(&self) -> usize;

    fn encode(&self, tokens: &[Token<'_>]) -> Result<ConditioningVector>;

    /// Pulls `dL/d context` back onto the vectors of the concept at
    /// `tokens[concept_index]`, laid out like `ConceptEmbedding::vectors`.
    fn concept_grad(&self, tokens: &[Token<'_>], concept_index: usize, context_grad: &[f32]) -> Result<Vec<f32>>;

    fn parameter_hash(&self) -> String;
}

/// Mean-pools every row of every token: vocabulary words contribute one row,
/// concepts contribute their `n_vectors` rows. An empty prompt is unconditional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConditioner {
    dim: usize,
    vocab: BTreeMap<String, Vec<f32>>,
}

impl ToyConditioner {
    /// Vocabulary of unit-variance Gaussian vectors drawn in word order from `seed`.
    pub fn random_vocab(dim: usize, words: &[&str], seed: u64) -> Self {
        Self::random_vocab_with_std(dim, words, 1.0, seed)
    }

    pub fn random_vocab_with_std(dim: usize, words: &[&str], std: f32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = words
            .iter()
            .map(|w| {
                let v = (0..dim)
                    .map(|_| std * Distribution::<f32>::sample(&StandardNormal, &mut rng))
                    .collect();
                ((*w).to_owned(), v)
            })
            .collect();
        Self { dim, vocab }
    }

    /// Builds a conditioner from explicit word vectors, each of length `dim`.
    pub fn from_vocab(dim: usize, vocab: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        if let Some((w, v)) = vocab.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::invalid(format!("word `{w}` has dim {}, expected {dim}", v.len())));
        }
        Ok(Self { dim, vocab })
    }

    pub fn word(&self, word: &str) -> Option<&[f32]> {
        self.vocab.get(word).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vocab.keys().map(String::as_str)
    }

    fn rows(&self, tokens: &[Token<'_>]) -> Result<usize> {
        let mut rows = 0;
        for t in tokens {
            rows += match t {
                Token::Vocab(w) => {
                    if !self.vocab.contains_key(*w) {
                        return Err(Error::UnknownConcept((*w).to_owned()));
                    }
                    1
                }
                Token::Concept(e) => {
                    if e.dim() != self.dim {
                        return Err(Error::invalid(format!(
                            "concept `{}` has dim {}, conditioner expects {}",
                            e.name(),
                            e.dim(),
                            self.dim
                        )));
                    }
                    e.n_vectors()
                }
            };
        }
        Ok(rows)
    }
}

impl TextConditioner for ToyConditioner {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, tokens: &[Token<'_>]) -> Result<ConditioningVector> {
        let rows = self.rows(tokens)?;
        if rows == 0 {
            return Ok(ConditioningVector::unconditional(self.dim));
        }
        let mut acc = vec![0.0f64; self.dim];
        let mut add = |row: &[f32]| {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        };
        for t in tokens {
            match t {
                Token::Vocab(w) => add(&self.vocab[*w]),
                Token::Concept(e) => e.vectors().chunks_exact(self.dim).for_each(&mut add),
            }
        }
        Ok(ConditioningVector::new(
            acc.into_iter().map(|a| (a / rows as f64) as f32).collect(),
        ))
    }

    fn concept_grad(&self, tokens: &[Token<'_>], concept_index: usize, context_grad: &[f32]) -> Result<Vec<f32>> {
        let rows = self.rows(tokens)?;
        let Some(Token::Concept(e)) = tokens.get(concept_index) else {
            return Err(Error::invalid(format!("token {concept_index} is not a concept")));
        };
        if context_grad.len() != self.dim {
            return Err(Error::invalid("context gradient has the wrong dimension"));
        }
        let scale = 1.0 / rows as f32;
        let row: Vec<f32> = context_grad.iter().map(|g| g * scale).collect();
        Ok(row.iter().copied().cycle().take(e.n_vectors() * self.dim).collect())
    }

    fn parameter_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (word, v) in &self.vocab {
            h.update((word.len() as u64).to_le_bytes());
            h.update(word.as_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}
