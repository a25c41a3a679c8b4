use serde::{Deserialize, Serialize};

/// Pooled text-conditioning vector handed to a denoiser.
///
/// The all-zero vector is the distinguished unconditional context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningVector {
    data: Vec<f32>,
}

impl ConditioningVector {
    pub fn new(data: Vec<f32>) -> Self {
        Self { data }
    }

    pub fn unconditional(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn is_unconditional(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
