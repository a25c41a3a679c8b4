//! Learn a concept embedding against a frozen denoiser and text conditioner.

mod conditioner;
mod embedding;
mod format;
mod train;

pub use conditioner::{TextConditioner, Token, ToyConditioner};
pub use embedding::{bare_name, init_embedding, ConceptEmbedding, EmbeddingMetadata, InitSource, MAX_VECTORS};
pub use format::{
    decode_embedding, encode_embedding, encoded_len, load_embedding, save_embedding, EMBEDDING_MAGIC,
    EMBEDDING_VERSION,
};
pub use train::{
    frozen_parameter_hash, ti_loss, ti_loss_and_grad, train_embedding, Checkpoint, TIConfig, TrainOutcome,
    TrainingState,
};
