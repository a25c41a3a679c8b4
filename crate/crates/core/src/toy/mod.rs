//! A self-contained toy world: a captioned corpus, a pretrained base model,
//! and an independent lesion oracle used to judge generated images.

mod base;
mod oracle;

pub use base::{
    corpus_sample, decode_base, encode_base, load_base, pretrain_base, save_base, BaseConfig, BaseModel, VOCAB,
};
pub use oracle::{blob_map, erode, gaussian_blur, BlobMap, LesionOracle, OracleScales, N_FEATURES};
