//! Preprocessing pipelines, manifests and the synthetic toy modality.

pub mod io;
mod manifest;
pub mod picai;
pub mod radiograph;
pub mod resample;
pub mod toy;

pub use manifest::{
    config_hash, ensure_disjoint, split_manifest, DatasetManifest, Label, SliceRecord, Split, SplitCounts,
};
pub use picai::{picai_extract, PicaiConfig, VolumeCase};
pub use radiograph::{chexpert_preprocess, pcam_preprocess, PatchConfig, RadiographConfig};
pub use toy::{toy_generate, toy_samples, Lesion, ToyConfig, ToySample};
