//! Gaussian feature statistics and the Frechet distance between them.

mod cache;
mod extractor;
mod fid;
mod stats;

pub use cache::{decode_stats, encode_stats, load_stats, save_stats, CachedStats, STATS_MAGIC, STATS_VERSION};
pub use extractor::{FeatureExtractor, RandomConvExtractor};
pub use fid::{compute_stats, extract_all, fid, fid_tensors, load_manifest_images, png_files, FidReport};
pub use stats::{frechet_distance, psd_sqrt, stats_from_features, GaussianStats, NEGATIVE_TOLERANCE};
