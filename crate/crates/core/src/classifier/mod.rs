//! Binary classifiers trained on real/synthetic mixes, scored by AUC.

mod augment;
mod auc;
mod harness;
mod model;

pub use augment::{augment, hflip, AugmentConfig};
pub use auc::auc;
pub use harness::{
    build_mix, evaluate_auc, mix_images, study_table, train_classifier, BackboneKind, ClassifierConfig, LabeledImage, MixSpec,
    StudyRow, TrainReport, ValPoint,
};
pub use model::{bce_with_logit, Backbone, CnnTrace, Head, MlpTrace, PixelMlp, SmallCnn, Trainable};
