use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment, auc, bce_with_logit, AugmentConfig, Backbone, Head, PixelMlp, SmallCnn, Trainable};
use crate::datasets::{config_hash, DatasetManifest, Label, SliceRecord, Split};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub learning_rate: f32,
    pub total_batches: usize,
    pub batch_size: usize,
    /// Validation AUC is computed every this many batches and after the last one.
    pub val_every: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub backbone: String,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            total_batches: 6250,
            batch_size: 32,
            val_every: 250,
            augment: AugmentConfig::default(),
            seed: 0,
            backbone: "small-cnn".into(),
        }
    }
}

impl ClassifierConfig {
    /// Shorter schedule with a larger step for a from-scratch toy backbone.
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 2e-3,
            total_batches: 400,
            val_every: 25,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.total_batches == 0 || self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::invalid("classifier learning rate and counts must be positive"));
        }
        self.backbone_kind()?;
        Ok(())
    }

    /// Known names: `small-cnn`, `small-cnn-dense` and `pixel-mlp`.
    pub fn backbone_kind(&self) -> Result<BackboneKind> {
        match self.backbone.as_str() {
            "small-cnn" => Ok(BackboneKind::Cnn(Head::GlobalAverage)),
            "small-cnn-dense" => Ok(BackboneKind::Cnn(Head::Dense)),
            "pixel-mlp" => Ok(BackboneKind::PixelMlp),
            other => Err(Error::invalid(format!("unknown backbone `{other}`"))),
        }
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Cnn(Head),
    PixelMlp,
}

/// An in-memory labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: LatentTensor,
    pub label: Label,
    pub synthetic: bool,
}

/// Per-class counts of real and synthetic training cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub n_real: usize,
    pub n_synthetic: usize,
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_real == 0 && self.n_synthetic == 0 {
            return Err(Error::invalid("a training mix needs real or synthetic cases"));
        }
        Ok(())
    }
}

fn pick<T: Clone>(items: &[T], label_of: impl Fn(&T) -> Label, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(2 * n);
    for label in Label::ALL {
        let mut pool: Vec<&T> = items.iter().filter(|t| label_of(t) == label).collect();
        if pool.len() < n {
            return Err(Error::InsufficientCases {
                label: label.to_string(),
                requested: n,
                available: pool.len(),
            });
        }
        pool.shuffle(rng);
        out.extend(pool.into_iter().take(n).cloned());
    }
    Ok(out)
}

/// Balanced training manifest of `n_real` real and `n_synthetic` synthetic
/// records per class. Synthetic records are flagged.
pub fn build_mix(spec: MixSpec, real: &DatasetManifest, synthetic: &DatasetManifest, seed: u64) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = pick(&real.records, |r| r.label, spec.n_real, &mut rng)?;
    let synth = pick(&synthetic.records, |r| r.label, spec.n_synthetic, &mut rng)?;
    records.extend(synth.into_iter().map(|r| SliceRecord {
        synthetic: true,
        ..r
    }));
    for r in &mut records {
        r.split = Some(Split::Train);
    }
    Ok(DatasetManifest::new(records))
}

/// [`build_mix`] over in-memory images.
pub fn mix_images(spec: MixSpec, real: &[LabeledImage], synthetic: &[LabeledImage], seed: u64) -> Result<Vec<LabeledImage>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = pick(real, |r| r.label, spec.n_real, &mut rng)?;
    let synth = pick(synthetic, |r| r.label, spec.n_synthetic, &mut rng)?;
    out.extend(synth.into_iter().map(|r| LabeledImage { synthetic: true, ..r }));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub batch: usize,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub val_curve: Vec<ValPoint>,
    pub best_batch: usize,
    pub best_val_auc: f64,
    pub test_auc: f64,
    pub seed: u64,
    pub config_hash: String,
    pub backbone: String,
    pub n_train_real: usize,
    pub n_train_synthetic: usize,
}

impl TrainReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn ids(set: &[LabeledImage]) -> BTreeSet<&str> {
    set.iter().map(|x| x.id.as_str()).collect()
}

fn check_leak(a: &[LabeledImage], b: &[LabeledImage]) -> Result<()> {
    let shared: Vec<String> = ids(a).intersection(&ids(b)).map(|s| s.to_string()).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::SplitLeak(shared))
    }
}

pub fn evaluate_auc<B: Backbone + ?Sized>(model: &B, set: &[LabeledImage]) -> Result<f64> {
    let scores = set
        .iter()
        .map(|x| Ok((model.logit(&x.image)? as f64, x.label.is_positive())))
        .collect::<Result<Vec<_>>>()?;
    auc(&scores)
}

/// Trains from scratch, tracks validation AUC, and scores the best
/// validation checkpoint on the test set exactly once.
pub fn train_classifier(
    train: &[LabeledImage],
    val: &[LabeledImage],
    test: &[LabeledImage],
    config: &ClassifierConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    check_leak(train, val)?;
    check_leak(train, test)?;
    check_leak(val, test)?;
    let pos = train.iter().filter(|x| x.label.is_positive()).count();
    if pos * 2 != train.len() {
        return Err(Error::invalid(format!(
            "training set is unbalanced: {pos} positive of {}",
            train.len()
        )));
    }
    let shape = train[0].image.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match config.backbone_kind()? {
        BackboneKind::Cnn(head) => {
            let model = SmallCnn::with_head(shape.channels, head, (shape.height, shape.width), &mut rng);
            fit(model, rng, train, val, test, config)
        }
        BackboneKind::PixelMlp => {
            let model = PixelMlp::new(shape.numel(), &mut rng);
            fit(model, rng, train, val, test, config)
        }
    }
}

fn fit<M: Trainable>(
    mut model: M,
    mut rng: ChaCha8Rng,
    train: &[LabeledImage],
    val: &[LabeledImage],
    test: &[LabeledImage],
    config: &ClassifierConfig,
) -> Result<TrainReport> {
    let mut grads = model.clone();
    let mut adam = Adam::new(AdamConfig::with_lr(config.learning_rate), model.param_count());
    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::new();
    let mut best: Option<(usize, f64, M)> = None;

    for batch in 0..config.total_batches {
        grads.zero();
        let mut loss = 0.0f64;
        for _ in 0..config.batch_size {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order.shuffle(&mut rng);
            }
            let ex = &train[order.pop().expect("refilled")];
            let img = augment(&ex.image, rng.random(), &config.augment);
            let (logit, trace) = model.forward_trace(&img)?;
            let (l, g) = bce_with_logit(logit, ex.label.is_positive());
            loss += l as f64;
            model.backward(&trace, g / config.batch_size as f32, &mut grads);
        }
        if !loss.is_finite() {
            return Err(Error::numeric(Some(batch), "classifier loss is not finite"));
        }
        adam.step(&mut model, &grads);

        let done = batch + 1;
        if done % config.val_every == 0 || done == config.total_batches {
            let a = evaluate_auc(&model, val)?;
            curve.push(ValPoint { batch: done, auc: a });
            if best.as_ref().is_none_or(|(_, b, _)| a > *b) {
                best = Some((done, a, model.clone()));
            }
        }
    }
    let (best_batch, best_val_auc, best_model) = best.expect("at least one validation");
    let test_auc = evaluate_auc(&best_model, test)?;
    Ok(TrainReport {
        val_curve: curve,
        best_batch,
        best_val_auc,
        test_auc,
        seed: config.seed,
        config_hash: config.hash()?,
        backbone: best_model.id(),
        n_train_real: train.iter().filter(|x| !x.synthetic).count(),
        n_train_synthetic: train.iter().filter(|x| x.synthetic).count(),
    })
}

/// One row of an augmentation study: test AUCs over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n_real: usize,
    pub n_synthetic: usize,
    pub note: String,
    pub test_aucs: Vec<f64>,
}

impl StudyRow {
    pub fn mean(&self) -> f64 {
        self.test_aucs.iter().sum::<f64>() / self.test_aucs.len() as f64
    }

    /// Sample standard deviation.
    pub fn std(&self) -> f64 {
        let n = self.test_aucs.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.test_aucs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

/// Markdown table with columns real cases, synthetic cases and mean ± std test AUC.
pub fn study_table(rows: &[StudyRow]) -> String {
    let mut s = String::from("| Real cases | Synthetic cases | Test AUC |\n|---:|---:|:---|\n");
    for r in rows {
        let note = if r.note.is_empty() { String::new() } else { format!(" {}", r.note) };
        let _ = writeln!(
            s,
            "| {} | {}{} | {:.3} ± {:.3} |",
            r.n_real,
            r.n_synthetic,
            note,
            r.mean(),
            r.std()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{toy_samples, ToyConfig};

    fn images(n: usize, seed: u64, prefix: &str) -> Vec<LabeledImage> {
        toy_samples(n, seed, &ToyConfig::with_resolution(16))
            .unwrap()
            .into_iter()
            .map(|(id, s)| LabeledImage {
                id: format!("{prefix}{id}"),
                image: s.image,
                label: s.label,
                synthetic: false,
            })
            .collect()
    }

    fn quick() -> ClassifierConfig {
        ClassifierConfig {
            total_batches: 30,
            batch_size: 8,
            val_every: 10,
            ..ClassifierConfig::desk_scale()
        }
    }

    #[test]
    fn learns_the_toy_task_and_is_reproducible() {
        let (train, val, test) = (images(20, 1, ""), images(10, 2, ""), images(10, 3, ""));
        let a = train_classifier(&train, &val, &test, &quick()).unwrap();
        let b = train_classifier(&train, &val, &test, &quick()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.val_curve.len(), 3);
        assert!(a.val_curve.iter().any(|p| p.batch == a.best_batch && p.auc == a.best_val_auc));
        assert!(a.test_auc > 0.6, "{}", a.test_auc);
    }

    #[test]
    fn leaks_abort() {
        let train = images(4, 1, "");
        let test = images(4, 1, "");
        let val = images(4, 2, "");
        assert!(matches!(
            train_classifier(&train, &val, &test, &quick()),
            Err(Error::SplitLeak(_))
        ));
    }

    #[test]
    fn mixes_are_balanced_and_flagged() {
        let real = images(10, 1, "r");
        let synth = images(30, 2, "s");
        let m = mix_images(MixSpec { n_real: 5, n_synthetic: 20 }, &real, &synth, 0).unwrap();
        assert_eq!(m.len(), 50);
        assert_eq!(m.iter().filter(|x| x.synthetic).count(), 40);
        assert_eq!(m.iter().filter(|x| x.label.is_positive()).count(), 25);
        assert!(mix_images(MixSpec { n_real: 0, n_synthetic: 0 }, &real, &synth, 0).is_err());
        assert!(mix_images(MixSpec { n_real: 11, n_synthetic: 0 }, &real, &synth, 0).is_err());
    }

    #[test]
    fn manifest_mix_rows() {
        let to_manifest = |imgs: &[LabeledImage]| {
            DatasetManifest::new(
                imgs.iter()
                    .map(|x| SliceRecord {
                        id: x.id.clone(),
                        path: format!("{}.png", x.id).into(),
                        label: x.label,
                        split: None,
                        dataset: "toy".into(),
                        config_hash: "0".into(),
                        synthetic: false,
                    })
                    .collect(),
            )
        };
        let real = to_manifest(&images(100, 1, "r"));
        let synth = to_manifest(&images(1000, 2, "s"));
        let base = build_mix(MixSpec { n_real: 100, n_synthetic: 0 }, &real, &synth, 0).unwrap();
        assert_eq!(base.len(), 200);
        let best = build_mix(MixSpec { n_real: 100, n_synthetic: 1000 }, &real, &synth, 0).unwrap();
        assert_eq!(best.len(), 2200);
        assert_eq!(best.records.iter().filter(|r| r.synthetic).count(), 2000);
    }

    #[test]
    fn table_layout() {
        let rows = vec![StudyRow {
            n_real: 200,
            n_synthetic: 0,
            note: String::new(),
            test_aucs: vec![0.7, 0.8],
        }];
        let t = study_table(&rows);
        assert!(t.contains("| 200 | 0 | 0.750 ± 0.071 |"), "{t}");
    }
}
