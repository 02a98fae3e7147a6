//! Multi-label convolutional classifier.
//!
//! Three conv-relu-maxpool blocks and a dense head produce one logit per
//! label; per-label sigmoids give independent probabilities (the problem is
//! multi-label, not multi-class). Training minimizes mean binary
//! cross-entropy with RMSProp and applies random-rectangle occlusion as
//! augmentation so the model stays competent on the occluded inputs used
//! for triplet generation.

use crate::dataset::{occlude, Dataset, OcclusionRule};
use crate::error::{OlrError, Result};
use crate::rng::stream_rng;
use crate::tensor::{
    batch_gradients, LayerSpec, Padding, RmsProp, Sequential, Tensor,
};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Channel widths of the three conv blocks.
pub const DEFAULT_CHANNELS: [usize; 3] = [8, 16, 32];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Probability that a training sample is occluded before the forward pass.
    pub occlusion_probability: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            epochs: 12,
            batch_size: 32,
            learning_rate: 1e-3,
            occlusion_probability: 0.5,
            seed: 42,
        }
    }
}

/// Convolutional backbone + dense head emitting one logit per label.
#[derive(Clone, Debug)]
pub struct ClassifierModel {
    model: Sequential<f32>,
    num_labels: usize,
}

fn backbone_layers(num_labels: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for channels in DEFAULT_CHANNELS {
        layers.push(LayerSpec::Conv2d { kernel: 3, channels, stride: 1, padding: Padding::Same });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2, padding: Padding::Valid });
    }
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense { units: num_labels });
    layers
}

impl ClassifierModel {
    /// Fresh model with seeded initialization.
    pub fn init(image_size: (usize, usize, usize), num_labels: usize, seed: u64) -> Result<Self> {
        let (h, w, c) = image_size;
        let mut rng = stream_rng(seed, "classifier-init", 0);
        let model = Sequential::init(vec![h, w, c], backbone_layers(num_labels), &mut rng)?;
        Ok(ClassifierModel { model, num_labels })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn input_shape(&self) -> &[usize] {
        self.model.input_shape()
    }

    /// Raw per-label logits.
    pub fn logits(&self, image: &Tensor<f32>) -> Result<Vec<f32>> {
        Ok(self.model.forward(image)?.into_data())
    }

    /// Per-label sigmoid probabilities.
    pub fn predict_probs(&self, image: &Tensor<f32>) -> Result<Vec<f32>> {
        self.temperature_probs(image, 1.0)
    }

    /// Sigmoid of `logits / t`: temperatures above 1 flatten every
    /// probability toward 0.5 without moving the 0.5 decision boundary.
    pub fn temperature_probs(&self, image: &Tensor<f32>, t: f32) -> Result<Vec<f32>> {
        if t <= 0.0 {
            return Err(OlrError::Config(format!("temperature must be positive, got {t}")));
        }
        Ok(self.logits(image)?.into_iter().map(|z| sigmoid(z / t)).collect())
    }

    /// Mean per-label accuracy at threshold 0.5 over a dataset.
    pub fn accuracy(&self, dataset: &Dataset) -> Result<f64> {
        if dataset.is_empty() {
            return Err(OlrError::Dataset("accuracy over an empty dataset".into()));
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for img in &dataset.images {
            let probs = self.predict_probs(&img.pixels)?;
            for (p, &y) in probs.iter().zip(img.labels.iter()) {
                let pred = if *p > 0.5 { 1 } else { 0 };
                if pred == y {
                    correct += 1;
                }
                total += 1;
            }
        }
        Ok(correct as f64 / total as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let named: Vec<(String, Tensor<f32>)> =
            self.model.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        crate::tensor::save_checkpoint(&named, path)
    }

    pub fn load(
        path: &Path,
        image_size: (usize, usize, usize),
        num_labels: usize,
    ) -> Result<Self> {
        let mut model = ClassifierModel::init(image_size, num_labels, 0)?;
        let named = crate::tensor::load_checkpoint(path)?;
        model.model.load_named_params(&named)?;
        Ok(model)
    }

    pub(crate) fn sequential_mut(&mut self) -> &mut Sequential<f32> {
        &mut self.model
    }
}

/// Elementwise product of two probability vectors: the joint probability of
/// each label being evident in both images.
pub fn joint_probability(pa: &[f32], pb: &[f32]) -> Result<Vec<f32>> {
    if pa.len() != pb.len() {
        return Err(OlrError::Shape(format!(
            "joint_probability: vector lengths differ, {} vs {}",
            pa.len(),
            pb.len()
        )));
    }
    Ok(pa.iter().zip(pb.iter()).map(|(a, b)| a * b).collect())
}

/// Train on occluded images; deterministic in the config seed.
pub fn train_classifier(
    train: &Dataset,
    rule: &OcclusionRule,
    cfg: &ClassifierTrainConfig,
) -> Result<ClassifierModel> {
    if train.is_empty() {
        return Err(OlrError::Dataset("train_classifier: empty training set".into()));
    }
    rule.validate()?;
    let mut model = ClassifierModel::init(train.image_size, train.num_labels(), cfg.seed)?;
    let mut opt = RmsProp::with_lr(cfg.learning_rate)?;
    let n = train.len();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream_rng(cfg.seed, "clf-epoch", epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            // Materialize (possibly occluded) inputs serially so the
            // parallel gradient pass is pure compute.
            let mut samples: Vec<(Tensor<f32>, Tensor<f32>)> = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let img = &train.images[idx];
                let pixels = if rng.random::<f64>() < cfg.occlusion_probability {
                    occlude(img, rule, &mut rng)?.pixels
                } else {
                    img.pixels.clone()
                };
                let targets = Tensor::new(
                    vec![img.labels.len()],
                    img.labels.iter().map(|&l| l as f32).collect(),
                )?;
                samples.push((pixels, targets));
            }
            let params = model.model.param_tensors();
            let (grads, _loss) =
                batch_gradients(&params, &samples, |tape, param_vars, (pixels, targets)| {
                    let x = tape.input(pixels.clone());
                    let logits = model.model.apply(tape, x, param_vars)?;
                    tape.bce_with_logits(logits, targets)
                })?;
            let mut params = model.model.param_tensors_mut();
            opt.step(&mut params, &grads)?;
        }
    }
    Ok(model)
}

pub(crate) fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary entropy of a probability (natural log, 0 log 0 = 0).
pub fn binary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, DatasetConfig};

    fn tiny_dataset() -> Dataset {
        generate_synthetic(&DatasetConfig { num_images: 40, ..DatasetConfig::default() }).unwrap()
    }

    #[test]
    fn joint_probability_examples() {
        let p = joint_probability(&[0.9, 0.2], &[0.5, 0.5]).unwrap();
        assert_eq!(p, vec![0.45, 0.1]);
        let q = joint_probability(&[1.0, 1.0, 1.0], &[0.3, 0.7, 0.0]).unwrap();
        assert_eq!(q, vec![0.3, 0.7, 0.0]);
        assert!(joint_probability(&[0.1], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn joint_probability_bounded_by_min() {
        let pa = [0.9f32, 0.01, 0.5, 1.0];
        let pb = [0.8f32, 0.99, 0.5, 0.0];
        let j = joint_probability(&pa, &pb).unwrap();
        for ((a, b), v) in pa.iter().zip(pb.iter()).zip(j.iter()) {
            assert!(*v <= a.min(*b) + f32::EPSILON);
        }
    }

    #[test]
    fn predict_outputs_l_probabilities_in_open_interval() {
        let data = tiny_dataset();
        let model = ClassifierModel::init(data.image_size, data.num_labels(), 3).unwrap();
        let p = model.predict_probs(&data.images[0].pixels).unwrap();
        assert_eq!(p.len(), 8);
        for v in p {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn zero_weights_predict_half() {
        let data = tiny_dataset();
        let mut model = ClassifierModel::init(data.image_size, data.num_labels(), 3).unwrap();
        for t in model.model.param_tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let p = model.predict_probs(&data.images[0].pixels).unwrap();
        for v in p {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn untrained_model_is_near_chance() {
        let data = tiny_dataset();
        let cfg = ClassifierTrainConfig { epochs: 0, ..Default::default() };
        let model = train_classifier(&data, &OcclusionRule::default(), &cfg).unwrap();
        let acc = model.accuracy(&data).unwrap();
        assert!((acc - 0.5).abs() < 0.2, "untrained accuracy {acc} far from chance");
    }

    #[test]
    fn temperature_one_is_bit_exact_predict() {
        let data = tiny_dataset();
        let model = ClassifierModel::init(data.image_size, data.num_labels(), 5).unwrap();
        let a = model.predict_probs(&data.images[1].pixels).unwrap();
        let b = model.temperature_probs(&data.images[1].pixels, 1.0).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn high_temperature_flattens_to_half() {
        let data = tiny_dataset();
        let model = ClassifierModel::init(data.image_size, data.num_labels(), 5).unwrap();
        let p = model.temperature_probs(&data.images[0].pixels, 1e9).unwrap();
        for v in p {
            assert!((v - 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn temperature_raises_binary_entropy() {
        let data = tiny_dataset();
        let model = ClassifierModel::init(data.image_size, data.num_labels(), 7).unwrap();
        for img in data.images.iter().take(5) {
            let p1 = model.temperature_probs(&img.pixels, 1.0).unwrap();
            let p4 = model.temperature_probs(&img.pixels, 4.0).unwrap();
            for (a, b) in p1.iter().zip(p4.iter()) {
                assert!(
                    binary_entropy(*b as f64) >= binary_entropy(*a as f64) - 1e-9,
                    "entropy decreased: T=1 p={a}, T=4 p={b}"
                );
            }
        }
    }

    #[test]
    fn decisions_invariant_under_temperature() {
        let data = tiny_dataset();
        let model = ClassifierModel::init(data.image_size, data.num_labels(), 9).unwrap();
        for img in data.images.iter().take(10) {
            let p1 = model.predict_probs(&img.pixels).unwrap();
            let p3 = model.temperature_probs(&img.pixels, 3.0).unwrap();
            for (a, b) in p1.iter().zip(p3.iter()) {
                assert_eq!(*a > 0.5, *b > 0.5);
            }
        }
    }

    #[test]
    fn nonpositive_temperature_is_an_error() {
        let data = tiny_dataset();
        let model = ClassifierModel::init(data.image_size, data.num_labels(), 5).unwrap();
        assert!(model.temperature_probs(&data.images[0].pixels, 0.0).is_err());
        assert!(model.temperature_probs(&data.images[0].pixels, -1.0).is_err());
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let data = tiny_dataset();
        let cfg = ClassifierTrainConfig { epochs: 1, batch_size: 8, ..Default::default() };
        let a = train_classifier(&data, &OcclusionRule::default(), &cfg).unwrap();
        let b = train_classifier(&data, &OcclusionRule::default(), &cfg).unwrap();
        assert_eq!(a.model.param_tensors(), b.model.param_tensors());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let empty = Dataset {
            images: vec![],
            label_names: vec!["a".into()],
            image_size: (32, 32, 3),
        };
        assert!(train_classifier(
            &empty,
            &OcclusionRule::default(),
            &ClassifierTrainConfig::default()
        )
        .is_err());
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let data = tiny_dataset();
        let model = ClassifierModel::init(data.image_size, data.num_labels(), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        model.save(&path).unwrap();
        let loaded = ClassifierModel::load(&path, data.image_size, data.num_labels()).unwrap();
        let a = model.predict_probs(&data.images[0].pixels).unwrap();
        let b = loaded.predict_probs(&data.images[0].pixels).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
