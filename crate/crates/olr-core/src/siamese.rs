//! Siamese embedding network.
//!
//! One shared-weight convolutional trunk ends in a label-specific layer of
//! `L` groups of `k` feature maps (size `f x f`); global average pooling and
//! a reshape turn those into the `L x k` embedding matrix, one row per
//! label. Training samples random image pairs, occludes both, classifies
//! them, and regresses the row-wise dot products of the two embeddings onto
//! the elementwise product of the classifier probabilities.

use crate::classifier::{joint_probability, ClassifierModel};
use crate::dataset::{occlude, Dataset, LabeledImage, OcclusionRule};
use crate::error::{OlrError, Result};
use crate::rng::stream_rng;
use crate::tensor::{
    batch_gradients, thread_pool, LayerSpec, Padding, RmsProp, Sequential, Tape, Tensor, Var,
};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// An `L x k` embedding matrix; row `l` is the vector for label `l`.
pub type Embedding = Tensor<f32>;

/// Architecture knobs of the Siamese network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiameseConfig {
    /// Width of each label's embedding vector.
    pub k: usize,
    /// Spatial size of the label-specific layer's feature maps.
    pub f: usize,
    /// Channel widths of the three backbone conv blocks.
    pub channels: [usize; 3],
}

impl Default for SiameseConfig {
    fn default() -> Self {
        SiameseConfig { k: 8, f: 4, channels: [8, 16, 32] }
    }
}

impl SiameseConfig {
    pub fn validate(&self, num_labels: usize, image_size: (usize, usize, usize)) -> Result<()> {
        let (h, w, c) = image_size;
        if self.k == 0 {
            return Err(OlrError::Config("embedding width k must be positive".into()));
        }
        // The embedding must compress the image.
        if num_labels * self.k >= h * w * c {
            return Err(OlrError::Config(format!(
                "embedding size L*k = {} must be smaller than the image size {}",
                num_labels * self.k,
                h * w * c
            )));
        }
        if h % 8 != 0 || w % 8 != 0 {
            return Err(OlrError::Config(format!(
                "backbone pools three times; image size {h}x{w} must be divisible by 8"
            )));
        }
        if (h / 8, w / 8) != (self.f, self.f) {
            return Err(OlrError::Config(format!(
                "label-specific layer size f = {} does not match backbone output {}x{}",
                self.f,
                h / 8,
                w / 8
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiameseTrainConfig {
    pub epochs: usize,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for SiameseTrainConfig {
    fn default() -> Self {
        SiameseTrainConfig { epochs: 30, batch_size: 16, learning_rate: 1e-3, seed: 42 }
    }
}

/// One training example: two occluded images and the joint probability of
/// each label appearing in both.
#[derive(Clone, Debug)]
pub struct Triplet {
    pub image_a: Tensor<f32>,
    pub image_b: Tensor<f32>,
    pub joint_p: Vec<f32>,
}

/// Shared-weight embedding model.
#[derive(Clone, Debug)]
pub struct SiameseModel {
    model: Sequential<f32>,
    num_labels: usize,
    k: usize,
}

fn siamese_layers(config: &SiameseConfig, num_labels: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    for channels in config.channels {
        layers.push(LayerSpec::Conv2d { kernel: 3, channels, stride: 1, padding: Padding::Same });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::MaxPool2d { kernel: 2, stride: 2, padding: Padding::Valid });
    }
    // Label-specific layer: L groups of k maps, linear so absent labels can
    // settle on near-zero rows.
    layers.push(LayerSpec::Conv2d {
        kernel: 3,
        channels: num_labels * config.k,
        stride: 1,
        padding: Padding::Same,
    });
    layers.push(LayerSpec::AvgPool2d { kernel: config.f, stride: 1, padding: Padding::Valid });
    layers.push(LayerSpec::Reshape { shape: vec![num_labels, config.k] });
    layers
}

impl SiameseModel {
    pub fn init(
        image_size: (usize, usize, usize),
        num_labels: usize,
        config: &SiameseConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate(num_labels, image_size)?;
        let (h, w, c) = image_size;
        let mut rng = stream_rng(seed, "siamese-init", 0);
        let model = Sequential::init(vec![h, w, c], siamese_layers(config, num_labels), &mut rng)?;
        Ok(SiameseModel { model, num_labels, k: config.k })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn input_shape(&self) -> &[usize] {
        self.model.input_shape()
    }

    /// Embed a clean image into its `L x k` matrix.
    pub fn embed(&self, image: &Tensor<f32>) -> Result<Embedding> {
        self.model.forward(image)
    }

    /// Embeddings for a whole image list (read-only, parallel).
    pub fn embed_all(&self, images: &[&Tensor<f32>]) -> Result<Vec<Embedding>> {
        thread_pool().install(|| images.par_iter().map(|img| self.embed(img)).collect())
    }

    /// Record the embedding graph for one image on a tape.
    pub fn embed_on_tape(&self, tape: &mut Tape<f32>, image: &Tensor<f32>, params: &[Var]) -> Result<Var> {
        let x = tape.input(image.clone());
        self.model.apply(tape, x, params)
    }

    pub fn register_params(&self, tape: &mut Tape<f32>) -> Vec<Var> {
        self.model.register_params(tape)
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
        config: &SiameseConfig,
    ) -> Result<Self> {
        let mut model = SiameseModel::init(image_size, num_labels, config, 0)?;
        let named = crate::tensor::load_checkpoint(path)?;
        model.model.load_named_params(&named)?;
        Ok(model)
    }

    pub(crate) fn sequential(&self) -> &Sequential<f32> {
        &self.model
    }
}

/// Mean squared error between row-wise dot products and the joint target:
/// `v_l = e1_l . e2_l`, `loss = mean_l (v_l - p_l)^2`.
pub fn siamese_loss(e1: &Embedding, e2: &Embedding, joint_p: &[f32]) -> Result<f32> {
    let (l, k) = check_embedding_shapes(e1, e2, joint_p)?;
    let mut acc = 0.0f32;
    for row in 0..l {
        let a = &e1.data()[row * k..(row + 1) * k];
        let b = &e2.data()[row * k..(row + 1) * k];
        let dot: f32 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        let d = dot - joint_p[row];
        acc += d * d;
    }
    Ok(acc / l as f32)
}

/// Row-wise dot products between two embeddings.
pub fn row_dots(e1: &Embedding, e2: &Embedding) -> Result<Vec<f32>> {
    let (l, k) = match e1.shape() {
        [l, k] => (*l, *k),
        other => return Err(OlrError::Shape(format!("embedding must be L x k, got {other:?}"))),
    };
    if e1.shape() != e2.shape() {
        return Err(OlrError::Shape(format!(
            "embedding shapes differ: {:?} vs {:?}",
            e1.shape(),
            e2.shape()
        )));
    }
    Ok((0..l)
        .map(|row| {
            e1.data()[row * k..(row + 1) * k]
                .iter()
                .zip(&e2.data()[row * k..(row + 1) * k])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect())
}

fn check_embedding_shapes(e1: &Embedding, e2: &Embedding, joint_p: &[f32]) -> Result<(usize, usize)> {
    let (l, k) = match e1.shape() {
        [l, k] => (*l, *k),
        other => return Err(OlrError::Shape(format!("embedding must be L x k, got {other:?}"))),
    };
    if e1.shape() != e2.shape() {
        return Err(OlrError::Shape(format!(
            "embedding shapes differ: {:?} vs {:?}",
            e1.shape(),
            e2.shape()
        )));
    }
    if joint_p.len() != l {
        return Err(OlrError::Shape(format!(
            "joint probability length {} does not match {l} labels",
            joint_p.len()
        )));
    }
    Ok((l, k))
}

/// The same loss recorded on a tape for training.
pub fn siamese_loss_on_tape(
    tape: &mut Tape<f32>,
    e1: Var,
    e2: Var,
    joint_p: &Tensor<f32>,
) -> Result<Var> {
    let prod = tape.mul(e1, e2)?;
    let dots = tape.sum_last_axis(prod)?;
    let target = tape.input(joint_p.clone());
    tape.mse(dots, target)
}

/// Occlude both images, classify them, and multiply the probabilities.
pub fn build_triplet(
    image_a: &LabeledImage,
    image_b: &LabeledImage,
    classifier: &ClassifierModel,
    rule: &OcclusionRule,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Triplet> {
    let occ_a = occlude(image_a, rule, rng)?;
    let occ_b = occlude(image_b, rule, rng)?;
    let pa = classifier.predict_probs(&occ_a.pixels)?;
    let pb = classifier.predict_probs(&occ_b.pixels)?;
    let joint_p = joint_probability(&pa, &pb)?;
    Ok(Triplet { image_a: occ_a.pixels, image_b: occ_b.pixels, joint_p })
}

/// Train the Siamese network against a frozen classifier.
///
/// Every epoch samples `train.len()` ordered pairs uniformly with
/// replacement and applies fresh occlusions; both branches share one
/// parameter set on the tape, so weight sharing holds by construction.
pub fn train_siamese(
    classifier: &ClassifierModel,
    train: &Dataset,
    config: &SiameseConfig,
    train_cfg: &SiameseTrainConfig,
) -> Result<SiameseModel> {
    if train.is_empty() {
        return Err(OlrError::Dataset("train_siamese: empty training set".into()));
    }
    let mut model =
        SiameseModel::init(train.image_size, train.num_labels(), config, train_cfg.seed)?;
    let mut opt = RmsProp::with_lr(train_cfg.learning_rate)?;
    let rule = OcclusionRule::default();
    let n = train.len();
    for epoch in 0..train_cfg.epochs {
        let mut rng = stream_rng(train_cfg.seed, "siamese-epoch", epoch as u64);
        let pairs: Vec<(usize, usize)> =
            (0..n).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
        for chunk in pairs.chunks(train_cfg.batch_size) {
            // Occlusions drawn serially; classification runs inside the
            // parallel pass (pure forward on the frozen classifier).
            let mut samples: Vec<(Tensor<f32>, Tensor<f32>)> = Vec::with_capacity(chunk.len());
            for &(i, j) in chunk {
                let occ_a = occlude(&train.images[i], &rule, &mut rng)?;
                let occ_b = occlude(&train.images[j], &rule, &mut rng)?;
                samples.push((occ_a.pixels, occ_b.pixels));
            }
            let params = model.model.param_tensors();
            let (grads, _loss) =
                batch_gradients(&params, &samples, |tape, param_vars, (xa, xb)| {
                    let pa = classifier.predict_probs(xa)?;
                    let pb = classifier.predict_probs(xb)?;
                    let joint = Tensor::new(vec![pa.len()], joint_probability(&pa, &pb)?)?;
                    let xa_var = tape.input(xa.clone());
                    let e1 = model.model.apply(tape, xa_var, param_vars)?;
                    let xb_var = tape.input(xb.clone());
                    let e2 = model.model.apply(tape, xb_var, param_vars)?;
                    siamese_loss_on_tape(tape, e1, e2, &joint)
                })?;
            let mut params = model.model.param_tensors_mut();
            opt.step(&mut params, &grads)?;
        }
    }
    Ok(model)
}

/// Mean absolute error between row dot products and joint probabilities
/// over freshly built triplets — the training objective on unseen pairs.
pub fn mean_dot_product_error(
    model: &SiameseModel,
    classifier: &ClassifierModel,
    dataset: &Dataset,
    rule: &OcclusionRule,
    n_triplets: usize,
    seed: u64,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(OlrError::Dataset("mean_dot_product_error: empty dataset".into()));
    }
    let n = dataset.len();
    let mut rng = stream_rng(seed, "triplet-eval", 0);
    let mut triplets = Vec::with_capacity(n_triplets);
    for _ in 0..n_triplets {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        triplets.push(build_triplet(
            &dataset.images[i],
            &dataset.images[j],
            classifier,
            rule,
            &mut rng,
        )?);
    }
    let errors: Vec<f64> = thread_pool().install(|| {
        triplets
            .par_iter()
            .map(|t| -> Result<f64> {
                let e1 = model.embed(&t.image_a)?;
                let e2 = model.embed(&t.image_b)?;
                let dots = row_dots(&e1, &e2)?;
                let l = dots.len() as f64;
                Ok(dots
                    .iter()
                    .zip(t.joint_p.iter())
                    .map(|(d, p)| (d - p).abs() as f64)
                    .sum::<f64>()
                    / l)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}
