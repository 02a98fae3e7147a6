//! Synthetic multi-attribute image dataset, occlusion augmentation and
//! image/label I/O.
//!
//! Images are procedural scenes over eight binary attributes (shape, size,
//! brightness, horizontal position, outline, fill, background tone, presence
//! of a second object). Every attribute is decidable from pixels alone, and
//! configurable correlation rules bias label co-occurrence so that the
//! downstream correlation analysis has a known ground truth.

mod io;
mod occlusion;
mod synth;

pub use io::{load_image_directory, load_ppm, save_dataset, save_ppm, DatasetManifest};
pub use occlusion::{occlude, sample_rect, OcclusionRule, Rect};
pub use synth::{attribute_names, generate_synthetic, MAX_ATTRIBUTES};

use crate::error::{OlrError, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// An image with its binary label vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `[h, w, c]` pixels in `[0, 1]`.
    pub pixels: Tensor<f32>,
    /// Binary labels, one per attribute.
    pub labels: Vec<u8>,
    /// Unique id within the dataset.
    pub id: u64,
    /// File name used when the dataset is stored on disk.
    pub name: String,
}

/// Configuration of the synthetic dataset generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// (height, width, channels); channels must be 3.
    pub image_size: (usize, usize, usize),
    pub num_labels: usize,
    pub num_images: usize,
    /// Train fraction in (0, 1).
    pub split_fraction: f64,
    /// `(source label, target label, sign)`: with probability 1/2 the target
    /// label is forced to follow (+1) or oppose (-1) the source label.
    pub correlation_rules: Vec<(usize, usize, i8)>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            image_size: (32, 32, 3),
            num_labels: 8,
            num_images: 2000,
            split_fraction: 0.95,
            correlation_rules: vec![(1, 0, 1), (4, 5, 1), (2, 6, -1)],
            seed: 42,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w, c) = self.image_size;
        if c != 3 {
            return Err(OlrError::Config(format!("synthetic images are RGB, got {c} channels")));
        }
        if h < 16 || w < 16 {
            return Err(OlrError::Config(format!("image size {h}x{w} too small (minimum 16)")));
        }
        if self.num_labels == 0 || self.num_labels > MAX_ATTRIBUTES {
            return Err(OlrError::Config(format!(
                "num_labels {} exceeds the {} available attribute generators",
                self.num_labels, MAX_ATTRIBUTES
            )));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(OlrError::Config(format!(
                "split fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        for &(i, j, sign) in &self.correlation_rules {
            if i >= self.num_labels || j >= self.num_labels || i == j {
                return Err(OlrError::Config(format!(
                    "correlation rule ({i}, {j}) out of range for {} labels",
                    self.num_labels
                )));
            }
            if sign != 1 && sign != -1 {
                return Err(OlrError::Config(format!("correlation sign must be +/-1, got {sign}")));
            }
        }
        Ok(())
    }
}

/// A set of labeled images with the shared label names.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    pub label_names: Vec<String>,
    pub image_size: (usize, usize, usize),
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.label_names.len()
    }

    /// Empirical phi coefficient between two binary label columns.
    pub fn label_correlation(&self, i: usize, j: usize) -> f64 {
        let n = self.images.len() as f64;
        let mut pi = 0.0;
        let mut pj = 0.0;
        let mut pij = 0.0;
        for img in &self.images {
            let a = img.labels[i] as f64;
            let b = img.labels[j] as f64;
            pi += a;
            pj += b;
            pij += a * b;
        }
        pi /= n;
        pj /= n;
        pij /= n;
        let denom = (pi * (1.0 - pi) * pj * (1.0 - pj)).sqrt();
        if denom == 0.0 {
            return f64::NAN;
        }
        (pij - pi * pj) / denom
    }
}

/// Deterministic train/test split: `floor(n * fraction)` train images,
/// remainder test, membership shuffled by `seed`.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(OlrError::Config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let n = dataset.images.len();
    let n_train = ((n as f64) * fraction + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, "split", 0);
    order.shuffle(&mut rng);
    let mut in_train = vec![false; n];
    for &idx in order.iter().take(n_train) {
        in_train[idx] = true;
    }
    let pick = |keep: bool| Dataset {
        images: dataset
            .images
            .iter()
            .enumerate()
            .filter(|(i, _)| in_train[*i] == keep)
            .map(|(_, img)| img.clone())
            .collect(),
        label_names: dataset.label_names.clone(),
        image_size: dataset.image_size,
    };
    Ok((pick(true), pick(false)))
}
