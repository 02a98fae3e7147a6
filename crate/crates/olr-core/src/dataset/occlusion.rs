//! Random-rectangle occlusion.
//!
//! One axis-aligned rectangle per draw, with height and width sampled
//! between `min_fraction` and `max_fraction` of the image dimensions
//! (defaults 1/3 and 2/3), placed uniformly fully inside the image and
//! filled with a constant value. Labels are never touched.

use super::LabeledImage;
use crate::error::{OlrError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRule {
    pub min_fraction: f64,
    pub max_fraction: f64,
    pub fill_value: f32,
}

impl Default for OcclusionRule {
    fn default() -> Self {
        OcclusionRule { min_fraction: 1.0 / 3.0, max_fraction: 2.0 / 3.0, fill_value: 0.0 }
    }
}

impl OcclusionRule {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_fraction > 0.0
            && self.min_fraction <= self.max_fraction
            && self.max_fraction <= 1.0)
        {
            return Err(OlrError::Config(format!(
                "occlusion fractions must satisfy 0 < min <= max <= 1, got {} / {}",
                self.min_fraction, self.max_fraction
            )));
        }
        if !(0.0..=1.0).contains(&(self.fill_value as f64)) {
            return Err(OlrError::Config(format!(
                "occlusion fill value must be in [0, 1], got {}",
                self.fill_value
            )));
        }
        Ok(())
    }

    /// Valid side lengths for one axis: `[ceil(extent*min), floor(extent*max)]`
    /// (with a tiny epsilon so exact fractions like 30 * 2/3 land on the
    /// intended integer).
    pub fn dim_range(&self, extent: usize) -> Result<(usize, usize)> {
        self.validate()?;
        let lo = ((extent as f64 * self.min_fraction) - 1e-9).ceil() as usize;
        let hi = ((extent as f64 * self.max_fraction) + 1e-9).floor() as usize;
        let lo = lo.max(1);
        let hi = hi.min(extent);
        if lo > hi {
            return Err(OlrError::Config(format!(
                "image extent {extent} too small for occlusion fractions {} / {}",
                self.min_fraction, self.max_fraction
            )));
        }
        Ok((lo, hi))
    }
}

/// An axis-aligned rectangle (`y0..y0+h`, `x0..x0+w`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub h: usize,
    pub w: usize,
}

/// Sample an occlusion rectangle for an `img_h x img_w` image.
pub fn sample_rect(
    rule: &OcclusionRule,
    img_h: usize,
    img_w: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rect> {
    let (h_lo, h_hi) = rule.dim_range(img_h)?;
    let (w_lo, w_hi) = rule.dim_range(img_w)?;
    let h = rng.random_range(h_lo..=h_hi);
    let w = rng.random_range(w_lo..=w_hi);
    let y0 = rng.random_range(0..=(img_h - h));
    let x0 = rng.random_range(0..=(img_w - w));
    Ok(Rect { y0, x0, h, w })
}

/// Overwrite one random rectangle with the rule's fill value; everything
/// outside the rectangle, and the labels, are untouched.
pub fn occlude(image: &LabeledImage, rule: &OcclusionRule, rng: &mut ChaCha8Rng) -> Result<LabeledImage> {
    let shape = image.pixels.shape();
    let (img_h, img_w, c) = (shape[0], shape[1], shape[2]);
    let rect = sample_rect(rule, img_h, img_w, rng)?;
    let mut out = image.clone();
    let data = out.pixels.data_mut();
    for y in rect.y0..rect.y0 + rect.h {
        let row = (y * img_w + rect.x0) * c;
        for v in data[row..row + rect.w * c].iter_mut() {
            *v = rule.fill_value;
        }
    }
    Ok(out)
}
