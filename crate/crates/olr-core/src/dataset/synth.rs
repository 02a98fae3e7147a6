//! Procedural scene renderer for the synthetic dataset.

use super::{Dataset, DatasetConfig, LabeledImage};
use crate::error::Result;
use crate::rng::stream_rng;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Attribute generators available; `num_labels` may use a prefix of them.
pub const MAX_ATTRIBUTES: usize = 8;

const NAMES: [&str; MAX_ATTRIBUTES] =
    ["circle", "large", "bright", "left", "outlined", "filled", "light_bg", "second_object"];

/// Names of the first `l` attributes.
pub fn attribute_names(l: usize) -> Vec<String> {
    NAMES.iter().take(l).map(|s| s.to_string()).collect()
}

/// Attribute switches for one scene; labels control a prefix, the rest sit
/// at fixed defaults so every rendered cue stays unambiguous.
#[derive(Clone, Copy)]
struct Attrs {
    circle: bool,
    large: bool,
    bright: bool,
    left: bool,
    outlined: bool,
    filled: bool,
    light_bg: bool,
    second_object: bool,
}

impl Attrs {
    fn from_labels(labels: &[u8]) -> Attrs {
        let get = |i: usize, default: bool| labels.get(i).map(|&v| v != 0).unwrap_or(default);
        Attrs {
            circle: get(0, true),
            large: get(1, false),
            bright: get(2, true),
            left: get(3, true),
            outlined: get(4, false),
            filled: get(5, true),
            light_bg: get(6, false),
            second_object: get(7, false),
        }
    }
}

/// Generate the full synthetic dataset. Pure in the config: image `i` is a
/// function of `(seed, i)` only, so parallel and serial generation agree.
pub fn generate_synthetic(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let mut images = Vec::with_capacity(config.num_images);
    for id in 0..config.num_images as u64 {
        let mut rng = stream_rng(config.seed, "image", id);
        let labels = draw_labels(config, &mut rng);
        let pixels = render(&Attrs::from_labels(&labels), config.image_size, &mut rng);
        images.push(LabeledImage { pixels, labels, id, name: format!("img_{id:05}.ppm") });
    }
    Ok(Dataset {
        images,
        label_names: attribute_names(config.num_labels),
        image_size: config.image_size,
    })
}

fn draw_labels(config: &DatasetConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut labels: Vec<u8> =
        (0..config.num_labels).map(|_| if rng.random::<bool>() { 1 } else { 0 }).collect();
    for &(src, dst, sign) in &config.correlation_rules {
        // Half the images follow the rule, the rest keep the independent draw.
        if rng.random::<bool>() {
            labels[dst] = if sign > 0 { labels[src] } else { 1 - labels[src] };
        }
    }
    labels
}

fn render(a: &Attrs, size: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (h, w, _) = size;
    let s = h.min(w) as f64;

    // Draw every parameter unconditionally to keep the stream layout fixed.
    let bg_base =
        if a.light_bg { rng.random_range(0.50..0.62) } else { rng.random_range(0.02..0.12) };
    let bg_jitter: [f64; 3] = [
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
    ];
    let r_large = rng.random_range(0.25..0.31) * s;
    let r_small = rng.random_range(0.12..0.16) * s;
    let cx_left = rng.random_range(0.31..0.41) * w as f64;
    let cx_right = rng.random_range(0.59..0.69) * w as f64;
    let cy = rng.random_range(0.42..0.56) * h as f64;
    let bright_val = rng.random_range(0.80..0.98);
    let dark_val = rng.random_range(0.25..0.40);
    let obj_jitter: [f64; 3] = [
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
        rng.random_range(-0.02..0.02),
    ];
    let outline_bright = rng.random_range(0.90..0.98);
    let outline_dark = rng.random_range(0.02..0.08);
    let bar_w = (rng.random_range(0.25..0.38) * w as f64).round() as usize;
    let bar_x = rng.random_range(0..(w - bar_w).max(1));

    let r = if a.large { r_large } else { r_small };
    let cx = if a.left { cx_left } else { cx_right };
    let obj_val = if a.bright { bright_val } else { dark_val };
    let outline_val = if a.bright { outline_dark } else { outline_bright };
    let bar_val = if a.light_bg {
        rng.random_range(0.05..0.15)
    } else {
        rng.random_range(0.85..0.95)
    };
    let ring_width = (0.07 * s).max(1.6);
    let outline_width = (0.05 * s).max(1.2);

    let bg: [f64; 3] = std::array::from_fn(|c| (bg_base + bg_jitter[c]).clamp(0.0, 1.0));
    let obj: [f64; 3] = std::array::from_fn(|c| (obj_val + obj_jitter[c]).clamp(0.0, 1.0));

    let mut data = vec![0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // Signed extent of the pixel relative to the shape boundary.
            let dist = if a.circle { (dx * dx + dy * dy).sqrt() } else { dx.abs().max(dy.abs()) };
            let mut px = bg;
            let in_body = dist <= r;
            let in_interior = dist <= r - ring_width;
            if in_body && (a.filled || !in_interior) {
                px = obj;
            }
            if a.outlined && dist > r && dist <= r + outline_width {
                px = [outline_val; 3];
            }
            if a.second_object && y < 2 && x >= bar_x && x < bar_x + bar_w {
                px = [bar_val; 3];
            }
            let base = (y * w + x) * 3;
            for c in 0..3 {
                data[base + c] = px[c] as f32;
            }
        }
    }
    Tensor::new(vec![h, w, 3], data).expect("render buffer matches shape")
}
