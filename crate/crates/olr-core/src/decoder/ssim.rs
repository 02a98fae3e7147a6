//! Structural similarity (SSIM) over sliding windows.
//!
//! Computed per channel on `N x N` windows with uniform weights and stride 1,
//! then averaged over windows (and over channels for RGB). Means use `1/n`
//! and variances the unbiased `1/(n - 1)` over the `n = N*N` window pixels;
//! the cross term is the matching sample covariance. `c1` and `c2` stabilize
//! the two quotient factors.

use crate::error::{OlrError, Result};
use crate::tensor::{Padding, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
    /// Window side length N.
    pub window: usize,
}

impl Default for SsimParams {
    fn default() -> Self {
        // Standard stabilizers for a dynamic range of 1.
        SsimParams { c1: 0.01 * 0.01, c2: 0.03 * 0.03, window: 8 }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(OlrError::Config(format!(
                "ssim stabilizers must be positive, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.window < 2 {
            return Err(OlrError::Config(format!("ssim window must be >= 2, got {}", self.window)));
        }
        Ok(())
    }

    fn check_input(&self, what: &str, shape: &[usize]) -> Result<()> {
        self.validate()?;
        match shape {
            [h, w, _] if *h >= self.window && *w >= self.window => Ok(()),
            [h, w, _] => Err(OlrError::Shape(format!(
                "{what}: image {h}x{w} smaller than ssim window {}",
                self.window
            ))),
            other => Err(OlrError::Shape(format!("{what}: expected [h, w, c], got {other:?}"))),
        }
    }
}

/// SSIM of two single-channel images (`[h, w, 1]`) recorded on a tape.
pub fn ssim_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    y: Var,
    params: &SsimParams,
) -> Result<Var> {
    params.check_input("ssim", tape.value(x).shape())?;
    if tape.value(x).shape() != tape.value(y).shape() {
        return Err(OlrError::Shape(format!(
            "ssim: image shapes differ, {:?} vs {:?}",
            tape.value(x).shape(),
            tape.value(y).shape()
        )));
    }
    if tape.value(x).shape()[2] != 1 {
        return Err(OlrError::Shape(format!(
            "ssim operates on a single channel, got {} (use ssim_rgb)",
            tape.value(x).shape()[2]
        )));
    }
    let n = params.window;
    let samples = (n * n) as f64;
    let bessel = S::from_f64(samples / (samples - 1.0));
    let c1 = S::from_f64(params.c1);
    let c2 = S::from_f64(params.c2);
    let two = S::from_f64(2.0);

    let pool = |tape: &mut Tape<S>, v: Var| tape.avg_pool2d(v, n, 1, Padding::Valid);
    let mu_x = pool(tape, x)?;
    let mu_y = pool(tape, y)?;
    let xx = tape.mul(x, x)?;
    let yy = tape.mul(y, y)?;
    let xy = tape.mul(x, y)?;
    let e_xx = pool(tape, xx)?;
    let e_yy = pool(tape, yy)?;
    let e_xy = pool(tape, xy)?;

    let mu_x2 = tape.mul(mu_x, mu_x)?;
    let mu_y2 = tape.mul(mu_y, mu_y)?;
    let mu_xy = tape.mul(mu_x, mu_y)?;
    let var_x = {
        let d = tape.sub(e_xx, mu_x2)?;
        tape.scale(d, bessel)
    };
    let var_y = {
        let d = tape.sub(e_yy, mu_y2)?;
        tape.scale(d, bessel)
    };
    let cov_xy = {
        let d = tape.sub(e_xy, mu_xy)?;
        tape.scale(d, bessel)
    };

    let num = {
        let a = tape.scale(mu_xy, two);
        let a = tape.add_scalar(a, c1);
        let b = tape.scale(cov_xy, two);
        let b = tape.add_scalar(b, c2);
        tape.mul(a, b)?
    };
    let den = {
        let a = tape.add(mu_x2, mu_y2)?;
        let a = tape.add_scalar(a, c1);
        let b = tape.add(var_x, var_y)?;
        let b = tape.add_scalar(b, c2);
        tape.mul(a, b)?
    };
    let map = tape.div(num, den)?;
    Ok(tape.mean(map))
}

/// Mean of per-channel SSIM over an RGB pair, on a tape.
pub fn ssim_rgb_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    y: Var,
    params: &SsimParams,
) -> Result<Var> {
    params.check_input("ssim_rgb", tape.value(x).shape())?;
    let shape = tape.value(x).shape().to_vec();
    if shape != tape.value(y).shape() {
        return Err(OlrError::Shape(format!(
            "ssim_rgb: image shapes differ, {:?} vs {:?}",
            shape,
            tape.value(y).shape()
        )));
    }
    let channels = shape[2];
    let mut acc: Option<Var> = None;
    for c in 0..channels {
        let xc = tape.select_channel(x, c)?;
        let yc = tape.select_channel(y, c)?;
        let s = ssim_on_tape(tape, xc, yc, params)?;
        acc = Some(match acc {
            Some(prev) => tape.add(prev, s)?,
            None => s,
        });
    }
    let total = acc.expect("at least one channel");
    Ok(tape.scale(total, S::one() / S::from_f64(channels as f64)))
}

/// SSIM of two single-channel images as a plain value.
pub fn ssim<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, params: &SsimParams) -> Result<S> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let yv = tape.input(y.clone());
    let s = ssim_on_tape(&mut tape, xv, yv, params)?;
    tape.value(s).item()
}

/// Mean per-channel SSIM of two RGB images as a plain value.
pub fn ssim_rgb<S: Scalar>(x: &Tensor<S>, y: &Tensor<S>, params: &SsimParams) -> Result<S> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let yv = tape.input(y.clone());
    let s = ssim_rgb_on_tape(&mut tape, xv, yv, params)?;
    tape.value(s).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn rand_channel(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, "ssim", 0);
        Tensor::from_fn(vec![h, w, 1], |_| rng.random_range(0.0..1.0))
    }

    fn rand_rgb(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = stream_rng(seed, "ssim-rgb", 0);
        Tensor::from_fn(vec![h, w, 3], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn self_similarity_is_one() {
        let params = SsimParams::default();
        for seed in 0..5 {
            let x = rand_channel(12, 12, seed);
            let s = ssim(&x, &x, &params).unwrap();
            assert!((s - 1.0).abs() < 1e-6, "ssim(x,x) = {s}");
        }
    }

    #[test]
    fn symmetry_is_exact() {
        let params = SsimParams::default();
        let x = rand_channel(14, 11, 10);
        let y = rand_channel(14, 11, 11);
        let ab = ssim(&x, &y, &params).unwrap();
        let ba = ssim(&y, &x, &params).unwrap();
        assert_eq!(ab.to_bits(), ba.to_bits());
    }

    #[test]
    fn constant_images_reduce_to_luminance_term() {
        // x = 0, y = 1: variances vanish, contrast/structure factor is
        // c2/c2 = 1, luminance factor is c1 / (1 + c1).
        let params = SsimParams { c1: 1e-4, ..SsimParams::default() };
        let x = Tensor::<f64>::zeros(vec![10, 10, 1]);
        let y = Tensor::<f64>::filled(vec![10, 10, 1], 1.0);
        let s = ssim(&x, &y, &params).unwrap();
        let expected = 1e-4 / (1.0 + 1e-4);
        assert!((s - expected).abs() < 1e-12, "{s} vs {expected}");
        assert!((s - 9.999e-5).abs() < 1e-8);
    }

    #[test]
    fn value_bounded_by_one_in_magnitude() {
        let params = SsimParams { window: 4, ..SsimParams::default() };
        for seed in 0..200 {
            let x = rand_channel(9, 9, 2 * seed);
            let y = rand_channel(9, 9, 2 * seed + 1);
            let s = ssim(&x, &y, &params).unwrap();
            assert!((-1.0..=1.0).contains(&s), "ssim {s} out of range");
        }
    }

    #[test]
    fn rgb_is_mean_of_channels() {
        let params = SsimParams { window: 4, ..SsimParams::default() };
        let x = rand_rgb(10, 10, 7);
        let y = rand_rgb(10, 10, 8);
        let full = ssim_rgb(&x, &y, &params).unwrap();
        // Hand-average per-channel values through the single-channel oracle.
        let mut acc = 0.0;
        for c in 0..3 {
            let xc = Tensor::from_fn(vec![10, 10, 1], |i| x.data()[i * 3 + c]);
            let yc = Tensor::from_fn(vec![10, 10, 1], |i| y.data()[i * 3 + c]);
            acc += ssim(&xc, &yc, &params).unwrap();
        }
        assert!((full - acc / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rgb_invariant_under_channel_permutation() {
        let params = SsimParams { window: 4, ..SsimParams::default() };
        let x = rand_rgb(8, 8, 20);
        let y = rand_rgb(8, 8, 21);
        let permute = |t: &Tensor<f64>| {
            Tensor::from_fn(vec![8, 8, 3], |i| {
                let (px, c) = (i / 3, i % 3);
                t.data()[px * 3 + (c + 1) % 3]
            })
        };
        let orig = ssim_rgb(&x, &y, &params).unwrap();
        let perm = ssim_rgb(&permute(&x), &permute(&y), &params).unwrap();
        assert!((orig - perm).abs() < 1e-12);
    }

    #[test]
    fn identical_rgb_is_one() {
        let x = rand_rgb(12, 12, 30);
        let s = ssim_rgb(&x, &x, &SsimParams::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn image_smaller_than_window_is_an_error() {
        let params = SsimParams::default();
        let x = rand_channel(6, 6, 1);
        assert!(ssim(&x, &x, &params).is_err());
    }

    #[test]
    fn channel_count_mismatch_is_an_error() {
        let params = SsimParams { window: 4, ..SsimParams::default() };
        let x = rand_rgb(8, 8, 1);
        let y = rand_channel(8, 8, 2);
        assert!(ssim_rgb(&x, &y, &params).is_err());
    }
}
