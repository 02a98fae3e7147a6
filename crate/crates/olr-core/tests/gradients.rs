//! Finite-difference checks for every layer kind and tape operation,
//! run at 64-bit precision on randomized instances.

mod common;

use common::{fd_check, rand_tensor, sum_of_squares, FD_TOL};
use olr_core::rng::stream_rng;
use olr_core::tensor::{Padding, Tensor, Var};
use olr_core::Result;

const INSTANCES: u64 = 20;

fn conv_weight(kernel: usize, in_c: usize, out_c: usize, seed: u64) -> Tensor<f64> {
    let mut rng = stream_rng(seed, "w", 0);
    rand_tensor(vec![kernel * kernel * in_c, out_c], -0.8, 0.8, &mut rng)
}

#[test]
fn conv2d_gradients() {
    for i in 0..INSTANCES {
        let (stride, padding) = match i % 4 {
            0 => (1, Padding::Same),
            1 => (2, Padding::Same),
            2 => (1, Padding::Valid),
            _ => (2, Padding::Valid),
        };
        let mut rng = stream_rng(100 + i, "conv", 0);
        let x = rand_tensor(vec![6, 5, 2], -1.0, 1.0, &mut rng);
        let w = conv_weight(3, 2, 3, 200 + i);
        let b = rand_tensor(vec![3], -0.4, 0.4, &mut rng);
        let report = fd_check(&[x, w, b], |tape, vars| {
            let y = tape.conv2d(vars[0], vars[1], vars[2], 3, stride, padding)?;
            sum_of_squares(tape, y)
        });
        assert!(report.max_rel_err < FD_TOL, "conv2d instance {i}: {}", report.max_rel_err);
    }
}

#[test]
fn conv_transpose2d_gradients() {
    for i in 0..INSTANCES {
        let (stride, padding) =
            if i % 2 == 0 { (2, Padding::Same) } else { (2, Padding::Valid) };
        let mut rng = stream_rng(300 + i, "convt", 0);
        let x = rand_tensor(vec![3, 4, 3], -1.0, 1.0, &mut rng);
        let w = {
            let mut wr = stream_rng(400 + i, "w", 0);
            rand_tensor(vec![3 * 3 * 2, 3], -0.8, 0.8, &mut wr)
        };
        let b = rand_tensor(vec![2], -0.4, 0.4, &mut rng);
        let report = fd_check(&[x, w, b], |tape, vars| {
            let y = tape.conv_transpose2d(vars[0], vars[1], vars[2], 3, stride, padding)?;
            sum_of_squares(tape, y)
        });
        assert!(report.max_rel_err < FD_TOL, "conv_transpose2d instance {i}: {}", report.max_rel_err);
    }
}

#[test]
fn dense_gradients() {
    for i in 0..INSTANCES {
        let mut rng = stream_rng(500 + i, "dense", 0);
        let x = rand_tensor(vec![7], -1.0, 1.0, &mut rng);
        let w = rand_tensor(vec![7, 4], -0.8, 0.8, &mut rng);
        let b = rand_tensor(vec![4], -0.4, 0.4, &mut rng);
        let report = fd_check(&[x, w, b], |tape, vars| {
            let y = tape.dense(vars[0], vars[1], vars[2])?;
            sum_of_squares(tape, y)
        });
        assert!(report.max_rel_err < FD_TOL, "dense instance {i}: {}", report.max_rel_err);
    }
}

#[test]
fn pool_gradients() {
    for i in 0..INSTANCES {
        let padding = if i % 2 == 0 { Padding::Valid } else { Padding::Same };
        let mut rng = stream_rng(600 + i, "pool", 0);
        let x = rand_tensor(vec![6, 6, 2], -1.0, 1.0, &mut rng);
        let avg = fd_check(std::slice::from_ref(&x), |tape, vars| {
            let y = tape.avg_pool2d(vars[0], 2, 2, padding)?;
            sum_of_squares(tape, y)
        });
        assert!(avg.max_rel_err < FD_TOL, "avg_pool instance {i}: {}", avg.max_rel_err);
        let max = fd_check(&[x], |tape, vars| {
            let y = tape.max_pool2d(vars[0], 2, 2, padding)?;
            sum_of_squares(tape, y)
        });
        assert!(max.max_rel_err < FD_TOL, "max_pool instance {i}: {}", max.max_rel_err);
    }
}

#[test]
fn activation_and_shape_gradients() {
    for i in 0..INSTANCES {
        let mut rng = stream_rng(700 + i, "act", 0);
        let x = rand_tensor(vec![3, 4], -2.0, 2.0, &mut rng);
        let relu = fd_check(std::slice::from_ref(&x), |tape, vars| {
            let y = tape.relu(vars[0]);
            sum_of_squares(tape, y)
        });
        assert!(relu.max_rel_err < FD_TOL, "relu instance {i}: {}", relu.max_rel_err);
        let sigmoid = fd_check(std::slice::from_ref(&x), |tape, vars| {
            let y = tape.sigmoid(vars[0]);
            sum_of_squares(tape, y)
        });
        assert!(sigmoid.max_rel_err < FD_TOL, "sigmoid instance {i}: {}", sigmoid.max_rel_err);
        let reshape = fd_check(&[x], |tape, vars| {
            let y = tape.reshape(vars[0], vec![2, 6])?;
            let z = tape.flatten(y);
            sum_of_squares(tape, z)
        });
        assert!(reshape.max_rel_err < FD_TOL, "reshape instance {i}: {}", reshape.max_rel_err);
    }
}

#[test]
fn elementwise_and_reduction_gradients() {
    for i in 0..INSTANCES {
        let mut rng = stream_rng(800 + i, "ew", 0);
        let a = rand_tensor(vec![2, 3], -1.0, 1.0, &mut rng);
        let b = rand_tensor(vec![2, 3], 0.5, 1.5, &mut rng); // bounded away from 0 for div
        let report = fd_check(&[a, b], |tape, vars| {
            let sum = tape.add(vars[0], vars[1])?;
            let diff = tape.sub(vars[0], vars[1])?;
            let prod = tape.mul(sum, diff)?;
            let quot = tape.div(prod, vars[1])?;
            let scaled = tape.scale(quot, 0.7);
            let shifted = tape.add_scalar(scaled, 0.3);
            let rows = tape.sum_last_axis(shifted)?;
            let rows2 = tape.reshape(rows, vec![1, 2])?;
            let m = tape.mean(rows2);
            let sq = tape.mul(m, m)?;
            Ok(tape.sum(sq))
        });
        assert!(report.max_rel_err < FD_TOL, "elementwise instance {i}: {}", report.max_rel_err);
    }
}

#[test]
fn bce_with_logits_gradients() {
    for i in 0..INSTANCES {
        let mut rng = stream_rng(900 + i, "bce", 0);
        let z = rand_tensor(vec![6], -3.0, 3.0, &mut rng);
        let targets = Tensor::from_fn(vec![6], |j| if (j as u64 + i) % 2 == 0 { 1.0 } else { 0.0 });
        let report = fd_check(&[z], |tape, vars| tape.bce_with_logits(vars[0], &targets));
        assert!(report.max_rel_err < FD_TOL, "bce instance {i}: {}", report.max_rel_err);
    }
}

#[test]
fn minmax_rescale_gradients() {
    for i in 0..INSTANCES {
        let mut rng = stream_rng(1000 + i, "mmr", 0);
        let x = rand_tensor(vec![3, 3, 1], -1.0, 1.0, &mut rng);
        let t = rand_tensor(vec![3, 3, 1], 0.0, 1.0, &mut rng);
        let report = fd_check(&[x], |tape, vars| {
            let y = tape.minmax_rescale(vars[0]);
            let tv = tape.input(t.clone());
            tape.mse(tv, y)
        });
        assert!(report.max_rel_err < FD_TOL, "minmax_rescale instance {i}: {}", report.max_rel_err);
    }
}

#[test]
fn select_channel_gradients() {
    for i in 0..INSTANCES {
        let mut rng = stream_rng(1100 + i, "sel", 0);
        let x = rand_tensor(vec![4, 4, 3], -1.0, 1.0, &mut rng);
        let report = fd_check(&[x], |tape, vars| {
            let c0 = tape.select_channel(vars[0], 0)?;
            let c2 = tape.select_channel(vars[0], 2)?;
            let p = tape.mul(c0, c2)?;
            sum_of_squares(tape, p)
        });
        assert!(report.max_rel_err < FD_TOL, "select_channel instance {i}: {}", report.max_rel_err);
    }
}

/// Two conv layers with a relu between them: checks gradient flow through a
/// realistic composite for every parameter and the input.
#[test]
fn two_layer_conv_net_gradients() {
    for i in 0..INSTANCES {
        let mut rng = stream_rng(1200 + i, "net", 0);
        let x = rand_tensor(vec![6, 6, 2], -1.0, 1.0, &mut rng);
        let w1 = conv_weight(3, 2, 3, 1300 + i);
        let b1 = rand_tensor(vec![3], -0.3, 0.3, &mut rng);
        let w2 = conv_weight(3, 3, 2, 1400 + i);
        let b2 = rand_tensor(vec![2], -0.3, 0.3, &mut rng);
        let report = fd_check(&[x, w1, b1, w2, b2], |tape, vars| {
            let h = tape.conv2d(vars[0], vars[1], vars[2], 3, 1, Padding::Same)?;
            let h = tape.relu(h);
            let y = tape.conv2d(h, vars[3], vars[4], 3, 2, Padding::Same)?;
            sum_of_squares(tape, y)
        });
        assert!(
            report.max_rel_err < FD_TOL,
            "two-layer conv net instance {i}: {} over {} elements",
            report.max_rel_err,
            report.checked
        );
    }
}

/// Gradient of an average-pool head used as global pooling.
#[test]
fn global_avg_pool_gradients() {
    for i in 0..INSTANCES {
        let mut rng = stream_rng(1500 + i, "gap", 0);
        let x = rand_tensor(vec![4, 4, 6], -1.0, 1.0, &mut rng);
        let report = fd_check(&[x], |tape, vars: &[Var]| -> Result<Var> {
            let pooled = tape.avg_pool2d(vars[0], 4, 1, Padding::Valid)?;
            let e = tape.reshape(pooled, vec![2, 3])?;
            let v = tape.sum_last_axis(e)?;
            sum_of_squares(tape, v)
        });
        assert!(report.max_rel_err < FD_TOL, "global pool instance {i}: {}", report.max_rel_err);
    }
}
