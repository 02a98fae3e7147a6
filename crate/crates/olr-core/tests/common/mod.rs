//! Shared test support: central-difference gradient checking.
//!
//! The checker is the independent oracle for every backward rule: it
//! rebuilds the forward graph from scratch per probe, so it never touches
//! the code path it verifies.

#![allow(dead_code)]

use olr_core::tensor::{Tape, Tensor, Var};
use olr_core::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Outcome of one finite-difference comparison.
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compare analytic gradients of a scalar-valued graph against central
/// differences for every element of every input tensor.
///
/// `build` must construct the graph from the given leaf vars alone.
pub fn fd_check<F>(inputs: &[Tensor<f64>], build: F) -> FdReport
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.input(t.clone())).collect();
        let loss = build(&mut tape, &vars).expect("graph builds");
        tape.value(loss).item().expect("scalar loss")
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = build(&mut tape, &vars).expect("graph builds");
    tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let mut max_rel_err = 0.0_f64;
    let mut checked = 0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ei in 0..input.numel() {
            let orig = input.data()[ei];
            work[ti].data_mut()[ei] = orig + FD_EPS;
            let up = eval(&work);
            work[ti].data_mut()[ei] = orig - FD_EPS;
            let down = eval(&work);
            work[ti].data_mut()[ei] = orig;
            let fd = (up - down) / (2.0 * FD_EPS);
            let a = analytic[ti].data()[ei];
            let denom = a.abs().max(fd.abs());
            let rel = if denom < 1e-7 { (a - fd).abs() } else { (a - fd).abs() / denom };
            if rel > max_rel_err {
                max_rel_err = rel;
            }
            checked += 1;
        }
    }
    FdReport { max_rel_err, checked }
}

/// Uniform random tensor in `[lo, hi)`.
pub fn rand_tensor(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Scalarize an arbitrary tensor with varying upstream gradients:
/// `sum(y * y)` exercises the full Jacobian rather than its row sums.
pub fn sum_of_squares(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let sq = tape.mul(y, y)?;
    Ok(tape.sum(sq))
}
