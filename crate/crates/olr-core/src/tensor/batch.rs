//! Batch gradient evaluation, optionally parallel over samples.
//!
//! Each sample gets its own tape; per-sample gradients are summed in sample
//! order afterwards, so results are bit-identical for any worker count. The
//! pool size comes from [`set_threads`] or the `OLR_THREADS` environment
//! variable and defaults to 1.

use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::Result;
use rayon::prelude::*;
use std::sync::OnceLock;

static THREAD_OVERRIDE: OnceLock<usize> = OnceLock::new();
static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Fix the worker count before the pool is first used. Returns false if the
/// pool was already built.
pub fn set_threads(n: usize) -> bool {
    if POOL.get().is_some() {
        return false;
    }
    THREAD_OVERRIDE.set(n.max(1)).is_ok()
}

/// The shared worker pool.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let n = THREAD_OVERRIDE
            .get()
            .copied()
            .or_else(|| std::env::var("OLR_THREADS").ok().and_then(|v| v.parse().ok()))
            .unwrap_or(1)
            .max(1);
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("building rayon pool")
    })
}

/// Mean loss and mean parameter gradients over a batch.
///
/// `build` records one sample's forward pass on a fresh tape (parameters are
/// registered first, in `params` order) and returns the scalar loss var.
pub fn batch_gradients<S, B, F>(
    params: &[&Tensor<S>],
    batch: &[B],
    build: F,
) -> Result<(Vec<Tensor<S>>, S)>
where
    S: Scalar,
    B: Sync,
    F: Fn(&mut Tape<S>, &[Var], &B) -> Result<Var> + Sync,
{
    let per_sample = |sample: &B| -> Result<(Vec<Tensor<S>>, S)> {
        let mut tape = Tape::new();
        let param_vars: Vec<Var> = params.iter().map(|p| tape.input((*p).clone())).collect();
        let loss = build(&mut tape, &param_vars, sample)?;
        tape.backward(loss)?;
        let grads = param_vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        Ok((grads, tape.value(loss).item()?))
    };

    let results: Vec<Result<(Vec<Tensor<S>>, S)>> =
        thread_pool().install(|| batch.par_iter().map(per_sample).collect());

    let scale = S::one() / S::from_f64(batch.len().max(1) as f64);
    let mut total_loss = S::zero();
    let mut grads: Vec<Tensor<S>> =
        params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    // Fixed-order reduction keeps results independent of thread scheduling.
    for r in results {
        let (sample_grads, loss) = r?;
        total_loss = total_loss + loss;
        for (acc, g) in grads.iter_mut().zip(sample_grads.iter()) {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data().iter()) {
                *a = *a + b;
            }
        }
    }
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v = *v * scale;
        }
    }
    Ok((grads, total_loss * scale))
}
