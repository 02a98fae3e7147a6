//! Minimal reverse-mode autodiff engine.
//!
//! Exactly the operations the pipeline needs: dense and (transposed)
//! convolution layers, pooling, relu/sigmoid, elementwise arithmetic,
//! reductions, a stable binary cross-entropy, min-max rescaling, an RMSProp
//! optimizer and a binary checkpoint format. Training runs in `f32`; the
//! whole engine is generic over [`Scalar`] so gradient tests can run the
//! identical code path in `f64`.

mod batch;
mod checkpoint;
mod kernels;
mod layers;
mod optim;
mod tape;

pub use batch::{batch_gradients, set_threads, thread_pool};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::{LayerSpec, Padding, Sequential};
pub use optim::RmsProp;
pub use tape::{Tape, Var};

use crate::error::{OlrError, Result};

/// Floating point element type of the engine (implemented for `f32`/`f64`).
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(OlrError::Shape(format!(
                "tensor shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![S::zero(); numel] }
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> S) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: (0..numel).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// The single element of a rank-0/one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(OlrError::Shape(format!(
                "item() requires a scalar tensor, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(OlrError::Shape(format!(
                "cannot reshape {} elements to {:?}",
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Elementwise map into a possibly different scalar type.
    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

impl Tensor<f32> {
    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v as f64)
    }
}

/// Softmax of `logits / temperature`.
///
/// Raising the temperature flattens the distribution (entropy is
/// non-decreasing in `t`); output entries are positive and sum to 1.
pub fn softmax_temperature<S: Scalar>(logits: &[S], t: S) -> Result<Vec<S>> {
    if t <= S::zero() {
        return Err(OlrError::Config(format!("temperature must be positive, got {:?}", t)));
    }
    if logits.is_empty() {
        return Err(OlrError::Config("softmax of an empty logit vector".into()));
    }
    let scaled: Vec<S> = logits.iter().map(|&z| z / t).collect();
    let max = scaled.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = scaled.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().fold(S::zero(), |a, &b| a + b);
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Shannon entropy of a probability vector (natural log).
pub fn entropy<S: Scalar>(probs: &[S]) -> S {
    probs.iter().fold(S::zero(), |acc, &p| {
        if p > S::zero() {
            acc - p * p.ln()
        } else {
            acc
        }
    })
}
