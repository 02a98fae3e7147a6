//! Layer specifications and sequential models.
//!
//! A [`LayerSpec`] follows the `(k, k, c, s, p)` convention: kernel size,
//! channel count, stride and padding. [`Sequential`] owns the parameter
//! tensors for a layer stack and applies it on a [`Tape`].

use super::tape::{Tape, Var};
use super::{Scalar, Tensor};
use crate::error::{OlrError, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d { kernel: usize, channels: usize, stride: usize, padding: Padding },
    ConvTranspose2d { kernel: usize, channels: usize, stride: usize, padding: Padding },
    Dense { units: usize },
    AvgPool2d { kernel: usize, stride: usize, padding: Padding },
    MaxPool2d { kernel: usize, stride: usize, padding: Padding },
    Relu,
    Sigmoid,
    Flatten,
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    /// Output shape produced from `input` (shape algebra only).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        use super::kernels::{ConvGeom, PoolGeom};
        match self {
            LayerSpec::Conv2d { kernel, channels, stride, padding } => {
                let (h, w, c) = expect_image("conv2d", input)?;
                let g = ConvGeom::conv(h, w, c, *channels, *kernel, *stride, *padding)?;
                Ok(vec![g.out_h, g.out_w, *channels])
            }
            LayerSpec::ConvTranspose2d { kernel, channels, stride, padding } => {
                let (h, w, c) = expect_image("conv_transpose2d", input)?;
                let g = ConvGeom::conv_transpose(h, w, c, *channels, *kernel, *stride, *padding)?;
                Ok(vec![g.in_h, g.in_w, *channels])
            }
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(OlrError::Shape(format!(
                        "dense expects a rank-1 input, got {input:?}"
                    )));
                }
                Ok(vec![*units])
            }
            LayerSpec::AvgPool2d { kernel, stride, padding }
            | LayerSpec::MaxPool2d { kernel, stride, padding } => {
                let (h, w, c) = expect_image("pool", input)?;
                let g = PoolGeom::new(h, w, c, *kernel, *stride, *padding)?;
                Ok(vec![g.out_h, g.out_w, c])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Reshape { shape } => {
                let in_numel: usize = input.iter().product();
                let out_numel: usize = shape.iter().product();
                if in_numel != out_numel {
                    return Err(OlrError::Shape(format!(
                        "reshape to {shape:?} changes element count ({in_numel} -> {out_numel})"
                    )));
                }
                Ok(shape.clone())
            }
        }
    }

    /// Shapes of the layer's parameter tensors (weight, bias), if any.
    fn param_shapes(&self, input: &[usize]) -> Result<Option<(Vec<usize>, Vec<usize>)>> {
        match self {
            LayerSpec::Conv2d { kernel, channels, .. } => {
                let (_, _, c) = expect_image("conv2d", input)?;
                Ok(Some((vec![kernel * kernel * c, *channels], vec![*channels])))
            }
            LayerSpec::ConvTranspose2d { kernel, channels, .. } => {
                let (_, _, c) = expect_image("conv_transpose2d", input)?;
                Ok(Some((vec![kernel * kernel * channels, c], vec![*channels])))
            }
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(OlrError::Shape(format!(
                        "dense expects a rank-1 input, got {input:?}"
                    )));
                }
                Ok(Some((vec![input[0], *units], vec![*units])))
            }
            _ => Ok(None),
        }
    }

    fn fan_in(&self, input: &[usize]) -> usize {
        match self {
            LayerSpec::Conv2d { kernel, .. } | LayerSpec::ConvTranspose2d { kernel, .. } => {
                kernel * kernel * input[2]
            }
            LayerSpec::Dense { .. } => input[0],
            _ => 0,
        }
    }
}

fn expect_image(what: &str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(OlrError::Shape(format!("{what} expects [h, w, c], got {other:?}"))),
    }
}

/// Parameters of one layer (empty for parameter-free layers).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<S> {
    pub weight: Option<Tensor<S>>,
    pub bias: Option<Tensor<S>>,
}

/// A layer stack with its parameters.
#[derive(Clone, Debug)]
pub struct Sequential<S: Scalar> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams<S>>,
}

impl<S: Scalar> Sequential<S> {
    /// Build a model with He-uniform weight init and zero biases, drawing
    /// from `rng` in layer order.
    pub fn init(input_shape: Vec<usize>, layers: Vec<LayerSpec>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut params = Vec::with_capacity(layers.len());
        let mut shape = input_shape.clone();
        for layer in &layers {
            match layer.param_shapes(&shape)? {
                Some((w_shape, b_shape)) => {
                    let fan_in = layer.fan_in(&shape).max(1);
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let weight = Tensor::from_fn(w_shape, |_| {
                        S::from_f64(rng.random_range(-limit..limit))
                    });
                    let bias = Tensor::zeros(b_shape);
                    params.push(LayerParams { weight: Some(weight), bias: Some(bias) });
                }
                None => params.push(LayerParams { weight: None, bias: None }),
            }
            shape = layer.output_shape(&shape)?;
        }
        Ok(Sequential { input_shape, layers, params })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    /// All shape transitions, input first (one entry per layer output).
    pub fn shape_trace(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            trace.push(shape.clone());
        }
        Ok(trace)
    }

    /// Record parameters on a tape; order matches [`Sequential::params`].
    pub fn register_params(&self, tape: &mut Tape<S>) -> Vec<Var> {
        let mut vars = Vec::new();
        for p in &self.params {
            if let Some(w) = &p.weight {
                vars.push(tape.input(w.clone()));
            }
            if let Some(b) = &p.bias {
                vars.push(tape.input(b.clone()));
            }
        }
        vars
    }

    /// Apply the stack to `x` given parameter vars from
    /// [`Sequential::register_params`].
    pub fn apply(&self, tape: &mut Tape<S>, x: Var, param_vars: &[Var]) -> Result<Var> {
        let mut cur = x;
        let mut pv = param_vars.iter().copied();
        let mut next_pair = |layer: &LayerSpec| -> Result<(Var, Var)> {
            match (pv.next(), pv.next()) {
                (Some(w), Some(b)) => Ok((w, b)),
                _ => Err(OlrError::Shape(format!(
                    "missing parameter vars for layer {layer:?}"
                ))),
            }
        };
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match layer {
                LayerSpec::Conv2d { kernel, stride, padding, .. } => {
                    let (w, b) = next_pair(layer)?;
                    tape.conv2d(cur, w, b, *kernel, *stride, *padding).map_err(|e| {
                        OlrError::Shape(format!("layer {i} (conv2d): {e}"))
                    })?
                }
                LayerSpec::ConvTranspose2d { kernel, stride, padding, .. } => {
                    let (w, b) = next_pair(layer)?;
                    tape.conv_transpose2d(cur, w, b, *kernel, *stride, *padding).map_err(|e| {
                        OlrError::Shape(format!("layer {i} (conv_transpose2d): {e}"))
                    })?
                }
                LayerSpec::Dense { .. } => {
                    let (w, b) = next_pair(layer)?;
                    tape.dense(cur, w, b)
                        .map_err(|e| OlrError::Shape(format!("layer {i} (dense): {e}")))?
                }
                LayerSpec::AvgPool2d { kernel, stride, padding } => {
                    tape.avg_pool2d(cur, *kernel, *stride, *padding)?
                }
                LayerSpec::MaxPool2d { kernel, stride, padding } => {
                    tape.max_pool2d(cur, *kernel, *stride, *padding)?
                }
                LayerSpec::Relu => tape.relu(cur),
                LayerSpec::Sigmoid => tape.sigmoid(cur),
                LayerSpec::Flatten => tape.flatten(cur),
                LayerSpec::Reshape { shape } => tape.reshape(cur, shape.clone())?,
            };
        }
        Ok(cur)
    }

    /// Forward pass without keeping gradients.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.shape() != self.input_shape {
            return Err(OlrError::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let params = self.register_params(&mut tape);
        let out = self.apply(&mut tape, xv, &params)?;
        Ok(tape.value(out).clone())
    }

    /// Flat list of parameter tensors (weights and biases in layer order).
    pub fn param_tensors(&self) -> Vec<&Tensor<S>> {
        self.params
            .iter()
            .flat_map(|p| p.weight.iter().chain(p.bias.iter()))
            .collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.params
            .iter_mut()
            .flat_map(|p| p.weight.iter_mut().chain(p.bias.iter_mut()))
            .collect()
    }

    /// `(name, tensor)` pairs for checkpointing (`layer{i}.weight` /
    /// `layer{i}.bias`).
    pub fn named_params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if let Some(w) = &p.weight {
                out.push((format!("layer{i}.weight"), w));
            }
            if let Some(b) = &p.bias {
                out.push((format!("layer{i}.bias"), b));
            }
        }
        out
    }

    /// Replace parameters from named tensors (e.g. a loaded checkpoint).
    pub fn load_named_params(&mut self, named: &[(String, Tensor<S>)]) -> Result<()> {
        let lookup: std::collections::BTreeMap<&str, &Tensor<S>> =
            named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (i, p) in self.params.iter_mut().enumerate() {
            for (slot, key) in [
                (&mut p.weight, format!("layer{i}.weight")),
                (&mut p.bias, format!("layer{i}.bias")),
            ] {
                if let Some(t) = slot.as_mut() {
                    let loaded = *lookup.get(key.as_str()).ok_or_else(|| {
                        OlrError::Config(format!("checkpoint is missing tensor {key}"))
                    })?;
                    if loaded.shape() != t.shape() {
                        return Err(OlrError::Shape(format!(
                            "checkpoint tensor {key} has shape {:?}, model expects {:?}",
                            loaded.shape(),
                            t.shape()
                        )));
                    }
                    *t = loaded.clone();
                }
            }
        }
        Ok(())
    }
}
