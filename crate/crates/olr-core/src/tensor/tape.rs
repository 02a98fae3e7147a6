//! Reverse-mode tape.
//!
//! Operations append nodes holding the forward value plus what the backward
//! pass needs; [`Tape::backward`] replays them newest-first, accumulating
//! vector-Jacobian products into per-node gradient slots. Node indices are a
//! topological order by construction, so a single reverse sweep suffices.

use super::kernels::{
    avg_pool_bwd, avg_pool_fwd, conv_dw, conv_dx, conv_fwd, im2col, matmul_acc, matmul_nt_acc,
    matmul_tn_acc, max_pool_bwd, max_pool_fwd, ConvGeom, PoolGeom,
};
use super::layers::Padding;
use super::{Scalar, Tensor};
use crate::error::{OlrError, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

const RESCALE_EPS: f64 = 1e-8;

enum Op<S> {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom, cols: Vec<S> },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    AvgPool2d { x: Var, geom: PoolGeom },
    MaxPool2d { x: Var, geom: PoolGeom, argmax: Vec<u32> },
    Relu { x: Var },
    Sigmoid { x: Var },
    Reshape { x: Var },
    SelectChannel { x: Var, channel: usize, channels: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { x: Var, factor: S },
    AddScalar { x: Var },
    SumLastAxis { x: Var, cols: usize },
    Sum { x: Var },
    Mean { x: Var },
    BceWithLogits { logits: Var, targets: Tensor<S> },
    MinMaxRescale { x: Var },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

/// Wengert list of tensor operations with their forward values.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Record an input (leaf) tensor.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if any flowed to it.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        self.grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape().to_vec(),
            data: g.clone(),
        })
    }

    /// Gradient of the loss w.r.t. `v`; zeros when the loss does not reach it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<S> {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape().to_vec()))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[S] {
        self.nodes[v.0].value.data()
    }

    fn check_same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(OlrError::Shape(format!(
                "{what}: operand shapes differ, {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn image_dims(&self, what: &str, x: Var) -> Result<(usize, usize, usize)> {
        match self.shape(x) {
            [h, w, c] => Ok((*h, *w, *c)),
            other => Err(OlrError::Shape(format!(
                "{what}: expected a rank-3 [h, w, c] input, got {other:?}"
            ))),
        }
    }

    /// `x @ w + b` for a rank-1 input; `w` is `[in, out]`, `b` is `[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let in_dim = self.nodes[x.0].value.numel();
        let (w_in, w_out) = match self.shape(w) {
            [i, o] => (*i, *o),
            other => {
                return Err(OlrError::Shape(format!("dense: weight must be rank 2, got {other:?}")))
            }
        };
        if self.shape(x).len() != 1 {
            return Err(OlrError::Shape(format!(
                "dense: input must be rank 1 (flatten first), got {:?}",
                self.shape(x)
            )));
        }
        if in_dim != w_in {
            return Err(OlrError::Shape(format!(
                "dense: input dimension {in_dim} does not match weight rows {w_in}"
            )));
        }
        if self.shape(b) != [w_out] {
            return Err(OlrError::Shape(format!(
                "dense: bias shape {:?} does not match {w_out} outputs",
                self.shape(b)
            )));
        }
        let mut y = self.data(b).to_vec();
        matmul_acc(self.data(x), self.data(w), 1, in_dim, w_out, &mut y);
        let value = Tensor::new(vec![w_out], y)?;
        Ok(self.push(value, Op::Dense { x, w, b }))
    }

    /// 2-D convolution over `[h, w, c]`; weights `[k*k*c_in, c_out]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (h, wd, c) = self.image_dims("conv2d", x)?;
        let out_c = self.nodes[b.0].value.numel();
        let geom = ConvGeom::conv(h, wd, c, out_c, kernel, stride, padding)?;
        if self.shape(w) != [geom.patch_len(), out_c] {
            return Err(OlrError::Shape(format!(
                "conv2d: weight shape {:?} does not match [{}, {}]",
                self.shape(w),
                geom.patch_len(),
                out_c
            )));
        }
        let (y, cols) = conv_fwd(self.data(x), self.data(w), self.data(b), &geom);
        let value = Tensor::new(vec![geom.out_h, geom.out_w, out_c], y)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom, cols }))
    }

    /// Transposed 2-D convolution (adjoint of [`Tape::conv2d`]); weights
    /// `[k*k*c_out, c_in]`, `same` padding doubles the spatial size at
    /// stride 2.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (h, wd, c) = self.image_dims("conv_transpose2d", x)?;
        let out_c = self.nodes[b.0].value.numel();
        let geom = ConvGeom::conv_transpose(h, wd, c, out_c, kernel, stride, padding)?;
        if self.shape(w) != [geom.patch_len(), geom.out_c] {
            return Err(OlrError::Shape(format!(
                "conv_transpose2d: weight shape {:?} does not match [{}, {}]",
                self.shape(w),
                geom.patch_len(),
                geom.out_c
            )));
        }
        // Forward pass is the reference conv's input gradient.
        let mut y = conv_dx(self.data(x), self.data(w), &geom);
        let bias = self.data(b);
        for px in y.chunks_exact_mut(out_c) {
            for (v, &bv) in px.iter_mut().zip(bias.iter()) {
                *v = *v + bv;
            }
        }
        let value = Tensor::new(vec![geom.in_h, geom.in_w, out_c], y)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }))
    }

    pub fn avg_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: Padding) -> Result<Var> {
        let (h, w, c) = self.image_dims("avg_pool2d", x)?;
        let geom = PoolGeom::new(h, w, c, kernel, stride, padding)?;
        let y = avg_pool_fwd(self.data(x), &geom);
        let value = Tensor::new(vec![geom.out_h, geom.out_w, c], y)?;
        Ok(self.push(value, Op::AvgPool2d { x, geom }))
    }

    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize, padding: Padding) -> Result<Var> {
        let (h, w, c) = self.image_dims("max_pool2d", x)?;
        let geom = PoolGeom::new(h, w, c, kernel, stride, padding)?;
        let (y, argmax) = max_pool_fwd(self.data(x), &geom);
        let value = Tensor::new(vec![geom.out_h, geom.out_w, c], y)?;
        Ok(self.push(value, Op::MaxPool2d { x, geom, argmax }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.map(|v| v.max(S::zero()));
        self.push(value, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.map(sigmoid_scalar);
        self.push(value, Op::Sigmoid { x })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[x.0].value.clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.numel();
        let value = self.nodes[x.0].value.clone().reshaped(vec![n]).expect("flatten preserves numel");
        self.push(value, Op::Reshape { x })
    }

    /// Extract channel `c` of an `[h, w, c]` tensor as `[h, w, 1]`.
    pub fn select_channel(&mut self, x: Var, channel: usize) -> Result<Var> {
        let (h, w, c) = self.image_dims("select_channel", x)?;
        if channel >= c {
            return Err(OlrError::Shape(format!(
                "select_channel: channel {channel} out of range for {c} channels"
            )));
        }
        let data: Vec<S> =
            self.data(x).iter().skip(channel).step_by(c).copied().collect();
        let value = Tensor::new(vec![h, w, 1], data)?;
        Ok(self.push(value, Op::SelectChannel { x, channel, channels: c }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x - y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("div", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x / y);
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Div { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let value = self.nodes[x.0].value.map(|v| v * factor);
        self.push(value, Op::Scale { x, factor })
    }

    pub fn add_scalar(&mut self, x: Var, offset: S) -> Var {
        let value = self.nodes[x.0].value.map(|v| v + offset);
        self.push(value, Op::AddScalar { x })
    }

    /// Sum a rank-2 tensor over its last axis: `[r, c] -> [r]`.
    pub fn sum_last_axis(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = match self.shape(x) {
            [r, c] => (*r, *c),
            other => {
                return Err(OlrError::Shape(format!(
                    "sum_last_axis: expected rank 2, got {other:?}"
                )))
            }
        };
        let data: Vec<S> = self
            .data(x)
            .chunks_exact(cols)
            .map(|row| row.iter().fold(S::zero(), |a, &b| a + b))
            .collect();
        let value = Tensor::new(vec![rows], data)?;
        Ok(self.push(value, Op::SumLastAxis { x, cols }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().fold(S::zero(), |a, &b| a + b);
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = S::from_f64(self.nodes[x.0].value.numel() as f64);
        let s = self.data(x).iter().fold(S::zero(), |a, &b| a + b) / n;
        self.push(Tensor::scalar(s), Op::Mean { x })
    }

    /// Mean binary cross-entropy between sigmoid(logits) and 0/1 targets,
    /// computed in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<S>) -> Result<Var> {
        if self.shape(logits) != targets.shape() {
            return Err(OlrError::Shape(format!(
                "bce_with_logits: logits {:?} vs targets {:?}",
                self.shape(logits),
                targets.shape()
            )));
        }
        let n = S::from_f64(targets.numel() as f64);
        let mut total = S::zero();
        for (&z, &y) in self.data(logits).iter().zip(targets.data().iter()) {
            total = total + z.max(S::zero()) - z * y + (S::one() + (-z.abs()).exp()).ln();
        }
        let value = Tensor::scalar(total / n);
        Ok(self.push(value, Op::BceWithLogits { logits, targets: targets.clone() }))
    }

    /// `(x - min(x)) / (max(x) - min(x) + 1e-8)`; maps a constant tensor
    /// to zeros.
    pub fn minmax_rescale(&mut self, x: Var) -> Var {
        let data = self.data(x);
        let (mn, mx) = min_max(data);
        let denom = mx - mn + S::from_f64(RESCALE_EPS);
        let value = self.nodes[x.0].value.map(|v| (v - mn) / denom);
        self.push(value, Op::MinMaxRescale { x })
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar loss. Every node reachable from the loss
    /// receives a gradient; leaves that are not reachable read back as zero.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(OlrError::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![S::one()]);
        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = self.grads[i].take() else { continue };
            self.backprop_node(i, &dy);
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: &[S]) {
        match &mut self.grads[v.0] {
            Some(g) => {
                for (a, &b) in g.iter_mut().zip(contrib.iter()) {
                    *a = *a + b;
                }
            }
            None => self.grads[v.0] = Some(contrib.to_vec()),
        }
    }

    fn backprop_node(&mut self, idx: usize, dy: &[S]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                let in_dim = self.nodes[x.0].value.numel();
                let out_dim = dy.len();
                let mut dx = vec![S::zero(); in_dim];
                matmul_nt_acc(dy, self.data(w), 1, out_dim, in_dim, &mut dx);
                let mut dw = vec![S::zero(); in_dim * out_dim];
                matmul_tn_acc(self.data(x), dy, 1, in_dim, out_dim, &mut dw);
                self.accumulate(x, &dx);
                self.accumulate(w, &dw);
                self.accumulate(b, dy);
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let (x, w, b) = (*x, *w, *b);
                let geom = geom.clone();
                let (dw, db) = conv_dw(cols, dy, &geom);
                let dx = conv_dx(dy, self.data(w), &geom);
                self.accumulate(x, &dx);
                self.accumulate(w, &dw);
                self.accumulate(b, &db);
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (x, w, b) = (*x, *w, *b);
                let geom = geom.clone();
                // Adjoint of the adjoint: input grad is a plain forward conv.
                let dcols = im2col(dy, &geom);
                let mut dx = vec![S::zero(); geom.out_positions() * geom.out_c];
                matmul_acc(
                    &dcols,
                    self.data(w),
                    geom.out_positions(),
                    geom.patch_len(),
                    geom.out_c,
                    &mut dx,
                );
                // Weight grad: the layer input plays the reference conv's
                // output-gradient role.
                let (dw, _) = conv_dw(&dcols, self.data(x), &geom);
                let out_c = self.nodes[b.0].value.numel();
                let mut db = vec![S::zero(); out_c];
                for px in dy.chunks_exact(out_c) {
                    for (d, &v) in db.iter_mut().zip(px.iter()) {
                        *d = *d + v;
                    }
                }
                self.accumulate(x, &dx);
                self.accumulate(w, &dw);
                self.accumulate(b, &db);
            }
            Op::AvgPool2d { x, geom } => {
                let x = *x;
                let dx = avg_pool_bwd(dy, &geom.clone());
                self.accumulate(x, &dx);
            }
            Op::MaxPool2d { x, geom, argmax } => {
                let x = *x;
                let in_len = geom.in_h * geom.in_w * geom.c;
                let dx = max_pool_bwd(dy, argmax, in_len);
                self.accumulate(x, &dx);
            }
            Op::Relu { x } => {
                let x = *x;
                let dx: Vec<S> = self
                    .data(x)
                    .iter()
                    .zip(dy.iter())
                    .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Sigmoid { x } => {
                let x = *x;
                let dx: Vec<S> = self.nodes[idx]
                    .value
                    .data()
                    .iter()
                    .zip(dy.iter())
                    .map(|(&y, &g)| g * y * (S::one() - y))
                    .collect();
                self.accumulate(x, &dx);
            }
            Op::Reshape { x } => {
                let x = *x;
                self.accumulate(x, dy);
            }
            Op::SelectChannel { x, channel, channels } => {
                let (x, channel, channels) = (*x, *channel, *channels);
                let mut dx = vec![S::zero(); self.nodes[x.0].value.numel()];
                for (i, &g) in dy.iter().enumerate() {
                    dx[i * channels + channel] = g;
                }
                self.accumulate(x, &dx);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, dy);
                self.accumulate(b, dy);
            }
            Op::Sub { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, dy);
                let neg: Vec<S> = dy.iter().map(|&g| -g).collect();
                self.accumulate(b, &neg);
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                let da = zip_map(dy, self.data(b), |g, v| g * v);
                let db = zip_map(dy, self.data(a), |g, v| g * v);
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Div { a, b } => {
                let (a, b) = (*a, *b);
                let da = zip_map(dy, self.data(b), |g, v| g / v);
                let db: Vec<S> = dy
                    .iter()
                    .zip(self.nodes[idx].value.data().iter().zip(self.data(b).iter()))
                    .map(|(&g, (&z, &bv))| -g * z / bv)
                    .collect();
                self.accumulate(a, &da);
                self.accumulate(b, &db);
            }
            Op::Scale { x, factor } => {
                let (x, factor) = (*x, *factor);
                let dx: Vec<S> = dy.iter().map(|&g| g * factor).collect();
                self.accumulate(x, &dx);
            }
            Op::AddScalar { x } => {
                let x = *x;
                self.accumulate(x, dy);
            }
            Op::SumLastAxis { x, cols } => {
                let (x, cols) = (*x, *cols);
                let mut dx = Vec::with_capacity(dy.len() * cols);
                for &g in dy {
                    dx.extend(std::iter::repeat(g).take(cols));
                }
                self.accumulate(x, &dx);
            }
            Op::Sum { x } => {
                let x = *x;
                let g = dy[0];
                let dx = vec![g; self.nodes[x.0].value.numel()];
                self.accumulate(x, &dx);
            }
            Op::Mean { x } => {
                let x = *x;
                let n = self.nodes[x.0].value.numel();
                let g = dy[0] / S::from_f64(n as f64);
                let dx = vec![g; n];
                self.accumulate(x, &dx);
            }
            Op::BceWithLogits { logits, targets } => {
                let logits = *logits;
                let n = S::from_f64(targets.numel() as f64);
                let g = dy[0] / n;
                let dz: Vec<S> = self
                    .data(logits)
                    .iter()
                    .zip(targets.data().iter())
                    .map(|(&z, &y)| g * (sigmoid_scalar(z) - y))
                    .collect();
                self.accumulate(logits, &dz);
            }
            Op::MinMaxRescale { x } => {
                let x = *x;
                let xs = self.data(x);
                let (amin, amax) = arg_min_max(xs);
                let mn = xs[amin];
                let mx = xs[amax];
                let denom = mx - mn + S::from_f64(RESCALE_EPS);
                let y = self.nodes[idx].value.data();
                let g_sum = dy.iter().fold(S::zero(), |a, &b| a + b);
                let gy_sum =
                    dy.iter().zip(y.iter()).fold(S::zero(), |a, (&g, &yv)| a + g * yv);
                let mut dx: Vec<S> = dy.iter().map(|&g| g / denom).collect();
                dx[amin] = dx[amin] - g_sum / denom + gy_sum / denom;
                dx[amax] = dx[amax] - gy_sum / denom;
                self.accumulate(x, &dx);
            }
        }
    }
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

fn sigmoid_scalar<S: Scalar>(z: S) -> S {
    // Evaluate on the non-overflowing branch.
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

fn min_max<S: Scalar>(data: &[S]) -> (S, S) {
    let mut mn = S::infinity();
    let mut mx = S::neg_infinity();
    for &v in data {
        if v < mn {
            mn = v;
        }
        if v > mx {
            mx = v;
        }
    }
    (mn, mx)
}

fn arg_min_max<S: Scalar>(data: &[S]) -> (usize, usize) {
    let mut amin = 0;
    let mut amax = 0;
    for (i, &v) in data.iter().enumerate() {
        if v < data[amin] {
            amin = i;
        }
        if v > data[amax] {
            amax = i;
        }
    }
    (amin, amax)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.input(t64(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.input(t64(vec![1], vec![3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.input(t64(vec![2], vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unreachable_leaf_reads_back_zero() {
        let mut tape = Tape::new();
        let x = tape.input(t64(vec![2], vec![1.0, 2.0]));
        let y = tape.input(t64(vec![2], vec![5.0, 6.0]));
        let loss = tape.sum(x);
        tape.backward(loss).unwrap();
        assert!(tape.grad(y).is_none());
        assert_eq!(tape.grad_or_zeros(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_operand_accumulates_both_paths() {
        // loss = sum(a*b + a) => da = b + 1, db = a.
        let mut tape = Tape::new();
        let a = tape.input(t64(vec![1], vec![3.0]));
        let b = tape.input(t64(vec![1], vec![5.0]));
        let prod = tape.mul(a, b).unwrap();
        let s = tape.add(prod, a).unwrap();
        let loss = tape.sum(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[6.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[3.0]);
    }

    #[test]
    fn minmax_rescale_known_values() {
        let mut tape = Tape::new();
        let x = tape.input(t64(vec![3], vec![0.0, 5.0, 10.0]));
        let y = tape.minmax_rescale(x);
        let out = tape.value(y).data().to_vec();
        assert!((out[0] - 0.0).abs() < 1e-6);
        assert!((out[1] - 0.5).abs() < 1e-6);
        assert!((out[2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn minmax_rescale_constant_maps_to_zero() {
        let mut tape = Tape::new();
        let x = tape.input(t64(vec![4], vec![0.7; 4]));
        let y = tape.minmax_rescale(x);
        for &v in tape.value(y).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn bce_matches_direct_formula() {
        let mut tape = Tape::new();
        let z = tape.input(t64(vec![2], vec![0.3, -1.2]));
        let targets = t64(vec![2], vec![1.0, 0.0]);
        let loss = tape.bce_with_logits(z, &targets).unwrap();
        let p0 = 1.0 / (1.0 + (-0.3f64).exp());
        let p1 = 1.0 / (1.0 + 1.2f64.exp());
        let expected = (-(p0.ln()) - (1.0 - p1).ln()) / 2.0;
        assert!((tape.value(loss).item().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sum_last_axis_rows() {
        let mut tape = Tape::new();
        let x = tape.input(t64(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = tape.sum_last_axis(x).unwrap();
        assert_eq!(tape.value(s).data(), &[6.0, 15.0]);
        let loss = tape.sum(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 6]);
    }
}
