use super::conv::{self, ConvGeometry};
use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How the right operand of a binary op lines up with the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Bcast {
    Same,
    /// Right operand is a vector indexed by axis 1 of the left operand.
    Channel,
}

/// Grouping used by [`Tape::normalize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormAxes {
    /// One group per axis-1 channel, spanning batch and spatial positions.
    PerChannel,
    /// One group per sample, spanning every non-batch axis.
    PerSample,
}

#[derive(Clone, Copy, Debug)]
pub(super) enum Binary {
    Add,
    Sub,
    Mul,
}

pub(super) enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var, Bcast),
    Sigmoid(Var),
    Relu(Var),
    Clamp { x: Var, lo: T, hi: T },
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Tensor<T> },
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeometry },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Normalize { x: Var, axes: NormAxes, xhat: Tensor<T>, inv_std: Vec<T> },
}

/// Number of elements sharing one channel index, and the channel count.
fn channel_layout(shape: &[usize]) -> (usize, usize) {
    (shape[2..].iter().product(), shape[1])
}

fn bcast_kind(lhs: &[usize], rhs: &[usize], op: &'static str) -> Result<Bcast> {
    if lhs == rhs {
        Ok(Bcast::Same)
    } else if lhs.len() >= 2 && rhs.len() == 1 && rhs[0] == lhs[1] {
        Ok(Bcast::Channel)
    } else {
        Err(Error::dim(op, lhs, rhs))
    }
}

fn group_index(shape: &[usize], axes: NormAxes) -> (usize, Box<dyn Fn(usize) -> usize>) {
    match axes {
        NormAxes::PerChannel => {
            let (inner, channels) = channel_layout(shape);
            (channels, Box::new(move |i| (i / inner) % channels))
        }
        NormAxes::PerSample => {
            let per_sample: usize = shape[1..].iter().product();
            (shape[0], Box::new(move |i| i / per_sample))
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let bc = bcast_kind(va.shape(), vb.shape(), name)?;
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let value = match bc {
            Bcast::Same => va.zip_map(vb, f)?,
            Bcast::Channel => {
                let (inner, channels) = channel_layout(va.shape());
                let rhs = vb.data();
                let data = va
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, rhs[(i / inner) % channels]))
                    .collect();
                Tensor::new(va.shape().to_vec(), data)?
            }
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Binary(kind, a, b, bc), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(sigmoid);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Sigmoid(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Relu(x), rg))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the range.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        self.check(x)?;
        if lo > hi {
            return Err(Error::Validation(format!("clamp bounds {lo} > {hi}")));
        }
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Clamp { x, lo, hi }, rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).map(|v| v * c);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Scale(x, c), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / T::lit(v.numel() as f64));
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Mean(x), rg))
    }

    /// Mean softmax cross-entropy over a `[B, C]` batch of logits.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let v = self.value(logits);
        if v.rank() != 2 || v.shape()[0] != labels.len() {
            return Err(Error::dim("cross_entropy", v.shape(), &[labels.len()]));
        }
        let (batch, classes) = (v.shape()[0], v.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Validation(format!(
                "label {bad} outside [0, {classes})"
            )));
        }
        let mut probs = Vec::with_capacity(batch * classes);
        let mut total = T::zero();
        for (row, &label) in v.data().chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
            let norm: T = exps.iter().copied().sum();
            total = total + (norm.ln() + max - row[label]);
            probs.extend(exps.into_iter().map(|e| e / norm));
        }
        let value = Tensor::scalar(total / T::lit(batch as f64));
        let probs = Tensor::new(vec![batch, classes], probs)?;
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// 2-D cross-correlation over `[B, Cin, H, W]` with `[Cout, Cin, kh, kw]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let geom = ConvGeometry::infer(
            self.value(input).shape(),
            self.value(weight).shape(),
            stride,
            padding,
        )?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.out_channels] {
                return Err(Error::dim("conv2d bias", self.value(b).shape(), &[geom.out_channels]));
            }
        }
        let value = conv::forward(
            &geom,
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        );
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        let rg = self.any_grad(&inputs);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).permute(perm)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Permute(x, perm.to_vec()), rg))
    }

    /// Zero-mean, unit-variance normalization within each group (biased
    /// variance, `eps` added before the square root).
    pub fn normalize(&mut self, x: Var, axes: NormAxes, eps: T) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if v.rank() < 2 {
            return Err(Error::dim("normalize", v.shape(), &[0, 0]));
        }
        let (groups, group_of) = group_index(v.shape(), axes);
        let mut count = vec![T::zero(); groups];
        let mut mean = vec![T::zero(); groups];
        for (i, &val) in v.data().iter().enumerate() {
            let g = group_of(i);
            count[g] = count[g] + T::one();
            mean[g] = mean[g] + val;
        }
        for (m, &n) in mean.iter_mut().zip(&count) {
            *m = *m / n;
        }
        let mut var = vec![T::zero(); groups];
        for (i, &val) in v.data().iter().enumerate() {
            let g = group_of(i);
            let d = val - mean[g];
            var[g] = var[g] + d * d;
        }
        let inv_std: Vec<T> = var
            .iter()
            .zip(&count)
            .map(|(&s, &n)| T::one() / (s / n + eps).sqrt())
            .collect();
        let data = v
            .data()
            .iter()
            .enumerate()
            .map(|(i, &val)| {
                let g = group_of(i);
                (val - mean[g]) * inv_std[g]
            })
            .collect();
        let xhat = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            xhat.clone(),
            Op::Normalize {
                x,
                axes,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Per-input gradient contributions of node `id` given its output grad.
    pub(super) fn local_grads(&self, id: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[id];
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut res = Vec::with_capacity(2);
                if self.requires_grad(*a) {
                    res.push((*a, g.matmul(&vb.transpose()?)?));
                }
                if self.requires_grad(*b) {
                    res.push((*b, va.transpose()?.matmul(g)?));
                }
                res
            }
            Op::Binary(kind, a, b, bc) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let rhs_at = |i: usize| -> T {
                    match bc {
                        Bcast::Same => vb.data()[i],
                        Bcast::Channel => {
                            let (inner, channels) = channel_layout(va.shape());
                            vb.data()[(i / inner) % channels]
                        }
                    }
                };
                let ga = match kind {
                    Binary::Add | Binary::Sub => g.clone(),
                    Binary::Mul => {
                        let data = g.data().iter().enumerate().map(|(i, &gi)| gi * rhs_at(i)).collect();
                        Tensor::new(g.shape().to_vec(), data)?
                    }
                };
                let gb_full: Vec<T> = match kind {
                    Binary::Add => g.data().to_vec(),
                    Binary::Sub => g.data().iter().map(|&v| -v).collect(),
                    Binary::Mul => g.data().iter().zip(va.data()).map(|(&gi, &x)| gi * x).collect(),
                };
                let gb = match bc {
                    Bcast::Same => Tensor::new(vb.shape().to_vec(), gb_full)?,
                    Bcast::Channel => {
                        let (inner, channels) = channel_layout(va.shape());
                        let mut acc = vec![T::zero(); channels];
                        for (i, v) in gb_full.into_iter().enumerate() {
                            let c = (i / inner) % channels;
                            acc[c] = acc[c] + v;
                        }
                        Tensor::vector(acc)
                    }
                };
                vec![(*a, ga), (*b, gb)]
            }
            Op::Sigmoid(x) => {
                let grad = g.zip_map(&node.value, |gi, s| gi * s * (T::one() - s))?;
                vec![(*x, grad)]
            }
            Op::Relu(x) => {
                let grad = g.zip_map(self.value(*x), |gi, v| if v > T::zero() { gi } else { T::zero() })?;
                vec![(*x, grad)]
            }
            Op::Clamp { x, lo, hi } => {
                let grad = g.zip_map(self.value(*x), |gi, v| {
                    if v >= *lo && v <= *hi {
                        gi
                    } else {
                        T::zero()
                    }
                })?;
                vec![(*x, grad)]
            }
            Op::Scale(x, c) => vec![(*x, g.map(|gi| gi * *c))],
            Op::Sum(x) => {
                let gi = g.data()[0];
                vec![(*x, Tensor::full(self.value(*x).shape(), gi))]
            }
            Op::Mean(x) => {
                let v = self.value(*x);
                let gi = g.data()[0] / T::lit(v.numel() as f64);
                vec![(*x, Tensor::full(v.shape(), gi))]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let classes = probs.shape()[1];
                let scale = g.data()[0] / T::lit(labels.len() as f64);
                let mut data = probs.data().to_vec();
                for (row, &label) in labels.iter().enumerate() {
                    data[row * classes + label] = data[row * classes + label] - T::one();
                }
                for d in &mut data {
                    *d = *d * scale;
                }
                vec![(*logits, Tensor::new(probs.shape().to_vec(), data)?)]
            }
            Op::Conv2d { input, weight, bias, geom } => {
                let (gi, gw, gb) = conv::backward(geom, self.value(*input), self.value(*weight), g);
                let mut res = vec![(*input, gi), (*weight, gw)];
                if let Some(b) = bias {
                    res.push((*b, gb));
                }
                res
            }
            Op::Reshape(x) => vec![(*x, g.reshape(self.value(*x).shape())?)],
            Op::Permute(x, perm) => {
                let mut inverse = vec![0; perm.len()];
                for (k, &p) in perm.iter().enumerate() {
                    inverse[p] = k;
                }
                vec![(*x, g.permute(&inverse)?)]
            }
            Op::Normalize { x, axes, xhat, inv_std } => {
                let (groups, group_of) = group_index(xhat.shape(), *axes);
                let mut count = vec![T::zero(); groups];
                let mut sum_g = vec![T::zero(); groups];
                let mut sum_gx = vec![T::zero(); groups];
                for (i, (&gi, &xh)) in g.data().iter().zip(xhat.data()).enumerate() {
                    let k = group_of(i);
                    count[k] = count[k] + T::one();
                    sum_g[k] = sum_g[k] + gi;
                    sum_gx[k] = sum_gx[k] + gi * xh;
                }
                let data = g
                    .data()
                    .iter()
                    .zip(xhat.data())
                    .enumerate()
                    .map(|(i, (&gi, &xh))| {
                        let k = group_of(i);
                        let n = count[k];
                        inv_std[k] / n * (n * gi - sum_g[k] - xh * sum_gx[k])
                    })
                    .collect();
                vec![(*x, Tensor::new(g.shape().to_vec(), data)?)]
            }
        };
        Ok(out)
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
