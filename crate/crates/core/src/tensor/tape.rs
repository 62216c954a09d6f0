//! Reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order, so replaying them from the root
//! downwards visits every consumer before its producers. Nodes that do not
//! depend on a trainable leaf carry no adjoint and are skipped.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kernels::{self, ConvGeom, UpsampleMode};
use super::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Recip(Var),
    Relu(Var),
    Sigmoid(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    UpsampleNearest(Var, usize),
    ResizeBilinear(Var),
    ChannelMean(Var),
    ChannelStd(Var),
    ChannelAffine {
        input: Var,
        scale: Var,
        shift: Var,
    },
    MaskMul {
        input: Var,
        mask: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Concat(Vec<Var>),
    Slice {
        input: Var,
        start: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Gram {
        input: Var,
        norm: T,
    },
}

#[derive(Clone, Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations with the values needed to replay
/// them backwards.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T: Scalar = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        let value = {
            let (x, y) = (self.value(a), self.value(b));
            if x.shape() != y.shape() {
                return Err(Error::shape(op, format!("{:?}", x.shape()), format!("{:?}", y.shape())));
            }
            x.zip_map(y, f)?
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let value = self.value(a).map(|x| x * k);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, k), rg)
    }

    /// `a + k` elementwise.
    pub fn offset(&mut self, a: Var, k: T) -> Var {
        let value = self.value(a).map(|x| x + k);
        let rg = self.rg(&[a]);
        self.push(value, Op::Offset(a), rg)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.recip());
        let rg = self.rg(&[a]);
        self.push(value, Op::Recip(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = kernels::pointwise(self.value(a), kernels::Pointwise::Relu);
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = kernels::pointwise(self.value(a), kernels::Pointwise::Sigmoid);
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let value = kernels::conv2d_geom(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), geom)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom }, rg))
    }

    pub fn upsample(&mut self, input: Var, factor: usize, mode: UpsampleMode) -> Result<Var> {
        let value = kernels::upsample(self.value(input), factor, mode)?;
        let rg = self.rg(&[input]);
        let op = match mode {
            UpsampleMode::Nearest => Op::UpsampleNearest(input, factor),
            UpsampleMode::Bilinear => Op::ResizeBilinear(input),
        };
        Ok(self.push(value, op, rg))
    }

    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = kernels::resize_bilinear(self.value(input), out_h, out_w)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::ResizeBilinear(input), rg))
    }

    /// Per-channel population mean, `[C, ...] -> [C]`.
    pub fn channel_mean(&mut self, input: Var) -> Result<Var> {
        let (mu, _) = kernels::channel_stats(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(mu, Op::ChannelMean(input), rg))
    }

    /// Per-channel population standard deviation, `[C, ...] -> [C]`.
    pub fn channel_std(&mut self, input: Var) -> Result<Var> {
        let (_, sigma) = kernels::channel_stats(self.value(input))?;
        let rg = self.rg(&[input]);
        Ok(self.push(sigma, Op::ChannelStd(input), rg))
    }

    /// `input[c] * scale[c] + shift[c]` for a `[C, ...]` input and `[C]` vectors.
    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let value = {
            let x = self.value(input);
            let (s, b) = (self.value(scale), self.value(shift));
            let c = x.shape()[0];
            if s.shape() != [c] || b.shape() != [c] {
                return Err(Error::shape("channel_affine", format!("[{c}] scale and shift"), format!("{:?} / {:?}", s.shape(), b.shape())));
            }
            let plane = x.len() / c;
            let mut out = x.clone();
            for (ch, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
                let (k, d) = (s.data()[ch], b.data()[ch]);
                for v in chunk {
                    *v = *v * k + d;
                }
            }
            out
        };
        let rg = self.rg(&[input, scale, shift]);
        Ok(self.push(value, Op::ChannelAffine { input, scale, shift }, rg))
    }

    /// Multiplies every channel of a `[C,H,W]` input by a `[1,H,W]` map.
    pub fn mask_mul(&mut self, input: Var, mask: Var) -> Result<Var> {
        let value = {
            let (x, m) = (self.value(input), self.value(mask));
            let (c, h, w) = x.chw()?;
            if m.shape() != [1, h, w] {
                return Err(Error::shape("mask_mul", format!("[1, {h}, {w}]"), format!("{:?}", m.shape())));
            }
            let plane = h * w;
            let mut out = x.clone();
            for ch in 0..c {
                for (v, &mv) in out.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(m.data()) {
                    *v *= mv;
                }
            }
            out
        };
        let rg = self.rg(&[input, mask]);
        Ok(self.push(value, Op::MaskMul { input, mask }, rg))
    }

    /// `weight · input + bias` for `[n]` input, `[m, n]` weight, `[m]` bias.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let value = {
            let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
            let n = x.len();
            let [m, wn] = w.shape()[..] else {
                return Err(Error::shape("linear", "[m, n] weight", format!("{:?}", w.shape())));
            };
            if wn != n || x.ndim() != 1 || b.shape() != [m] {
                return Err(Error::shape("linear", format!("input [{wn}], bias [{m}]"), format!("{:?} / {:?}", x.shape(), b.shape())));
            }
            let out: Vec<T> = (0..m)
                .map(|r| w.data()[r * n..(r + 1) * n].iter().zip(x.data()).map(|(&a, &v)| a * v).sum::<T>() + b.data()[r])
                .collect();
            Tensor::vector(out)
        };
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(value, Op::Linear { input, weight, bias }, rg))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let refs: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
            Tensor::concat(&refs)?
        };
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn slice(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let value = {
            let x = self.value(input);
            let lead = x.shape()[0];
            if len == 0 || start + len > lead {
                return Err(Error::shape("slice", format!("range within 0..{lead}"), format!("{start}..{}", start + len)));
            }
            let inner: usize = x.shape()[1..].iter().product();
            let mut shape = x.shape().to_vec();
            shape[0] = len;
            Tensor::new(&shape, x.data()[start * inner..(start + len) * inner].to_vec())?
        };
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Slice { input, start }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(&[input]);
        self.push(value, Op::Sum(input), rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).mean());
        let rg = self.rg(&[input]);
        self.push(value, Op::Mean(input), rg)
    }

    /// `X Xᵀ · norm` where `X` is the input flattened to `C × (H·W)`.
    pub fn gram(&mut self, input: Var, norm: T) -> Result<Var> {
        let value = {
            let x = self.value(input);
            let c = x.shape()[0];
            let p = x.len() / c;
            let mut g = vec![T::zero(); c * c];
            for i in 0..c {
                let xi = &x.data()[i * p..(i + 1) * p];
                for j in i..c {
                    let xj = &x.data()[j * p..(j + 1) * p];
                    let v = xi.iter().zip(xj).map(|(&a, &b)| a * b).sum::<T>() * norm;
                    g[i * c + j] = v;
                    g[j * c + i] = v;
                }
            }
            Tensor::new(&[c, c], g)?
        };
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Gram { input, norm }, rg))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Squared Frobenius distance, a scalar.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.sum(sq))
    }

    /// Replays the tape from `root` (seeded with ones) and returns adjoints of
    /// every node that depends on a trainable leaf.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        let seed = Tensor::full(self.value(root).shape(), T::one());
        self.backward_with(root, seed)
    }

    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Result<Grads<T>> {
        self.value(root).expect_same_shape("backward seed", &seed)?;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        // Only keep adjoints of trainable leaves and intermediates; callers
        // query leaves.
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v))?;
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |gv, y| gv * y)?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |gv, x| gv * x)?)?;
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                self.accumulate(grads, *a, g.map(|v| v * k))?;
            }
            Op::Offset(a) => self.accumulate(grads, *a, g.clone())?,
            Op::Recip(a) => {
                // d(1/x) = -1/x² = -y²
                self.accumulate(grads, *a, g.zip_map(&node.value, |gv, y| -gv * y * y)?)?;
            }
            Op::Relu(a) => {
                let gx = g.zip_map(self.value(*a), |gv, x| if x > T::zero() { gv } else { T::zero() })?;
                self.accumulate(grads, *a, gx)?;
            }
            Op::Sigmoid(a) => {
                let gx = g.zip_map(&node.value, |gv, s| gv * s * (T::one() - s))?;
                self.accumulate(grads, *a, gx)?;
            }
            Op::Conv2d { input, kernel, bias, geom } => {
                let (gi, gk, gb) = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *geom,
                    self.requires_grad(*input),
                    self.requires_grad(*kernel),
                )?;
                if let Some(gi) = gi {
                    self.accumulate(grads, *input, gi)?;
                }
                if let Some(gk) = gk {
                    self.accumulate(grads, *kernel, gk)?;
                }
                if let Some(b) = bias {
                    self.accumulate(grads, *b, gb)?;
                }
            }
            Op::UpsampleNearest(a, factor) => {
                self.accumulate(grads, *a, kernels::upsample_nearest_backward(g, *factor)?)?;
            }
            Op::ResizeBilinear(a) => {
                let (_, h, w) = self.value(*a).chw()?;
                self.accumulate(grads, *a, kernels::resize_bilinear_backward(g, h, w)?)?;
            }
            Op::ChannelMean(a) => {
                let x = self.value(*a);
                let c = x.shape()[0];
                let plane = x.len() / c;
                let n = T::from_usize(plane).unwrap();
                let gx = Tensor::from_fn(x.shape(), |idx| g.data()[idx / plane] / n);
                self.accumulate(grads, *a, gx)?;
            }
            Op::ChannelStd(a) => {
                // dσ/dx = (x - μ) / (N σ); σ = 0 contributes nothing.
                let x = self.value(*a);
                let c = x.shape()[0];
                let plane = x.len() / c;
                let n = T::from_usize(plane).unwrap();
                let (mu, _) = kernels::channel_stats(x)?;
                let sigma = &node.value;
                let gx = Tensor::from_fn(x.shape(), |idx| {
                    let ch = idx / plane;
                    let s = sigma.data()[ch];
                    if s > T::zero() {
                        g.data()[ch] * (x.data()[idx] - mu.data()[ch]) / (n * s)
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, gx)?;
            }
            Op::ChannelAffine { input, scale, shift } => {
                let x = self.value(*input);
                let c = x.shape()[0];
                let plane = x.len() / c;
                if self.requires_grad(*input) {
                    let s = self.value(*scale);
                    let gx = Tensor::from_fn(x.shape(), |idx| g.data()[idx] * s.data()[idx / plane]);
                    self.accumulate(grads, *input, gx)?;
                }
                if self.requires_grad(*scale) {
                    let gs: Vec<T> = (0..c)
                        .map(|ch| {
                            let r = ch * plane..(ch + 1) * plane;
                            g.data()[r.clone()].iter().zip(&x.data()[r]).map(|(&a, &b)| a * b).sum()
                        })
                        .collect();
                    self.accumulate(grads, *scale, Tensor::vector(gs))?;
                }
                if self.requires_grad(*shift) {
                    let gb: Vec<T> = (0..c).map(|ch| g.data()[ch * plane..(ch + 1) * plane].iter().copied().sum()).collect();
                    self.accumulate(grads, *shift, Tensor::vector(gb))?;
                }
            }
            Op::MaskMul { input, mask } => {
                let x = self.value(*input);
                let m = self.value(*mask);
                let plane = m.len();
                if self.requires_grad(*input) {
                    let gx = Tensor::from_fn(x.shape(), |idx| g.data()[idx] * m.data()[idx % plane]);
                    self.accumulate(grads, *input, gx)?;
                }
                if self.requires_grad(*mask) {
                    let mut gm = vec![T::zero(); plane];
                    for (idx, (&gv, &xv)) in g.data().iter().zip(x.data()).enumerate() {
                        gm[idx % plane] += gv * xv;
                    }
                    self.accumulate(grads, *mask, Tensor::new(m.shape(), gm)?)?;
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let n = x.len();
                let m = g.len();
                if self.requires_grad(*input) {
                    let mut gx = vec![T::zero(); n];
                    for r in 0..m {
                        let gr = g.data()[r];
                        for (t, &wv) in gx.iter_mut().zip(&w.data()[r * n..(r + 1) * n]) {
                            *t += gr * wv;
                        }
                    }
                    self.accumulate(grads, *input, Tensor::new(x.shape(), gx)?)?;
                }
                if self.requires_grad(*weight) {
                    let gw = Tensor::from_fn(w.shape(), |idx| g.data()[idx / n] * x.data()[idx % n]);
                    self.accumulate(grads, *weight, gw)?;
                }
                self.accumulate(grads, *bias, g.clone())?;
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        self.accumulate(grads, p, Tensor::new(&shape, g.data()[offset..offset + len].to_vec())?)?;
                    }
                    offset += len;
                }
            }
            Op::Slice { input, start } => {
                let x = self.value(*input);
                let inner: usize = x.shape()[1..].iter().product();
                let mut gx = vec![T::zero(); x.len()];
                gx[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *input, Tensor::new(x.shape(), gx)?)?;
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshape(&shape)?)?;
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.value(*a).shape(), gv))?;
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let gv = g.data()[0] / T::from_usize(x.len()).unwrap();
                self.accumulate(grads, *a, Tensor::full(x.shape(), gv))?;
            }
            Op::Gram { input, norm } => {
                // dX = norm · (G + Gᵀ) X with G the incoming adjoint.
                let x = self.value(*input);
                let c = x.shape()[0];
                let p = x.len() / c;
                let mut gx = vec![T::zero(); x.len()];
                for i in 0..c {
                    let dst = &mut gx[i * p..(i + 1) * p];
                    for j in 0..c {
                        let coef = (g.data()[i * c + j] + g.data()[j * c + i]) * *norm;
                        if coef == T::zero() {
                            continue;
                        }
                        for (t, &xv) in dst.iter_mut().zip(&x.data()[j * p..(j + 1) * p]) {
                            *t += coef * xv;
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(x.shape(), gx)?)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_rule_on_scalars() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let z = t.scale(y, 2.0);
        let g = t.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[12.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]));
        let c = t.constant(Tensor::vector(vec![5.0, 7.0]));
        let y = t.mul(x, c).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0, 7.0]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut t = Tape::<f64>::new();
        let a = t.param(Tensor::zeros(&[2]));
        let b = t.param(Tensor::zeros(&[3]));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn slice_concat_roundtrip_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Tensor::from_fn(&[4, 2], |i| i as f64));
        let a = t.slice(x, 0, 1).unwrap();
        let b = t.slice(x, 2, 2).unwrap();
        let c = t.concat(&[a, b]).unwrap();
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
