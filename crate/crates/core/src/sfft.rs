//! Statistical feature transforms driven by facial components.
//!
//! Each component crop (image plus its one-hot parsing channel) is reduced by
//! a small conv stack to a statistical facial feature (SFF): a per-channel
//! scale and bias. An SFT layer re-normalizes a feature map to those
//! statistics. Per-component SFT outputs are weighted by learned attention
//! maps, summed, and reduced again to one unified SFF that drives the
//! enhancement of the next scale.

use crate::error::{Error, Result};
use crate::facegen::{Component, ComponentBox, ParsingMap};
use crate::networks::layers::{global_avg_pool, Conv};
use crate::networks::params::{Graph, Owner, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, UpsampleMode, Var};

/// Guard added to the channel standard deviation in every normalization.
pub const SFT_EPS: f64 = 1e-5;
/// Hidden width of the SFF extractor stacks.
pub const PSI_HIDDEN: usize = 8;
/// Hidden width of the facial-attention stack.
pub const ATTENTION_HIDDEN: usize = 8;

/// Scale and bias vectors, both `[C]`, recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sff {
    pub scale: Var,
    pub bias: Var,
}

impl Sff {
    pub fn constant<T: Scalar>(g: &mut Graph<'_, T>, scale: Tensor<T>, bias: Tensor<T>) -> Self {
        Self { scale: g.constant(scale), bias: g.constant(bias) }
    }

    /// Splits a `[2C]` vector into its scale and bias halves.
    pub fn split<T: Scalar>(g: &mut Graph<'_, T>, v: Var, channels: usize) -> Result<Self> {
        Ok(Self {
            scale: g.tape.slice(v, 0, channels)?,
            bias: g.tape.slice(v, channels, channels)?,
        })
    }

    pub fn channels<T: Scalar>(&self, g: &Graph<'_, T>) -> usize {
        g.value(self.scale).len()
    }
}

/// Image crop and one-hot parsing crop of one facial component.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentCrop<T: Scalar = f64> {
    pub component: Component,
    pub image: Tensor<T>,
    pub parsing: Tensor<T>,
}

impl<T: Scalar> ComponentCrop<T> {
    /// The 4-channel extractor input.
    pub fn stacked(&self) -> Result<Tensor<T>> {
        Tensor::concat(&[&self.image, &self.parsing])
    }
}

/// Crops every component box out of `image`. The whole-face crop carries an
/// all-ones mask; the others carry the indicator of their own label.
pub fn extract_components<T: Scalar>(image: &Tensor<T>, parsing: &ParsingMap, boxes: &[ComponentBox]) -> Result<Vec<ComponentCrop<T>>> {
    let (c, h, w) = image.chw()?;
    if c != 3 || parsing.height != h || parsing.width != w {
        return Err(Error::shape(
            "extract_components",
            format!("[3, {}, {}] image", parsing.height, parsing.width),
            format!("{:?}", image.shape()),
        ));
    }
    boxes
        .iter()
        .map(|b| {
            let (r0, c0, rows, cols) = b.pixel_window(h, w);
            let mask = match b.component {
                Component::Face => Tensor::full(&[1, rows, cols], T::one()),
                comp => parsing.crop(r0, c0, rows, cols).mask(comp.label()),
            };
            Ok(ComponentCrop { component: b.component, image: image.crop(r0, c0, rows, cols)?, parsing: mask })
        })
        .collect()
}

/// Conv-relu stack, conv to `2C`, global average pool.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiSff {
    pub blocks: Vec<Conv>,
    pub head: Conv,
    pub channels: usize,
}

impl PsiSff {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, name: &str, owner: Owner, input: usize, channels: usize) -> Result<Self> {
        let mut blocks = Vec::with_capacity(3);
        let mut cin = input;
        for k in 0..3 {
            blocks.push(Conv::same(store, seed, &format!("{name}.block{k}"), owner, cin, PSI_HIDDEN)?);
            cin = PSI_HIDDEN;
        }
        let head = Conv::same(store, seed, &format!("{name}.head"), owner, cin, 2 * channels)?;
        Ok(Self { blocks, head, channels })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Sff> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward_relu(g, h)?;
        }
        let h = self.head.forward(g, h)?;
        let pooled = global_avg_pool(g, h)?;
        Sff::split(g, pooled, self.channels)
    }
}

pub fn sff_extract<T: Scalar>(g: &mut Graph<'_, T>, crop: &ComponentCrop<T>, psi: &PsiSff) -> Result<Sff> {
    let x = g.constant(crop.stacked()?);
    psi.forward(g, x)
}

/// `(F − μ) / (σ + ε)` per channel.
pub fn normalize<T: Scalar>(g: &mut Graph<'_, T>, f: Var) -> Result<Var> {
    let mu = g.tape.channel_mean(f)?;
    let sd = g.tape.channel_std(f)?;
    let guarded = g.tape.offset(sd, T::lit(SFT_EPS));
    let inv = g.tape.recip(guarded);
    let prod = g.tape.mul(mu, inv)?;
    let shift = g.tape.scale(prod, -T::one());
    g.tape.channel_affine(f, inv, shift)
}

/// SFT with `normalized` already computed by [`normalize`].
pub fn sft_normalized<T: Scalar>(g: &mut Graph<'_, T>, normalized: Var, sff: &Sff) -> Result<Var> {
    g.tape.channel_affine(normalized, sff.scale, sff.bias)
}

pub fn sft_apply<T: Scalar>(g: &mut Graph<'_, T>, f: Var, sff: &Sff) -> Result<Var> {
    let n = normalize(g, f)?;
    sft_normalized(g, n, sff)
}

/// Two conv-relu blocks and a conv to one channel per component, then sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionNet {
    pub blocks: Vec<Conv>,
    pub head: Conv,
    pub components: usize,
}

impl AttentionNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, name: &str, owner: Owner, channels: usize, components: usize) -> Result<Self> {
        let blocks = vec![
            Conv::same(store, seed, &format!("{name}.block0"), owner, components * channels, ATTENTION_HIDDEN)?,
            Conv::same(store, seed, &format!("{name}.block1"), owner, ATTENTION_HIDDEN, ATTENTION_HIDDEN)?,
        ];
        let head = Conv::same(store, seed, &format!("{name}.head"), owner, ATTENTION_HIDDEN, components)?;
        Ok(Self { blocks, head, components })
    }
}

/// One `[1,H,W]` weighting map in `(0,1)` per component feature map.
pub fn facial_attention<T: Scalar>(g: &mut Graph<'_, T>, feats: &[Var], net: &AttentionNet) -> Result<Vec<Var>> {
    if feats.len() != net.components {
        return Err(Error::shape("facial_attention", format!("{} feature maps", net.components), feats.len().to_string()));
    }
    let first = g.value(feats[0]).shape().to_vec();
    if let Some(bad) = feats.iter().find(|&&f| g.value(f).shape() != first.as_slice()) {
        return Err(Error::shape("facial_attention", format!("{first:?}"), format!("{:?}", g.value(*bad).shape())));
    }
    let mut h = g.tape.concat(feats)?;
    for b in &net.blocks {
        h = b.forward_relu(g, h)?;
    }
    let logits = net.head.forward(g, h)?;
    let maps = g.tape.sigmoid(logits);
    (0..net.components).map(|j| g.tape.slice(maps, j, 1)).collect()
}

/// `Σ_j F_j ⊙ W_j`, each map broadcast over channels.
pub fn weighted_sum<T: Scalar>(g: &mut Graph<'_, T>, feats: &[Var], weights: &[Var]) -> Result<Var> {
    if feats.len() != weights.len() || feats.is_empty() {
        return Err(Error::shape("fuse_sff", format!("{} weight maps", feats.len()), weights.len().to_string()));
    }
    let mut acc = g.tape.mask_mul(feats[0], weights[0])?;
    for (&f, &w) in feats.iter().zip(weights).skip(1) {
        let term = g.tape.mask_mul(f, w)?;
        acc = g.tape.add(acc, term)?;
    }
    Ok(acc)
}

pub fn fuse_sff<T: Scalar>(g: &mut Graph<'_, T>, feats: &[Var], weights: &[Var], psi: &PsiSff) -> Result<Sff> {
    let u = weighted_sum(g, feats, weights)?;
    psi.forward(g, u)
}

/// `(y_s + w_s) · N(G) + (y_b + w_b)` on a pre-normalized map; `w = None`
/// applies `y` alone.
pub fn enhance_normalized<T: Scalar>(g: &mut Graph<'_, T>, normalized: Var, y: &Sff, w: Option<&Sff>) -> Result<Var> {
    let Some(w) = w else {
        return sft_normalized(g, normalized, y);
    };
    let (cy, cw) = (y.channels(g), w.channels(g));
    if cy != cw {
        return Err(Error::shape("sfft_enhance", format!("[{cy}] DAFE statistics"), format!("[{cw}]")));
    }
    let scale = g.tape.add(y.scale, w.scale)?;
    let bias = g.tape.add(y.bias, w.bias)?;
    g.tape.channel_affine(normalized, scale, bias)
}

/// `G = refine(upsample(F_prev))`: the shared input of every SFT at a scale.
pub fn refine_features<T: Scalar>(g: &mut Graph<'_, T>, f_prev: Var, factor: usize, refine: &Conv) -> Result<Var> {
    let up = g.tape.upsample(f_prev, factor, UpsampleMode::Bilinear)?;
    refine.forward(g, up)
}

pub fn sfft_enhance<T: Scalar>(g: &mut Graph<'_, T>, f_prev: Var, y: &Sff, w: &Sff, factor: usize, refine: &Conv) -> Result<Var> {
    let feats = refine_features(g, f_prev, factor, refine)?;
    let n = normalize(g, feats)?;
    enhance_normalized(g, n, y, Some(w))
}

/// All weights of one scale: per-component extractors, attention, fusion
/// extractor and the refinement conv.
#[derive(Clone, Debug, PartialEq)]
pub struct SfftBlock {
    pub components: Vec<PsiSff>,
    pub attention: AttentionNet,
    pub fuse: PsiSff,
    pub refine: Conv,
    pub channels: usize,
}

impl SfftBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, name: &str, in_channels: usize, channels: usize) -> Result<Self> {
        let owner = Owner::Generator;
        let components = Component::ALL
            .iter()
            .map(|c| PsiSff::new(store, seed, &format!("{name}.psi.{}", c.name()), owner, 4, channels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            attention: AttentionNet::new(store, seed, &format!("{name}.attention"), owner, channels, Component::ALL.len())?,
            fuse: PsiSff::new(store, seed, &format!("{name}.psi.fused"), owner, channels, channels)?,
            refine: Conv::same(store, seed, &format!("{name}.refine"), owner, in_channels, channels)?,
            channels,
        })
    }

    /// Unified SFF `y` for the (already normalized) shared feature map.
    pub fn unified_sff<T: Scalar>(&self, g: &mut Graph<'_, T>, normalized: Var, crops: &[ComponentCrop<T>]) -> Result<Sff> {
        if crops.len() != self.components.len() {
            return Err(Error::shape("sfft", format!("{} component crops", self.components.len()), crops.len().to_string()));
        }
        let mut feats = Vec::with_capacity(crops.len());
        for (crop, psi) in crops.iter().zip(&self.components) {
            let sff = sff_extract(g, crop, psi)?;
            feats.push(sft_normalized(g, normalized, &sff)?);
        }
        let weights = facial_attention(g, &feats, &self.attention)?;
        fuse_sff(g, &feats, &weights, &self.fuse)
    }

    /// One full scale step: refine, extract, attend, fuse, enhance.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, f_prev: Var, factor: usize, crops: &[ComponentCrop<T>], w: Option<&Sff>) -> Result<Var> {
        let feats = refine_features(g, f_prev, factor, &self.refine)?;
        let n = normalize(g, feats)?;
        let y = self.unified_sff(g, n, crops)?;
        enhance_normalized(g, n, &y, w)
    }
}
