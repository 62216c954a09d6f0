use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::facegen::{component_boxes, ParsingMap};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::sfft::{extract_components, Sff, SfftBlock};
use crate::tensor::{resize_bilinear, ConvGeom, Tensor, Var};

use super::layers::{global_avg_pool, Conv, Dense};
use super::params::{Graph, Owner, ParamId, ParamStore};

/// Channel widths of the four stride-2 blocks shared by encoders and
/// discriminators.
pub const DOWN_WIDTHS: [usize; 4] = [8, 16, 32, 32];
/// Hidden width of each FC head.
pub const FC_HIDDEN: usize = 64;
/// Discriminator input scales as divisors of the working resolution.
pub const DISC_DIVISORS: [usize; 3] = [1, 2, 4];
/// Decoder widths after the initial `[32, 4, 4]` reshape, one per upsampling.
pub const DECODER_WIDTHS: [usize; 4] = [32, 16, 16, 8];

pub const TRACE_HQ: &str = "E_HQ";
pub const TRACE_LQ: &str = "E_LQ";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Generator without encoders or FC heads: `w = 0` at every scale.
    SfftOnly,
    SfftDafe,
}

impl Ablation {
    pub fn tag(self) -> &'static str {
        match self {
            Ablation::SfftOnly => "sfft_only",
            Ablation::SfftDafe => "sfft_dafe",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sfft_only" => Ok(Ablation::SfftOnly),
            "sfft_dafe" => Ok(Ablation::SfftDafe),
            other => Err(Error::invalid(format!("unknown ablation mode {other:?} (expected sfft_only or sfft_dafe)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub scales: usize,
    pub base_channels: usize,
    pub channels: Vec<usize>,
    pub resolution: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            scales: 5,
            base_channels: 64,
            channels: vec![64, 64, 32, 16, 8],
            resolution: 64,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.scales > 16 {
            return Err(Error::invalid(format!("generator scales must be in 1..=16, got {}", self.scales)));
        }
        if 4usize << (self.scales - 1) != self.resolution {
            return Err(Error::invalid(format!(
                "resolution {} does not match {} scales (expected {})",
                self.resolution,
                self.scales,
                4usize << (self.scales - 1)
            )));
        }
        if self.channels.len() != self.scales {
            return Err(Error::invalid(format!("channel schedule has {} entries for {} scales", self.channels.len(), self.scales)));
        }
        if self.base_channels == 0 || self.channels.contains(&0) {
            return Err(Error::invalid("channel widths must be positive"));
        }
        Ok(())
    }

    /// Side length at scale `i` (0-based).
    pub fn scale_resolution(&self, i: usize) -> usize {
        4 << i
    }

    /// Smallest generator that reaches `resolution`, keeping the default
    /// channel schedule's tail.
    pub fn for_resolution(resolution: usize) -> Result<Self> {
        if resolution < 4 || !resolution.is_power_of_two() {
            return Err(Error::invalid(format!("resolution must be a power of two >= 4, got {resolution}")));
        }
        let scales = resolution.trailing_zeros() as usize - 1;
        let default = Self::default().channels;
        let channels = (0..scales)
            .map(|i| {
                let from_end = scales - 1 - i;
                default[default.len() - 1 - from_end.min(default.len() - 1)]
            })
            .collect();
        Ok(Self { scales, base_channels: 64, channels, resolution })
    }
}

/// Four stride-2 conv-relu blocks, global average pooling, one dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DownNet {
    pub blocks: Vec<Conv>,
    pub head: Dense,
}

impl DownNet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, name: &str, owner: Owner, output: usize) -> Result<Self> {
        let mut cin = 3;
        let mut blocks = Vec::with_capacity(DOWN_WIDTHS.len());
        for (k, &w) in DOWN_WIDTHS.iter().enumerate() {
            blocks.push(Conv::new(store, seed, &format!("{name}.block{k}"), owner, cin, w, 3, ConvGeom::down2(3))?);
            cin = w;
        }
        let head = Dense::new(store, seed, &format!("{name}.head"), owner, cin, output)?;
        Ok(Self { blocks, head })
    }

    /// Output vector and the four block activations.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut feats = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for b in &self.blocks {
            h = b.forward_relu(g, h)?;
            feats.push(h);
        }
        let pooled = global_avg_pool(g, h)?;
        Ok((self.head.forward(g, pooled)?, feats))
    }
}

/// Image encoder producing an embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub net: DownNet,
    pub owner: Owner,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, owner: Owner, embed_dim: usize) -> Result<Self> {
        if !owner.is_encoder() {
            return Err(Error::invalid(format!("{owner} is not an encoder owner")));
        }
        Ok(Self { net: DownNet::new(store, seed, owner.tag(), owner, embed_dim)?, owner })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Vec<Var>)> {
        g.record(if self.owner == Owner::HqEncoder { TRACE_HQ } else { TRACE_LQ });
        self.net.forward(g, x)
    }

    pub fn embed<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward(g, x)?.0)
    }
}

/// Raw-score discriminator at one input scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub net: DownNet,
    pub divisor: usize,
}

impl Discriminator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, divisor: usize) -> Result<Self> {
        Ok(Self {
            net: DownNet::new(store, seed, &format!("disc.s{divisor}"), Owner::Discriminator, 1)?,
            divisor,
        })
    }

    /// Score `[1]` and the four block features of an input already at this
    /// discriminator's scale.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<(Var, Vec<Var>)> {
        self.net.forward(g, x)
    }

    /// Resizes a full-resolution image to this discriminator's scale.
    pub fn rescale<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        if self.divisor == 1 {
            return Ok(x);
        }
        let (_, h, w) = g.value(x).chw()?;
        g.tape.resize_bilinear(x, (h / self.divisor).max(1), (w / self.divisor).max(1))
    }
}

/// `FC(relu(FC(v)))` to `2C` values, split into scale and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct FcHead {
    pub hidden: Dense,
    pub out: Dense,
    pub channels: usize,
}

impl FcHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, scale: usize, embed_dim: usize, channels: usize) -> Result<Self> {
        let name = format!("fc_head.{scale}");
        Ok(Self {
            hidden: Dense::new(store, seed, &format!("{name}.fc0"), Owner::FcHead, embed_dim, FC_HIDDEN)?,
            out: {
                // Zero output layer: DAFE starts from the SFFT-only generator.
                let out = Dense::new(store, seed, &format!("{name}.fc1"), Owner::FcHead, FC_HIDDEN, 2 * channels)?;
                store.get_mut(out.weight).data_mut().fill(T::zero());
                out
            },
            channels,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, v: Var) -> Result<Sff> {
        let h = self.hidden.forward(g, v)?;
        let h = g.tape.relu(h);
        let o = self.out.forward(g, h)?;
        Sff::split(g, o, self.channels)
    }
}

/// Decoder half of the autoencoder used to pretrain the HQ encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct HqDecoder {
    pub fc: Dense,
    pub ups: Vec<Conv>,
    pub out: Conv,
    pub upsamplings: usize,
}

impl HqDecoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, embed_dim: usize, resolution: usize) -> Result<Self> {
        let owner = Owner::HqDecoder;
        let upsamplings = resolution.trailing_zeros() as usize - 2;
        let start = DECODER_WIDTHS[0];
        let fc = Dense::new(store, seed, "hq_decoder.fc", owner, embed_dim, start * 16)?;
        let mut cin = start;
        let mut ups = Vec::with_capacity(upsamplings);
        for k in 0..upsamplings {
            let w = DECODER_WIDTHS[k.min(DECODER_WIDTHS.len() - 1)];
            ups.push(Conv::same(store, seed, &format!("hq_decoder.up{k}"), owner, cin, w)?);
            cin = w;
        }
        let out = Conv::same(store, seed, "hq_decoder.out", owner, cin, 3)?;
        Ok(Self { fc, ups, out, upsamplings })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, v: Var) -> Result<Var> {
        let h = self.fc.forward(g, v)?;
        let h = g.tape.reshape(h, &[DECODER_WIDTHS[0], 4, 4])?;
        let mut h = g.tape.relu(h);
        for c in &self.ups {
            h = g.tape.upsample(h, 2, crate::tensor::UpsampleMode::Nearest)?;
            h = c.forward_relu(g, h)?;
        }
        let o = self.out.forward(g, h)?;
        Ok(g.tape.sigmoid(o))
    }
}

/// Multiscale SFFT generator.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub start: ParamId,
    pub blocks: Vec<SfftBlock>,
    /// One 3x3 to-RGB conv per scale; coarser outputs are upsampled and
    /// summed into the finest before the sigmoid.
    pub to_rgb: Vec<Conv>,
}

impl Generator {
    pub const START_NAME: &'static str = "generator.start";

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, seed: u64, config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let c0 = config.base_channels;
        let start = store.init_normal(seed, Self::START_NAME, Owner::Generator, &[c0, 4, 4], 2)?;
        let mut blocks = Vec::with_capacity(config.scales);
        let mut to_rgb = Vec::with_capacity(config.scales);
        let mut cin = c0;
        for (i, &c) in config.channels.iter().enumerate() {
            blocks.push(SfftBlock::new(store, seed, &format!("generator.scale{}", i + 1), cin, c)?);
            let rgb = Conv::same(store, seed, &format!("generator.scale{}.to_rgb", i + 1), Owner::Generator, c, 3)?;
            store.get_mut(rgb.kernel).data_mut().fill(T::zero());
            to_rgb.push(rgb);
            cin = c;
        }
        Ok(Self { config, start, blocks, to_rgb })
    }

    /// Restored image `[3,R,R]` in `(0,1)`. `dafe` holds the per-scale
    /// statistics from the FC heads, or `None` for the SFFT-only path.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, lq: &Tensor<T>, parsing: &ParsingMap, dafe: Option<&[Sff]>) -> Result<Var> {
        let r = self.config.resolution;
        if lq.shape() != [3, r, r] || parsing.height != r || parsing.width != r {
            return Err(Error::shape(
                "generator_forward",
                format!("[3, {r}, {r}] image and {r}x{r} parsing"),
                format!("{:?} / {}x{}", lq.shape(), parsing.height, parsing.width),
            ));
        }
        if let Some(w) = dafe {
            if w.len() != self.blocks.len() {
                return Err(Error::shape("generator_forward", format!("{} DAFE statistics", self.blocks.len()), w.len().to_string()));
            }
        }
        let boxes = component_boxes();
        let start = g.store().get(self.start).clone();
        let mut f = g.constant(start);
        let mut rgb: Option<Var> = None;
        for (i, (block, to_rgb)) in self.blocks.iter().zip(&self.to_rgb).enumerate() {
            let res = self.config.scale_resolution(i);
            let image_i = if res == r { lq.clone() } else { resize_bilinear(lq, res, res)? };
            let parsing_i = parsing.resize_nearest(res, res);
            let crops = extract_components(&image_i, &parsing_i, &boxes)?;
            let factor = if i == 0 { 1 } else { 2 };
            f = block.forward(g, f, factor, &crops, dafe.map(|w| &w[i]))?;
            let here = to_rgb.forward(g, f)?;
            rgb = Some(match rgb {
                None => here,
                Some(prev) => {
                    let up = g.tape.upsample(prev, factor, crate::tensor::UpsampleMode::Bilinear)?;
                    g.tape.add(up, here)?
                }
            });
        }
        let rgb = rgb.ok_or_else(|| Error::invalid("generator without scales"))?;
        Ok(g.tape.sigmoid(rgb))
    }

    /// Trainable parameter ids (everything except the fixed start tensor).
    pub fn trainable_ids<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<ParamId> {
        store.ids_of(&[Owner::Generator]).into_iter().filter(|&id| id != self.start).collect()
    }
}

/// Every subnetwork of one model, addressing parameters in a shared store.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub generator: Generator,
    pub discriminators: Vec<Discriminator>,
    pub hq_encoder: Encoder,
    pub hq_decoder: HqDecoder,
    pub lq_encoder: Option<Encoder>,
    pub fc_heads: Option<Vec<FcHead>>,
}

/// Where the generator's DAFE statistics come from.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a, T: Scalar = f64> {
    /// Training: embed the ground-truth HQ image with the HQ encoder.
    Train { hq: &'a Tensor<T> },
    /// Inference: embed the LQ input with the LQ encoder.
    Infer,
}

impl Networks {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, seed: u64, generator: GeneratorConfig, embed_dim: usize, ablation: Ablation) -> Result<Self> {
        let resolution = generator.resolution;
        let generator = Generator::new(store, derive_seed(seed, "generator"), generator)?;
        let discriminators = DISC_DIVISORS
            .iter()
            .map(|&d| Discriminator::new(store, derive_seed(seed, "discriminator"), d))
            .collect::<Result<_>>()?;
        let hq_encoder = Encoder::new(store, derive_seed(seed, "hq_encoder"), Owner::HqEncoder, embed_dim)?;
        let hq_decoder = HqDecoder::new(store, derive_seed(seed, "hq_decoder"), embed_dim, resolution)?;
        let (lq_encoder, fc_heads) = match ablation {
            Ablation::SfftOnly => (None, None),
            Ablation::SfftDafe => {
                let lq = Encoder::new(store, derive_seed(seed, "lq_encoder"), Owner::LqEncoder, embed_dim)?;
                let heads = generator
                    .config
                    .channels
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| FcHead::new(store, derive_seed(seed, "fc_head"), i + 1, embed_dim, c))
                    .collect::<Result<_>>()?;
                (Some(lq), Some(heads))
            }
        };
        Ok(Self { generator, discriminators, hq_encoder, hq_decoder, lq_encoder, fc_heads })
    }

    /// Per-scale DAFE statistics from an embedding.
    pub fn dafe_statistics<T: Scalar>(&self, g: &mut Graph<'_, T>, embedding: Var) -> Result<Option<Vec<Sff>>> {
        let Some(heads) = &self.fc_heads else { return Ok(None) };
        heads.iter().map(|h| h.forward(g, embedding)).collect::<Result<Vec<_>>>().map(Some)
    }

    /// Full generator pass; with DAFE, the embedding source follows `mode`.
    pub fn generate<T: Scalar>(&self, g: &mut Graph<'_, T>, lq: &Tensor<T>, parsing: &ParsingMap, mode: Mode<'_, T>) -> Result<Var> {
        let dafe = match (&self.fc_heads, mode) {
            (None, _) => None,
            (Some(_), Mode::Train { hq }) => {
                let x = g.constant(hq.clone());
                let v = self.hq_encoder.embed(g, x)?;
                self.dafe_statistics(g, v)?
            }
            (Some(_), Mode::Infer) => {
                let enc = self
                    .lq_encoder
                    .as_ref()
                    .ok_or_else(|| Error::State("DAFE generator without an LQ encoder".into()))?;
                let x = g.constant(lq.clone());
                let v = enc.embed(g, x)?;
                self.dafe_statistics(g, v)?
            }
        };
        self.generator.forward(g, lq, parsing, dafe.as_deref())
    }
}
