//! Blind heavy-rain degradation:
//!
//! ```text
//! I = T ⊙ (resize(blur(H, ϱ), s) + Σ S_i) + (1 − T) ⊙ A
//! ```
//!
//! with a Gaussian blur, a down-then-up bilinear resample to a shorter side
//! of `s` pixels, motion-blurred rain layers `S_i`, and a transmission map
//! `T = exp(−β·D_n)` built from the normalized reciprocal depth.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kv;
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::tensor::kernels::{conv2d_geom, resize_bilinear, ConvGeom};
use crate::tensor::Tensor;

pub const MOTION_LENGTH: usize = 45;
pub const MOTION_ANGLES: [f64; 5] = [55.0, 80.0, 90.0, 110.0, 125.0];
pub const BLUR_SIGMA_RANGE: (f64, f64) = (0.0, 2.5);
pub const DOWN_TARGET_RANGE: (usize, usize) = (32, 256);
pub const BETA_RANGE: (f64, f64) = (2.6, 4.6);
pub const ATMOSPHERIC_RANGE: (f64, f64) = (0.1, 0.8);
pub const NOISE_MEAN_RANGE: (f64, f64) = (-1.0, -0.8);
pub const NOISE_STD_RANGE: (f64, f64) = (0.7, 1.0);
pub const DEFAULT_RAIN_LAYERS: (usize, usize) = (1, 3);

const DEPTH_OFFSET: f64 = 0.1;
const NORMALIZATION_GUARD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct RainLayerParams {
    pub noise_mean: f64,
    pub noise_std: f64,
    pub motion_length: usize,
    pub motion_angle: f64,
    pub layer_seed: u64,
}

/// One draw of every degradation parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationParams {
    pub blur_sigma: f64,
    pub down_target: usize,
    pub rain_layers: Vec<RainLayerParams>,
    pub beta: f64,
    pub atmospheric: [f64; 3],
    pub master_seed: u64,
}

impl DegradationParams {
    /// Parameters under which every stage is (numerically) the identity on a
    /// square image of side `side`.
    pub fn identity(side: usize) -> Self {
        Self {
            blur_sigma: 0.0,
            down_target: side,
            rain_layers: Vec::new(),
            beta: 1e-9,
            atmospheric: [0.5; 3],
            master_seed: 0,
        }
    }

    /// Exact-replay `key = value` text.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "blur_sigma = {}", self.blur_sigma);
        let _ = writeln!(s, "down_target = {}", self.down_target);
        let _ = writeln!(s, "beta = {}", self.beta);
        let a = self.atmospheric;
        let _ = writeln!(s, "atmospheric = {}, {}, {}", a[0], a[1], a[2]);
        let _ = writeln!(s, "rain_layers = {}", self.rain_layers.len());
        for (i, l) in self.rain_layers.iter().enumerate() {
            let _ = writeln!(s, "rain.{i}.noise_mean = {}", l.noise_mean);
            let _ = writeln!(s, "rain.{i}.noise_std = {}", l.noise_std);
            let _ = writeln!(s, "rain.{i}.motion_length = {}", l.motion_length);
            let _ = writeln!(s, "rain.{i}.motion_angle = {}", l.motion_angle);
            let _ = writeln!(s, "rain.{i}.layer_seed = {}", l.layer_seed);
        }
        s
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut p = Self::identity(1);
        let mut layers: Vec<RainLayerParams> = Vec::new();
        let mut count = None;
        for (k, v) in kv::parse(text)? {
            match k.as_str() {
                "master_seed" => p.master_seed = kv::parse_value(&k, &v)?,
                "blur_sigma" => p.blur_sigma = kv::parse_value(&k, &v)?,
                "down_target" => p.down_target = kv::parse_value(&k, &v)?,
                "beta" => p.beta = kv::parse_value(&k, &v)?,
                "atmospheric" => {
                    let parts: Vec<f64> = v.split(',').map(|x| kv::parse_value(&k, x.trim())).collect::<Result<_>>()?;
                    p.atmospheric = parts
                        .try_into()
                        .map_err(|_| Error::format("degradation params", "atmospheric needs three values"))?;
                }
                "rain_layers" => {
                    let n: usize = kv::parse_value(&k, &v)?;
                    layers.resize(
                        n,
                        RainLayerParams { noise_mean: 0.0, noise_std: 0.0, motion_length: MOTION_LENGTH, motion_angle: 90.0, layer_seed: 0 },
                    );
                    count = Some(n);
                }
                key => {
                    let mut it = key.splitn(3, '.');
                    let (Some("rain"), Some(idx), Some(field)) = (it.next(), it.next(), it.next()) else {
                        return Err(Error::format("degradation params", format!("unknown key {key:?}")));
                    };
                    let idx: usize = kv::parse_value(key, idx)?;
                    let layer = layers
                        .get_mut(idx)
                        .ok_or_else(|| Error::format("degradation params", format!("{key}: layer index beyond rain_layers")))?;
                    match field {
                        "noise_mean" => layer.noise_mean = kv::parse_value(key, &v)?,
                        "noise_std" => layer.noise_std = kv::parse_value(key, &v)?,
                        "motion_length" => layer.motion_length = kv::parse_value(key, &v)?,
                        "motion_angle" => layer.motion_angle = kv::parse_value(key, &v)?,
                        "layer_seed" => layer.layer_seed = kv::parse_value(key, &v)?,
                        _ => return Err(Error::format("degradation params", format!("unknown key {key:?}"))),
                    }
                }
            }
        }
        if count.is_none() {
            return Err(Error::format("degradation params", "missing rain_layers"));
        }
        p.rain_layers = layers;
        Ok(p)
    }
}

/// Per-pixel haze attenuation in `(0, 1]`, shape `[1,H,W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmissionMap<T: Scalar = f64> {
    pub map: Tensor<T>,
}

/// Normalized isotropic Gaussian of side `2·ceil(3σ) + 1`; `σ = 0` is the
/// 1×1 delta.
pub fn gaussian_kernel<T: Scalar>(sigma: f64) -> Result<Tensor<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("gaussian_kernel: sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Tensor::new(&[1, 1], vec![T::one()]);
    }
    let half = (3.0 * sigma).ceil() as i64;
    let k = (2 * half + 1) as usize;
    let raw: Vec<f64> = (0..k * k)
        .map(|i| {
            let (y, x) = ((i / k) as i64 - half, (i % k) as i64 - half);
            (-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Tensor::new(&[k, k], raw.iter().map(|v| T::lit(v / total)).collect())
}

/// Normalized anti-aliased line of `length` pixels through the kernel
/// center at `angle_deg` (counter-clockwise from +x, image rows pointing down).
pub fn motion_kernel<T: Scalar>(length: usize, angle_deg: f64) -> Result<Tensor<T>> {
    if length < 1 {
        return Err(Error::invalid("motion_kernel: length must be at least 1"));
    }
    let l = length;
    let c = (l as f64 - 1.0) / 2.0;
    let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    let (dx, dy) = (snap(angle_deg.to_radians().cos()), snap(-angle_deg.to_radians().sin()));
    let samples = if l == 1 { 1 } else { 16 * l + 1 };
    let mut acc = vec![0.0f64; l * l];
    for s in 0..samples {
        let t = if samples == 1 { 0.0 } else { -c + 2.0 * c * s as f64 / (samples - 1) as f64 };
        let (px, py) = (c + t * dx, c + t * dy);
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        for (oy, wy) in [(0usize, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0usize, 1.0 - fx), (1, fx)] {
                let (xi, yi) = (x0 as i64 + ox as i64, y0 as i64 + oy as i64);
                let w = wx * wy;
                if w > 0.0 && (0..l as i64).contains(&xi) && (0..l as i64).contains(&yi) {
                    acc[yi as usize * l + xi as usize] += w;
                }
            }
        }
    }
    let total: f64 = acc.iter().sum();
    Tensor::new(&[l, l], acc.iter().map(|v| T::lit(v / total)).collect())
}

/// Convolves every channel of a `[C,H,W]` image with a `[k,k]` kernel, zero
/// padded to preserve the extent.
pub fn filter_channels<T: Scalar>(image: &Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = image.chw()?;
    let [kh, kw] = kernel.shape()[..] else {
        return Err(Error::shape("filter_channels", "[k,k] kernel", format!("{:?}", kernel.shape())));
    };
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape("filter_channels", "odd square kernel", format!("{:?}", kernel.shape())));
    }
    if kh == 1 && kernel.data()[0] == T::one() {
        return Ok(image.clone());
    }
    let k4 = kernel.clone().reshape(&[1, 1, kh, kw])?;
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = Tensor::new(&[1, h, w], image.channel(ch).to_vec())?;
        out.extend(conv2d_geom(&plane, &k4, None, ConvGeom::same(kh))?.into_data());
    }
    Tensor::new(&[c, h, w], out)
}

/// Gaussian noise `N(μ, σ²)` clamped to `[0, 1]`, before motion filtering.
pub fn rain_noise_map<T: Scalar>(height: usize, width: usize, params: &RainLayerParams) -> Tensor<T> {
    let mut rng = substream(params.layer_seed, "rain/noise");
    Tensor::from_fn(&[1, height, width], |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit((params.noise_mean + params.noise_std * z).clamp(0.0, 1.0))
    })
}

pub fn make_rain_layer<T: Scalar>(height: usize, width: usize, params: &RainLayerParams) -> Result<Tensor<T>> {
    let noise = rain_noise_map(height, width, params);
    let kernel = motion_kernel(params.motion_length, params.motion_angle)?;
    filter_channels(&noise, &kernel)
}

pub fn transmission_map<T: Scalar>(depth: &Tensor<T>, beta: f64) -> Result<TransmissionMap<T>> {
    let (c, _, _) = depth.chw()?;
    if c != 1 {
        return Err(Error::shape("transmission_map", "[1,H,W] depth", format!("{:?}", depth.shape())));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("transmission_map: beta must be positive, got {beta}")));
    }
    if depth.data().iter().any(|&d| !d.is_finite() || d < T::zero()) {
        return Err(Error::invalid("transmission_map: depth must be finite and nonnegative"));
    }
    let recip: Vec<f64> = depth.data().iter().map(|d| 1.0 / (d.as_f64() + DEPTH_OFFSET)).collect();
    let lo = recip.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = recip.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo + NORMALIZATION_GUARD;
    let map = recip.iter().map(|r| T::lit((-beta * (r - lo) / span).exp())).collect();
    Ok(TransmissionMap { map: Tensor::new(depth.shape(), map)? })
}

/// Draws all parameters from independent named substreams of `master_seed`.
pub fn sample_params(master_seed: u64, rain_layers: (usize, usize)) -> DegradationParams {
    let mut blur = substream(master_seed, "degrade/blur");
    let mut scale = substream(master_seed, "degrade/scale");
    let mut haze = substream(master_seed, "degrade/haze");
    let mut atmos = substream(master_seed, "degrade/atmospheric");
    let mut count = substream(master_seed, "degrade/rain-count");
    let (m_lo, m_hi) = (rain_layers.0.min(rain_layers.1), rain_layers.0.max(rain_layers.1));
    let m = count.random_range(m_lo..=m_hi);
    let rain_layers = (0..m)
        .map(|i| {
            let mut r = substream(master_seed, &format!("degrade/rain-{i}"));
            RainLayerParams {
                noise_mean: r.random_range(NOISE_MEAN_RANGE.0..NOISE_MEAN_RANGE.1),
                noise_std: r.random_range(NOISE_STD_RANGE.0..NOISE_STD_RANGE.1),
                motion_length: MOTION_LENGTH,
                motion_angle: MOTION_ANGLES[r.random_range(0..MOTION_ANGLES.len())],
                layer_seed: r.random(),
            }
        })
        .collect();
    DegradationParams {
        blur_sigma: blur.random_range(BLUR_SIGMA_RANGE.0..BLUR_SIGMA_RANGE.1),
        down_target: scale.random_range(DOWN_TARGET_RANGE.0..=DOWN_TARGET_RANGE.1),
        rain_layers,
        beta: haze.random_range(BETA_RANGE.0..BETA_RANGE.1),
        atmospheric: std::array::from_fn(|_| atmos.random_range(ATMOSPHERIC_RANGE.0..ATMOSPHERIC_RANGE.1)),
        master_seed,
    }
}

/// Blur, resample and rain stages: the bracketed term of the model.
pub fn degrade_signal<T: Scalar>(hq: &Tensor<T>, params: &DegradationParams) -> Result<Tensor<T>> {
    let (c, h, w) = hq.chw()?;
    if c != 3 {
        return Err(Error::shape("degrade", "[3,H,W] image", format!("{:?}", hq.shape())));
    }
    let blurred = filter_channels(hq, &gaussian_kernel(params.blur_sigma)?)?;
    let side = h.min(w);
    let mut x = if params.down_target >= 1 && params.down_target < side {
        let dh = ((h * params.down_target) as f64 / side as f64).round().max(1.0) as usize;
        let dw = ((w * params.down_target) as f64 / side as f64).round().max(1.0) as usize;
        resize_bilinear(&resize_bilinear(&blurred, dh, dw)?, h, w)?
    } else {
        blurred
    };
    let plane = h * w;
    for layer in &params.rain_layers {
        let rain: Tensor<T> = make_rain_layer(h, w, layer)?;
        for ch in 0..c {
            for (v, &r) in x.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(rain.data()) {
                *v += r;
            }
        }
    }
    Ok(x)
}

/// Haze composition `T ⊙ X + (1 − T) ⊙ A`, clamped to `[0, 1]`.
pub fn apply_haze<T: Scalar>(signal: &Tensor<T>, transmission: &TransmissionMap<T>, atmospheric: [f64; 3]) -> Result<Tensor<T>> {
    let (c, h, w) = signal.chw()?;
    if transmission.map.shape() != [1, h, w] {
        return Err(Error::shape("degrade", format!("[1, {h}, {w}] transmission"), format!("{:?}", transmission.map.shape())));
    }
    let plane = h * w;
    let mut out = signal.clone();
    for ch in 0..c {
        let a = T::lit(atmospheric[ch]);
        for (v, &t) in out.data_mut()[ch * plane..(ch + 1) * plane].iter_mut().zip(transmission.map.data()) {
            *v = (t * *v + (T::one() - t) * a).max(T::zero()).min(T::one());
        }
    }
    Ok(out)
}

/// Injects a precomputed transmission map instead of deriving it from depth.
pub fn degrade_with_transmission<T: Scalar>(hq: &Tensor<T>, transmission: &TransmissionMap<T>, params: &DegradationParams) -> Result<Tensor<T>> {
    let x = degrade_signal(hq, params)?;
    apply_haze(&x, transmission, params.atmospheric)
}

pub fn degrade<T: Scalar>(hq: &Tensor<T>, depth: &Tensor<T>, params: &DegradationParams) -> Result<Tensor<T>> {
    let (_, h, w) = hq.chw()?;
    if depth.shape() != [1, h, w] {
        return Err(Error::shape("degrade", format!("[1, {h}, {w}] depth"), format!("{:?}", depth.shape())));
    }
    let t = transmission_map(depth, params.beta)?;
    degrade_with_transmission(hq, &t, params)
}
