//! Raw forward/backward kernels on [`Tensor`]s. The tape in `tape.rs`
//! records calls to these and chains their adjoints.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Border handling of a stride-1 convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that preserves the spatial extent (odd kernels only).
    Same,
    /// No padding.
    Valid,
}

/// Stride and zero padding of a 2-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, pad: kernel / 2 }
    }

    pub fn valid() -> Self {
        Self { stride: 1, pad: 0 }
    }

    /// Stride-2 downsampling with `pad = k / 2`; halves even extents for odd `k`.
    pub fn down2(kernel: usize) -> Self {
        Self { stride: 2, pad: kernel / 2 }
    }

    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        (input + 2 * self.pad).checked_sub(kernel).map(|r| r / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    Bilinear,
}

// Output positions `o` with `0 <= o*stride + k - pad < input`.
#[inline]
fn tap_range(k: usize, pad: usize, stride: usize, input: usize, output: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if input + pad < k + 1 {
        return (0, 0);
    }
    let hi = ((input - 1 + pad - k) / stride + 1).min(output);
    (lo.min(hi), hi)
}

struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, geom: ConvGeom) -> Result<ConvDims> {
    let (cin, h, w) = input.chw()?;
    let [cout, kcin, kh, kw] = kernel.shape()[..] else {
        return Err(Error::shape("conv2d", "kernel [C_out,C_in,kH,kW]", format!("{:?}", kernel.shape())));
    };
    if kcin != cin {
        return Err(Error::shape("conv2d", format!("kernel C_in = {cin}"), format!("{kcin}")));
    }
    if geom.stride == 0 {
        return Err(Error::invalid("conv2d: stride must be positive"));
    }
    let (Some(ho), Some(wo)) = (geom.output_extent(h, kh), geom.output_extent(w, kw)) else {
        return Err(Error::shape("conv2d", format!("input at least {kh}x{kw} after padding"), format!("{h}x{w}")));
    };
    Ok(ConvDims { cin, h, w, cout, kh, kw, ho, wo })
}

/// 2-D cross-correlation with optional per-output-channel bias.
pub fn conv2d_geom<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>, geom: ConvGeom) -> Result<Tensor<T>> {
    let d = conv_dims(input, kernel, geom)?;
    if let Some(b) = bias {
        if b.shape() != [d.cout] {
            return Err(Error::shape("conv2d", format!("bias [{}]", d.cout), format!("{:?}", b.shape())));
        }
    }
    let (s, p) = (geom.stride, geom.pad);
    let plane = d.ho * d.wo;
    let mut out = vec![T::zero(); d.cout * plane];
    let x = input.data();
    let k = kernel.data();
    for co in 0..d.cout {
        let out_plane = &mut out[co * plane..(co + 1) * plane];
        if let Some(b) = bias {
            out_plane.fill(b.data()[co]);
        }
        for ci in 0..d.cin {
            let in_plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                let (oy_lo, oy_hi) = tap_range(ky, p, s, d.h, d.ho);
                for kx in 0..d.kw {
                    let wgt = k[((co * d.cin + ci) * d.kh + ky) * d.kw + kx];
                    let (ox_lo, ox_hi) = tap_range(kx, p, s, d.w, d.wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let in_row = &in_plane[iy * d.w..(iy + 1) * d.w];
                        let out_row = &mut out_plane[oy * d.wo..(oy + 1) * d.wo];
                        if s == 1 {
                            let off = ox_lo + kx - p;
                            let n = ox_hi - ox_lo;
                            for (o, &i) in out_row[ox_lo..ox_hi].iter_mut().zip(&in_row[off..off + n]) {
                                *o += wgt * i;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                out_row[ox] += wgt * in_row[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[d.cout, d.ho, d.wo], out)
}

/// Adjoints of [`conv2d_geom`]: `(d input, d kernel, d bias)`. Input and
/// kernel adjoints are skipped when not requested.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    geom: ConvGeom,
    want_input: bool,
    want_kernel: bool,
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Tensor<T>)> {
    let d = conv_dims(input, kernel, geom)?;
    if grad_out.shape() != [d.cout, d.ho, d.wo] {
        return Err(Error::shape("conv2d_backward", format!("[{}, {}, {}]", d.cout, d.ho, d.wo), format!("{:?}", grad_out.shape())));
    }
    let (s, p) = (geom.stride, geom.pad);
    let plane = d.ho * d.wo;
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut gin = want_input.then(|| vec![T::zero(); x.len()]);
    let mut gk = want_kernel.then(|| vec![T::zero(); k.len()]);
    let gb: Vec<T> = (0..d.cout).map(|co| g[co * plane..(co + 1) * plane].iter().copied().sum()).collect();

    for co in 0..d.cout {
        let g_plane = &g[co * plane..(co + 1) * plane];
        for ci in 0..d.cin {
            let in_off = ci * d.h * d.w;
            for ky in 0..d.kh {
                let (oy_lo, oy_hi) = tap_range(ky, p, s, d.h, d.ho);
                for kx in 0..d.kw {
                    let kidx = ((co * d.cin + ci) * d.kh + ky) * d.kw + kx;
                    let (ox_lo, ox_hi) = tap_range(kx, p, s, d.w, d.wo);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let wgt = k[kidx];
                    let mut acc = T::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let row = in_off + iy * d.w;
                        let g_row = &g_plane[oy * d.wo..(oy + 1) * d.wo];
                        if s == 1 {
                            let off = row + ox_lo + kx - p;
                            let n = ox_hi - ox_lo;
                            if let Some(gi) = gin.as_mut() {
                                for (t, &gv) in gi[off..off + n].iter_mut().zip(&g_row[ox_lo..ox_hi]) {
                                    *t += wgt * gv;
                                }
                            }
                            if gk.is_some() {
                                for (&xv, &gv) in x[off..off + n].iter().zip(&g_row[ox_lo..ox_hi]) {
                                    acc += xv * gv;
                                }
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = row + ox * s + kx - p;
                                if let Some(gi) = gin.as_mut() {
                                    gi[ix] += wgt * g_row[ox];
                                }
                                acc += x[ix] * g_row[ox];
                            }
                        }
                    }
                    if let Some(gk) = gk.as_mut() {
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        gin.map(|v| Tensor::new(input.shape(), v)).transpose()?,
        gk.map(|v| Tensor::new(kernel.shape(), v)).transpose()?,
        Tensor::vector(gb),
    ))
}

/// Convolution with `same` or `valid` zero padding at stride 1.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>, padding: Padding) -> Result<Tensor<T>> {
    let geom = match padding {
        Padding::Same => {
            let ks = kernel.shape();
            if ks.len() == 4 && (ks[2] % 2 == 0 || ks[3] % 2 == 0) {
                return Err(Error::shape("conv2d", "odd kernel extents for same padding", format!("{ks:?}")));
            }
            ConvGeom::same(ks.get(2).copied().unwrap_or(1))
        }
        Padding::Valid => ConvGeom::valid(),
    };
    if padding == Padding::Same && kernel.shape().len() == 4 && kernel.shape()[2] != kernel.shape()[3] {
        return Err(Error::shape("conv2d", "square kernel for same padding", format!("{:?}", kernel.shape())));
    }
    conv2d_geom(input, kernel, Some(bias), geom)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    // Keep the open interval (0, 1) even where the closed form rounds.
    s.max(T::min_positive_value()).min(one - T::epsilon() / T::lit(2.0))
}

pub fn pointwise<T: Scalar>(input: &Tensor<T>, f: Pointwise) -> Tensor<T> {
    match f {
        Pointwise::Relu => input.map(|v| v.max(T::zero())),
        Pointwise::Sigmoid => input.map(sigmoid),
    }
}

/// Source index pairs and weights for one axis of an align-corners-false
/// bilinear resize (pixel centers at `(i + 0.5) / n`).
fn bilinear_axis<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T, T)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let w1 = src - i0 as f64;
            let w1 = if i1 == i0 { 0.0 } else { w1 };
            (i0, i1, T::lit(1.0 - w1), T::lit(w1))
        })
        .collect()
}

/// Bilinear resize of every channel of a `[C,H,W]` tensor.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bilinear: target extent must be positive"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ys = bilinear_axis::<T>(h, out_h);
    let xs = bilinear_axis::<T>(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let base = ch * h * w;
        for &(y0, y1, wy0, wy1) in &ys {
            let r0 = &x[base + y0 * w..base + (y0 + 1) * w];
            let r1 = &x[base + y1 * w..base + (y1 + 1) * w];
            for &(x0, x1, wx0, wx1) in &xs {
                let top = wx0 * r0[x0] + wx1 * r0[x1];
                let bot = wx0 * r1[x0] + wx1 * r1[x1];
                out.push(wy0 * top + wy1 * bot);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

pub fn resize_bilinear_backward<T: Scalar>(grad_out: &Tensor<T>, in_h: usize, in_w: usize) -> Result<Tensor<T>> {
    let (c, out_h, out_w) = grad_out.chw()?;
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(grad_out.clone());
    }
    let ys = bilinear_axis::<T>(in_h, out_h);
    let xs = bilinear_axis::<T>(in_w, out_w);
    let g = grad_out.data();
    let mut gin = vec![T::zero(); c * in_h * in_w];
    for ch in 0..c {
        let base = ch * in_h * in_w;
        for (oy, &(y0, y1, wy0, wy1)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, wx0, wx1)) in xs.iter().enumerate() {
                let gv = g[(ch * out_h + oy) * out_w + ox];
                gin[base + y0 * in_w + x0] += gv * wy0 * wx0;
                gin[base + y0 * in_w + x1] += gv * wy0 * wx1;
                gin[base + y1 * in_w + x0] += gv * wy1 * wx0;
                gin[base + y1 * in_w + x1] += gv * wy1 * wx1;
            }
        }
    }
    Tensor::new(&[c, in_h, in_w], gin)
}

pub fn upsample<T: Scalar>(input: &Tensor<T>, factor: usize, mode: UpsampleMode) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::invalid("upsample: factor must be at least 1"));
    }
    let (c, h, w) = input.chw()?;
    if factor == 1 {
        return Ok(input.clone());
    }
    match mode {
        UpsampleMode::Bilinear => resize_bilinear(input, h * factor, w * factor),
        UpsampleMode::Nearest => {
            let (oh, ow) = (h * factor, w * factor);
            let x = input.data();
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for oy in 0..oh {
                    let row = &x[(ch * h + oy / factor) * w..(ch * h + oy / factor + 1) * w];
                    out.extend((0..ow).map(|ox| row[ox / factor]));
                }
            }
            Tensor::new(&[c, oh, ow], out)
        }
    }
}

pub fn upsample_nearest_backward<T: Scalar>(grad_out: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (c, oh, ow) = grad_out.chw()?;
    let (h, w) = (oh / factor, ow / factor);
    let g = grad_out.data();
    let mut gin = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                gin[(ch * h + oy / factor) * w + ox / factor] += g[(ch * oh + oy) * ow + ox];
            }
        }
    }
    Tensor::new(&[c, h, w], gin)
}

/// Per-channel population mean and standard deviation over all trailing axes.
/// A constant channel yields exactly its value and a deviation of 0.
pub fn channel_stats<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if input.ndim() < 2 {
        return Err(Error::shape("channel_stats", "[C, ...spatial]", format!("{:?}", input.shape())));
    }
    let c = input.shape()[0];
    let n = T::from_usize(input.len() / c).unwrap();
    let mut mu = Vec::with_capacity(c);
    let mut sigma = Vec::with_capacity(c);
    for ch in 0..c {
        let xs = input.channel(ch);
        if xs.iter().all(|&v| v == xs[0]) {
            mu.push(xs[0]);
            sigma.push(T::zero());
            continue;
        }
        let m = xs.iter().copied().sum::<T>() / n;
        let var = xs.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
        mu.push(m);
        sigma.push(var.sqrt());
    }
    Ok((Tensor::vector(mu), Tensor::vector(sigma)))
}

/// Nearest-neighbour resize of an integer label map (pixel-center convention).
pub fn resize_labels(labels: &[u8], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let iy = (((oy as f64 + 0.5) * h as f64 / out_h as f64) as usize).min(h - 1);
        for ox in 0..out_w {
            let ix = (((ox as f64 + 0.5) * w as f64 / out_w as f64) as usize).min(w - 1);
            out.push(labels[iy * w + ix]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(&[1, 5, 4], |i| (i as f64 * 0.37).sin());
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn valid_ones_kernel_on_constant() {
        let c = 0.7f64;
        let x = Tensor::full(&[1, 5, 5], c);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, &Tensor::zeros(&[1]), Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        for &v in y.data() {
            assert!((v - 9.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn same_padding_shape() {
        let x = Tensor::<f64>::zeros(&[1, 5, 5]);
        let k = Tensor::zeros(&[4, 1, 3, 3]);
        let y = conv2d(&x, &k, &Tensor::zeros(&[4]), Padding::Same).unwrap();
        assert_eq!(y.shape(), &[4, 5, 5]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[2, 5, 5]);
        let k = Tensor::zeros(&[4, 1, 3, 3]);
        let err = conv2d(&x, &k, &Tensor::zeros(&[4]), Padding::Same).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }), "{err}");
        assert!(conv2d(&Tensor::<f64>::zeros(&[1, 5, 5]), &Tensor::zeros(&[1, 1, 2, 2]), &Tensor::zeros(&[1]), Padding::Same).is_err());
    }

    #[test]
    fn strided_conv_matches_dense_then_subsample() {
        let x = Tensor::<f64>::from_fn(&[2, 6, 6], |i| ((i * 7919) % 13) as f64 - 6.0);
        let k = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 31) % 7) as f64 * 0.1 - 0.3);
        let b = Tensor::vector(vec![0.1, -0.2, 0.3]);
        let dense = conv2d_geom(&x, &k, Some(&b), ConvGeom::same(3)).unwrap();
        let strided = conv2d_geom(&x, &k, Some(&b), ConvGeom::down2(3)).unwrap();
        assert_eq!(strided.shape(), &[3, 3, 3]);
        for c in 0..3 {
            for y in 0..3 {
                for xx in 0..3 {
                    assert!((strided.at3(c, y, xx) - dense.at3(c, 2 * y, 2 * xx)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pointwise_definitions() {
        let x = t(&[3], &[-2.0, 3.0, 0.0]);
        assert_eq!(pointwise(&x, Pointwise::Relu).data(), &[0.0, 3.0, 0.0]);
        let s = pointwise(&x, Pointwise::Sigmoid);
        assert_eq!(s.data()[2], 0.5);
        // 1 / (1 + e^-4) = 0.98201379...
        assert!((sigmoid(4.0f64) - 0.9820).abs() < 1e-4);
        for v in [-800.0f64, -40.0, 40.0, 800.0] {
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s}");
        }
    }

    #[test]
    fn nearest_upsample_replicates() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = upsample(&x, 2, UpsampleMode::Nearest).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.data(), &expected);
        assert_eq!(upsample(&x, 1, UpsampleMode::Bilinear).unwrap(), x);
        assert!(upsample(&x, 0, UpsampleMode::Nearest).is_err());
    }

    #[test]
    fn bilinear_row_weights() {
        // Pixel centers at (i+0.5)/n: outputs sample 0, 0.25, 0.75 and 1.
        let x = t(&[1, 1, 2], &[0.0, 1.0]);
        let y = upsample(&x, 2, UpsampleMode::Bilinear).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        assert_eq!(&y.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_halving_averages_quads() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64);
        let y = resize_bilinear(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn channel_stats_examples() {
        let x = t(&[3, 1, 4], &[5.0, 5.0, 5.0, 5.0, 1.0, 3.0, 1.0, 3.0, 0.0, 0.0, 0.0, 4.0]);
        let (mu, sigma) = channel_stats(&x).unwrap();
        assert_eq!(mu.data()[0], 5.0);
        assert_eq!(sigma.data()[0], 0.0);
        assert_eq!(mu.data()[1], 2.0);
        assert_eq!(sigma.data()[1], 1.0);
        assert_eq!(mu.data()[2], 1.0);
        assert!((sigma.data()[2] - 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_sigma_is_exactly_zero() {
        for c in [0.1f64, 1.0 / 3.0, 7.77, -1e-3] {
            let x = Tensor::full(&[2, 7, 9], c);
            let (mu, sigma) = channel_stats(&x).unwrap();
            assert!(sigma.data().iter().all(|&s| s == 0.0));
            assert!(mu.data().iter().all(|&m| m == c));
        }
    }

    #[test]
    fn label_resize_nearest() {
        let labels = [0u8, 1, 2, 3];
        assert_eq!(resize_labels(&labels, 2, 2, 4, 4), vec![0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]);
        assert_eq!(resize_labels(&labels, 2, 2, 1, 1), vec![3]);
    }
}
