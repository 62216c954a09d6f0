//! Full-reference image quality: PSNR and single-scale SSIM.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape("psnr", b)?;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn ssim_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable valid-region filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let k = win.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| win[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| win[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid region of every channel, averaged over channels.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape("ssim", b)?;
    let (c, h, w) = a.chw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let win = ssim_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.channel(ch).iter().map(|v| v.as_f64()).collect();
        let pb: Vec<f64> = b.channel(ch).iter().map(|v| v.as_f64()).collect();
        let sq = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let mu_a = filter_valid(&pa, h, w, &win);
        let mu_b = filter_valid(&pb, h, w, &win);
        let e_aa = filter_valid(&sq(&pa, &pa), h, w, &win);
        let e_bb = filter_valid(&sq(&pb, &pb), h, w, &win);
        let e_ab = filter_valid(&sq(&pa, &pb), h, w, &win);
        let n = mu_a.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let var_a = e_aa[i] - ma * ma;
            let var_b = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
            let den = ((ma * ma + mb * mb) + c1) * ((var_a + var_b) + c2);
            acc += num / den;
        }
        total += acc / n as f64;
    }
    Ok(total / c as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub sample: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image rows and their corpus mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "sample,psnr_db,ssim,lpips,fid";

    pub fn push(&mut self, sample: impl Into<String>, psnr: f64, ssim: f64) {
        self.rows.push(MetricRow { sample: sample.into(), psnr, ssim });
    }

    /// `(mean PSNR, mean SSIM)`; zeros for an empty report.
    pub fn mean(&self) -> (f64, f64) {
        if self.rows.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.rows.len() as f64;
        (self.rows.iter().map(|r| r.psnr).sum::<f64>() / n, self.rows.iter().map(|r| r.ssim).sum::<f64>() / n)
    }

    /// One row per sample; perceptual columns are not computed.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.6},n/a,n/a", r.sample, r.psnr, r.ssim);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn noise(seed: u64) -> Tensor {
        let mut r = substream(seed, "metric-test");
        Tensor::from_fn(&[3, 16, 16], |_| r.random_range(0.0..1.0))
    }

    #[test]
    fn psnr_cases() {
        let a = noise(1);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let z = Tensor::<f64>::zeros(&[3, 4, 4]);
        assert_eq!(psnr(&z, &Tensor::full(&[3, 4, 4], 1.0)).unwrap(), 0.0);
        // MSE 0.01 from a uniform offset of 0.1.
        let p = psnr(&z, &Tensor::full(&[3, 4, 4], 0.1)).unwrap();
        assert!((p - 20.0).abs() < 1e-9);
        assert!(psnr(&z, &Tensor::zeros(&[3, 4, 5])).is_err());
    }

    #[test]
    fn ssim_cases() {
        let (a, b) = (noise(2), noise(3));
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        assert!((-1.0..=1.0).contains(&s));
        let zero = Tensor::<f64>::zeros(&[3, 12, 12]);
        let one = Tensor::<f64>::full(&[3, 12, 12], 1.0);
        let c1 = 0.01f64.powi(2);
        assert!((ssim(&zero, &one).unwrap() - c1 / (1.0 + c1)).abs() < 1e-9);
        assert!(ssim(&Tensor::<f64>::zeros(&[3, 10, 10]), &Tensor::zeros(&[3, 10, 10])).is_err());
    }

    #[test]
    fn report_mean_and_csv() {
        let mut r = MetricReport::default();
        r.push("a", 20.0, 0.5);
        r.push("b", 30.0, 0.7);
        let (p, s) = r.mean();
        assert_eq!(p, 25.0);
        assert!((s - 0.6).abs() < 1e-12);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "sample,psnr_db,ssim,lpips,fid");
        assert_eq!(lines[1], "a,20.000000,0.500000,n/a,n/a");
        assert_eq!(lines.len(), 3);
    }
}
