//! Inference-mode restoration and test-set evaluation.

use crate::error::{Error, Result};
use crate::facegen::ParsingMap;
use crate::metrics::{psnr, ssim, MetricReport};
use crate::networks::state::FLAG_GAN_TRAINED;
use crate::networks::{Graph, Mode, ModelState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::corpus::Pair;
use super::training::{hq_embedding, lq_embedding};

/// A restored image and the encoder calls made while producing it.
#[derive(Clone, Debug, PartialEq)]
pub struct Restoration<T: Scalar = f64> {
    pub image: Tensor<T>,
    pub trace: Vec<&'static str>,
}

/// Restores `lq` with the inference path: DAFE statistics come from the LQ
/// encoder and the HQ encoder is never called.
pub fn restore<T: Scalar>(state: &ModelState<T>, lq: &Tensor<T>, parsing: &ParsingMap) -> Result<Restoration<T>> {
    if !state.has_flag(FLAG_GAN_TRAINED) {
        return Err(Error::State("model has not been through GAN training; run train first".into()));
    }
    let r = state.config.generator.resolution;
    if lq.shape() != [3, r, r] {
        return Err(Error::invalid(format!("restore expects a [3, {r}, {r}] image, got {:?}", lq.shape())));
    }
    if (parsing.height, parsing.width) != (r, r) {
        return Err(Error::invalid(format!("parsing map is {}x{}, model resolution is {r}", parsing.height, parsing.width)));
    }
    let mut g = Graph::new(&state.store, &[]);
    let out = state.nets.generate(&mut g, lq, parsing, Mode::Infer)?;
    Ok(Restoration { image: g.value(out).clone(), trace: g.trace().to_vec() })
}

/// One test sample with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem<T: Scalar = f64> {
    pub name: String,
    pub hq: Tensor<T>,
    pub lq: Tensor<T>,
    pub parsing: ParsingMap,
}

impl<T: Scalar> EvalItem<T> {
    pub fn from_pair(name: impl Into<String>, pair: &Pair<T>) -> Self {
        Self { name: name.into(), hq: pair.hq().clone(), lq: pair.lq.clone(), parsing: pair.face.parsing.clone() }
    }
}

/// Per-sample squared embedding distances to `E_HQ(H)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingReport {
    pub aligned: Vec<f64>,
    pub unaligned: Vec<f64>,
}

impl EmbeddingReport {
    /// Fraction of samples where the aligned encoder is strictly closer.
    pub fn win_fraction(&self) -> f64 {
        if self.aligned.is_empty() {
            return 0.0;
        }
        let wins = self.aligned.iter().zip(&self.unaligned).filter(|(a, u)| a < u).count();
        wins as f64 / self.aligned.len() as f64
    }

    pub fn mean_aligned(&self) -> f64 {
        mean(&self.aligned)
    }

    pub fn mean_unaligned(&self) -> f64 {
        mean(&self.unaligned)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sq_dist<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum()
}

/// `‖E_HQ(H) − E_LQ(I)‖²` per item, for the model's LQ encoder and for a
/// freshly initialized one built from the same configuration.
pub fn embedding_report<T: Scalar>(state: &ModelState<T>, items: &[EvalItem<T>]) -> Result<EmbeddingReport> {
    let fresh = ModelState::<T>::new(state.config.clone())?;
    let mut report = EmbeddingReport::default();
    for item in items {
        let target = hq_embedding(state, &item.hq)?;
        report.aligned.push(sq_dist(&target, &lq_embedding(state, &item.lq)?));
        // The fresh model's HQ encoder is unused; only its LQ encoder matters.
        report.unaligned.push(sq_dist(&target, &lq_embedding(&fresh, &item.lq)?));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub restored: MetricReport,
    pub baseline: MetricReport,
    /// Absent for models without an LQ encoder.
    pub embedding: Option<EmbeddingReport>,
}

/// Metrics of `restorer(item)` against ground truth, and of the LQ input as a
/// baseline. `restorer` is the injection point for oracle outputs.
pub fn evaluate_with<T: Scalar>(items: &[EvalItem<T>], mut restorer: impl FnMut(&EvalItem<T>) -> Result<Tensor<T>>) -> Result<(MetricReport, MetricReport)> {
    let mut restored = MetricReport::default();
    let mut baseline = MetricReport::default();
    for item in items {
        let out = restorer(item)?;
        restored.push(item.name.clone(), psnr(&out, &item.hq)?, ssim(&out, &item.hq)?);
        baseline.push(item.name.clone(), psnr(&item.lq, &item.hq)?, ssim(&item.lq, &item.hq)?);
    }
    Ok((restored, baseline))
}

pub fn evaluate<T: Scalar>(state: &ModelState<T>, items: &[EvalItem<T>]) -> Result<EvalReport> {
    let (restored, baseline) = evaluate_with(items, |it| Ok(restore(state, &it.lq, &it.parsing)?.image))?;
    let embedding = match state.nets.lq_encoder {
        Some(_) => Some(embedding_report(state, items)?),
        None => None,
    };
    Ok(EvalReport { restored, baseline, embedding })
}
