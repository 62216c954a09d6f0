use crate::degradation::{degrade, sample_params, DegradationParams};
use crate::error::Result;
use crate::facegen::{generate_face, FaceSample};
use crate::rng::derive_indexed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An HQ face and its degraded observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair<T: Scalar = f64> {
    pub face: FaceSample<T>,
    pub lq: Tensor<T>,
    pub params: DegradationParams,
}

impl<T: Scalar> Pair<T> {
    pub fn hq(&self) -> &Tensor<T> {
        &self.face.image
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Face and degradation seeds of sample `index` in `split`.
pub fn sample_seeds(master: u64, split: Split, index: usize) -> (u64, u64) {
    (
        derive_indexed(master, &format!("{}/face", split.label()), index as u64),
        derive_indexed(master, &format!("{}/degrade", split.label()), index as u64),
    )
}

pub fn synthesize_pair<T: Scalar>(face_seed: u64, degrade_seed: u64, resolution: usize, m_range: (usize, usize)) -> Result<Pair<T>> {
    let face = generate_face(face_seed, resolution)?;
    let params = sample_params(degrade_seed, m_range);
    let lq = degrade(&face.image, &face.depth, &params)?;
    Ok(Pair { face, lq, params })
}

/// `count` pairs of one split, fully determined by the master seed.
pub fn synthesize_corpus<T: Scalar>(master: u64, split: Split, count: usize, resolution: usize, m_range: (usize, usize)) -> Result<Vec<Pair<T>>> {
    (0..count)
        .map(|i| {
            let (f, d) = sample_seeds(master, split, i);
            synthesize_pair(f, d, resolution, m_range)
        })
        .collect()
}
