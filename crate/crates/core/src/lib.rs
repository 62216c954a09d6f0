pub mod degradation;
pub mod error;
pub mod facegen;
pub mod harness;
pub mod image_io;
pub mod kv;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod rng;
pub mod scalar;
pub mod sfft;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ModelState32 = networks::ModelState<f32>;
pub type ModelState64 = networks::ModelState<f64>;
