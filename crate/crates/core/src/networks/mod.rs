//! Generator, discriminators, encoders, FC heads and the model container.

pub mod layers;
pub mod model;
pub mod params;
pub mod state;

pub use layers::{Conv, Dense};
pub use model::{Ablation, Discriminator, Encoder, FcHead, Generator, GeneratorConfig, HqDecoder, Mode, Networks, TRACE_HQ, TRACE_LQ};
pub use params::{GradAccum, Graph, Owner, ParamGrads, ParamId, ParamStore};
pub use state::{ModelConfig, ModelState};
