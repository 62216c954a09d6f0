//! Training stages, restoration, evaluation and the gradient suite.

pub mod config;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod gradsuite;
pub mod training;

pub use config::{RunConfig, SEED_ENV};
pub use corpus::{sample_seeds, synthesize_corpus, synthesize_pair, Pair, Split};
pub use dataset::{
    load_eval_items, read_degraded_manifest, read_face_manifest, read_params_file, read_parsing_file, write_degraded_set, write_face_set, write_parsing_file, DegradedRecord,
    FaceRecord,
};
pub use eval::{embedding_report, evaluate, evaluate_with, restore, EmbeddingReport, EvalItem, EvalReport, Restoration};
pub use gradsuite::{run_gradsuite, GradCheck, GRADSUITE_TOLERANCE};
pub use training::{
    check_generator_trainable, mean_alignment_mse, mean_generator_terms, pretrain_hq_encoder, run_dafe_training, run_gan_training, AlignmentReport, GanReport, GenTerms,
    PretrainReport,
};
