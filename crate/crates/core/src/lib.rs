//! Contrastive dual-encoder training laboratory for audio-text retrieval.
//!
//! The crate trains a pair of linear encoders — audio frames through a
//! projection matrix, caption tokens through an embedding table — with a
//! triplet ranking loss whose negatives come from one of eight selection
//! strategies, then scores retrieval in both directions with mAP and
//! recall@k. Everything is deterministic: a run is a pure function of its
//! configuration, down to the bit pattern of the trained parameters.
//!
//! Modules, bottom up:
//!
//! - [`scalar`], [`matrix`], [`rng`], [`error`]: numeric and utility base.
//! - [`data`]: paired datasets, the synthetic corpus generator, splitting,
//!   batching.
//! - [`io`]: the NSLAB-JL feature-file and checkpoint formats.
//! - [`encoder`]: the two linear encoders and their exact gradients.
//! - [`relevance`]: dot / cosine / mean-max-align scoring and score
//!   matrices.
//! - [`sampling`]: the eight negative-selection strategies.
//! - [`loss`]: instance and full-mini-batch triplet ranking losses.
//! - [`train`]: Adam, plateau decay, early stopping, collapse monitoring.
//! - [`metrics`]: average precision and the two recall@k conventions.
//! - [`experiment`]: the strategy-by-seed grid and report rendering.
//!
//! All numeric code is generic over the [`scalar::Scalar`] element type
//! (`f32` or `f64`); the aliases below fix the default double-precision
//! instantiation.

pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod relevance;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use relevance::ScoreFn;
pub use sampling::Strategy;

/// Default scalar type of the pipeline.
pub type Real = f64;

/// Double-precision matrix.
pub type MatrixF64 = matrix::Matrix<Real>;
/// Double-precision paired dataset.
pub type DatasetF64 = data::PairedDataset<Real>;
/// Double-precision clip.
pub type ClipF64 = data::Clip<Real>;
/// Double-precision encoder parameters.
pub type ModelParametersF64 = encoder::ModelParameters<Real>;
/// Double-precision embedding.
pub type EmbeddingF64 = encoder::Embedding<Real>;
/// Double-precision cross-modality score matrix.
pub type ScoreMatrixF64 = relevance::ScoreMatrix<Real>;
/// Double-precision training outcome.
pub type TrainOutcomeF64 = train::TrainOutcome<Real>;

/// Runs the experiment grid in double precision.
pub fn run_experiment_f64(
    cfg: &experiment::ExperimentConfig,
) -> Result<experiment::RetrievalReport> {
    experiment::run_experiment::<Real>(cfg)
}
