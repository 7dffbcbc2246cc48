//! Residual quantization of embedding vectors into multi-level semantic IDs.
//!
//! Each level fits either a diagonal-covariance Gaussian mixture (RQ-GMM) or
//! a k-means codebook (RQ-KMeans) to the residual left by the previous
//! levels. Encoding an embedding yields one code index per level.

pub mod cli;
pub mod error;
pub mod gmm;
pub mod harness;
pub mod io;
pub mod kmeans;
pub mod quantizer;
pub mod rng;
pub mod rq;

pub use error::{Error, Result};
pub use gmm::{em_fit, log_density, map_assign, responsibilities, GmmLevel, Responsibilities};
pub use kmeans::{kmeans_fit, kmeanspp_init, FitConfig, KmeansLevel};
pub use quantizer::{nearest_code, residual_step, Codebook, EmbeddingMatrix, ResidualVector};
pub use rq::{
    convergence_trace, encode, encode_batch, encode_rows_into, evaluate, fit, fit_traced, reconstruct, Level, Method,
    QualityReport, RqModel, SemanticId,
};

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeExamples;
