//! Error quantification for empirical singular subspaces of a noisy low-rank
//! matrix `M̂ = UΛVᵀ + Z`.
//!
//! - [`model`]: ground truth, Gaussian noise, top-r SVD
//! - [`dilation`]: symmetric dilation and the spectral projectors `𝔓^{-k}`, `𝔓^⊥`
//! - [`series`]: exact perturbation series of the empirical spectral projector
//! - [`bias`]: bias ladder `B_k`, `B_∞`, normalizer `σ`, shrinkage of singular values
//! - [`moments`]: closed-form random-matrix moments and exact combinatorial identities
//! - [`inference`]: projection distance, normalized statistic, confidence regions
//! - [`harness`]: reproducible parallel Monte-Carlo experiments

pub mod bias;
pub mod dilation;
pub mod error;
pub mod harness;
pub mod inference;
pub mod model;
pub mod moments;
pub mod normal;
pub mod rng;
pub mod series;

pub use bias::{BiasLadder, BiasOrder, LambdaKind, SingularValueEstimate};
pub use dilation::SymmetricDilation;
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentKind, LambdaProfile, ReplicateSummary};
pub use inference::{CltStatistic, ConfidenceRegionSpec};
pub use model::{Dims, EmpiricalSvd, LowRankModel, ObservedMatrix};
pub use rng::NoiseSpec;
