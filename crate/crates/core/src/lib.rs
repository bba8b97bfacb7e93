//! Screening of depression-symptom severity from social-media posts, framed
//! as multiple-instance learning: each student is a bag of posts labeled by
//! their BDI score.
//!
//! The crate covers the whole offline pipeline:
//!
//! - [`corpus`]: bags, BDI banding, observation windows, statistics and a
//!   synthetic corpus generator;
//! - [`splitgen`]: local search for train/validation/test partitions that
//!   keep bags whole and match the corpus class distribution;
//! - [`featex`] and [`embedstore`]: engineered features and ingestion of
//!   precomputed embeddings;
//! - [`tinynn`] and [`heads`]: small fully connected classifiers, early
//!   fusion, bag-level probability averaging and a linear SVM;
//! - [`evalkit`] and [`pipeline`]: metrics, curves and cross-validation over
//!   a split suite.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision variants used by the pipeline.

pub mod corpus;
pub mod embedstore;
pub mod error;
pub mod evalkit;
pub mod featex;
pub mod heads;
pub mod matrix;
pub mod pipeline;
pub mod scalar;
pub mod splitgen;
pub mod tinynn;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureMatrix64 = matrix::FeatureMatrix<f64>;
pub type FeatureMatrix32 = matrix::FeatureMatrix<f32>;
pub type Mlp64 = tinynn::MlpModel<f64>;
pub type Mlp32 = tinynn::MlpModel<f32>;
