//! Joint landmark location, uncertainty and visibility likelihood.
//!
//! The crate covers the numerical core of heatmap-based landmark regression
//! with predicted uncertainty:
//!
//! - [`geometry`]: 2x2 SPD covariance algebra (Cholesky factors, matrix
//!   log/exp, whitening).
//! - [`heatmap`]: spatial-mean landmark estimator and its gradient, plus the
//!   quarter-pixel argmax baseline.
//! - [`likelihood`]: Gaussian and Laplacian location likelihoods, the joint
//!   visibility/location loss, analytic gradients and exact samplers.
//! - [`fitting`]: synthetic scenarios and a maximum-likelihood fitter.
//! - [`metrics`]: NME, NME over visible landmarks, AUC, failure rate,
//!   visibility accuracy and uncertainty scalars.
//! - [`calibration`]: residual-vs-covariance binning, standardized residual
//!   KL divergence, log-Euclidean covariance averaging.
//! - [`dataio`]: annotation and prediction JSON formats.
//! - [`cli`]: the `luvli` command-line tool.
//!
//! Batch operations run on rayon when the `parallel` feature is enabled and
//! produce bit-identical results without it; see [`par`].

pub mod calibration;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod heatmap;
pub mod likelihood;
pub mod metrics;
pub mod par;

pub use error::{Error, Result};
pub use geometry::{CholeskyCovariance, Point2, SymMatrix2};
pub use likelihood::{GroundTruthLandmark, LandmarkPrediction, LikelihoodKind};
