//! Continuous occupancy mapping with Gaussian processes under robot-pose
//! uncertainty.
//!
//! The crate provides:
//!
//! - stationary covariance functions and exact GP regression ([`kernels`],
//!   [`gp`]);
//! - warped GPs for non-Gaussian observation behavior ([`warp`]);
//! - two uncertainty-propagation schemes for noisy training inputs: expected
//!   kernels via Monte-Carlo or Gauss-Hermite integration, and expected
//!   sub-map fusion via pose sampling and mixture moments ([`uncertain`],
//!   [`map`]);
//! - a 2-D range-sensor simulator with a noisy unicycle motion model
//!   ([`sim`]), CARMEN-style log ingestion ([`ingest`]), and an experiment
//!   harness with AUC evaluation ([`eval`], [`config`]);
//! - one-dimensional regression demos ([`toy`]).

pub mod config;
pub mod error;
pub mod eval;
pub mod geom;
pub mod gp;
pub mod ingest;
pub mod kernels;
mod linalg;
pub mod map;
pub mod optimize;
pub mod quadrature;
pub mod sim;
pub mod spatial;
pub mod toy;
pub mod uncertain;
pub mod warp;

pub use error::{Error, Result};
pub use geom::{Point2, Pose2};
