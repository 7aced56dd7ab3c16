//! IRS-enhanced cell-free MIMO downlink simulator.
//!
//! The crate models a network of cooperating multi-antenna base stations
//! serving single-antenna users with the help of a passive reflecting
//! surface. It provides:
//!
//! - a geometric channel generator ([`channel`]),
//! - exact SINR / sum-rate evaluation ([`rate`]),
//! - classic beamformers and the normalization layers ([`beamform`]),
//! - a centralized fractional-programming power-allocation baseline
//!   ([`fp_baseline`]),
//! - per-BS graph neural networks that emit beamformers and reflection
//!   coefficients from local CSI ([`gnn`]),
//! - unsupervised training and distributed-deployment evaluation
//!   ([`trainer`]), and
//! - experiment orchestration, persistence, and reporting ([`harness`]).

pub mod beamform;
pub mod channel;
pub mod error;
pub mod fp_baseline;
pub mod gnn;
pub mod harness;
pub mod numerics;
pub mod rate;
pub mod trainer;

pub use error::{Error, Result};
