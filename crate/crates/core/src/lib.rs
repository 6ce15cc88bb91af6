//! Age-of-information aware uplink power control under a tail-latency
//! constraint, with the latency tail learned as a generalized Pareto model
//! through correlation-aware federated averaging.
//!
//! Module map:
//! - [`traffic`]: folded-normal inter-arrival sequences, i.i.d. or fGn-driven.
//! - [`channel`]: path loss, fading and transmission time.
//! - [`aoi_queue`]: queuing delay, AoI and virtual-queue recursions.
//! - [`power`]: minimum power from the GPD tail and the per-slot solver.
//! - [`evt`]: exceedance extraction and GPD maximum likelihood.
//! - [`federated`]: weighted averaging, R/S Hurst estimation, model selection.
//! - [`sim`]: training and online phases, V sweeps and CSV export.

// `!(x > 0.0)` style checks are deliberate: they reject NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aoi_queue;
pub mod channel;
pub mod config;
mod error;
pub mod evt;
pub mod federated;
pub mod fgn;
pub mod power;
pub mod seed;
pub mod sim;
pub mod traffic;

pub use error::{Error, Result};
pub use evt::GpdParams;
