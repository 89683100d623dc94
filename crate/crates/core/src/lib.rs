//! Engine-agnostic replica-exchange orchestration.
//!
//! The crate is organized the way a replica-exchange run flows:
//! [`model`] defines dimensions, ladders and the replica grid; [`engine`]
//! propagates replicas on analytic potentials; [`exchange`] pairs replicas
//! and applies Metropolis swaps; [`pilot`] schedules MD, energy and exchange
//! tasks on a fixed core allocation under the synchronous or asynchronous
//! pattern; [`metrics`] and [`analysis`] post-process the results.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod error;
pub mod exchange;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pilot;
pub mod validation;

pub use error::{EngineError, Error, Result};
