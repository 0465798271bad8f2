//! Medication-conditioned virtual-patient simulation for sequential
//! Alzheimer's disease treatment decisions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod artifacts;
pub mod clinician;
pub mod container;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod ingest;
pub mod math;
mod optim;
mod par;
pub mod policies;
pub mod rng;
pub mod schema;
pub mod startstate;
pub mod statval;

pub use error::{Error, Result};
