//! Event-guided video frame interpolation.
//!
//! Modules build on each other in order: [`events`] encodes raw event streams,
//! [`synth`] generates training scenes, [`flow_nets`], [`ega`] and
//! [`warp_refine`] hold the network stages, [`pipeline`] composes them into
//! [`pipeline::EgmrModel`], [`losses`] defines the objective and [`harness`]
//! trains, evaluates and drives the command line.

pub mod checkpoint;
pub mod ega;
pub mod error;
pub mod events;
pub mod flow_nets;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod warp_refine;

pub use error::{Error, Result};
