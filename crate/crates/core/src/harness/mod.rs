//! Training, evaluation, ablation and the command line.

pub mod ablate;
pub mod augment;
pub mod cli;
pub mod evaluate;
pub mod metrics;
pub mod optim;
pub mod train;
