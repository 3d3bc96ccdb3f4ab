//! Needle-tip force estimation from simulated OCT A-scan sequences.
//!
//! The pipeline runs from a physics simulator of the needle's epoxy layer
//! ([`sim`]), through stream alignment and windowing ([`streams`]) and a binary
//! dataset container ([`dataset`]), to five spatio-temporal regression models
//! ([`nets`]) trained with Adam and scored by MAE, relative MAE and Pearson
//! correlation ([`train`]).

pub mod config;
pub mod dataset;
mod error;
pub mod nets;
pub mod pipeline;
pub mod sim;
pub mod streams;
pub mod train;

pub use error::{DatasetError, NetError, PipelineError, SimError, StreamError, TrainError};
