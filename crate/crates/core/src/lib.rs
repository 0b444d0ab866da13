#![allow(clippy::type_complexity)]

pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gsf_encoder;
pub mod model;
pub mod nn;
pub mod spectrogram;
pub mod text;
pub mod train;

pub use config::{FusionVariant, RunConfig};
pub use error::{Error, Result};
