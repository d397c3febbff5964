//! Channel-state-information fingerprint positioning.
//!
//! The crate covers the whole pipeline: synthetic multipath channel
//! generation ([`synthchan`]), dataset storage and preprocessing
//! ([`dataset`]), fingerprint feature extraction ([`features`]), neural
//! regressors ([`nnet`]), tree ensembles ([`trees`]), error evaluation
//! ([`eval`]) and the experiment grid used by the `bench` command
//! ([`bench`]).

pub mod bench;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod nnet;
pub mod rng;
pub mod synthchan;
pub mod trees;
mod wire;

pub use error::{Error, Result};
