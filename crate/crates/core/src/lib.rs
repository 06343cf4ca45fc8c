//! Single-task and multi-task models of evoked valence, per viewer and for
//! the average viewer, with the data protocol and evaluation harness
//! around them.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod training;

pub use error::{Error, Result};
