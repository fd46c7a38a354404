//! Step-by-step procedure generation for free-text process titles.
//!
//! A conditional generator proposes the next step given the title and the
//! steps chosen so far; a coherence scorer re-ranks the candidates; the loop
//! ends when the generator emits the stop literal `none`. The crate also
//! ships the comparison baselines, the evaluation metrics and a small
//! experiment runner driving all of it from the `procwriter` binary.

pub mod backend;
pub mod baselines;
pub mod coherence;
pub mod data;
pub mod decoder;
pub mod error;
pub mod metrics;
pub mod prompting;
pub mod runner;
mod util;

pub use error::{Error, Result};
