//! Finite-key security analysis for BB84-type prepare-and-measure QKD.
//!
//! The crate is split along the lines of the analysis:
//!
//! - [`entropy`]: truncated binary entropy and binomial-sum bounds.
//! - [`source`]: preparation quality of qubit and POVM sources.
//! - [`bounds`]: statistical slack, secret key length and the bound audit.
//! - [`stats`]: sampling-without-replacement bounds and exact tails.
//! - [`rate`]: expected secret key rate for a depolarizing channel.
//! - [`optimize`]: rate maximization under a security-rate constraint.
//! - [`sim`]: Monte Carlo execution of the full protocol.
//!
//! All logarithms are binary unless a function says otherwise.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod entropy;
mod error;
pub mod optimize;
pub mod rate;
pub mod rng;
pub mod sim;
pub mod source;
pub mod stats;

pub use error::{Error, Result};
