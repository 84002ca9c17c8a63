//! Hebbian STDP as noisy gradient descent on the probability simplex.
//!
//! The trigger probabilities of a neuron's inputs follow a multiplicative
//! update that drifts along the replicator flow of a cubic-quartic loss and
//! converges to the vertex of the strongest input.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod export;
pub mod flow;
pub mod mirror;
pub mod multi;
pub mod rng;
pub mod simplex;
pub mod spiking;
pub mod theory;

pub use error::{Error, Result};

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simplex.md")]
    mod simplex {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/multi_output.md")]
    mod multi_output {}
    #[doc = include_str!("../../../book/src/spiking.md")]
    mod spiking {}
    #[doc = include_str!("../../../book/src/mirror.md")]
    mod mirror {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
