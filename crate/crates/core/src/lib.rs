//! Dyadic martingales and the extremal Hölder functions built from them.
//!
//! The crate is organized bottom-up: [`dyadic`] supplies exact intervals and
//! rationals, [`martingale`] the lazily evaluated martingales, and the rest
//! build entropy/dimension estimates, Hölder constructions, the block
//! counterexample and divided-difference statistics on top.

pub mod cli;
pub mod construction_blocks;
pub mod divdiff;
pub mod dyadic;
pub mod entropy_dim;
pub mod error;
pub mod holder_functions;
pub mod martingale;
pub mod quad;

pub use dyadic::{locate, whitney, DyadicInterval, DyadicRational, WhitneyDecomposition};
pub use error::{DepthCap, DomainError, Error, Result};
