//! Discrete Upsilon-calculus for reversible continuous-time Markov chains on
//! finite state spaces: curvature constants, entropy flows and tensorization.

pub mod builders;
pub mod chain;
pub mod curvature;
pub mod error;
pub mod flow;
pub mod lattice;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod upsilon;

pub use chain::{ChainSpec, MarkovChain};
pub use error::{Error, Result};
