//! Policy evaluation as a hidden monotone VI: Markov chains, Bertsekas
//! estimators, and surrogate TD methods for nonlinear value networks.

mod chain;
mod estimators;
mod nonlinear;

pub use chain::*;
pub use estimators::*;
pub use nonlinear::*;
