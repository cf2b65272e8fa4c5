//! Learning a reward function from demonstrations while concurrently
//! optimising a policy against it.
//!
//! The crate bundles the control environments, a small dense network library
//! with hand-written backpropagation, the learned reward model, an
//! actor-critic learner, demonstrators, the training loop, and the
//! evaluation harness behind the `rpcl` binary.

pub mod actor_critic;
pub mod cli;
pub mod config;
pub mod env;
pub mod eval;
pub mod experts;
pub mod gradcheck;
pub mod net;
pub mod optim;
pub mod reward;
pub mod rng;
pub mod train;
