//! Dynamic feature compression for remote POMDP control.
//!
//! An observer senses a CartPole plant, picks one quantizer from an ensemble
//! (or stays silent) for every step, and a recurrent actor-critic robot
//! controls the plant from the messages it receives.

pub mod agents;
pub mod binio;
pub mod codec;
pub mod config;
pub mod env;
pub mod neural;
pub mod error;
pub mod eval;
pub mod par;
pub mod pipeline;
pub mod rollout;
pub mod seed;

pub use error::{Error, Result};
