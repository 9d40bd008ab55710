//! Reward-free exploration on finite linear mixture MDPs.

// `!(x > 0.0)` style guards are kept on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bernstein;
pub mod cli;
pub mod error;
pub mod explore;
pub mod files;
pub mod hard;
pub mod harness;
pub mod hoeffding;
pub mod maximizer;
pub mod mdp;
pub mod oracle;
pub mod planner;
pub mod rng;
pub mod sweep;

pub use error::{Result, RfxError};
