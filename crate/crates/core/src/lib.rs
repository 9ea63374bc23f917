//! Vision-based auto-focus as a discrete-action reinforcement-learning task:
//! a synthetic focal-stack microscope, a convolutional Q-network trained with
//! DQN, and exact / classical baselines to check it against.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agent;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod focus;
pub mod imaging;
pub mod net;

pub use error::{Error, Result};
