//! Reinforcement learning against a learned, actively refreshed reward model.

pub mod active;
pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod reward_model;
pub mod rng;

pub use error::{AcrlError, Result};
