//! Cost-aware hierarchical reinforcement learning with asymmetric sub-policies.
//!
//! A lightweight DQN master policy switches between a small and a large SAC
//! sub-policy at a fixed interval, with the master's reward penalized by the
//! per-inference FLOPs cost of the sub-policy it selected. The crate bundles
//! the network engine, both agents, replay (including hindsight relabeling),
//! three desk-scale environments, and the experiment harness behind the
//! `asymrl` CLI.

pub mod cost;
pub mod dqn;
pub mod envs;
pub mod harness;
pub mod hrl;
pub mod nn;
pub mod replay;
pub mod sac;
pub mod scalar;

use thiserror::Error;

/// Scalar type used by the agents, environments, and harness. The network
/// engine itself is generic over [`scalar::Scalar`]; everything above it is
/// pinned to 64-bit floats.
pub type Real = f64;

pub type MlpNet = nn::MlpNet<Real>;
pub type AdamState = nn::AdamState<Real>;
pub type AdamParams = nn::AdamParams<Real>;
pub type GradBuffer = nn::GradBuffer<Real>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("malformed log {path}:{line}: {message}")]
    MalformedLog {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
