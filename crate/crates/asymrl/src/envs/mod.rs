//! Desk-scale environments behind a single interface: a continuous
//! mountain-car clone, a sparse-goal point-mass task, and a synthetic
//! corridor that separates small- and large-policy capacity.

mod corridor;
mod mountain_car;
mod point_goal;

pub use corridor::PrecisionCorridorEnv;
pub use mountain_car::MountainCarContinuousEnv;
pub use point_goal::SparseGoalPointEnv;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub next_state: Vec<Real>,
    pub reward: Real,
    pub done: bool,
}

/// Common environment contract. States handed out are the full policy-visible
/// vectors (goal-conditioned environments append the desired goal).
///
/// Stepping a finished episode is a usage bug and panics; callers must reset
/// first. Dynamics are deterministic given the reset state and action
/// sequence; randomness enters only through `reset`.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Half-width of the symmetric action box; agent actions in (-1, 1) are
    /// scaled by this factor before stepping.
    fn action_bound(&self) -> Real;
    fn max_episode_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn Rng) -> Vec<Real>;
    fn step(&mut self, action: &[Real]) -> Step;

    /// Dimension of the goal vector; zero for non-goal-conditioned tasks.
    fn goal_dim(&self) -> usize {
        0
    }

    /// Goal achieved by a full state (goal-conditioned environments only).
    fn achieved_goal(&self, _state: &[Real]) -> Vec<Real> {
        panic!("environment is not goal-conditioned");
    }

    /// The current episode's desired goal (goal-conditioned environments only).
    fn desired_goal(&self) -> Vec<Real> {
        panic!("environment is not goal-conditioned");
    }

    /// Goal-conditioned reward for an achieved/desired goal pair.
    fn goal_reward(&self, _achieved: &[Real], _desired: &[Real]) -> Real {
        panic!("environment is not goal-conditioned");
    }
}

/// Environment selector used by configs and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    MountainCar,
    PointGoal,
    Corridor,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mountaincar" => Ok(Self::MountainCar),
            "pointgoal" => Ok(Self::PointGoal),
            "corridor" => Ok(Self::Corridor),
            other => Err(Error::Config(format!(
                "unknown environment {other:?}; expected one of mountaincar, pointgoal, corridor"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::MountainCar => "mountaincar",
            Self::PointGoal => "pointgoal",
            Self::Corridor => "corridor",
        }
    }
}

pub fn make_env(kind: EnvKind) -> Box<dyn Environment> {
    match kind {
        EnvKind::MountainCar => Box::new(MountainCarContinuousEnv::new()),
        EnvKind::PointGoal => Box::new(SparseGoalPointEnv::new()),
        EnvKind::Corridor => Box::new(PrecisionCorridorEnv::new()),
    }
}
