//! Synthetic capacity-separation corridor. The agent drifts rightward at a
//! fixed rate through alternating zones: coarse zones reward doing nothing,
//! fine zones reward tracking a fast sinusoid. A small actor underfits the
//! fine-zone tracking while a large one fits it, which rewards switching
//! policies by zone.

use rand::Rng;

use super::{Environment, Step};
use crate::Real;

const ADVANCE: Real = 0.005;
const FREQUENCY: Real = 40.0;
const FINE_SLOPE: Real = 5.0;
const HORIZON: usize = 200;

#[derive(Clone, Debug)]
pub struct PrecisionCorridorEnv {
    x: Real,
    steps: usize,
    finished: bool,
}

/// True in the fine-control zones: floor(4x) odd.
fn is_fine_zone(x: Real) -> bool {
    ((4.0 * x).floor() as i64).rem_euclid(2) == 1
}

fn wave(x: Real) -> Real {
    (FREQUENCY * std::f64::consts::PI * x).sin()
}

impl PrecisionCorridorEnv {
    pub fn new() -> Self {
        Self {
            x: 0.0,
            steps: 0,
            finished: true,
        }
    }

    fn state(&self) -> Vec<Real> {
        let angle = FREQUENCY * std::f64::consts::PI * self.x;
        vec![
            self.x,
            angle.sin(),
            angle.cos(),
            if is_fine_zone(self.x) { 1.0 } else { 0.0 },
        ]
    }

    /// Reward for acting at position `x`: coarse zones pay for stillness,
    /// fine zones pay for tracking the sinusoid.
    pub fn reward_at(x: Real, action: Real) -> Real {
        if is_fine_zone(x) {
            (1.0 - FINE_SLOPE * (action - wave(x)).abs()).max(0.0)
        } else {
            1.0 - action.abs()
        }
    }

    /// Zone of the position reached after `t` steps from the start.
    pub fn zone_is_fine_at_step(t: usize) -> bool {
        is_fine_zone(t as Real * ADVANCE)
    }
}

impl Default for PrecisionCorridorEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PrecisionCorridorEnv {
    fn observation_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> Real {
        1.0
    }

    fn max_episode_steps(&self) -> usize {
        HORIZON
    }

    fn reset(&mut self, _rng: &mut dyn Rng) -> Vec<Real> {
        self.x = 0.0;
        self.steps = 0;
        self.finished = false;
        self.state()
    }

    fn step(&mut self, action: &[Real]) -> Step {
        assert!(!self.finished, "step called on a finished episode; reset first");
        assert_eq!(action.len(), 1);
        let a = action[0].clamp(-1.0, 1.0);
        let reward = Self::reward_at(self.x, a);
        self.steps += 1;
        // Recompute from the step count so x carries no accumulation drift.
        self.x = self.steps as Real * ADVANCE;
        let done = self.steps >= HORIZON;
        self.finished = done;
        Step {
            next_state: self.state(),
            reward,
            done,
        }
    }
}
