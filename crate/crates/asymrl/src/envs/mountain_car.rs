//! Continuous mountain car, restated in full so the crate carries no
//! external benchmark dependency. A car on a sinusoidal hill must build
//! momentum to reach the flag on the right; throttle is penalized
//! quadratically and reaching the goal pays +100.

use rand::{Rng, RngExt};

use super::{Environment, Step};
use crate::Real;

const MIN_POSITION: Real = -1.2;
const MAX_POSITION: Real = 0.6;
const MAX_SPEED: Real = 0.07;
const GOAL_POSITION: Real = 0.45;
const POWER: Real = 0.0015;
const GRAVITY: Real = 0.0025;
const HORIZON: usize = 999;

#[derive(Clone, Debug)]
pub struct MountainCarContinuousEnv {
    position: Real,
    velocity: Real,
    steps: usize,
    finished: bool,
}

impl MountainCarContinuousEnv {
    pub fn new() -> Self {
        Self {
            position: -0.5,
            velocity: 0.0,
            steps: 0,
            finished: true,
        }
    }

    fn state(&self) -> Vec<Real> {
        vec![self.position, self.velocity]
    }
}

impl Default for MountainCarContinuousEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for MountainCarContinuousEnv {
    fn observation_dim(&self) -> usize {
        2
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

    fn reset(&mut self, rng: &mut dyn Rng) -> Vec<Real> {
        self.position = rng.random_range(-0.6..=-0.4);
        self.velocity = 0.0;
        self.steps = 0;
        self.finished = false;
        self.state()
    }

    fn step(&mut self, action: &[Real]) -> Step {
        assert!(!self.finished, "step called on a finished episode; reset first");
        assert_eq!(action.len(), 1);
        let force = action[0].clamp(-1.0, 1.0);

        self.velocity += force * POWER - GRAVITY * (3.0 * self.position).cos();
        self.velocity = self.velocity.clamp(-MAX_SPEED, MAX_SPEED);
        self.position += self.velocity;
        self.position = self.position.clamp(MIN_POSITION, MAX_POSITION);
        if self.position <= MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        self.steps += 1;

        let reached_goal = self.position >= GOAL_POSITION;
        let mut reward = -0.1 * force * force;
        if reached_goal {
            reward += 100.0;
        }
        let done = reached_goal || self.steps >= HORIZON;
        self.finished = done;
        Step {
            next_state: self.state(),
            reward,
            done,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn at(position: Real, velocity: Real) -> MountainCarContinuousEnv {
        MountainCarContinuousEnv {
            position,
            velocity,
            steps: 0,
            finished: false,
        }
    }

    #[test]
    fn coasting_step_matches_hand_computation() {
        let mut env = at(-0.5, 0.0);
        let step = env.step(&[0.0]);
        let v = -GRAVITY * (3.0f64 * -0.5).cos();
        assert_abs_diff_eq!(step.next_state[1], v, epsilon = 1e-15);
        assert_abs_diff_eq!(step.next_state[0], -0.5 + v, epsilon = 1e-15);
        assert_abs_diff_eq!(step.next_state[1], -0.000176843, epsilon = 1e-8);
        assert_eq!(step.reward, 0.0);
        assert!(!step.done);
    }

    #[test]
    fn crossing_the_goal_pays_and_terminates() {
        let mut env = at(0.449, 0.07);
        let step = env.step(&[0.0]);
        assert!(step.next_state[0] >= GOAL_POSITION);
        assert!(step.reward > 99.0);
        assert!(step.done);
    }

    #[test]
    fn full_throttle_costs_a_tenth() {
        let mut env = at(-0.5, 0.0);
        let step = env.step(&[1.0]);
        assert_eq!(step.reward, -0.1);
    }

    #[test]
    fn left_wall_pins_and_zeroes_velocity() {
        let mut env = at(MIN_POSITION, -0.05);
        let step = env.step(&[-1.0]);
        assert_eq!(step.next_state[0], MIN_POSITION);
        assert_eq!(step.next_state[1], 0.0);
    }

    #[test]
    fn horizon_truncates_at_999() {
        let mut env = MountainCarContinuousEnv::new();
        env.reset(&mut ChaCha12Rng::seed_from_u64(0));
        let mut steps = 0;
        loop {
            let step = env.step(&[0.0]);
            steps += 1;
            if step.done {
                break;
            }
        }
        assert_eq!(steps, HORIZON);
    }

    #[test]
    fn zero_action_from_rest_never_reaches_the_goal() {
        let mut env = MountainCarContinuousEnv::new();
        for seed in 0..5 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            env.reset(&mut rng);
            loop {
                let step = env.step(&[0.0]);
                assert!(step.next_state[0] < GOAL_POSITION, "coasting reached the goal");
                if step.done {
                    break;
                }
            }
        }
    }

    #[test]
    fn start_state_is_in_the_valley_at_rest() {
        let mut env = MountainCarContinuousEnv::new();
        for seed in 0..50 {
            let s = env.reset(&mut ChaCha12Rng::seed_from_u64(seed));
            assert!((-0.6..=-0.4).contains(&s[0]));
            assert_eq!(s[1], 0.0);
        }
    }

    #[test]
    #[should_panic(expected = "finished episode")]
    fn stepping_after_done_panics() {
        let mut env = at(0.449, 0.07);
        env.step(&[0.0]);
        env.step(&[0.0]);
    }
}
