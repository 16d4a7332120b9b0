//! Sparse-goal point mass on the unit square: reach a random goal within a
//! 0.05 radius under displacement actions. Reward is -1 until the point sits
//! on the goal, which makes the task a hindsight-relabeling target. Success
//! does not end the episode; only the horizon does.

use rand::{Rng, RngExt};

use super::{Environment, Step};
use crate::Real;

const MAX_DISPLACEMENT: Real = 0.05;
const SUCCESS_RADIUS: Real = 0.05;
const HORIZON: usize = 50;

#[derive(Clone, Debug)]
pub struct SparseGoalPointEnv {
    position: [Real; 2],
    goal: [Real; 2],
    steps: usize,
    finished: bool,
}

impl SparseGoalPointEnv {
    pub fn new() -> Self {
        Self {
            position: [0.0; 2],
            goal: [0.0; 2],
            steps: 0,
            finished: true,
        }
    }

    fn state(&self) -> Vec<Real> {
        vec![self.position[0], self.position[1], self.goal[0], self.goal[1]]
    }
}

impl Default for SparseGoalPointEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for SparseGoalPointEnv {
    fn observation_dim(&self) -> usize {
        4
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> Real {
        MAX_DISPLACEMENT
    }

    fn max_episode_steps(&self) -> usize {
        HORIZON
    }

    fn reset(&mut self, rng: &mut dyn Rng) -> Vec<Real> {
        self.position = [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)];
        self.goal = [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)];
        self.steps = 0;
        self.finished = false;
        self.state()
    }

    fn step(&mut self, action: &[Real]) -> Step {
        assert!(!self.finished, "step called on a finished episode; reset first");
        assert_eq!(action.len(), 2);
        for i in 0..2 {
            let delta = action[i].clamp(-MAX_DISPLACEMENT, MAX_DISPLACEMENT);
            self.position[i] = (self.position[i] + delta).clamp(0.0, 1.0);
        }
        self.steps += 1;
        let reward = self.goal_reward(&self.state(), &self.goal.to_vec());
        let done = self.steps >= HORIZON;
        self.finished = done;
        Step {
            next_state: self.state(),
            reward,
            done,
        }
    }

    fn goal_dim(&self) -> usize {
        2
    }

    fn achieved_goal(&self, state: &[Real]) -> Vec<Real> {
        state[..2].to_vec()
    }

    fn desired_goal(&self) -> Vec<Real> {
        self.goal.to_vec()
    }

    fn goal_reward(&self, achieved: &[Real], desired: &[Real]) -> Real {
        let dist = ((achieved[0] - desired[0]).powi(2) + (achieved[1] - desired[1]).powi(2)).sqrt();
        if dist <= SUCCESS_RADIUS {
            0.0
        } else {
            -1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn sitting_on_the_goal_rewards_zero() {
        let mut env = SparseGoalPointEnv {
            position: [0.4, 0.4],
            goal: [0.4, 0.4],
            steps: 0,
            finished: false,
        };
        let step = env.step(&[0.0, 0.0]);
        assert_eq!(step.reward, 0.0);
    }

    #[test]
    fn one_step_cannot_cross_the_square() {
        let mut env = SparseGoalPointEnv {
            position: [0.0, 0.0],
            goal: [1.0, 1.0],
            steps: 0,
            finished: false,
        };
        let step = env.step(&[MAX_DISPLACEMENT, MAX_DISPLACEMENT]);
        assert_eq!(step.reward, -1.0);
    }

    #[test]
    fn goal_reward_uses_euclidean_radius() {
        let env = SparseGoalPointEnv::new();
        // distance ~= 0.036 <= 0.05
        assert_eq!(env.goal_reward(&[0.5, 0.5], &[0.52, 0.53]), 0.0);
        // distance ~= 0.0707 > 0.05
        assert_eq!(env.goal_reward(&[0.5, 0.5], &[0.55, 0.55]), -1.0);
    }

    #[test]
    fn achieved_goal_tracks_next_position() {
        let mut env = SparseGoalPointEnv {
            position: [0.40, 0.60],
            goal: [0.9, 0.9],
            steps: 0,
            finished: false,
        };
        let step = env.step(&[0.03, -0.02]);
        let achieved = env.achieved_goal(&step.next_state);
        assert_eq!(achieved, vec![0.43, 0.58]);
    }

    #[test]
    fn episode_runs_exactly_the_horizon() {
        let mut env = SparseGoalPointEnv::new();
        env.reset(&mut ChaCha12Rng::seed_from_u64(2));
        for t in 1..=HORIZON {
            let step = env.step(&[0.0, 0.0]);
            assert_eq!(step.done, t == HORIZON);
        }
    }

    #[test]
    fn random_policy_rarely_succeeds() {
        // Success = sitting on the goal when the episode ends.
        let mut env = SparseGoalPointEnv::new();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut successes = 0;
        let episodes = 1000;
        for _ in 0..episodes {
            env.reset(&mut rng);
            loop {
                let action = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];
                let step = env.step(&action);
                if step.done {
                    if step.reward == 0.0 {
                        successes += 1;
                    }
                    break;
                }
            }
        }
        let rate = successes as f64 / episodes as f64;
        assert!(rate < 0.05, "random success rate {rate} too high");
    }
}
