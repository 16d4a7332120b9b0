//! Experience replay: a uniform-sampling ring buffer shared by both
//! sub-policies, the master's own buffer, and hindsight relabeling with the
//! "future" strategy for goal-conditioned episodes.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Low-level experience record `(s, a, r, s', d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<Real>,
    pub action: Vec<Real>,
    pub reward: Real,
    pub next_state: Vec<Real>,
    pub done: bool,
}

/// SMDP-level record for the master policy: the option `omega` ran from
/// `state` for `steps` env steps and collected the cost-penalized reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterTransition {
    pub state: Vec<Real>,
    pub option: usize,
    pub reward: Real,
    pub next_state: Vec<Real>,
    pub done: bool,
}

/// Fixed-capacity FIFO ring buffer with uniform sampling (with replacement).
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    cursor: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends an item, evicting the oldest one once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Draws `batch_size` items i.i.d. uniformly from the filled region.
    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Result<Vec<T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..batch_size)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect())
    }

    /// Items in insertion order, oldest first.
    pub fn iter_fifo(&self) -> impl Iterator<Item = &T> {
        self.items[self.cursor..].iter().chain(self.items[..self.cursor].iter())
    }
}

/// One step of a goal-conditioned episode. States handed to the policies are
/// the observation concatenated with the desired goal; this record keeps the
/// pieces separate so the goal can be swapped during relabeling.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalStep {
    pub observation: Vec<Real>,
    pub action: Vec<Real>,
    pub next_observation: Vec<Real>,
    /// Goal achieved after this step, i.e. the goal-extraction of the next state.
    pub achieved_goal: Vec<Real>,
    pub desired_goal: Vec<Real>,
    pub done: bool,
}

/// An ordered goal-conditioned episode, the unit hindsight relabeling works on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GoalEpisode {
    pub steps: Vec<GoalStep>,
}

impl GoalEpisode {
    pub fn push(&mut self, step: GoalStep) {
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn flatten(step: &GoalStep, goal: &[Real], reward: Real) -> Transition {
    let mut state = step.observation.clone();
    state.extend_from_slice(goal);
    let mut next_state = step.next_observation.clone();
    next_state.extend_from_slice(goal);
    Transition {
        state,
        action: step.action.clone(),
        reward,
        next_state,
        done: step.done,
    }
}

/// Hindsight relabeling with the "future" strategy: each step yields the
/// original transition plus `k` copies whose desired goal is the achieved
/// goal of a uniformly drawn step `t' >= t` of the same episode, with the
/// reward recomputed by `reward_fn(achieved, desired)`.
pub fn her_relabel(
    episode: &GoalEpisode,
    k: usize,
    rng: &mut impl Rng,
    reward_fn: impl Fn(&[Real], &[Real]) -> Real,
) -> Vec<Transition> {
    let n = episode.steps.len();
    let mut out = Vec::with_capacity(n * (1 + k));
    for (t, step) in episode.steps.iter().enumerate() {
        let original_reward = reward_fn(&step.achieved_goal, &step.desired_goal);
        out.push(flatten(step, &step.desired_goal, original_reward));
        for _ in 0..k {
            let future = rng.random_range(t..n);
            let pseudo_goal = &episode.steps[future].achieved_goal;
            let reward = reward_fn(&step.achieved_goal, pseudo_goal);
            out.push(flatten(step, pseudo_goal, reward));
        }
    }
    out
}
