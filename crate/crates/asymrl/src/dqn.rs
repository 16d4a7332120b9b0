//! The master policy: a small Q-network over the discrete sub-policy set
//! with double-Q targets, periodic hard target sync, linear epsilon-greedy
//! exploration during training, and Boltzmann selection at evaluation.

use ndarray::{Array1, Array2};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::nn::{adam_step, AdamParams, NetRecord};
use crate::replay::MasterTransition;
use crate::{AdamState, MlpNet, Real, Result};

/// Linear epsilon decay: 1.0 at step 0 down to `final_epsilon` after
/// `fraction` of the total training steps, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub total_steps: u64,
    pub fraction: Real,
    pub final_epsilon: Real,
}

impl EpsilonSchedule {
    pub fn new(total_steps: u64, fraction: Real, final_epsilon: Real) -> Self {
        assert!((0.0..=1.0).contains(&fraction));
        assert!((0.0..=1.0).contains(&final_epsilon));
        Self {
            total_steps,
            fraction,
            final_epsilon,
        }
    }

    pub fn value(&self, t: u64) -> Real {
        let decay_steps = self.fraction * self.total_steps as Real;
        if decay_steps <= 0.0 {
            return self.final_epsilon;
        }
        let progress = t as Real / decay_steps;
        if progress >= 1.0 {
            return self.final_epsilon;
        }
        1.0 + progress * (self.final_epsilon - 1.0)
    }
}

/// Softmax of `values / temperature`, shifted for stability.
pub fn boltzmann_probabilities(values: &[Real], temperature: Real) -> Vec<Real> {
    assert!(
        temperature > 0.0,
        "Boltzmann temperature must be positive, got {temperature}"
    );
    let max = values.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = values.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let sum: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(values: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnHyperParams {
    pub lr: Real,
    pub gamma: Real,
    pub double_q: bool,
    pub target_sync_interval: u64,
}

impl Default for DqnHyperParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            gamma: 0.99,
            double_q: true,
            target_sync_interval: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DqnAgent {
    q_net: MlpNet,
    q_target: MlpNet,
    opt: AdamState,
    pub epsilon_schedule: EpsilonSchedule,
    hp: DqnHyperParams,
    num_options: usize,
    update_count: u64,
}

impl DqnAgent {
    pub fn new(
        state_dim: usize,
        num_options: usize,
        n_units: usize,
        epsilon_schedule: EpsilonSchedule,
        hp: DqnHyperParams,
        rng: &mut impl Rng,
    ) -> Self {
        let q_net = MlpNet::glorot([state_dim, n_units, n_units, num_options], rng);
        let opt = AdamState::new(&q_net, AdamParams::with_lr(hp.lr));
        Self {
            q_target: q_net.clone(),
            q_net,
            opt,
            epsilon_schedule,
            hp,
            num_options,
            update_count: 0,
        }
    }

    /// Scripted-value constructor for tests: zero weights, so Q-values equal
    /// the output biases everywhere.
    pub fn zeroed(
        state_dim: usize,
        num_options: usize,
        n_units: usize,
        epsilon_schedule: EpsilonSchedule,
        hp: DqnHyperParams,
    ) -> Self {
        let q_net = MlpNet::zeros([state_dim, n_units, n_units, num_options]);
        let opt = AdamState::new(&q_net, AdamParams::with_lr(hp.lr));
        Self {
            q_target: q_net.clone(),
            q_net,
            opt,
            epsilon_schedule,
            hp,
            num_options,
            update_count: 0,
        }
    }

    pub fn num_options(&self) -> usize {
        self.num_options
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn q_values(&self, state: &[Real]) -> Vec<Real> {
        self.q_net.forward(state).to_vec()
    }

    pub fn q_net(&self) -> &MlpNet {
        &self.q_net
    }

    pub fn q_net_mut(&mut self) -> &mut MlpNet {
        &mut self.q_net
    }

    pub fn q_target(&self) -> &MlpNet {
        &self.q_target
    }

    pub fn q_target_mut(&mut self) -> &mut MlpNet {
        &mut self.q_target
    }

    /// Epsilon-greedy selection on the training schedule; greedy ties break
    /// toward the lowest index.
    pub fn select_option_train(&self, state: &[Real], t: u64, rng: &mut impl Rng) -> usize {
        let eps = self.epsilon_schedule.value(t);
        if rng.random_range(0.0..1.0) < eps {
            rng.random_range(0..self.num_options)
        } else {
            argmax(&self.q_values(state))
        }
    }

    /// Greedy selection (evaluation default).
    pub fn select_option_greedy(&self, state: &[Real]) -> usize {
        argmax(&self.q_values(state))
    }

    /// Samples an option from the softmax of Q-values at the given
    /// temperature (evaluation-time exploration).
    pub fn select_option_boltzmann(
        &self,
        state: &[Real],
        temperature: Real,
        rng: &mut impl Rng,
    ) -> usize {
        let probs = boltzmann_probabilities(&self.q_values(state), temperature);
        let draw = rng.random_range(0.0..1.0);
        let mut cumulative = 0.0;
        for (i, p) in probs.iter().enumerate() {
            cumulative += p;
            if draw < cumulative {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Regression target for one master transition. With double-Q the online
    /// net picks the argmax and the target net values it; otherwise it is the
    /// plain max over the target net.
    pub fn dqn_target(&self, reward: Real, next_state: &[Real], done: bool) -> Real {
        if done {
            return reward;
        }
        let target_q = self.q_target.forward(next_state);
        let value = if self.hp.double_q {
            let online_q = self.q_values(next_state);
            target_q[argmax(&online_q)]
        } else {
            target_q.iter().copied().fold(Real::NEG_INFINITY, Real::max)
        };
        reward + self.hp.gamma * value
    }

    /// One Adam step on the mean squared error between `Q(s)[omega]` and the
    /// target; hard-copies the target net every `target_sync_interval`
    /// updates. Returns the loss.
    pub fn update_master(&mut self, batch: &[MasterTransition]) -> Real {
        assert!(!batch.is_empty(), "empty master batch");
        let b = batch.len();
        let targets: Vec<Real> = batch
            .iter()
            .map(|t| self.dqn_target(t.reward, &t.next_state, t.done))
            .collect();

        let state_dim = self.q_net.input_dim();
        let mut states = Array2::zeros((b, state_dim));
        for (i, t) in batch.iter().enumerate() {
            states.row_mut(i).assign(&Array1::from_iter(t.state.iter().copied()));
        }
        let (q, cache) = self.q_net.forward_batch(states.view());
        let mut out_grads = Array2::zeros((b, self.num_options));
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let resid = q[[i, t.option]] - targets[i];
            loss += resid * resid;
            out_grads[[i, t.option]] = 2.0 * resid / b as Real;
        }
        loss /= b as Real;
        let (grads, _) = self.q_net.backward_batch(&cache, out_grads.view());
        adam_step(&mut self.q_net, &grads, &mut self.opt);

        self.update_count += 1;
        if self.update_count % self.hp.target_sync_interval == 0 {
            self.q_target = self.q_net.clone();
        }
        loss
    }

    pub fn to_checkpoint(&self) -> DqnCheckpoint {
        DqnCheckpoint {
            num_options: self.num_options,
            epsilon_schedule: self.epsilon_schedule,
            hp: self.hp,
            update_count: self.update_count,
            q_net: self.q_net.to_record(),
            q_target: self.q_target.to_record(),
            opt: self.opt.clone(),
        }
    }

    pub fn from_checkpoint(c: &DqnCheckpoint) -> Result<Self> {
        Ok(Self {
            q_net: MlpNet::from_record(&c.q_net)?,
            q_target: MlpNet::from_record(&c.q_target)?,
            opt: c.opt.clone(),
            epsilon_schedule: c.epsilon_schedule,
            hp: c.hp,
            num_options: c.num_options,
            update_count: c.update_count,
        })
    }
}

/// On-disk form of a [`DqnAgent`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DqnCheckpoint {
    pub num_options: usize,
    pub epsilon_schedule: EpsilonSchedule,
    pub hp: DqnHyperParams,
    pub update_count: u64,
    pub q_net: NetRecord<Real>,
    pub q_target: NetRecord<Real>,
    pub opt: AdamState,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn schedule() -> EpsilonSchedule {
        EpsilonSchedule::new(10_000, 0.1, 0.02)
    }

    fn scripted(q_values: &[Real]) -> DqnAgent {
        let mut agent = DqnAgent::zeroed(2, q_values.len(), 4, schedule(), DqnHyperParams::default());
        for (i, &v) in q_values.iter().enumerate() {
            agent.q_net_mut().bias_mut(2)[i] = v;
        }
        agent
    }

    #[test]
    fn greedy_picks_the_argmax() {
        let agent = scripted(&[1.0, 2.0]);
        assert_eq!(agent.select_option_greedy(&[0.0, 0.0]), 1);
    }

    #[test]
    fn greedy_ties_break_to_the_lowest_index() {
        let agent = scripted(&[3.0, 3.0]);
        assert_eq!(agent.select_option_greedy(&[0.0, 0.0]), 0);
    }

    #[test]
    fn exploit_path_when_epsilon_is_zero() {
        let mut agent = scripted(&[1.0, 2.0]);
        agent.epsilon_schedule = EpsilonSchedule::new(10, 0.1, 0.0);
        let mut r = rng(0);
        for _ in 0..100 {
            assert_eq!(agent.select_option_train(&[0.0, 0.0], 1_000, &mut r), 1);
        }
    }

    #[test]
    fn full_exploration_is_uniform_chi_squared() {
        let agent = scripted(&[0.0, 100.0]);
        // epsilon(0) = 1.0: selections ignore Q entirely.
        let mut r = rng(1);
        let draws = 10_000;
        let mut counts = [0usize; 2];
        for _ in 0..draws {
            counts[agent.select_option_train(&[0.0, 0.0], 0, &mut r)] += 1;
        }
        let expected = draws as f64 / 2.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // chi^2 critical value for 1 degree of freedom at p = 0.01.
        assert!(stat < 6.635, "chi-squared statistic {stat}");
    }

    #[test]
    fn epsilon_schedule_endpoints_and_linearity() {
        let s = schedule();
        assert_eq!(s.value(0), 1.0);
        assert_abs_diff_eq!(s.value(500), 0.51, epsilon = 1e-12);
        assert_eq!(s.value(1_000), 0.02);
        assert_eq!(s.value(9_999), 0.02);
    }

    #[test]
    fn epsilon_is_non_increasing() {
        let s = schedule();
        let mut last = s.value(0);
        for t in 1..2_000 {
            let v = s.value(t);
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn boltzmann_equal_values_are_fifty_fifty() {
        let p = boltzmann_probabilities(&[1.0, 1.0], 3.7);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn boltzmann_ln2_example() {
        let p = boltzmann_probabilities(&[2.0f64.ln(), 0.0], 1.0);
        assert_abs_diff_eq!(p[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn boltzmann_is_shift_invariant() {
        let a = boltzmann_probabilities(&[0.3, -1.2, 2.5], 0.7);
        let b = boltzmann_probabilities(&[100.3, 98.8, 102.5], 0.7);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn low_temperature_concentrates_on_the_argmax() {
        let agent = scripted(&[1.0, 0.0]);
        let mut r = rng(2);
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| agent.select_option_boltzmann(&[0.0, 0.0], 0.01, &mut r) == 0)
            .count();
        assert!(hits as f64 / draws as f64 >= 0.999);
    }

    #[test]
    #[should_panic(expected = "temperature must be positive")]
    fn non_positive_temperature_is_rejected() {
        boltzmann_probabilities(&[1.0, 2.0], 0.0);
    }

    #[test]
    fn double_q_target_plug_in_example() {
        // online Q(s') = [1, 2] -> a* = 1; target Q(s') = [5, 3]; r = 1,
        // gamma = 0.99, d = 0 -> y = 1 + 0.99 * 3 = 3.97.
        let mut agent = scripted(&[1.0, 2.0]);
        agent.q_target_mut().bias_mut(2)[0] = 5.0;
        agent.q_target_mut().bias_mut(2)[1] = 3.0;
        let y = agent.dqn_target(1.0, &[0.0, 0.0], false);
        assert_abs_diff_eq!(y, 3.97, epsilon = 1e-12);
    }

    #[test]
    fn terminal_target_is_the_reward() {
        let agent = scripted(&[10.0, 20.0]);
        assert_eq!(agent.dqn_target(-1.5, &[0.0, 0.0], true), -1.5);
    }

    #[test]
    fn identical_nets_reduce_double_q_to_vanilla_max() {
        let mut double = scripted(&[4.0, 7.0]);
        double.q_target_mut().bias_mut(2)[0] = 4.0;
        double.q_target_mut().bias_mut(2)[1] = 7.0;
        let mut vanilla = scripted(&[4.0, 7.0]);
        vanilla.q_target_mut().bias_mut(2)[0] = 4.0;
        vanilla.q_target_mut().bias_mut(2)[1] = 7.0;
        vanilla.hp.double_q = false;
        let y_d = double.dqn_target(0.5, &[0.0, 0.0], false);
        let y_v = vanilla.dqn_target(0.5, &[0.0, 0.0], false);
        assert_eq!(y_d, y_v);
        assert_abs_diff_eq!(y_d, 0.5 + 0.99 * 7.0, epsilon = 1e-12);
    }

    fn master_transition(option: usize, reward: Real, done: bool) -> MasterTransition {
        MasterTransition {
            state: vec![0.1, -0.2],
            option,
            reward,
            next_state: vec![0.3, 0.4],
            done,
        }
    }

    #[test]
    fn update_at_the_fixed_point_changes_nothing() {
        // Scripted Q == y: done transition with reward equal to the bias.
        let mut agent = scripted(&[0.7, 0.2]);
        let before = agent.q_net().clone();
        let loss = agent.update_master(&[master_transition(0, 0.7, true)]);
        assert_eq!(loss, 0.0);
        assert_eq!(agent.q_net(), &before);
    }

    #[test]
    fn loss_matches_hand_computed_mean_of_squared_residuals() {
        let mut agent = scripted(&[0.0, 0.0]);
        // Terminal transitions: targets are the rewards, current Q is 0.
        let batch = vec![master_transition(0, 1.0, true), master_transition(1, 3.0, true)];
        let loss = agent.update_master(&batch);
        assert_abs_diff_eq!(loss, (1.0 + 9.0) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn target_syncs_bit_for_bit_every_500_updates() {
        let mut agent = DqnAgent::new(2, 2, 4, schedule(), DqnHyperParams::default(), &mut rng(3));
        let batch = vec![master_transition(0, 1.0, false), master_transition(1, -1.0, false)];
        for i in 1..=500u64 {
            agent.update_master(&batch);
            if i < 500 {
                assert_ne!(agent.q_net(), agent.q_target());
            }
        }
        assert_eq!(agent.q_net(), agent.q_target());
        agent.update_master(&batch);
        assert_ne!(agent.q_net(), agent.q_target());
    }

    #[test]
    fn only_the_taken_option_head_receives_gradient() {
        // After one update on a single transition, the output-layer row and
        // bias of the untaken option are bit-identical (zero gradient leaves
        // Adam moments at zero).
        let mut agent = DqnAgent::new(2, 2, 8, schedule(), DqnHyperParams::default(), &mut rng(4));
        let before = agent.q_net().clone();
        agent.update_master(&[master_transition(0, 2.0, true)]);
        let after = agent.q_net();
        assert_eq!(after.weight(2).row(1), before.weight(2).row(1));
        assert_eq!(after.bias(2)[1], before.bias(2)[1]);
        assert_ne!(after.weight(2).row(0), before.weight(2).row(0));
    }

    #[test]
    fn argmax_is_invariant_to_positive_affine_rescaling() {
        let values = [0.4, -0.3, 1.7, 1.1];
        let scaled: Vec<Real> = values.iter().map(|v| 3.5 * v + 10.0).collect();
        assert_eq!(argmax(&values), argmax(&scaled));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut agent = DqnAgent::new(2, 2, 4, schedule(), DqnHyperParams::default(), &mut rng(5));
        let batch = vec![master_transition(0, 1.0, false)];
        for _ in 0..7 {
            agent.update_master(&batch);
        }
        let json = serde_json::to_string(&agent.to_checkpoint()).unwrap();
        let restored = DqnAgent::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(restored.update_count(), 7);
        assert_eq!(restored.q_net(), agent.q_net());
        assert_eq!(
            restored.select_option_greedy(&[0.5, 0.5]),
            agent.select_option_greedy(&[0.5, 0.5])
        );
    }
}
