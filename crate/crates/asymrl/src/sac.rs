//! Soft actor-critic for continuous actions: a tanh-squashed Gaussian actor,
//! twin Q critics with Polyak-averaged targets, and a learned entropy
//! coefficient tuned toward a fixed target entropy.
//!
//! The actor net outputs `2 * action_dim` values per state: the Gaussian
//! means followed by raw log standard deviations (clamped before use).
//! Critics take `state || action` and output one value. All gradients are
//! derived by hand against the reparameterized sample `a = tanh(mu + sigma z)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::{adam_step, AdamParams, NetRecord, ScalarAdam};
use crate::replay::Transition;
use crate::{AdamState, Error, GradBuffer, MlpNet, Real, Result};

pub const LOG_STD_MIN: Real = -20.0;
pub const LOG_STD_MAX: Real = 2.0;
/// Numerical floor inside the tanh change-of-variables correction.
pub const TANH_EPS: Real = 1e-6;

const LN_2PI: Real = 1.8378770664093453;

/// A reparameterized squashed-Gaussian draw.
#[derive(Clone, Debug)]
pub struct SquashedSample {
    /// Pre-squash Gaussian sample `u = mu + sigma * z`.
    pub pre_squash: Vec<Real>,
    /// `tanh(u)`, every component in (-1, 1).
    pub action: Vec<Real>,
    pub log_prob: Real,
}

/// Log density of the squashed sample: Gaussian log density of `u` minus the
/// tanh volume correction per dimension.
pub fn squashed_log_prob(mu: &[Real], sigma: &[Real], u: &[Real]) -> Real {
    let mut lp = 0.0;
    for i in 0..mu.len() {
        let z = (u[i] - mu[i]) / sigma[i];
        let a = u[i].tanh();
        lp += -0.5 * z * z - sigma[i].ln() - 0.5 * LN_2PI - (1.0 - a * a + TANH_EPS).ln();
    }
    lp
}

/// The critic regression target:
/// `y = r + gamma (1 - d) (min_i Q_target_i(s', a') - alpha log pi(a'|s'))`.
pub fn sac_target(
    reward: Real,
    done: bool,
    gamma: Real,
    alpha: Real,
    q_min: Real,
    log_pi: Real,
) -> Real {
    reward + gamma * (1.0 - Real::from(u8::from(done))) * (q_min - alpha * log_pi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacHyperParams {
    pub lr: Real,
    pub gamma: Real,
    pub tau: Real,
}

impl Default for SacHyperParams {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SacAgent {
    state_dim: usize,
    action_dim: usize,
    actor: MlpNet,
    q1: MlpNet,
    q2: MlpNet,
    q1_target: MlpNet,
    q2_target: MlpNet,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    log_alpha: Real,
    alpha_opt: ScalarAdam<Real>,
    target_entropy: Real,
    hp: SacHyperParams,
    critic_updates: u64,
    actor_updates: u64,
}

impl SacAgent {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        n_units: usize,
        hp: SacHyperParams,
        rng: &mut impl Rng,
    ) -> Self {
        let actor = MlpNet::glorot([state_dim, n_units, n_units, 2 * action_dim], rng);
        let q1 = MlpNet::glorot([state_dim + action_dim, n_units, n_units, 1], rng);
        let q2 = MlpNet::glorot([state_dim + action_dim, n_units, n_units, 1], rng);
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        let adam = AdamParams::with_lr(hp.lr);
        Self {
            state_dim,
            action_dim,
            actor_opt: AdamState::new(&actor, adam),
            q1_opt: AdamState::new(&q1, adam),
            q2_opt: AdamState::new(&q2, adam),
            actor,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha: 0.0,
            alpha_opt: ScalarAdam::new(adam),
            target_entropy: -(action_dim as Real),
            hp,
            critic_updates: 0,
            actor_updates: 0,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn alpha(&self) -> Real {
        self.log_alpha.exp()
    }

    pub fn actor(&self) -> &MlpNet {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut MlpNet {
        &mut self.actor
    }

    pub fn critic_update_count(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_update_count(&self) -> u64 {
        self.actor_updates
    }

    pub fn actor_flops(&self) -> u64 {
        crate::nn::flops_per_inference(self.actor.layer_sizes())
    }

    /// Scripted-critic constructor for tests: nets are zeroed so critics
    /// output their final bias and the actor emits mean 0, log-std 0.
    pub fn zeroed(state_dim: usize, action_dim: usize, n_units: usize, hp: SacHyperParams) -> Self {
        let actor = MlpNet::zeros([state_dim, n_units, n_units, 2 * action_dim]);
        let q1 = MlpNet::zeros([state_dim + action_dim, n_units, n_units, 1]);
        let q2 = q1.clone();
        let adam = AdamParams::with_lr(hp.lr);
        Self {
            state_dim,
            action_dim,
            actor_opt: AdamState::new(&actor, adam),
            q1_opt: AdamState::new(&q1, adam),
            q2_opt: AdamState::new(&q2, adam),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            log_alpha: 0.0,
            alpha_opt: ScalarAdam::new(adam),
            target_entropy: -(action_dim as Real),
            hp,
            critic_updates: 0,
            actor_updates: 0,
        }
    }

    pub fn set_log_alpha(&mut self, log_alpha: Real) {
        self.log_alpha = log_alpha;
    }

    pub fn q1_mut(&mut self) -> &mut MlpNet {
        &mut self.q1
    }

    pub fn q2_mut(&mut self) -> &mut MlpNet {
        &mut self.q2
    }

    pub fn q1_target(&self) -> &MlpNet {
        &self.q1_target
    }

    pub fn q2_target(&self) -> &MlpNet {
        &self.q2_target
    }

    pub fn q1_target_mut(&mut self) -> &mut MlpNet {
        &mut self.q1_target
    }

    pub fn q2_target_mut(&mut self) -> &mut MlpNet {
        &mut self.q2_target
    }

    fn split_heads(&self, raw: &Array2<Real>) -> (Array2<Real>, Array2<Real>, Array2<Real>) {
        let a = self.action_dim;
        let mu = raw.slice(ndarray::s![.., ..a]).to_owned();
        let log_std_raw = raw.slice(ndarray::s![.., a..]).to_owned();
        let log_std = log_std_raw.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mu, log_std_raw, log_std)
    }

    /// Draws one action. Stochastic mode reparameterizes `a = tanh(mu + sigma z)`;
    /// deterministic mode returns `tanh(mu)` for evaluation.
    pub fn sample_action(
        &self,
        state: &[Real],
        rng: &mut impl Rng,
        deterministic: bool,
    ) -> SquashedSample {
        let raw = self.actor.forward(state);
        let a = self.action_dim;
        let mut mu = vec![0.0; a];
        let mut sigma = vec![0.0; a];
        for i in 0..a {
            mu[i] = raw[i];
            sigma[i] = raw[a + i].clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
        }
        let u: Vec<Real> = if deterministic {
            mu.clone()
        } else {
            (0..a)
                .map(|i| {
                    let z: Real = rng.sample(StandardNormal);
                    mu[i] + sigma[i] * z
                })
                .collect()
        };
        let action: Vec<Real> = u.iter().map(|v| v.tanh()).collect();
        let log_prob = squashed_log_prob(&mu, &sigma, &u);
        SquashedSample {
            pre_squash: u,
            action,
            log_prob,
        }
    }

    /// Single-sample critic target with a fresh action drawn at `next_state`.
    pub fn critic_target(
        &self,
        reward: Real,
        next_state: &[Real],
        done: bool,
        rng: &mut impl Rng,
    ) -> Real {
        let sample = self.sample_action(next_state, rng, false);
        let mut input = next_state.to_vec();
        input.extend_from_slice(&sample.action);
        let q1 = self.q1_target.forward(&input)[0];
        let q2 = self.q2_target.forward(&input)[0];
        sac_target(
            reward,
            done,
            self.hp.gamma,
            self.alpha(),
            q1.min(q2),
            sample.log_prob,
        )
    }

    fn stack_states(batch: &[Transition], state_dim: usize) -> Array2<Real> {
        let mut out = Array2::zeros((batch.len(), state_dim));
        for (i, t) in batch.iter().enumerate() {
            out.row_mut(i).assign(&Array1::from_iter(t.state.iter().copied()));
        }
        out
    }

    fn gaussian_noise(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<Real> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    /// Reparameterized policy evaluation on a batch with fixed noise.
    /// Returns actions, per-sample log probs, and the pieces the gradient needs.
    fn policy_eval(
        &self,
        states: ArrayView2<Real>,
        noise: &Array2<Real>,
    ) -> (
        Array2<Real>,
        Array1<Real>,
        crate::nn::ForwardCache<Real>,
        Array2<Real>,
        Array2<Real>,
    ) {
        let (raw, cache) = self.actor.forward_batch(states);
        let (mu, log_std_raw, log_std) = self.split_heads(&raw);
        let sigma = log_std.mapv(Real::exp);
        let u = &mu + &(&sigma * noise);
        let actions = u.mapv(Real::tanh);
        let b = states.nrows();
        let mut log_probs = Array1::zeros(b);
        for i in 0..b {
            let mut lp = 0.0;
            for j in 0..self.action_dim {
                let z = noise[[i, j]];
                let a = actions[[i, j]];
                lp += -0.5 * z * z - log_std[[i, j]] - 0.5 * LN_2PI
                    - (1.0 - a * a + TANH_EPS).ln();
            }
            log_probs[i] = lp;
        }
        (actions, log_probs, cache, log_std_raw, sigma)
    }

    fn critic_inputs(states: ArrayView2<Real>, actions: &Array2<Real>) -> Array2<Real> {
        ndarray::concatenate(Axis(1), &[states, actions.view()]).expect("row counts match")
    }

    /// One Adam step on each critic toward the shared target. Target networks
    /// are untouched here. Returns the two mean-squared-error loss values.
    pub fn update_critics(&mut self, batch: &[Transition], rng: &mut impl Rng) -> (Real, Real) {
        assert!(!batch.is_empty(), "empty critic batch");
        let b = batch.len();
        let states = Self::stack_states(batch, self.state_dim);
        let mut actions = Array2::zeros((b, self.action_dim));
        let mut next_states = Array2::zeros((b, self.state_dim));
        for (i, t) in batch.iter().enumerate() {
            actions.row_mut(i).assign(&Array1::from_iter(t.action.iter().copied()));
            next_states
                .row_mut(i)
                .assign(&Array1::from_iter(t.next_state.iter().copied()));
        }

        let noise = Self::gaussian_noise(b, self.action_dim, rng);
        let (next_actions, next_log_probs, _, _, _) = self.policy_eval(next_states.view(), &noise);
        let next_inputs = Self::critic_inputs(next_states.view(), &next_actions);
        let (q1t, _) = self.q1_target.forward_batch(next_inputs.view());
        let (q2t, _) = self.q2_target.forward_batch(next_inputs.view());
        let alpha = self.alpha();
        let targets: Vec<Real> = (0..b)
            .map(|i| {
                sac_target(
                    batch[i].reward,
                    batch[i].done,
                    self.hp.gamma,
                    alpha,
                    q1t[[i, 0]].min(q2t[[i, 0]]),
                    next_log_probs[i],
                )
            })
            .collect();

        let inputs = Self::critic_inputs(states.view(), &actions);
        let mut losses = [0.0; 2];
        for (k, (critic, opt)) in [
            (&mut self.q1, &mut self.q1_opt),
            (&mut self.q2, &mut self.q2_opt),
        ]
        .into_iter()
        .enumerate()
        {
            let (q, cache) = critic.forward_batch(inputs.view());
            let mut out_grads = Array2::zeros((b, 1));
            let mut loss = 0.0;
            for i in 0..b {
                let resid = q[[i, 0]] - targets[i];
                loss += resid * resid;
                out_grads[[i, 0]] = 2.0 * resid / b as Real;
            }
            losses[k] = loss / b as Real;
            let (grads, _) = critic.backward_batch(&cache, out_grads.view());
            adam_step(critic, &grads, opt);
        }
        self.critic_updates += 1;
        (losses[0], losses[1])
    }

    /// The policy objective `E[min_i Q_i(s, a(s)) - alpha log pi(a(s)|s)]`
    /// evaluated with fixed reparameterization noise. Exposed so gradient
    /// checks can difference it directly.
    pub fn actor_objective(&self, states: ArrayView2<Real>, noise: &Array2<Real>) -> Real {
        let (actions, log_probs, _, _, _) = self.policy_eval(states, noise);
        let inputs = Self::critic_inputs(states, &actions);
        let (q1, _) = self.q1.forward_batch(inputs.view());
        let (q2, _) = self.q2.forward_batch(inputs.view());
        let alpha = self.alpha();
        let b = states.nrows();
        (0..b)
            .map(|i| q1[[i, 0]].min(q2[[i, 0]]) - alpha * log_probs[i])
            .sum::<Real>()
            / b as Real
    }

    /// Gradient of the negated policy objective w.r.t. actor parameters,
    /// with the loss value and the batch-mean log prob.
    pub fn actor_loss_gradient(
        &self,
        states: ArrayView2<Real>,
        noise: &Array2<Real>,
    ) -> (GradBuffer, Real, Real) {
        let b = states.nrows();
        let alpha = self.alpha();
        let (actions, log_probs, cache, log_std_raw, sigma) = self.policy_eval(states, noise);
        let inputs = Self::critic_inputs(states, &actions);
        let (q1, c1) = self.q1.forward_batch(inputs.view());
        let (q2, c2) = self.q2.forward_batch(inputs.view());

        let inv_b = 1.0 / b as Real;
        let mut loss = 0.0;
        let mut og1 = Array2::zeros((b, 1));
        let mut og2 = Array2::zeros((b, 1));
        for i in 0..b {
            let (v1, v2) = (q1[[i, 0]], q2[[i, 0]]);
            loss += alpha * log_probs[i] - v1.min(v2);
            if v1 <= v2 {
                og1[[i, 0]] = -inv_b;
            } else {
                og2[[i, 0]] = -inv_b;
            }
        }
        loss *= inv_b;

        let (_, ig1) = self.q1.backward_batch(&c1, og1.view());
        let (_, ig2) = self.q2.backward_batch(&c2, og2.view());

        let s = self.state_dim;
        let a = self.action_dim;
        let mut out_grads = Array2::zeros((b, 2 * a));
        for i in 0..b {
            for j in 0..a {
                let act = actions[[i, j]];
                let one_m_a2 = 1.0 - act * act;
                // dLoss/da through the selected critic's input gradient.
                let g_act = ig1[[i, s + j]] + ig2[[i, s + j]];
                let dlogpi_du = 2.0 * act * one_m_a2 / (one_m_a2 + TANH_EPS);
                let du = alpha * inv_b * dlogpi_du + g_act * one_m_a2;
                out_grads[[i, j]] = du;
                let raw = log_std_raw[[i, j]];
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                    out_grads[[i, a + j]] =
                        -alpha * inv_b + du * sigma[[i, j]] * noise[[i, j]];
                }
            }
        }
        let (grads, _) = self.actor.backward_batch(&cache, out_grads.view());
        let mean_log_pi = log_probs.sum() * inv_b;
        (grads, loss, mean_log_pi)
    }

    /// One Adam step of the actor toward the policy objective and one step of
    /// the entropy coefficient toward the target entropy. Returns
    /// `(actor_loss, alpha_loss)`.
    pub fn update_actor_and_alpha(
        &mut self,
        batch: &[Transition],
        rng: &mut impl Rng,
    ) -> (Real, Real) {
        assert!(!batch.is_empty(), "empty actor batch");
        let states = Self::stack_states(batch, self.state_dim);
        let noise = Self::gaussian_noise(batch.len(), self.action_dim, rng);
        let (grads, actor_loss, mean_log_pi) = self.actor_loss_gradient(states.view(), &noise);
        adam_step(&mut self.actor, &grads, &mut self.actor_opt);

        let alpha_err = mean_log_pi + self.target_entropy;
        let alpha_loss = -self.log_alpha * alpha_err;
        self.alpha_opt.step(&mut self.log_alpha, -alpha_err);
        self.actor_updates += 1;
        (actor_loss, alpha_loss)
    }

    /// Polyak step of both target critics toward their online networks.
    pub fn soft_update_targets(&mut self) {
        self.q1_target.soft_update_from(&self.q1, self.hp.tau);
        self.q2_target.soft_update_from(&self.q2, self.hp.tau);
    }

    pub fn to_checkpoint(&self) -> SacCheckpoint {
        SacCheckpoint {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            gamma: self.hp.gamma,
            tau: self.hp.tau,
            lr: self.hp.lr,
            target_entropy: self.target_entropy,
            log_alpha: self.log_alpha,
            actor: self.actor.to_record(),
            q1: self.q1.to_record(),
            q2: self.q2.to_record(),
            q1_target: self.q1_target.to_record(),
            q2_target: self.q2_target.to_record(),
            actor_opt: self.actor_opt.clone(),
            q1_opt: self.q1_opt.clone(),
            q2_opt: self.q2_opt.clone(),
            alpha_opt: self.alpha_opt.clone(),
            critic_updates: self.critic_updates,
            actor_updates: self.actor_updates,
        }
    }

    pub fn from_checkpoint(c: &SacCheckpoint) -> Result<Self> {
        let actor = MlpNet::from_record(&c.actor)?;
        if actor.output_dim() != 2 * c.action_dim || actor.input_dim() != c.state_dim {
            return Err(Error::Checkpoint(
                "actor shape inconsistent with recorded dimensions".into(),
            ));
        }
        Ok(Self {
            state_dim: c.state_dim,
            action_dim: c.action_dim,
            actor,
            q1: MlpNet::from_record(&c.q1)?,
            q2: MlpNet::from_record(&c.q2)?,
            q1_target: MlpNet::from_record(&c.q1_target)?,
            q2_target: MlpNet::from_record(&c.q2_target)?,
            actor_opt: c.actor_opt.clone(),
            q1_opt: c.q1_opt.clone(),
            q2_opt: c.q2_opt.clone(),
            log_alpha: c.log_alpha,
            alpha_opt: c.alpha_opt.clone(),
            target_entropy: c.target_entropy,
            hp: SacHyperParams {
                lr: c.lr,
                gamma: c.gamma,
                tau: c.tau,
            },
            critic_updates: c.critic_updates,
            actor_updates: c.actor_updates,
        })
    }
}

/// On-disk form of a [`SacAgent`]: every network in the shared parameter
/// format plus optimizer state and agent metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SacCheckpoint {
    pub state_dim: usize,
    pub action_dim: usize,
    pub gamma: Real,
    pub tau: Real,
    pub lr: Real,
    pub target_entropy: Real,
    pub log_alpha: Real,
    pub actor: NetRecord<Real>,
    pub q1: NetRecord<Real>,
    pub q2: NetRecord<Real>,
    pub q1_target: NetRecord<Real>,
    pub q2_target: NetRecord<Real>,
    pub actor_opt: AdamState,
    pub q1_opt: AdamState,
    pub q2_opt: AdamState,
    pub alpha_opt: ScalarAdam<Real>,
    pub critic_updates: u64,
    pub actor_updates: u64,
}
