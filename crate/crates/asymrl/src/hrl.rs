//! The cost-aware SMDP training loop: the master picks a sub-policy every
//! `n_omega` steps, the selected sub-policy acts, both levels' transitions
//! are assembled and stored, and all agents are updated. Also hosts the
//! evaluation rollout and the flat (single-policy) training loop used by the
//! baselines.

use rand::{Rng, RngExt};
use rand_chacha::ChaCha12Rng;

use crate::cost::{CostModel, EpisodeMetrics};
use crate::dqn::DqnAgent;
use crate::envs::Environment;
use crate::replay::{her_relabel, GoalEpisode, GoalStep, MasterTransition, ReplayBuffer, Transition};
use crate::sac::SacAgent;
use crate::{Error, Real, Result};

/// Which sub-policies take an SAC update each env step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubUpdateMode {
    /// Every sub-policy updates every step (they share experience anyway).
    Both,
    /// Only the sub-policy currently in control updates.
    ActiveOnly,
}

/// The full hierarchical system owned by one training run.
pub struct HrlSystem {
    pub master: DqnAgent,
    /// Index 0 = small, last = large. The symmetric ablation uses equal sizes.
    pub sub_policies: Vec<SacAgent>,
    /// One buffer shared by all sub-policies, or one per sub-policy when
    /// the shared-buffer ablation is off.
    pub sub_buffers: Vec<ReplayBuffer<Transition>>,
    pub master_buffer: ReplayBuffer<MasterTransition>,
    pub n_omega: usize,
    pub cost_model: CostModel,
}

impl HrlSystem {
    pub fn new(
        master: DqnAgent,
        sub_policies: Vec<SacAgent>,
        shared_buffer: bool,
        sub_buffer_capacity: usize,
        master_buffer_capacity: usize,
        n_omega: usize,
        cost_model: CostModel,
    ) -> Self {
        assert!(n_omega >= 1, "n_omega must be at least 1");
        assert_eq!(master.num_options(), sub_policies.len());
        let buffer_count = if shared_buffer { 1 } else { sub_policies.len() };
        Self {
            master,
            sub_policies,
            sub_buffers: (0..buffer_count)
                .map(|_| ReplayBuffer::new(sub_buffer_capacity))
                .collect(),
            master_buffer: ReplayBuffer::new(master_buffer_capacity),
            n_omega,
            cost_model,
        }
    }

    pub fn shared_buffer(&self) -> bool {
        self.sub_buffers.len() == 1
    }

    /// Buffer serving a given option: the shared buffer, or the option's own.
    pub fn buffer_index(&self, option: usize) -> usize {
        if self.shared_buffer() {
            0
        } else {
            option
        }
    }
}

/// Running state of the current SMDP segment.
#[derive(Clone, Debug)]
pub struct SegmentAccumulator {
    pub start_state: Vec<Real>,
    pub option: usize,
    pub reward_sum: Real,
    pub steps: usize,
}

impl SegmentAccumulator {
    fn new(start_state: Vec<Real>, option: usize) -> Self {
        Self {
            start_state,
            option,
            reward_sum: 0.0,
            steps: 0,
        }
    }
}

/// The master's segment reward: raw reward sum minus the scaled cost
/// `lambda * steps * c_omega`. Truncated final segments charge their actual
/// step count, which keeps the episode-level reward conservation exact.
pub fn assemble_master_reward(
    reward_sum: Real,
    steps: usize,
    option: usize,
    cost_model: &CostModel,
) -> Real {
    reward_sum - cost_model.lambda * steps as Real * cost_model.cost_of(option)
}

/// Named deterministic RNG streams for one run. Derived from a root seed so
/// adding a consumer never perturbs the others.
pub struct RngSet {
    pub env: ChaCha12Rng,
    pub eval_env: ChaCha12Rng,
    pub eval_policy: ChaCha12Rng,
    pub master: ChaCha12Rng,
    pub subs: Vec<ChaCha12Rng>,
    pub sampler: ChaCha12Rng,
    pub warmup: ChaCha12Rng,
    pub her: ChaCha12Rng,
}

/// Knobs of the training loop itself; agent hyperparameters live inside the
/// agents.
#[derive(Clone, Debug)]
pub struct LoopParams {
    pub t_max: u64,
    pub sac_batch_size: usize,
    /// Env steps of uniform-random actions before any SAC update.
    pub learning_starts: u64,
    pub train_freq: u64,
    pub sac_target_update_interval: u64,
    pub dqn_batch_size: usize,
    /// Master transitions required before master updates begin.
    pub master_warmup: usize,
    pub update_mode: SubUpdateMode,
    /// `Some(k)` enables hindsight relabeling with k future goals per step.
    pub her_k: Option<usize>,
    /// Env steps between evaluation snapshots; 0 disables them.
    pub eval_interval: u64,
    pub eval_episodes: usize,
}

/// One row of the training log, written at every evaluation snapshot.
#[derive(Clone, Debug)]
pub struct EvalRow {
    pub env_step: u64,
    pub eval_score_mean: Real,
    pub pct_large: Real,
    pub flops_reduction: Real,
    pub sac_small_critic_loss: Real,
    pub sac_small_actor_loss: Real,
    pub sac_large_critic_loss: Real,
    pub sac_large_actor_loss: Real,
    pub dqn_loss: Real,
    pub epsilon: Real,
}

#[derive(Clone, Debug)]
pub struct SegmentRecord {
    pub option: usize,
    pub steps: usize,
    /// Cost-penalized segment reward, exactly as stored for the master.
    pub reward: Real,
}

#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub length: usize,
    pub raw_return: Real,
    pub segments: Vec<SegmentRecord>,
    /// False only for an episode cut short by the step budget.
    pub completed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub eval_rows: Vec<EvalRow>,
    pub episodes: Vec<EpisodeRecord>,
    pub total_steps: u64,
}

#[derive(Clone, Copy, Debug, Default)]
struct LastLosses {
    sac_critic: [Real; 2],
    sac_actor: [Real; 2],
    dqn: Real,
}

fn uniform_action(dim: usize, rng: &mut impl Rng) -> Vec<Real> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn scale_action(action: &[Real], bound: Real) -> Vec<Real> {
    action.iter().map(|a| a * bound).collect()
}

fn check_finite(label: &str, t: u64, values: &[Real]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!(
            "non-finite {label} loss at env step {t}: {values:?}"
        )));
    }
    Ok(())
}

/// Runs the full cost-aware training loop until `t_max` env steps.
pub fn run_training(
    system: &mut HrlSystem,
    env: &mut dyn Environment,
    eval_env: &mut dyn Environment,
    params: &LoopParams,
    rngs: &mut RngSet,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    let action_dim = env.action_dim();
    let bound = env.action_bound();
    let goal_dim = env.goal_dim();
    let mut t: u64 = 0;
    let mut losses = LastLosses::default();

    'training: while t < params.t_max {
        let mut state = env.reset(&mut rngs.env);
        let mut segment: Option<SegmentAccumulator> = None;
        let mut episode = EpisodeRecord {
            length: 0,
            raw_return: 0.0,
            segments: Vec::new(),
            completed: false,
        };
        let mut goal_episode = GoalEpisode::default();
        let mut step_options: Vec<usize> = Vec::new();

        loop {
            if segment.is_none() {
                let option = system.master.select_option_train(&state, t, &mut rngs.master);
                segment = Some(SegmentAccumulator::new(state.clone(), option));
            }
            let seg = segment.as_mut().expect("segment just ensured");
            let option = seg.option;

            let action = if t < params.learning_starts {
                uniform_action(action_dim, &mut rngs.warmup)
            } else {
                system.sub_policies[option]
                    .sample_action(&state, &mut rngs.subs[option], false)
                    .action
            };
            let step = env.step(&scale_action(&action, bound));

            if params.her_k.is_some() {
                let obs_end = state.len() - goal_dim;
                goal_episode.push(GoalStep {
                    observation: state[..obs_end].to_vec(),
                    action: action.clone(),
                    next_observation: step.next_state[..obs_end].to_vec(),
                    achieved_goal: env.achieved_goal(&step.next_state),
                    desired_goal: env.desired_goal(),
                    done: step.done,
                });
                step_options.push(option);
            } else {
                let index = system.buffer_index(option);
                system.sub_buffers[index].push(Transition {
                    state: state.clone(),
                    action,
                    reward: step.reward,
                    next_state: step.next_state.clone(),
                    done: step.done,
                });
            }

            seg.reward_sum += step.reward;
            seg.steps += 1;
            episode.length += 1;
            episode.raw_return += step.reward;
            t += 1;

            if t >= params.learning_starts && t % params.train_freq == 0 {
                let agents: Vec<usize> = match params.update_mode {
                    SubUpdateMode::Both => (0..system.sub_policies.len()).collect(),
                    SubUpdateMode::ActiveOnly => vec![option],
                };
                for i in agents {
                    let buffer = &system.sub_buffers[system.buffer_index(i)];
                    if buffer.is_empty() {
                        continue;
                    }
                    let batch = buffer.sample(params.sac_batch_size, &mut rngs.sampler)?;
                    let agent = &mut system.sub_policies[i];
                    let (c1, c2) = agent.update_critics(&batch, &mut rngs.subs[i]);
                    let (actor_loss, alpha_loss) =
                        agent.update_actor_and_alpha(&batch, &mut rngs.subs[i]);
                    check_finite("sac", t, &[c1, c2, actor_loss, alpha_loss])?;
                    if agent.critic_update_count() % params.sac_target_update_interval == 0 {
                        agent.soft_update_targets();
                    }
                    let slot = i.min(1);
                    losses.sac_critic[slot] = 0.5 * (c1 + c2);
                    losses.sac_actor[slot] = actor_loss;
                }
            }

            if seg.steps == system.n_omega || step.done {
                let seg = segment.take().expect("segment active");
                let reward =
                    assemble_master_reward(seg.reward_sum, seg.steps, seg.option, &system.cost_model);
                system.master_buffer.push(MasterTransition {
                    state: seg.start_state,
                    option: seg.option,
                    reward,
                    next_state: step.next_state.clone(),
                    done: step.done,
                });
                episode.segments.push(SegmentRecord {
                    option: seg.option,
                    steps: seg.steps,
                    reward,
                });
                if system.master_buffer.len() >= params.master_warmup {
                    let batch = system
                        .master_buffer
                        .sample(params.dqn_batch_size, &mut rngs.sampler)?;
                    let loss = system.master.update_master(&batch);
                    check_finite("dqn", t, &[loss])?;
                    losses.dqn = loss;
                }
            }

            if params.eval_interval > 0 && t % params.eval_interval == 0 {
                let episodes = run_evaluation(
                    system,
                    eval_env,
                    params.eval_episodes,
                    None,
                    &mut rngs.eval_env,
                    &mut rngs.eval_policy,
                    false,
                );
                log.eval_rows.push(snapshot_row(t, &episodes, system, &losses));
            }

            state = step.next_state;

            if step.done {
                episode.completed = true;
            }
            if step.done || t >= params.t_max {
                if let Some(k) = params.her_k {
                    let relabeled = her_relabel(&goal_episode, k, &mut rngs.her, |a, d| {
                        env.goal_reward(a, d)
                    });
                    for (idx, transition) in relabeled.into_iter().enumerate() {
                        let source_option = step_options[idx / (k + 1)];
                        let buffer_index = system.buffer_index(source_option);
                        system.sub_buffers[buffer_index].push(transition);
                    }
                }
                log.episodes.push(episode);
                if t >= params.t_max {
                    break 'training;
                }
                break;
            }
        }
    }
    log.total_steps = t;
    Ok(log)
}

fn snapshot_row(
    env_step: u64,
    episodes: &[EvalEpisode],
    system: &HrlSystem,
    losses: &LastLosses,
) -> EvalRow {
    let n = episodes.len().max(1) as Real;
    let mean = |f: &dyn Fn(&EvalEpisode) -> Real| episodes.iter().map(f).sum::<Real>() / n;
    EvalRow {
        env_step,
        eval_score_mean: mean(&|e| e.metrics.score),
        pct_large: mean(&|e| e.metrics.pct_large),
        flops_reduction: mean(&|e| e.metrics.flops_reduction),
        sac_small_critic_loss: losses.sac_critic[0],
        sac_small_actor_loss: losses.sac_actor[0],
        sac_large_critic_loss: losses.sac_critic[1],
        sac_large_actor_loss: losses.sac_actor[1],
        dqn_loss: losses.dqn,
        epsilon: system.master.epsilon_schedule.value(env_step),
    }
}

/// One evaluation episode: headline metrics plus the per-step timeline.
#[derive(Clone, Debug)]
pub struct EvalEpisode {
    pub metrics: EpisodeMetrics,
    pub timeline: Vec<TimelineRow>,
}

#[derive(Clone, Debug)]
pub struct TimelineRow {
    pub t: usize,
    pub option: usize,
    pub action: Vec<Real>,
    pub reward: Real,
}

/// Greedy (or Boltzmann, when a temperature is given) evaluation with
/// deterministic sub-policy actions.
#[allow(clippy::too_many_arguments)]
pub fn run_evaluation(
    system: &HrlSystem,
    env: &mut dyn Environment,
    episodes: usize,
    boltzmann: Option<Real>,
    env_rng: &mut ChaCha12Rng,
    policy_rng: &mut ChaCha12Rng,
    collect_timelines: bool,
) -> Vec<EvalEpisode> {
    assert!(episodes >= 1, "evaluation needs at least one episode");
    let bound = env.action_bound();
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset(env_rng);
        let mut score = 0.0;
        let mut trace = Vec::new();
        let mut timeline = Vec::new();
        let mut steps_in_segment = 0;
        let mut option = 0;
        let mut t = 0;
        loop {
            if steps_in_segment == 0 {
                option = match boltzmann {
                    Some(temperature) => {
                        system
                            .master
                            .select_option_boltzmann(&state, temperature, policy_rng)
                    }
                    None => system.master.select_option_greedy(&state),
                };
            }
            let action = system.sub_policies[option]
                .sample_action(&state, policy_rng, true)
                .action;
            let step = env.step(&scale_action(&action, bound));
            score += step.reward;
            trace.push(option);
            if collect_timelines {
                timeline.push(TimelineRow {
                    t,
                    option,
                    action,
                    reward: step.reward,
                });
            }
            steps_in_segment = (steps_in_segment + 1) % system.n_omega;
            state = step.next_state;
            t += 1;
            if step.done {
                break;
            }
        }
        out.push(EvalEpisode {
            metrics: EpisodeMetrics::from_trace(score, trace, system.n_omega, &system.cost_model),
            timeline,
        });
    }
    out
}

/// Flat single-policy SAC training used by the baselines: same cadence as
/// the hierarchical loop, no master, no cost penalty.
pub fn run_flat_training(
    agent: &mut SacAgent,
    buffer: &mut ReplayBuffer<Transition>,
    env: &mut dyn Environment,
    eval_env: &mut dyn Environment,
    params: &LoopParams,
    cost_model: &CostModel,
    trace_option: usize,
    rngs: &mut RngSet,
) -> Result<TrainLog> {
    let mut log = TrainLog::default();
    let action_dim = env.action_dim();
    let bound = env.action_bound();
    let goal_dim = env.goal_dim();
    let mut t: u64 = 0;
    let mut losses = LastLosses::default();

    'training: while t < params.t_max {
        let mut state = env.reset(&mut rngs.env);
        let mut episode = EpisodeRecord {
            length: 0,
            raw_return: 0.0,
            segments: Vec::new(),
            completed: false,
        };
        let mut goal_episode = GoalEpisode::default();
        loop {
            let action = if t < params.learning_starts {
                uniform_action(action_dim, &mut rngs.warmup)
            } else {
                agent.sample_action(&state, &mut rngs.subs[0], false).action
            };
            let step = env.step(&scale_action(&action, bound));
            if params.her_k.is_some() {
                let obs_end = state.len() - goal_dim;
                goal_episode.push(GoalStep {
                    observation: state[..obs_end].to_vec(),
                    action: action.clone(),
                    next_observation: step.next_state[..obs_end].to_vec(),
                    achieved_goal: env.achieved_goal(&step.next_state),
                    desired_goal: env.desired_goal(),
                    done: step.done,
                });
            } else {
                buffer.push(Transition {
                    state: state.clone(),
                    action,
                    reward: step.reward,
                    next_state: step.next_state.clone(),
                    done: step.done,
                });
            }
            episode.length += 1;
            episode.raw_return += step.reward;
            t += 1;

            if t >= params.learning_starts && t % params.train_freq == 0 && !buffer.is_empty() {
                let batch = buffer.sample(params.sac_batch_size, &mut rngs.sampler)?;
                let (c1, c2) = agent.update_critics(&batch, &mut rngs.subs[0]);
                let (actor_loss, alpha_loss) = agent.update_actor_and_alpha(&batch, &mut rngs.subs[0]);
                check_finite("sac", t, &[c1, c2, actor_loss, alpha_loss])?;
                if agent.critic_update_count() % params.sac_target_update_interval == 0 {
                    agent.soft_update_targets();
                }
                losses.sac_critic[trace_option.min(1)] = 0.5 * (c1 + c2);
                losses.sac_actor[trace_option.min(1)] = actor_loss;
            }

            if params.eval_interval > 0 && t % params.eval_interval == 0 {
                let episodes = evaluate_flat(
                    agent,
                    eval_env,
                    params.eval_episodes,
                    cost_model,
                    trace_option,
                    &mut rngs.eval_env,
                    false,
                );
                let n = episodes.len().max(1) as Real;
                log.eval_rows.push(EvalRow {
                    env_step: t,
                    eval_score_mean: episodes.iter().map(|e| e.metrics.score).sum::<Real>() / n,
                    pct_large: episodes.iter().map(|e| e.metrics.pct_large).sum::<Real>() / n,
                    flops_reduction: episodes
                        .iter()
                        .map(|e| e.metrics.flops_reduction)
                        .sum::<Real>()
                        / n,
                    sac_small_critic_loss: losses.sac_critic[0],
                    sac_small_actor_loss: losses.sac_actor[0],
                    sac_large_critic_loss: losses.sac_critic[1],
                    sac_large_actor_loss: losses.sac_actor[1],
                    dqn_loss: 0.0,
                    epsilon: 0.0,
                });
            }

            state = step.next_state;
            if step.done {
                episode.completed = true;
            }
            if step.done || t >= params.t_max {
                if let Some(k) = params.her_k {
                    let relabeled = her_relabel(&goal_episode, k, &mut rngs.her, |a, d| {
                        env.goal_reward(a, d)
                    });
                    for transition in relabeled {
                        buffer.push(transition);
                    }
                }
                log.episodes.push(episode);
                if t >= params.t_max {
                    break 'training;
                }
                break;
            }
        }
    }
    log.total_steps = t;
    Ok(log)
}

/// Deterministic evaluation of a flat policy; the option trace is constant at
/// `trace_option` so the cost ledger prices every step at that policy.
pub fn evaluate_flat(
    agent: &SacAgent,
    env: &mut dyn Environment,
    episodes: usize,
    cost_model: &CostModel,
    trace_option: usize,
    env_rng: &mut ChaCha12Rng,
    collect_timelines: bool,
) -> Vec<EvalEpisode> {
    let bound = env.action_bound();
    let mut unused = ChaCha12Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset(env_rng);
        let mut score = 0.0;
        let mut len = 0;
        let mut timeline = Vec::new();
        loop {
            let action = agent.sample_action(&state, &mut unused, true).action;
            let step = env.step(&scale_action(&action, bound));
            score += step.reward;
            if collect_timelines {
                timeline.push(TimelineRow {
                    t: len,
                    option: trace_option,
                    action,
                    reward: step.reward,
                });
            }
            len += 1;
            state = step.next_state;
            if step.done {
                break;
            }
        }
        out.push(EvalEpisode {
            metrics: EpisodeMetrics::from_trace(
                score,
                vec![trace_option; len],
                usize::MAX,
                cost_model,
            ),
            timeline,
        });
    }
    out
}

use rand::SeedableRng;
