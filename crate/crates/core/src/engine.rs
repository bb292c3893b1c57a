//! Protocol episodes and the exact profile evaluator.
//!
//! One step is: flag preamble, arm choices, environment rewards, then three
//! synchronous communication phases. Phase-k intents are computed against the
//! phase-(k-1) snapshot and delivered atomically. The engine owns the
//! authoritative action/reward log and drops any message whose payload it
//! cannot verify, recording the attempt.
//!
//! The evaluator computes exact per-agent expected values of a profile by
//! enumerating instance belief, joint rewards, and declared strategy
//! randomness over the same step machinery episodes use.

use std::collections::BTreeSet;
use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bandit::{enumerate_outcomes, DiscretePrior, PosteriorState};
use crate::draw::SharedDraw;
use crate::error::CoreError;
use crate::memo::Caches;
use crate::scalar::Scalar;
use crate::strategy::{StepCtx, Strategy};
use crate::view::{AgentView, Message, MessageKind, Phase};

/// Separate deterministic RNG streams derived from one episode seed.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&stream.to_le_bytes());
    bytes[16..].copy_from_slice(b"caos.engine.rngs");
    ChaCha8Rng::from_seed(bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedMessage {
    pub message: Message,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub actions: Vec<usize>,
    pub rewards: Vec<u8>,
    pub messages: Vec<Message>,
    pub rejected: Vec<RejectedMessage>,
    pub draw: Option<usize>,
}

/// Full trajectory of one episode. The sampled instance stays engine-only.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalHistory {
    pub m: usize,
    pub k: usize,
    pub horizon: u64,
    pub seed: u64,
    pub instance_index: usize,
    pub steps: Vec<StepRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct StepEnv {
    pub actions: Vec<usize>,
    pub rewards: Vec<u8>,
}

/// Complete mid-episode state: every view, every strategy, the engine's
/// belief over the prior support, and the verified action/reward log.
pub struct SimState<N: Scalar> {
    pub t: u64,
    pub horizon: u64,
    pub views: Vec<AgentView<N>>,
    pub strategies: Vec<Box<dyn Strategy<N>>>,
    pub belief: PosteriorState<N>,
    pub env: Vec<StepEnv>,
    pub caches: Rc<Caches<N>>,
}

impl<N: Scalar> Clone for SimState<N> {
    fn clone(&self) -> Self {
        Self {
            t: self.t,
            horizon: self.horizon,
            views: self.views.clone(),
            strategies: self.strategies.clone(),
            belief: self.belief.clone(),
            env: self.env.clone(),
            caches: Rc::clone(&self.caches),
        }
    }
}

impl<N: Scalar> SimState<N> {
    pub fn new(
        prior: Arc<DiscretePrior<N>>,
        strategies: Vec<Box<dyn Strategy<N>>>,
        horizon: u64,
        caches: Rc<Caches<N>>,
    ) -> Self {
        let m = strategies.len();
        let views = (0..m)
            .map(|i| AgentView::new(i, m, Arc::clone(&prior)))
            .collect();
        Self {
            t: 1,
            horizon,
            views,
            strategies,
            belief: PosteriorState::from_prior(prior),
            env: Vec::new(),
            caches,
        }
    }

    pub fn m(&self) -> usize {
        self.strategies.len()
    }

    pub fn k(&self) -> usize {
        self.belief.k()
    }

    fn ctx<'a>(&'a self, agent: usize, draw: &'a SharedDraw<N>) -> StepCtx<'a, N> {
        StepCtx {
            t: self.t,
            horizon: self.horizon,
            view: &self.views[agent],
            draw,
            caches: &self.caches,
        }
    }
}

/// A profile of m copies of one strategy.
pub fn uniform_profile<N: Scalar>(
    strategy: &dyn Strategy<N>,
    m: usize,
) -> Vec<Box<dyn Strategy<N>>> {
    (0..m).map(|_| strategy.clone_box()).collect()
}

fn deliver<N: Scalar>(views: &mut [AgentView<N>], message: Message) {
    for &recipient in &message.recipients {
        views[recipient].deliver(message.clone());
    }
    views[message.sender].record_sent(message);
}

/// Flag preamble plus arm choices. Returns (actions, flag messages) and
/// records a consumed shared draw into every view.
fn run_flags_and_arms<N: Scalar>(
    state: &mut SimState<N>,
    draw: &SharedDraw<N>,
) -> Result<(Vec<usize>, Vec<Message>), CoreError> {
    let m = state.m();
    let t = state.t;
    let mut flag_messages = Vec::new();
    for agent in 0..m {
        let flag = {
            let ctx = state.ctx(agent, draw);
            state.strategies[agent].flag(&ctx)?
        };
        if let Some(deviated) = flag {
            let recipients: BTreeSet<usize> = (0..m).filter(|&i| i != agent).collect();
            flag_messages.push(Message {
                step: t,
                phase: Phase::Flag,
                sender: agent,
                recipients,
                kind: MessageKind::Flag { deviated },
            });
        }
    }
    for message in &flag_messages {
        deliver(&mut state.views, message.clone());
    }

    let mut actions = Vec::with_capacity(m);
    for agent in 0..m {
        let arm = {
            let ctx = state.ctx(agent, draw);
            state.strategies[agent].choose_arm(&ctx)?
        };
        if arm >= state.k() {
            return Err(CoreError::ArmOutOfRange { arm, k: state.k() });
        }
        actions.push(arm);
    }
    if let Some(resolved) = draw.consumed() {
        for view in &mut state.views {
            view.record_draw(t, resolved.index);
        }
    }
    Ok((actions, flag_messages))
}

/// Records rewards into the authoritative log, the views, and the belief.
fn apply_rewards<N: Scalar>(
    state: &mut SimState<N>,
    actions: &[usize],
    rewards: &[u8],
) -> Result<(), CoreError> {
    let t = state.t;
    state.env.push(StepEnv {
        actions: actions.to_vec(),
        rewards: rewards.to_vec(),
    });
    for (agent, (&arm, &reward)) in actions.iter().zip(rewards).enumerate() {
        state.views[agent].record_own(t, arm, reward);
    }
    state.belief = state
        .belief
        .update_many(actions.iter().copied().zip(rewards.iter().copied()))?;
    Ok(())
}

fn validate<N: Scalar>(
    state: &SimState<N>,
    sender: usize,
    phase: Phase,
    kind: &MessageKind,
) -> Result<(), String> {
    let env = state.env.last().expect("rewards applied before comm phases");
    match (phase, kind) {
        (Phase::Announce, MessageKind::Announce { arm }) => {
            if env.actions[sender] != *arm {
                return Err(format!(
                    "announced arm {arm} but played {}",
                    env.actions[sender]
                ));
            }
        }
        (Phase::Share, MessageKind::Share { arm, reward }) => {
            if env.actions[sender] != *arm || env.rewards[sender] != *reward {
                return Err("share does not match the environment log".into());
            }
        }
        (Phase::Forward, MessageKind::Forward { origin, arm, reward }) => {
            if *origin >= state.m() {
                return Err(format!("unknown origin {origin}"));
            }
            if env.actions[*origin] != *arm || env.rewards[*origin] != *reward {
                return Err("forward does not match the environment log".into());
            }
        }
        _ => return Err(format!("{} not allowed in {} phase", kind.name(), phase.name())),
    }
    Ok(())
}

/// The three sharing phases. Intents are gathered against the previous
/// snapshot, verified against the environment log, then delivered at once.
fn run_comm_phases<N: Scalar>(
    state: &mut SimState<N>,
    draw: &SharedDraw<N>,
) -> Result<(Vec<Message>, Vec<RejectedMessage>), CoreError> {
    let m = state.m();
    let t = state.t;
    let mut delivered = Vec::new();
    let mut rejected = Vec::new();
    for phase in [Phase::Announce, Phase::Share, Phase::Forward] {
        let mut staged = Vec::new();
        for agent in 0..m {
            let intents = {
                let ctx = state.ctx(agent, draw);
                match phase {
                    Phase::Announce => state.strategies[agent].announce(&ctx)?,
                    Phase::Share => state.strategies[agent].share(&ctx)?,
                    Phase::Forward => state.strategies[agent].forward(&ctx)?,
                    Phase::Flag => unreachable!(),
                }
            };
            for intent in intents {
                let recipients: BTreeSet<usize> = intent
                    .recipients
                    .into_iter()
                    .filter(|&r| r < m && r != agent)
                    .collect();
                if recipients.is_empty() {
                    continue;
                }
                let message = Message {
                    step: t,
                    phase,
                    sender: agent,
                    recipients,
                    kind: intent.kind,
                };
                match validate(state, agent, phase, &message.kind) {
                    Ok(()) => staged.push(message),
                    Err(reason) => rejected.push(RejectedMessage { message, reason }),
                }
            }
        }
        for message in staged {
            deliver(&mut state.views, message.clone());
            delivered.push(message);
        }
    }
    Ok((delivered, rejected))
}

/// Runs one seeded episode. Deterministic: identical seeds produce identical
/// histories bit for bit.
pub fn run_episode<N: Scalar>(
    prior: Arc<DiscretePrior<N>>,
    strategies: Vec<Box<dyn Strategy<N>>>,
    horizon: u64,
    seed: u64,
    caches: Rc<Caches<N>>,
) -> Result<(GlobalHistory, SimState<N>), CoreError> {
    let mut rng_instance = stream_rng(seed, 0);
    let mut rng_rewards = stream_rng(seed, 1);
    let mut rng_tape = stream_rng(seed, 2);

    let instance_index = prior.sample_index(&mut rng_instance);
    let m = strategies.len();
    let k = prior.k();
    let mut state = SimState::new(Arc::clone(&prior), strategies, horizon, caches);
    let mut steps = Vec::with_capacity(horizon as usize);

    for t in 1..=horizon {
        debug_assert_eq!(state.t, t);
        let u = rng_tape.gen::<f64>();
        let draw = SharedDraw::sampling(u);
        let (actions, flag_messages) = run_flags_and_arms(&mut state, &draw)?;
        let rewards: Vec<u8> = actions
            .iter()
            .map(|&arm| {
                let mean = prior.instance(instance_index).mean(arm).to_f64();
                u8::from(rng_rewards.gen::<f64>() < mean)
            })
            .collect();
        apply_rewards(&mut state, &actions, &rewards)?;
        let (mut messages, rejected) = run_comm_phases(&mut state, &draw)?;
        let mut all_messages = flag_messages;
        all_messages.append(&mut messages);
        steps.push(StepRecord {
            t,
            actions,
            rewards,
            messages: all_messages,
            rejected,
            draw: draw.consumed().map(|r| r.index),
        });
        state.t += 1;
    }

    Ok((
        GlobalHistory {
            m,
            k,
            horizon,
            seed,
            instance_index,
            steps,
        },
        state,
    ))
}

/// One enumerated continuation of a step.
pub struct StepBranch<N: Scalar> {
    pub weight: N,
    pub actions: Vec<usize>,
    pub rewards: Vec<u8>,
    /// Expected immediate reward per agent under the pre-reward belief.
    pub step_means: Vec<N>,
    pub messages: Vec<Message>,
    pub rejected: Vec<RejectedMessage>,
    /// State advanced to t + 1.
    pub state: SimState<N>,
}

/// Expands one step exactly: shared-draw branches (detected by a probe pass)
/// times positive-probability joint reward outcomes.
pub fn expand_step<N: Scalar>(state: &SimState<N>) -> Result<Vec<StepBranch<N>>, CoreError> {
    let draw_branches: Vec<(N, SharedDraw<N>)> = {
        let mut probe_state = state.clone();
        let probe = SharedDraw::probe();
        run_flags_and_arms(&mut probe_state, &probe)?;
        match probe.consumed() {
            None => vec![(N::one(), SharedDraw::probe())],
            Some(resolved) => resolved
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| w.to_f64() > 0.0)
                .map(|(index, w)| (w.clone(), SharedDraw::fixed(index)))
                .collect(),
        }
    };

    let mut branches = Vec::new();
    for (draw_weight, draw) in draw_branches {
        let mut stepped = state.clone();
        let (actions, flag_messages) = run_flags_and_arms(&mut stepped, &draw)?;
        let step_means: Vec<N> = actions.iter().map(|&a| stepped.belief.mean(a)).collect();
        for outcome in enumerate_outcomes(&stepped.belief, &actions)? {
            if outcome.probability.to_f64() == 0.0 {
                continue;
            }
            let mut child = stepped.clone();
            apply_rewards(&mut child, &actions, &outcome.rewards)?;
            let (mut messages, rejected) = run_comm_phases(&mut child, &draw)?;
            child.t += 1;
            let mut all_messages = flag_messages.clone();
            all_messages.append(&mut messages);
            branches.push(StepBranch {
                weight: draw_weight.clone() * outcome.probability,
                actions: actions.clone(),
                rewards: outcome.rewards,
                step_means: step_means.clone(),
                messages: all_messages,
                rejected,
                state: child,
            });
        }
    }
    Ok(branches)
}

/// Exact expected values from a state: per-agent cumulative reward and the
/// cumulative per-step minimum of conditional expected rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult<N: Scalar> {
    pub values: Vec<N>,
    pub min_value: N,
}

impl<N: Scalar> EvalResult<N> {
    fn zeros(m: usize) -> Self {
        Self {
            values: vec![N::zero(); m],
            min_value: N::zero(),
        }
    }
}

pub fn expected_value<N: Scalar>(state: &SimState<N>) -> Result<EvalResult<N>, CoreError> {
    expected_value_with(state, &mut |_, _| {})
}

/// Exact evaluation with a visitor invoked at every node (post-order) with
/// that node's continuation values.
pub fn expected_value_with<N: Scalar, F>(
    state: &SimState<N>,
    visitor: &mut F,
) -> Result<EvalResult<N>, CoreError>
where
    F: FnMut(&SimState<N>, &EvalResult<N>),
{
    let m = state.m();
    if state.t > state.horizon {
        let result = EvalResult::zeros(m);
        visitor(state, &result);
        return Ok(result);
    }
    enumeration_budget(m, state.horizon - state.t + 1, state.caches.budget)?;

    let mut values = vec![N::zero(); m];
    let mut min_value = N::zero();
    for branch in expand_step(state)? {
        let child = expected_value_with(&branch.state, visitor)?;
        for i in 0..m {
            let gain = N::from_int(u64::from(branch.rewards[i])) + child.values[i].clone();
            values[i] = values[i].clone() + branch.weight.clone() * gain;
        }
        let step_min = branch
            .step_means
            .iter()
            .cloned()
            .reduce(|a, b| if b < a { b } else { a })
            .expect("at least one agent");
        min_value = min_value + branch.weight.clone() * (step_min + child.min_value);
    }
    let result = EvalResult { values, min_value };
    visitor(state, &result);
    Ok(result)
}

pub(crate) fn enumeration_budget(m: usize, remaining: u64, budget: u64) -> Result<(), CoreError> {
    let bits = (m as u128).saturating_mul(remaining as u128);
    if bits >= 64 {
        return Err(CoreError::HorizonTooLarge {
            nodes: u128::MAX,
            budget,
        });
    }
    let nodes = (m as u128 + 1) << bits;
    if nodes > budget as u128 {
        return Err(CoreError::HorizonTooLarge { nodes, budget });
    }
    Ok(())
}

/// Keeps the borrow checker happy where an owned RNG word is needed.
pub fn rng_word(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).next_u64()
}
