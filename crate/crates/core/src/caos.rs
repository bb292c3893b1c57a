//! The per-agent collaboration protocol: optimistic stopping, three-phase
//! sharing, view-local deviation detection, and the subgame-perfect
//! flag-preamble extension.
//!
//! Everything an agent does is re-derived from her view each step. The
//! derivation replays history: per step it computes the stopping set the
//! group must have used, the recommendation, and the message pattern full
//! compliance implies, then compares against what actually arrived. Any
//! mismatch is deviation evidence. An inactive agent's private arm choice
//! never reaches a view, so the awareness flag is exempt from it by
//! construction.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::algos::{recommend_b, AlgorithmKind, AlgorithmSpec, AlgorithmState, BMode, Recommendation};
use crate::bandit::{best_index, PosteriorState};
use crate::error::CoreError;
use crate::memo::Caches;
use crate::oer::{oer_root, OerVariant};
use crate::scalar::Scalar;
use crate::strategy::{Intent, StepCtx, Strategy};
use crate::view::{AgentView, MessageKind, Phase};

/// Whether agents ever opt out of the group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stopping {
    /// Stay/stop driven by the optimistic continuation values.
    Oer,
    /// Never stop: the fully compliant profile used as a regret baseline.
    Never,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaosConfig {
    pub m: usize,
    pub k: usize,
    pub horizon: u64,
    pub algorithm: AlgorithmSpec,
    pub variant: OerVariant,
    pub stopping: Stopping,
    /// Play the fallback forever once the view shows any deviation.
    pub collapse_on_deviation: bool,
    /// Run the deviation-flag preamble each step.
    pub sp: bool,
    /// How the fallback picks arms once an agent has left the group.
    pub b_mode: BMode,
}

impl CaosConfig {
    pub fn caos(m: usize, k: usize, horizon: u64, algorithm: AlgorithmSpec, variant: OerVariant) -> Self {
        Self {
            m,
            k,
            horizon,
            algorithm,
            variant,
            stopping: Stopping::Oer,
            collapse_on_deviation: true,
            sp: false,
            b_mode: BMode::Exact,
        }
    }

    pub fn sp_caos(m: usize, k: usize, horizon: u64, algorithm: AlgorithmSpec, variant: OerVariant) -> Self {
        Self {
            sp: true,
            ..Self::caos(m, k, horizon, algorithm, variant)
        }
    }

    /// Everyone plays the multi-agent algorithm and always shares.
    pub fn pi_a(m: usize, k: usize, horizon: u64, algorithm: AlgorithmSpec) -> Self {
        Self {
            stopping: Stopping::Never,
            collapse_on_deviation: false,
            ..Self::caos(m, k, horizon, algorithm, OerVariant::Full)
        }
    }

    fn initial_algo(&self) -> AlgorithmState {
        AlgorithmState::new(self.algorithm, self.k, self.horizon, self.m)
    }
}

/// Per-step record of the group and verified sets as this view derives them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepReplay {
    pub t: u64,
    pub c: BTreeSet<usize>,
    pub w: BTreeSet<usize>,
}

/// Everything the protocol derives from one view.
#[derive(Debug, Clone)]
pub struct ViewAnalysis<N: Scalar> {
    /// Deviation evidence visible in this view (the awareness flag).
    pub psi: bool,
    /// A flag-preamble collapse happened: everyone is in fallback mode.
    pub collapsed: bool,
    /// This agent left the group (stopped or was dropped).
    pub frozen: bool,
    /// Agents that, so far, played the recommendation and shared as required.
    pub active: BTreeSet<usize>,
    pub shared_post: PosteriorState<N>,
    pub algo: AlgorithmState,
    pub steps: Vec<StepReplay>,
}

/// Agents who complied through step `t - 1`, as visible from `view`.
pub fn compute_active_set<N: Scalar>(
    view: &AgentView<N>,
    t: u64,
    cfg: &CaosConfig,
    caches: &Caches<N>,
) -> Result<BTreeSet<usize>, CoreError> {
    Ok(analyze(view, t, cfg, caches)?.active)
}

/// The deviation-awareness flag for this view.
pub fn psi<N: Scalar>(
    view: &AgentView<N>,
    t: u64,
    cfg: &CaosConfig,
    caches: &Caches<N>,
) -> Result<bool, CoreError> {
    Ok(analyze(view, t, cfg, caches)?.psi)
}

/// Replays steps `1..t` of the protocol from this view's perspective.
pub fn analyze<N: Scalar>(
    view: &AgentView<N>,
    t: u64,
    cfg: &CaosConfig,
    caches: &Caches<N>,
) -> Result<ViewAnalysis<N>, CoreError> {
    let me = view.agent;
    let m = cfg.m;
    let mut active: BTreeSet<usize> = (0..m).collect();
    let mut psi = false;
    let mut collapsed = false;
    let mut frozen = false;
    let mut shared_post = PosteriorState::from_prior(Arc::clone(&view.prior));
    let mut algo = cfg.initial_algo();
    let mut steps = Vec::new();

    for s in 1..t {
        let psi_entering = psi;

        if cfg.sp {
            let flags = view.flags_at(s);
            if collapsed {
                // Everyone is silent after a collapse; any flag is evidence.
                if !flags.is_empty() {
                    psi = true;
                }
            } else {
                if !frozen {
                    for i in 0..m {
                        if i == me {
                            continue;
                        }
                        match (active.contains(&i), flags.contains_key(&i)) {
                            (true, false) => psi = true,
                            (false, true) => psi = true,
                            _ => {}
                        }
                    }
                }
                let any_true =
                    flags.values().any(|&v| v) || view.own_flag_at(s) == Some(true);
                if any_true {
                    collapsed = true;
                }
            }
        }

        let silent_step = collapsed || frozen || (cfg.collapse_on_deviation && psi_entering);
        if silent_step {
            if non_flag_message_at(view, s) {
                psi = true;
            }
            steps.push(StepReplay {
                t: s,
                c: BTreeSet::new(),
                w: BTreeSet::new(),
            });
            continue;
        }

        // Stopping decisions entering step s; under compliance every group
        // member derives the same set.
        let c_s: BTreeSet<usize> = match cfg.stopping {
            Stopping::Never => active.clone(),
            Stopping::Oer => {
                if active.is_empty() {
                    BTreeSet::new()
                } else {
                    oer_root(
                        s,
                        cfg.horizon,
                        m,
                        &active,
                        &algo,
                        &shared_post,
                        cfg.variant,
                        caches,
                        &BTreeMap::new(),
                    )?
                    .selected
                }
            }
        };

        if !c_s.contains(&me) {
            frozen = true;
            if non_flag_message_at(view, s) {
                // No one may address an agent outside the group.
                psi = true;
            }
            active = c_s.clone();
            steps.push(StepReplay {
                t: s,
                c: c_s,
                w: BTreeSet::new(),
            });
            continue;
        }

        // Member of the step-s group: validate the full message pattern.
        let rec = algo.recommend_at(&shared_post, &c_s, s, view.draws.get(&s).copied())?;
        let rec_arm = |agent: usize| rec.arm_for(&c_s, agent).expect("agent in group");

        let announces = view.announces_at(s);
        let mut w_s: BTreeSet<usize> = BTreeSet::new();
        let mut dropped: BTreeSet<usize> = BTreeSet::new();
        for &i in &c_s {
            if i == me {
                continue;
            }
            match announces.get(&i) {
                None => {
                    psi = true;
                    dropped.insert(i);
                }
                Some(&arm) if arm == rec_arm(i) => {
                    w_s.insert(i);
                }
                Some(_) => {
                    psi = true;
                    dropped.insert(i);
                }
            }
        }
        for sender in announces.keys() {
            if !c_s.contains(sender) {
                psi = true;
            }
        }
        let own = view
            .own_at(s)
            .ok_or_else(|| CoreError::Invariant(format!("no own record for step {s}")))?;
        if own.arm == rec_arm(me) && view.own_announce_at(s).is_some() {
            w_s.insert(me);
        } else {
            psi = true;
            dropped.insert(me);
        }

        // Reward exchange among the verified set.
        let shares = view.shares_at(s);
        let mut obs: BTreeMap<usize, (usize, u8)> = BTreeMap::new();
        if w_s.contains(&me) {
            for &i in &w_s {
                if i == me {
                    continue;
                }
                match shares.get(&i) {
                    Some(&payload) => {
                        obs.insert(i, payload);
                    }
                    None => {
                        psi = true;
                        dropped.insert(i);
                    }
                }
            }
            for sender in shares.keys() {
                if !w_s.contains(sender) || *sender == me {
                    psi = true;
                }
            }
            if view.own_share_at(s) {
                obs.insert(me, (own.arm, own.reward));
            } else {
                psi = true;
                dropped.insert(me);
            }
        } else if !shares.is_empty() {
            psi = true;
        }

        // Relay round: every verified agent must forward each newly received
        // reward back to the verified set. A gap here is how third parties
        // notice selective sharing.
        let forwards = view.forwards_at(s);
        if w_s.contains(&me) {
            for &i in &w_s {
                if i == me {
                    continue;
                }
                let relayed = forwards.get(&i);
                for &j in &w_s {
                    if j == i {
                        continue;
                    }
                    let expected: Option<(usize, usize, u8)> = if j == me {
                        view.own_share_at(s).then_some((me, own.arm, own.reward))
                    } else {
                        shares.get(&j).map(|&(arm, r)| (j, arm, r))
                    };
                    if let Some(item) = expected {
                        if !relayed.map_or(false, |set| set.contains(&item)) {
                            psi = true;
                        }
                    }
                }
            }
            for sender in forwards.keys() {
                if !w_s.contains(sender) || *sender == me {
                    psi = true;
                }
            }
        } else if !forwards.is_empty() {
            psi = true;
        }

        // Fold the group's common observations into the shared state.
        let obs_pairs: Vec<(usize, u8)> = obs.values().copied().collect();
        if !obs_pairs.is_empty() {
            shared_post = shared_post.update_many(obs_pairs.iter().copied())?;
        }
        algo.advance(&obs_pairs, s);

        active = w_s
            .iter()
            .copied()
            .filter(|i| !dropped.contains(i))
            .collect();
        if !active.contains(&me) {
            frozen = true;
        }
        steps.push(StepReplay {
            t: s,
            c: c_s,
            w: w_s,
        });
    }

    Ok(ViewAnalysis {
        psi,
        collapsed,
        frozen,
        active,
        shared_post,
        algo,
        steps,
    })
}

fn non_flag_message_at<N: Scalar>(view: &AgentView<N>, s: u64) -> bool {
    view.received_at(s, Phase::Announce).next().is_some()
        || view.received_at(s, Phase::Share).next().is_some()
        || view.received_at(s, Phase::Forward).next().is_some()
}

/// What the protocol tells this agent to do at the current step.
#[derive(Debug, Clone)]
pub enum Decision {
    /// Play the single-agent fallback and stay silent.
    Fallback,
    /// Play the group recommendation and run the sharing rounds.
    Group {
        c: BTreeSet<usize>,
        rec: Recommendation,
        my_arm: usize,
    },
}

#[derive(Debug, Clone)]
pub struct CaosStrategy {
    pub cfg: CaosConfig,
}

impl CaosStrategy {
    pub fn new(cfg: CaosConfig) -> Self {
        Self { cfg }
    }

    pub fn fallback_arm<N: Scalar>(&self, ctx: &StepCtx<N>) -> Result<usize, CoreError> {
        let post = ctx.view.own_posterior()?;
        let stats = ctx.view.own_stats();
        recommend_b(&post, &stats, ctx.t, ctx.horizon, self.cfg.b_mode, ctx.caches)
    }

    /// Re-derived every phase; stateless by design so off-path histories and
    /// repeated queries always agree.
    pub fn decide<N: Scalar>(&self, ctx: &StepCtx<N>) -> Result<Decision, CoreError> {
        let me = ctx.view.agent;
        let analysis = analyze(ctx.view, ctx.t, &self.cfg, ctx.caches)?;

        if self.cfg.sp {
            let flags = ctx.view.flags_at(ctx.t);
            let own_true = ctx.view.own_flag_at(ctx.t) == Some(true);
            if analysis.collapsed || flags.values().any(|&v| v) || own_true {
                return Ok(Decision::Fallback);
            }
        }
        if self.cfg.collapse_on_deviation && analysis.psi {
            return Ok(Decision::Fallback);
        }
        if analysis.frozen || !analysis.active.contains(&me) {
            return Ok(Decision::Fallback);
        }

        let c_t: BTreeSet<usize> = match self.cfg.stopping {
            Stopping::Never => analysis.active.clone(),
            Stopping::Oer => {
                let out = oer_root(
                    ctx.t,
                    ctx.horizon,
                    self.cfg.m,
                    &analysis.active,
                    &analysis.algo,
                    &analysis.shared_post,
                    self.cfg.variant,
                    ctx.caches,
                    &BTreeMap::new(),
                )?;
                if !out.rho[me].strictly_above(&out.vb) {
                    return Ok(Decision::Fallback);
                }
                out.selected
            }
        };
        if !c_t.contains(&me) {
            return Ok(Decision::Fallback);
        }

        let mats_idx = if self.cfg.algorithm.kind == AlgorithmKind::Mats {
            Some(match ctx.view.draws.get(&ctx.t) {
                Some(&idx) => idx,
                None => ctx.draw.pick(analysis.shared_post.weights())?,
            })
        } else {
            None
        };
        let rec = analysis
            .algo
            .recommend_at(&analysis.shared_post, &c_t, ctx.t, mats_idx)?;
        let my_arm = rec.arm_for(&c_t, me).expect("member of own group");
        Ok(Decision::Group { c: c_t, rec, my_arm })
    }

    /// Verified set for the current step, from the announcements received.
    fn verified_set<N: Scalar>(
        &self,
        ctx: &StepCtx<N>,
        c: &BTreeSet<usize>,
        rec: &Recommendation,
    ) -> BTreeSet<usize> {
        let me = ctx.view.agent;
        let announces = ctx.view.announces_at(ctx.t);
        let mut w: BTreeSet<usize> = BTreeSet::new();
        for &i in c {
            if i == me {
                continue;
            }
            if let (Some(&arm), Some(expected)) = (announces.get(&i), rec.arm_for(c, i)) {
                if arm == expected {
                    w.insert(i);
                }
            }
        }
        let own_arm = ctx.view.own_at(ctx.t).map(|o| o.arm);
        if ctx.view.own_announce_at(ctx.t).is_some()
            && own_arm.is_some()
            && own_arm == rec.arm_for(c, me)
        {
            w.insert(me);
        }
        w
    }
}

impl<N: Scalar> Strategy<N> for CaosStrategy {
    fn name(&self) -> String {
        let base = if self.cfg.sp {
            "sp_caos"
        } else if self.cfg.stopping == Stopping::Never {
            "pi_a"
        } else {
            "caos"
        };
        format!("{}_{}", base, self.cfg.algorithm.kind.name())
    }

    fn flag(&self, ctx: &StepCtx<N>) -> Result<Option<bool>, CoreError> {
        if !self.cfg.sp {
            return Ok(None);
        }
        let analysis = analyze(ctx.view, ctx.t, &self.cfg, ctx.caches)?;
        if analysis.collapsed || analysis.frozen || !analysis.active.contains(&ctx.view.agent) {
            // Agents in permanent fallback mode emit nothing, flags included.
            return Ok(None);
        }
        Ok(Some(analysis.psi))
    }

    fn choose_arm(&self, ctx: &StepCtx<N>) -> Result<usize, CoreError> {
        match self.decide(ctx)? {
            Decision::Fallback => self.fallback_arm(ctx),
            Decision::Group { my_arm, .. } => Ok(my_arm),
        }
    }

    fn announce(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        match self.decide(ctx)? {
            Decision::Fallback => Ok(Vec::new()),
            Decision::Group { c, .. } => {
                let me = ctx.view.agent;
                let own = ctx
                    .view
                    .own_at(ctx.t)
                    .ok_or_else(|| CoreError::Invariant("announce before acting".into()))?;
                let recipients: BTreeSet<usize> =
                    c.iter().copied().filter(|&i| i != me).collect();
                if recipients.is_empty() {
                    return Ok(Vec::new());
                }
                Ok(vec![Intent {
                    kind: MessageKind::Announce { arm: own.arm },
                    recipients,
                }])
            }
        }
    }

    fn share(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        match self.decide(ctx)? {
            Decision::Fallback => Ok(Vec::new()),
            Decision::Group { c, rec, .. } => {
                let me = ctx.view.agent;
                let w = self.verified_set(ctx, &c, &rec);
                if !w.contains(&me) {
                    return Ok(Vec::new());
                }
                let own = ctx
                    .view
                    .own_at(ctx.t)
                    .ok_or_else(|| CoreError::Invariant("share before acting".into()))?;
                let recipients: BTreeSet<usize> =
                    w.iter().copied().filter(|&i| i != me).collect();
                if recipients.is_empty() {
                    return Ok(Vec::new());
                }
                Ok(vec![Intent {
                    kind: MessageKind::Share {
                        arm: own.arm,
                        reward: own.reward,
                    },
                    recipients,
                }])
            }
        }
    }

    fn forward(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        match self.decide(ctx)? {
            Decision::Fallback => Ok(Vec::new()),
            Decision::Group { c, rec, .. } => {
                let me = ctx.view.agent;
                let w = self.verified_set(ctx, &c, &rec);
                if !w.contains(&me) {
                    return Ok(Vec::new());
                }
                let recipients: BTreeSet<usize> =
                    w.iter().copied().filter(|&i| i != me).collect();
                if recipients.is_empty() {
                    return Ok(Vec::new());
                }
                let mut intents = Vec::new();
                for (sender, (arm, reward)) in ctx.view.shares_at(ctx.t) {
                    if w.contains(&sender) {
                        intents.push(Intent {
                            kind: MessageKind::Forward {
                                origin: sender,
                                arm,
                                reward,
                            },
                            recipients: recipients.clone(),
                        });
                    }
                }
                Ok(intents)
            }
        }
    }

    fn clone_box(&self) -> Box<dyn Strategy<N>> {
        Box::new(self.clone())
    }
}

/// Greedy exploitation of the own-view posterior; used by the free-riding
/// deviation.
pub fn greedy_arm<N: Scalar>(view: &AgentView<N>) -> Result<usize, CoreError> {
    let post = view.own_posterior()?;
    Ok(best_index(&post.arm_means()))
}
