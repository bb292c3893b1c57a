//! Unilateral deviations from the protocol, as strategy wrappers.
//!
//! Each wrapper changes exactly the behavior its kind names, at or after the
//! trigger step; everything else falls through to the base protocol, whose
//! own view-local bookkeeping then reacts (an agent that deviated sees her
//! own deviation and switches to the fallback herself).

use std::collections::BTreeSet;

use crate::caos::{greedy_arm, CaosConfig, CaosStrategy, Decision};
use crate::error::CoreError;
use crate::scalar::Scalar;
use crate::strategy::{Intent, StepCtx, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationKind {
    /// Identical strategy; margin must be exactly zero.
    NoOp,
    /// Play an arm other than the recommended one (announced truthfully).
    WrongArm,
    WithholdArmAnnouncement,
    WithholdReward,
    /// Share the reward with everyone except the lowest-indexed other agent.
    SelectiveShare,
    /// Never send anything; always exploit the own-view posterior greedily.
    FreeRide,
    /// Switch to the single-agent fallback unilaterally at the trigger step.
    EarlyStop,
    /// Report a deviation in the flag preamble although none is known.
    FalseFlag,
    /// Report "no deviation" although one is known.
    DenyFlag,
}

impl DeviationKind {
    /// The deviations exercised against the plain protocol.
    pub fn caos_library() -> [DeviationKind; 6] {
        [
            DeviationKind::WrongArm,
            DeviationKind::WithholdArmAnnouncement,
            DeviationKind::WithholdReward,
            DeviationKind::SelectiveShare,
            DeviationKind::FreeRide,
            DeviationKind::EarlyStop,
        ]
    }

    /// The preamble deviations, only meaningful with the flag round.
    pub fn flag_library() -> [DeviationKind; 2] {
        [DeviationKind::FalseFlag, DeviationKind::DenyFlag]
    }

    pub fn name(self) -> &'static str {
        match self {
            DeviationKind::NoOp => "noop",
            DeviationKind::WrongArm => "wrong_arm",
            DeviationKind::WithholdArmAnnouncement => "withhold_announcement",
            DeviationKind::WithholdReward => "withhold_reward",
            DeviationKind::SelectiveShare => "selective_share",
            DeviationKind::FreeRide => "free_ride",
            DeviationKind::EarlyStop => "early_stop",
            DeviationKind::FalseFlag => "false_flag",
            DeviationKind::DenyFlag => "deny_flag",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeviationSpec {
    pub base: CaosConfig,
    pub agent: usize,
    pub kind: DeviationKind,
    pub trigger: u64,
}

impl DeviationSpec {
    pub fn new(base: CaosConfig, agent: usize, kind: DeviationKind, trigger: u64) -> Self {
        Self {
            base,
            agent,
            kind,
            trigger,
        }
    }

    /// The agent a selective share skips: the lowest-indexed other agent.
    pub fn selective_victim(&self) -> usize {
        usize::from(self.agent == 0)
    }
}

pub fn make_deviation<N: Scalar>(spec: DeviationSpec) -> Box<dyn Strategy<N>> {
    Box::new(Deviant {
        base: CaosStrategy::new(spec.base.clone()),
        spec,
    })
}

#[derive(Clone)]
struct Deviant {
    base: CaosStrategy,
    spec: DeviationSpec,
}

impl Deviant {
    fn persistent(&self, t: u64) -> bool {
        t >= self.spec.trigger
            && matches!(
                self.spec.kind,
                DeviationKind::FreeRide | DeviationKind::EarlyStop
            )
    }
}

impl<N: Scalar> Strategy<N> for Deviant {
    fn name(&self) -> String {
        format!(
            "{}+{}@{}",
            Strategy::<N>::name(&self.base),
            self.spec.kind.name(),
            self.spec.trigger
        )
    }

    fn flag(&self, ctx: &StepCtx<N>) -> Result<Option<bool>, CoreError> {
        if self.persistent(ctx.t) {
            return Ok(None);
        }
        let base = self.base.flag(ctx)?;
        match self.spec.kind {
            DeviationKind::FalseFlag if ctx.t == self.spec.trigger => Ok(base.map(|_| true)),
            DeviationKind::DenyFlag if ctx.t >= self.spec.trigger => Ok(base.map(|_| false)),
            _ => Ok(base),
        }
    }

    fn choose_arm(&self, ctx: &StepCtx<N>) -> Result<usize, CoreError> {
        match self.spec.kind {
            DeviationKind::FreeRide if ctx.t >= self.spec.trigger => greedy_arm(ctx.view),
            DeviationKind::EarlyStop if ctx.t >= self.spec.trigger => self.base.fallback_arm(ctx),
            DeviationKind::WrongArm if ctx.t == self.spec.trigger => {
                match self.base.decide(ctx)? {
                    Decision::Group { my_arm, .. } => Ok((my_arm + 1) % self.spec.base.k),
                    Decision::Fallback => self.base.fallback_arm(ctx),
                }
            }
            _ => self.base.choose_arm(ctx),
        }
    }

    fn announce(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        if self.persistent(ctx.t) {
            return Ok(Vec::new());
        }
        if self.spec.kind == DeviationKind::WithholdArmAnnouncement && ctx.t == self.spec.trigger {
            return Ok(Vec::new());
        }
        self.base.announce(ctx)
    }

    fn share(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        if self.persistent(ctx.t) {
            return Ok(Vec::new());
        }
        match self.spec.kind {
            DeviationKind::WithholdReward if ctx.t == self.spec.trigger => Ok(Vec::new()),
            DeviationKind::SelectiveShare if ctx.t == self.spec.trigger => {
                let victim = self.spec.selective_victim();
                let mut intents = self.base.share(ctx)?;
                for intent in &mut intents {
                    intent.recipients.remove(&victim);
                }
                intents.retain(|i| !i.recipients.is_empty());
                Ok(intents)
            }
            _ => self.base.share(ctx),
        }
    }

    fn forward(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        if self.persistent(ctx.t) {
            return Ok(Vec::new());
        }
        self.base.forward(ctx)
    }

    fn clone_box(&self) -> Box<dyn Strategy<N>> {
        Box::new(self.clone())
    }
}

/// Always-forging strategy used to test that unverifiable payloads never
/// reach an inbox.
#[derive(Clone)]
pub struct Forger {
    pub base: CaosStrategy,
}

impl<N: Scalar> Strategy<N> for Forger {
    fn name(&self) -> String {
        "forger".into()
    }

    fn choose_arm(&self, ctx: &StepCtx<N>) -> Result<usize, CoreError> {
        self.base.choose_arm(ctx)
    }

    fn announce(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        self.base.announce(ctx)
    }

    fn share(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        // Claim the opposite reward; the engine must drop this.
        let own = ctx
            .view
            .own_at(ctx.t)
            .ok_or_else(|| CoreError::Invariant("share before acting".into()))?;
        let recipients: BTreeSet<usize> = (0..ctx.view.m)
            .filter(|&i| i != ctx.view.agent)
            .collect();
        Ok(vec![Intent {
            kind: crate::view::MessageKind::Share {
                arm: own.arm,
                reward: 1 - own.reward,
            },
            recipients,
        }])
    }

    fn forward(&self, ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        self.base.forward(ctx)
    }

    fn clone_box(&self) -> Box<dyn Strategy<N>> {
        Box::new(self.clone())
    }
}
