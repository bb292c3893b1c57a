//! Protocol messages and per-agent views.
//!
//! Views hold raw data only: the agent's own pulls, delivered messages, and
//! the public shared-draw log. Everything an agent acts on (posterior, active
//! set, deviation evidence) is re-derived from this data, so off-path
//! histories are handled the same way as on-path ones.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::bandit::{DiscretePrior, PosteriorState};
use crate::error::CoreError;
use crate::scalar::Scalar;

/// Synchronous phases within one step. Rewards are never emitted before the
/// announce phase closes; the engine delivers each phase as a barrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    /// Deviation-flag preamble (subgame-perfect extension only).
    Flag,
    Announce,
    Share,
    Forward,
}

impl Phase {
    pub fn index(self) -> u8 {
        match self {
            Phase::Flag => 0,
            Phase::Announce => 1,
            Phase::Share => 2,
            Phase::Forward => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Flag => "flag",
            Phase::Announce => "announce",
            Phase::Share => "share",
            Phase::Forward => "forward",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MessageKind {
    /// Announcement of the arm the sender played this step.
    Announce { arm: usize },
    /// The sender's own realized reward this step.
    Share { arm: usize, reward: u8 },
    /// Relay of a reward the sender received this step.
    Forward { origin: usize, arm: usize, reward: u8 },
    /// Deviation-awareness report.
    Flag { deviated: bool },
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::Announce { .. } => "announce",
            MessageKind::Share { .. } => "share",
            MessageKind::Forward { .. } => "forward",
            MessageKind::Flag { .. } => "flag",
        }
    }

    pub fn payload(&self) -> String {
        match self {
            MessageKind::Announce { arm } => format!("arm={arm}"),
            MessageKind::Share { arm, reward } => format!("arm={arm} reward={reward}"),
            MessageKind::Forward { origin, arm, reward } => {
                format!("origin={origin} arm={arm} reward={reward}")
            }
            MessageKind::Flag { deviated } => format!("deviated={deviated}"),
        }
    }
}

/// A delivered protocol message. Recipient sets are engine metadata; the
/// view-local derivations never consult them, matching a unicast model where
/// an agent cannot observe who else was addressed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub step: u64,
    pub phase: Phase,
    pub sender: usize,
    pub recipients: BTreeSet<usize>,
    pub kind: MessageKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OwnStep {
    pub t: u64,
    pub arm: usize,
    pub reward: u8,
}

/// Everything agent `agent` has seen.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView<N: Scalar> {
    pub agent: usize,
    pub m: usize,
    pub prior: Arc<DiscretePrior<N>>,
    pub own: Vec<OwnStep>,
    pub inbox: Vec<Message>,
    pub outbox: Vec<Message>,
    /// Public shared-draw log: step -> resolved posterior support index.
    pub draws: BTreeMap<u64, usize>,
}

impl<N: Scalar> AgentView<N> {
    pub fn new(agent: usize, m: usize, prior: Arc<DiscretePrior<N>>) -> Self {
        Self {
            agent,
            m,
            prior,
            own: Vec::new(),
            inbox: Vec::new(),
            outbox: Vec::new(),
            draws: BTreeMap::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.prior.k()
    }

    pub fn record_own(&mut self, t: u64, arm: usize, reward: u8) {
        self.own.push(OwnStep { t, arm, reward });
    }

    pub fn own_at(&self, t: u64) -> Option<&OwnStep> {
        self.own.iter().find(|s| s.t == t)
    }

    pub fn deliver(&mut self, message: Message) {
        self.inbox.push(message);
    }

    pub fn record_sent(&mut self, message: Message) {
        self.outbox.push(message);
    }

    pub fn record_draw(&mut self, t: u64, index: usize) {
        self.draws.insert(t, index);
    }

    pub fn received_at(&self, t: u64, phase: Phase) -> impl Iterator<Item = &Message> {
        self.inbox
            .iter()
            .filter(move |msg| msg.step == t && msg.phase == phase)
    }

    /// First flag per sender at step `t`.
    pub fn flags_at(&self, t: u64) -> BTreeMap<usize, bool> {
        let mut out = BTreeMap::new();
        for msg in self.received_at(t, Phase::Flag) {
            if let MessageKind::Flag { deviated } = msg.kind {
                out.entry(msg.sender).or_insert(deviated);
            }
        }
        out
    }

    pub fn announces_at(&self, t: u64) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for msg in self.received_at(t, Phase::Announce) {
            if let MessageKind::Announce { arm } = msg.kind {
                out.entry(msg.sender).or_insert(arm);
            }
        }
        out
    }

    pub fn shares_at(&self, t: u64) -> BTreeMap<usize, (usize, u8)> {
        let mut out = BTreeMap::new();
        for msg in self.received_at(t, Phase::Share) {
            if let MessageKind::Share { arm, reward } = msg.kind {
                out.entry(msg.sender).or_insert((arm, reward));
            }
        }
        out
    }

    /// Forwards per sender: the set of (origin, arm, reward) they relayed.
    pub fn forwards_at(&self, t: u64) -> BTreeMap<usize, BTreeSet<(usize, usize, u8)>> {
        let mut out: BTreeMap<usize, BTreeSet<(usize, usize, u8)>> = BTreeMap::new();
        for msg in self.received_at(t, Phase::Forward) {
            if let MessageKind::Forward { origin, arm, reward } = msg.kind {
                out.entry(msg.sender).or_default().insert((origin, arm, reward));
            }
        }
        out
    }

    pub fn own_announce_at(&self, t: u64) -> Option<usize> {
        self.outbox.iter().find_map(|msg| {
            if msg.step == t && msg.phase == Phase::Announce {
                match msg.kind {
                    MessageKind::Announce { arm } => Some(arm),
                    _ => None,
                }
            } else {
                None
            }
        })
    }

    pub fn own_share_at(&self, t: u64) -> bool {
        self.outbox
            .iter()
            .any(|msg| msg.step == t && msg.phase == Phase::Share)
    }

    pub fn own_flag_at(&self, t: u64) -> Option<bool> {
        self.outbox.iter().find_map(|msg| {
            if msg.step == t && msg.phase == Phase::Flag {
                match msg.kind {
                    MessageKind::Flag { deviated } => Some(deviated),
                    _ => None,
                }
            } else {
                None
            }
        })
    }

    /// All observations known to this view, deduplicated by (step, origin).
    /// A reward can arrive directly and through relays; updating on it twice
    /// would corrupt the posterior.
    pub fn observations(&self) -> Result<BTreeMap<(u64, usize), (usize, u8)>, CoreError> {
        let mut out: BTreeMap<(u64, usize), (usize, u8)> = BTreeMap::new();
        let mut put = |key: (u64, usize), value: (usize, u8)| -> Result<(), CoreError> {
            if let Some(existing) = out.get(&key) {
                if *existing != value {
                    return Err(CoreError::Invariant(format!(
                        "conflicting verified observations for step {} origin {}",
                        key.0, key.1
                    )));
                }
            } else {
                out.insert(key, value);
            }
            Ok(())
        };
        for step in &self.own {
            put((step.t, self.agent), (step.arm, step.reward))?;
        }
        for msg in &self.inbox {
            match msg.kind {
                MessageKind::Share { arm, reward } => {
                    put((msg.step, msg.sender), (arm, reward))?;
                }
                MessageKind::Forward { origin, arm, reward } => {
                    put((msg.step, origin), (arm, reward))?;
                }
                _ => {}
            }
        }
        Ok(out)
    }

    /// Posterior over the prior support given everything in this view.
    pub fn own_posterior(&self) -> Result<PosteriorState<N>, CoreError> {
        let base = PosteriorState::from_prior(Arc::clone(&self.prior));
        let obs = self.observations()?;
        base.update_many(obs.values().copied())
    }

    pub fn own_stats(&self) -> crate::algos::ArmStats {
        let mut stats = crate::algos::ArmStats::new(self.k());
        for step in &self.own {
            stats.record(step.arm, step.reward);
        }
        stats
    }

    /// Stable fingerprint of the view's content (prior excluded; it is shared
    /// by construction). Used to group identical information sets.
    pub fn fingerprint(&self) -> String {
        format!(
            "{:?}|{:?}|{:?}|{:?}",
            self.own, self.inbox, self.outbox, self.draws
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::Instance;

    fn prior() -> Arc<DiscretePrior<f64>> {
        Arc::new(
            DiscretePrior::new(vec![
                (Instance::new(vec![0.9, 0.1]).unwrap(), 0.5),
                (Instance::new(vec![0.1, 0.9]).unwrap(), 0.5),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn observations_dedup_share_and_forward() {
        let mut view = AgentView::new(0, 3, prior());
        view.record_own(1, 0, 1);
        view.deliver(Message {
            step: 1,
            phase: Phase::Share,
            sender: 1,
            recipients: [0].into_iter().collect(),
            kind: MessageKind::Share { arm: 0, reward: 0 },
        });
        // Relay of the same observation; must not double-count.
        view.deliver(Message {
            step: 1,
            phase: Phase::Forward,
            sender: 2,
            recipients: [0].into_iter().collect(),
            kind: MessageKind::Forward { origin: 1, arm: 0, reward: 0 },
        });
        let obs = view.observations().unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[&(1, 0)], (0, 1));
        assert_eq!(obs[&(1, 1)], (0, 0));
    }

    #[test]
    fn conflicting_payloads_rejected() {
        let mut view = AgentView::new(0, 3, prior());
        view.deliver(Message {
            step: 1,
            phase: Phase::Share,
            sender: 1,
            recipients: [0].into_iter().collect(),
            kind: MessageKind::Share { arm: 0, reward: 0 },
        });
        view.deliver(Message {
            step: 1,
            phase: Phase::Forward,
            sender: 2,
            recipients: [0].into_iter().collect(),
            kind: MessageKind::Forward { origin: 1, arm: 0, reward: 1 },
        });
        assert!(view.observations().is_err());
    }

    #[test]
    fn own_posterior_folds_received_info() {
        let mut view = AgentView::new(0, 2, prior());
        view.record_own(1, 0, 1);
        let post = view.own_posterior().unwrap();
        assert!((post.weights()[0] - 0.9).abs() < 1e-12);
    }
}
