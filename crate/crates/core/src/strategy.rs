//! The strategy interface: a pure decision procedure over (time, view).
//!
//! Phase methods are called against the previous phase's snapshot; the engine
//! delivers each phase atomically. Strategies hold no mutable state, which
//! keeps stop decisions re-derived from the view each step and makes cloning
//! a state tree cheap.

use std::collections::BTreeSet;

use crate::algos::{recommend_b, BMode};
use crate::draw::SharedDraw;
use crate::error::CoreError;
use crate::memo::Caches;
use crate::scalar::Scalar;
use crate::view::{AgentView, MessageKind};

pub struct StepCtx<'a, N: Scalar> {
    pub t: u64,
    pub horizon: u64,
    pub view: &'a AgentView<N>,
    pub draw: &'a SharedDraw<N>,
    pub caches: &'a Caches<N>,
}

/// A message a strategy wants to send; the engine stamps sender/step/phase
/// and enforces verifiability.
#[derive(Debug, Clone)]
pub struct Intent {
    pub kind: MessageKind,
    pub recipients: BTreeSet<usize>,
}

pub trait Strategy<N: Scalar>: Send {
    fn name(&self) -> String;

    /// Deviation-flag preamble; `None` means stay silent.
    fn flag(&self, _ctx: &StepCtx<N>) -> Result<Option<bool>, CoreError> {
        Ok(None)
    }

    fn choose_arm(&self, ctx: &StepCtx<N>) -> Result<usize, CoreError>;

    fn announce(&self, _ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        Ok(Vec::new())
    }

    fn share(&self, _ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        Ok(Vec::new())
    }

    fn forward(&self, _ctx: &StepCtx<N>) -> Result<Vec<Intent>, CoreError> {
        Ok(Vec::new())
    }

    fn clone_box(&self) -> Box<dyn Strategy<N>>;
}

impl<N: Scalar> Clone for Box<dyn Strategy<N>> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Single-agent fallback: play B on the own view, share nothing.
#[derive(Debug, Clone)]
pub struct PiB {
    pub mode: BMode,
}

impl PiB {
    pub fn exact() -> Self {
        Self { mode: BMode::Exact }
    }
}

impl<N: Scalar> Strategy<N> for PiB {
    fn name(&self) -> String {
        match self.mode {
            BMode::Exact => "pi_b".into(),
            BMode::Index => "pi_b_index".into(),
        }
    }

    fn choose_arm(&self, ctx: &StepCtx<N>) -> Result<usize, CoreError> {
        let post = ctx.view.own_posterior()?;
        let stats = ctx.view.own_stats();
        recommend_b(&post, &stats, ctx.t, ctx.horizon, self.mode, ctx.caches)
    }

    fn clone_box(&self) -> Box<dyn Strategy<N>> {
        Box::new(self.clone())
    }
}
