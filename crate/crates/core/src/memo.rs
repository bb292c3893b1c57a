//! Memo tables shared across one evaluation root.
//!
//! Keys are complete (time, group, algorithm state, posterior weights), so a
//! table may be reused across branches of the same evaluation. Tables are not
//! thread-safe; concurrent roots own disjoint tables.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::algos::AlgorithmState;
use crate::oer::OerVariant;
use crate::scalar::Scalar;

pub(crate) type BValueKey<N> = (u64, Vec<<N as Scalar>::Key>);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct OerKey<N: Scalar> {
    pub t: u64,
    pub active_mask: u64,
    pub algo: AlgorithmState,
    pub posterior: Vec<N::Key>,
    pub variant: OerVariant,
}

/// Per-root caches: single-agent continuation values and the stopping
/// recursion, plus a log for piggybacked property checks.
pub struct Caches<N: Scalar> {
    pub(crate) b_values: RefCell<HashMap<BValueKey<N>, N>>,
    pub(crate) oer: RefCell<HashMap<OerKey<N>, Vec<N>>>,
    /// Node budget for exact enumeration; exceeded budgets fail loudly.
    pub budget: u64,
    pub props: PropertyLog,
}

pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

impl<N: Scalar> Caches<N> {
    pub fn new(budget: u64) -> Self {
        Self {
            b_values: RefCell::new(HashMap::new()),
            oer: RefCell::new(HashMap::new()),
            budget,
            props: PropertyLog::default(),
        }
    }

    pub fn with_default_budget() -> Self {
        Self::new(DEFAULT_NODE_BUDGET)
    }

    /// Enables per-node property assertions on the stopping recursion.
    pub fn with_property_checks(budget: u64) -> Self {
        let mut c = Self::new(budget);
        c.props.enabled = true;
        c
    }
}

/// Counters for invariant checks piggybacked on recursion nodes.
#[derive(Debug, Default)]
pub struct PropertyLog {
    pub enabled: bool,
    pub nodes_checked: RefCell<u64>,
    pub violations: RefCell<Vec<String>>,
}

impl PropertyLog {
    pub fn record(&self, ok: bool, describe: impl FnOnce() -> String) {
        *self.nodes_checked.borrow_mut() += 1;
        if !ok {
            self.violations.borrow_mut().push(describe());
        }
    }

    pub fn violation_count(&self) -> usize {
        self.violations.borrow().len()
    }

    pub fn nodes(&self) -> u64 {
        *self.nodes_checked.borrow()
    }
}
