//! Base algorithms: the single-agent fallback B and the multi-agent
//! recommenders (MASE, MAFAEE, MAUCB, MATS, plus a toy asymmetric
//! victim-picking rule used by the verification harness).
//!
//! Recommenders are pure functions of (state, posterior, active set, time);
//! state advances return-by-mutation on integer statistics only, so states
//! hash and compare exactly in both arithmetic modes.

use std::collections::BTreeSet;

use crate::bandit::{best_index, worst_index, PosteriorState};
use crate::error::CoreError;
use crate::memo::Caches;
use crate::scalar::Scalar;

/// Pull counts and success counts per arm. Empirical means are derived on
/// demand; an unpulled arm reports mean 0 but is shadowed by an infinite
/// confidence radius wherever it matters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArmStats {
    pulls: Vec<u64>,
    successes: Vec<u64>,
}

impl ArmStats {
    pub fn new(k: usize) -> Self {
        Self {
            pulls: vec![0; k],
            successes: vec![0; k],
        }
    }

    pub fn record(&mut self, arm: usize, reward: u8) {
        self.pulls[arm] += 1;
        self.successes[arm] += u64::from(reward);
    }

    pub fn pulls(&self, arm: usize) -> u64 {
        self.pulls[arm]
    }

    pub fn mean(&self, arm: usize) -> f64 {
        if self.pulls[arm] == 0 {
            0.0
        } else {
            self.successes[arm] as f64 / self.pulls[arm] as f64
        }
    }

    pub fn k(&self) -> usize {
        self.pulls.len()
    }

    fn means(&self) -> Vec<f64> {
        (0..self.k()).map(|a| self.mean(a)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AlgorithmKind {
    Mase,
    Mafaee,
    Maucb,
    Mats,
    Victim,
}

impl AlgorithmKind {
    /// Symmetric algorithms hand every active agent the same arm each step.
    pub fn symmetric(self) -> bool {
        matches!(self, AlgorithmKind::Maucb | AlgorithmKind::Mats)
    }

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Mase => "mase",
            AlgorithmKind::Mafaee => "mafaee",
            AlgorithmKind::Maucb => "maucb",
            AlgorithmKind::Mats => "mats",
            AlgorithmKind::Victim => "victim",
        }
    }
}

/// Algorithm choice plus tunables that arrive via configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AlgorithmSpec {
    pub kind: AlgorithmKind,
    /// Overrides the MAFAEE exploration length.
    pub mafaee_n: Option<u64>,
}

impl AlgorithmSpec {
    pub fn new(kind: AlgorithmKind) -> Self {
        Self {
            kind,
            mafaee_n: None,
        }
    }
}

/// Exploration length `round(T^(2/3) (K ln T)^(1/3) / m^(1/3))`, clamped to
/// `[1, T]`.
pub fn mafaee_exploration_length(horizon: u64, k: usize, m: usize) -> u64 {
    let t = horizon as f64;
    let raw = t.powf(2.0 / 3.0) * (k as f64 * t.ln()).powf(1.0 / 3.0) / (m as f64).powf(1.0 / 3.0);
    let rounded = raw.round();
    if !rounded.is_finite() || rounded < 1.0 {
        1
    } else if rounded >= horizon as f64 {
        horizon.max(1)
    } else {
        rounded as u64
    }
}

/// UCB index argmax with radius `sqrt(2 log(TK) / n)`. Unpulled arms have an
/// infinite index; ties break to the lowest arm index. `restrict` masks the
/// candidate arms.
pub fn ucb_argmax_from(
    means: &[f64],
    pulls: &[u64],
    log_tk: f64,
    restrict: Option<&[bool]>,
) -> usize {
    let allowed = |a: usize| restrict.map_or(true, |mask| mask[a]);
    for a in 0..means.len() {
        if allowed(a) && pulls[a] == 0 {
            return a;
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for a in 0..means.len() {
        if !allowed(a) {
            continue;
        }
        let score = means[a] + (2.0 * log_tk / pulls[a] as f64).sqrt();
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((a, score)),
        }
    }
    best.expect("no allowed arm").0
}

/// Arms surviving the elimination rule
/// `mean_a + rad_a >= max_b (mean_b - rad_b)` over the active set.
/// Unpulled arms always survive and never tighten the threshold.
pub fn mase_surviving_arms(
    means: &[f64],
    pulls: &[u64],
    log_tk: f64,
    active: &[bool],
) -> Vec<bool> {
    let rad = |a: usize| (2.0 * log_tk / pulls[a] as f64).sqrt();
    let mut threshold = f64::NEG_INFINITY;
    for a in 0..means.len() {
        if active[a] && pulls[a] > 0 {
            threshold = threshold.max(means[a] - rad(a));
        }
    }
    let mut keep = vec![false; means.len()];
    for a in 0..means.len() {
        if !active[a] {
            continue;
        }
        keep[a] = pulls[a] == 0 || means[a] + rad(a) >= threshold;
    }
    keep
}

/// Actions for the active agents, aligned with the active set's sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recommendation {
    pub arms: Vec<usize>,
}

impl Recommendation {
    /// Arm for a specific agent of the sorted active set.
    pub fn arm_for(&self, active: &BTreeSet<usize>, agent: usize) -> Option<usize> {
        active
            .iter()
            .position(|&a| a == agent)
            .map(|rank| self.arms[rank])
    }
}

/// Exact-mode view of one recommendation query: deterministic algorithms
/// yield a single branch, shared-randomness ones a weighted mixture over the
/// posterior support.
#[derive(Debug, Clone)]
pub enum RecommendBranches<N: Scalar> {
    One(Recommendation),
    Mixture(Vec<(usize, N, Recommendation)>),
}

/// State of the multi-agent algorithm, derived from the shared history.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlgorithmState {
    kind: AlgorithmKind,
    k: usize,
    horizon: u64,
    m: usize,
    stats: ArmStats,
    /// MASE active-arm set.
    active_arms: Vec<bool>,
    /// MAFAEE exploration length N.
    explore_len: u64,
    /// MAFAEE committed arm, set once t crosses N.
    committed: Option<usize>,
    /// Shared random stream position (MATS).
    mats_draws: u64,
}

impl AlgorithmState {
    pub fn new(spec: AlgorithmSpec, k: usize, horizon: u64, m: usize) -> Self {
        let explore_len = spec
            .mafaee_n
            .unwrap_or_else(|| mafaee_exploration_length(horizon, k, m));
        Self {
            kind: spec.kind,
            k,
            horizon,
            m,
            stats: ArmStats::new(k),
            active_arms: vec![true; k],
            explore_len,
            committed: None,
            mats_draws: 0,
        }
    }

    pub fn kind(&self) -> AlgorithmKind {
        self.kind
    }

    pub fn stats(&self) -> &ArmStats {
        &self.stats
    }

    pub fn active_arms(&self) -> &[bool] {
        &self.active_arms
    }

    pub fn explore_len(&self) -> u64 {
        self.explore_len
    }

    fn log_tk(&self) -> f64 {
        ((self.horizon.max(1) as f64) * self.k as f64).ln()
    }

    /// Recommendation with the shared draw already resolved to a posterior
    /// support index (only consulted by MATS).
    pub fn recommend_at<N: Scalar>(
        &self,
        post: &PosteriorState<N>,
        active: &BTreeSet<usize>,
        t: u64,
        mats_index: Option<usize>,
    ) -> Result<Recommendation, CoreError> {
        if active.is_empty() {
            return Ok(Recommendation { arms: vec![] });
        }
        let n = active.len();
        let arms = match self.kind {
            AlgorithmKind::Mase => {
                let active_arm_list: Vec<usize> = (0..self.k)
                    .filter(|&a| self.active_arms[a])
                    .collect();
                let offset = (t.saturating_sub(1)) as usize % active_arm_list.len();
                (0..n)
                    .map(|rank| active_arm_list[(rank + offset) % active_arm_list.len()])
                    .collect()
            }
            AlgorithmKind::Mafaee => {
                if t <= self.explore_len {
                    if n >= self.k {
                        (0..n).map(|rank| rank % self.k).collect()
                    } else {
                        // With fewer agents than arms the fixed partition
                        // would starve arms; cycle instead.
                        (0..n)
                            .map(|rank| (rank + t as usize) % self.k)
                            .collect()
                    }
                } else {
                    let arm = self
                        .committed
                        .unwrap_or_else(|| best_index(&self.stats.means()));
                    vec![arm; n]
                }
            }
            AlgorithmKind::Maucb => {
                let arm = ucb_argmax_from(
                    &self.stats.means(),
                    &self.stats.pulls,
                    self.log_tk(),
                    None,
                );
                vec![arm; n]
            }
            AlgorithmKind::Mats => {
                let idx = mats_index.ok_or_else(|| {
                    CoreError::MissingDraw("MATS recommendation without a shared draw".into())
                })?;
                if idx >= post.len() {
                    return Err(CoreError::MissingDraw(format!(
                        "MATS draw index {idx} outside support of size {}",
                        post.len()
                    )));
                }
                let arm = post.prior().instance(idx).best_arm();
                vec![arm; n]
            }
            AlgorithmKind::Victim => {
                // Lowest-index active agent is handed the worst posterior
                // arm, everyone else the best.
                let means = post.arm_means();
                let worst = worst_index(&means);
                let best = best_index(&means);
                (0..n).map(|rank| if rank == 0 { worst } else { best }).collect()
            }
        };
        Ok(Recommendation { arms })
    }

    /// All recommendation branches for exact enumeration. Zero-weight support
    /// points are skipped.
    pub fn recommend_branches<N: Scalar>(
        &self,
        post: &PosteriorState<N>,
        active: &BTreeSet<usize>,
        t: u64,
    ) -> Result<RecommendBranches<N>, CoreError> {
        match self.kind {
            AlgorithmKind::Mats => {
                let mut branches = Vec::new();
                for (j, w) in post.weights().iter().enumerate() {
                    if w.to_f64() == 0.0 {
                        continue;
                    }
                    let rec = self.recommend_at(post, active, t, Some(j))?;
                    branches.push((j, w.clone(), rec));
                }
                Ok(RecommendBranches::Mixture(branches))
            }
            _ => Ok(RecommendBranches::One(
                self.recommend_at(post, active, t, None)?,
            )),
        }
    }

    /// Folds one step of shared observations and applies the per-step rules:
    /// MASE elimination, the MAFAEE commit at the end of exploration, the
    /// MATS stream position.
    pub fn advance(&mut self, observations: &[(usize, u8)], t: u64) {
        for &(arm, reward) in observations {
            self.stats.record(arm, reward);
        }
        match self.kind {
            AlgorithmKind::Mase => self.eliminate(),
            AlgorithmKind::Mafaee => {
                if t >= self.explore_len && self.committed.is_none() {
                    self.committed = Some(best_index(&self.stats.means()));
                }
            }
            AlgorithmKind::Mats => self.mats_draws += 1,
            _ => {}
        }
    }

    /// Applies the elimination rule; the empirically best arm always
    /// survives, so the active set never empties.
    pub fn eliminate(&mut self) {
        self.active_arms = mase_surviving_arms(
            &self.stats.means(),
            &self.stats.pulls,
            self.log_tk(),
            &self.active_arms,
        );
        debug_assert!(self.active_arms.iter().any(|&a| a));
    }
}

/// How the single-agent fallback picks arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BMode {
    /// Bayes-optimal dynamic program over the discrete posterior.
    Exact,
    /// UCB index policy over the agent's own observations.
    Index,
}

/// Expected total reward of Bayes-optimal single-agent play from step `t`
/// through `horizon`, memoized on `(t, posterior weights)`.
pub fn value_of_b<N: Scalar>(
    post: &PosteriorState<N>,
    t: u64,
    horizon: u64,
    caches: &Caches<N>,
) -> Result<N, CoreError> {
    if t > horizon {
        return Ok(N::zero());
    }
    check_b_budget(post.k(), horizon - t + 1, caches.budget)?;
    let key = (t, post.key());
    if let Some(hit) = caches.b_values.borrow().get(&key) {
        return Ok(hit.clone());
    }
    let value = b_action_values(post, t, horizon, caches)?
        .into_iter()
        .reduce(|best, v| if v > best { v } else { best })
        .expect("at least one arm");
    caches.b_values.borrow_mut().insert(key, value.clone());
    Ok(value)
}

/// First action of the Bayes-optimal program (`Exact`) or the single-agent
/// UCB pick over own statistics (`Index`). Ties break to the lowest arm.
pub fn recommend_b<N: Scalar>(
    post: &PosteriorState<N>,
    own_stats: &ArmStats,
    t: u64,
    horizon: u64,
    mode: BMode,
    caches: &Caches<N>,
) -> Result<usize, CoreError> {
    match mode {
        BMode::Exact => {
            let values = b_action_values(post, t, horizon, caches)?;
            Ok(best_index(&values))
        }
        BMode::Index => {
            let log_tk = ((horizon.max(1) as f64) * post.k() as f64).ln();
            let means = (0..own_stats.k()).map(|a| own_stats.mean(a)).collect::<Vec<_>>();
            Ok(ucb_argmax_from(&means, &own_stats.pulls, log_tk, None))
        }
    }
}

fn b_action_values<N: Scalar>(
    post: &PosteriorState<N>,
    t: u64,
    horizon: u64,
    caches: &Caches<N>,
) -> Result<Vec<N>, CoreError> {
    let mut values = Vec::with_capacity(post.k());
    for arm in 0..post.k() {
        let p1 = post.mean(arm);
        let p0 = N::one() - p1.clone();
        let mut q = N::zero();
        if p1.to_f64() > 0.0 {
            let next = post.update(arm, 1)?;
            q = q + p1.clone() * (N::one() + value_of_b(&next, t + 1, horizon, caches)?);
        }
        if p0.to_f64() > 0.0 {
            let next = post.update(arm, 0)?;
            q = q + p0 * value_of_b(&next, t + 1, horizon, caches)?;
        }
        values.push(q);
    }
    Ok(values)
}

fn check_b_budget(k: usize, remaining: u64, budget: u64) -> Result<(), CoreError> {
    let branch = (2 * k) as u128;
    let mut nodes: u128 = 1;
    for _ in 0..remaining {
        nodes = nodes.saturating_mul(branch);
        if nodes > budget as u128 {
            return Err(CoreError::HorizonTooLarge {
                nodes,
                budget,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{DiscretePrior, Instance};
    use num::BigRational;
    use std::sync::Arc;

    fn r(n: u64, d: u64) -> BigRational {
        BigRational::from_ratio(n, d)
    }

    fn micro1() -> PosteriorState<BigRational> {
        let prior = Arc::new(
            DiscretePrior::new(vec![
                (Instance::new(vec![r(9, 10), r(1, 10)]).unwrap(), r(1, 2)),
                (Instance::new(vec![r(1, 10), r(9, 10)]).unwrap(), r(1, 2)),
            ])
            .unwrap(),
        );
        PosteriorState::from_prior(prior)
    }

    fn set(agents: &[usize]) -> BTreeSet<usize> {
        agents.iter().copied().collect()
    }

    #[test]
    fn ucb_prefers_untried_arm() {
        // Untried arms have an infinite index; lowest untried wins.
        let pick = ucb_argmax_from(&[0.9, 0.0, 0.0], &[10, 0, 0], 100f64.ln(), None);
        assert_eq!(pick, 1);
    }

    #[test]
    fn ucb_equal_radii_argmax_by_mean() {
        // n=(8,8), means (0.6, 0.5), TK = 100: radii cancel.
        let pick = ucb_argmax_from(&[0.6, 0.5], &[8, 8], 100f64.ln(), None);
        assert_eq!(pick, 0);
    }

    #[test]
    fn ucb_tie_breaks_low_index() {
        let pick = ucb_argmax_from(&[0.5, 0.5], &[8, 8], 100f64.ln(), None);
        assert_eq!(pick, 0);
    }

    #[test]
    fn mase_splits_agents_evenly() {
        let state = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Mase), 2, 10, 4);
        let post = micro1();
        let rec = state
            .recommend_at(&post, &set(&[0, 1, 2, 3]), 1, None)
            .unwrap();
        let on_zero = rec.arms.iter().filter(|&&a| a == 0).count();
        assert_eq!(on_zero, 2);
        assert_eq!(rec.arms.len(), 4);
    }

    #[test]
    fn mase_covers_all_arms_when_fewer_agents() {
        // m=2 < K=4: the rotating remainder must reach every arm over steps.
        let state = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Mase), 4, 100, 2);
        let post = micro1(); // K mismatch is fine; MASE ignores the posterior
        let mut seen = [false; 4];
        for t in 1..=4 {
            let rec = state.recommend_at(&post, &set(&[0, 1]), t, None).unwrap();
            for &a in &rec.arms {
                seen[a] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn mase_elimination_direct_evaluation() {
        // n=(100,100), means (0.9, 0.1), TK = 1e4.
        // rad = sqrt(2 ln 1e4 / 100) ≈ 0.42919; 0.1 + rad ≈ 0.529 >= 0.9 - rad
        // ≈ 0.471, so the rule keeps BOTH arms at these counts.
        let log_tk = 10_000f64.ln();
        let rad = (2.0 * log_tk / 100.0).sqrt();
        assert!(0.1 + rad >= 0.9 - rad);
        let keep = mase_surviving_arms(&[0.9, 0.1], &[100, 100], log_tk, &[true, true]);
        assert_eq!(keep, vec![true, true]);

        // With n=(1000,1000) the radius shrinks to ≈ 0.136 and arm 1 goes.
        let rad = (2.0 * log_tk / 1000.0).sqrt();
        assert!(0.1 + rad < 0.9 - rad);
        let keep = mase_surviving_arms(&[0.9, 0.1], &[1000, 1000], log_tk, &[true, true]);
        assert_eq!(keep, vec![true, false]);
    }

    #[test]
    fn mase_identical_stats_no_elimination() {
        let keep = mase_surviving_arms(&[0.4, 0.4, 0.4], &[50, 50, 50], 100f64.ln(), &[true; 3]);
        assert_eq!(keep, vec![true, true, true]);
    }

    #[test]
    fn mase_empirical_best_survives() {
        // The arm attaining max(mean - rad) trivially satisfies the rule.
        for means in [[0.9, 0.2], [0.3, 0.8], [0.5, 0.5]] {
            let keep = mase_surviving_arms(&means, &[40, 40], 1000f64.ln(), &[true, true]);
            let best = if means[0] >= means[1] { 0 } else { 1 };
            assert!(keep[best]);
        }
    }

    #[test]
    fn mase_never_recommends_eliminated_arm() {
        let mut state = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Mase), 2, 1000, 2);
        // Feed lopsided observations until arm 1 is eliminated.
        for t in 1..=400 {
            state.advance(&[(0, 1), (1, 0)], t);
            if !state.active_arms()[1] {
                break;
            }
        }
        assert!(!state.active_arms()[1], "arm 1 should eventually drop");
        let post = micro1();
        for t in 1..=5 {
            let rec = state.recommend_at(&post, &set(&[0, 1]), t, None).unwrap();
            assert!(rec.arms.iter().all(|&a| a == 0));
        }
    }

    #[test]
    fn mafaee_length_formula() {
        // T=1000, K=8, m=8: round(100 * (8 ln 1000)^(1/3) / 2).
        let t: f64 = 1000.0;
        let expected = (t.powf(2.0 / 3.0) * (8.0 * t.ln()).powf(1.0 / 3.0) / 2.0).round() as u64;
        assert_eq!(mafaee_exploration_length(1000, 8, 8), expected);
        assert_eq!(expected, 190);
    }

    #[test]
    fn mafaee_length_clamps() {
        assert_eq!(mafaee_exploration_length(10, 1, 1_000_000_000), 1);
        assert_eq!(mafaee_exploration_length(4, 64, 1), 4);
    }

    #[test]
    fn mafaee_partition_fixed_then_committed() {
        let spec = AlgorithmSpec {
            kind: AlgorithmKind::Mafaee,
            mafaee_n: Some(2),
        };
        let mut state = AlgorithmState::new(spec, 2, 6, 4);
        let post = micro1();
        let active = set(&[0, 1, 2, 3]);
        let r1 = state.recommend_at(&post, &active, 1, None).unwrap();
        let r2 = state.recommend_at(&post, &active, 2, None).unwrap();
        assert_eq!(r1, r2, "fixed assignment during exploration");
        assert_eq!(r1.arms, vec![0, 1, 0, 1]);
        state.advance(&[(0, 1), (1, 0), (0, 1), (1, 0)], 1);
        state.advance(&[(0, 1), (1, 0), (0, 1), (1, 0)], 2);
        let r3 = state.recommend_at(&post, &active, 3, None).unwrap();
        assert_eq!(r3.arms, vec![0; 4], "all agents on best arm after N");
    }

    #[test]
    fn mats_same_draw_same_recommendation() {
        let state = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Mats), 2, 10, 2);
        let post = micro1();
        let a = state
            .recommend_at(&post, &set(&[0, 1]), 3, Some(1))
            .unwrap();
        let b = state
            .recommend_at(&post, &set(&[0, 1]), 3, Some(1))
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.arms, vec![1, 1], "support point 1 has best arm 1");
        assert!(state
            .recommend_at(&post, &set(&[0, 1]), 3, None)
            .is_err());
    }

    #[test]
    fn victim_assigns_worst_arm_to_lowest_agent() {
        let state = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Victim), 2, 10, 2);
        let post = micro1().update(0, 1).unwrap(); // means now (0.82, 0.18)
        let rec = state.recommend_at(&post, &set(&[0, 1]), 2, None).unwrap();
        assert_eq!(rec.arms, vec![1, 0]);
    }

    #[test]
    fn recommend_b_edge_cases() {
        let caches = Caches::with_default_budget();
        let post = micro1();
        // One step left: myopic argmax of posterior means (tie -> arm 0).
        let arm = recommend_b(&post, &ArmStats::new(2), 2, 2, BMode::Exact, &caches).unwrap();
        assert_eq!(arm, 0);
        // Two steps left on the symmetric prior: tie broken to arm 0.
        let arm = recommend_b(&post, &ArmStats::new(2), 1, 2, BMode::Exact, &caches).unwrap();
        assert_eq!(arm, 0);
        // Degenerate prior: best true arm at every step.
        let prior = Arc::new(
            DiscretePrior::new(vec![(
                Instance::new(vec![r(3, 10), r(7, 10)]).unwrap(),
                r(1, 1),
            )])
            .unwrap(),
        );
        let post = PosteriorState::from_prior(prior);
        for t in 1..=3 {
            let arm = recommend_b(&post, &ArmStats::new(2), t, 3, BMode::Exact, &caches).unwrap();
            assert_eq!(arm, 1);
        }
    }

    #[test]
    fn value_of_b_empty_horizon() {
        let caches = Caches::with_default_budget();
        assert_eq!(value_of_b(&micro1(), 3, 2, &caches).unwrap(), r(0, 1));
    }

    #[test]
    fn value_of_b_micro1_two_steps() {
        // Hand DP: 0.5 immediate + E[max posterior mean] = 0.5 + 0.82 = 1.32.
        let caches = Caches::with_default_budget();
        let v = value_of_b(&micro1(), 1, 2, &caches).unwrap();
        assert_eq!(v, r(33, 25));
    }

    #[test]
    fn value_of_b_degenerate_prior() {
        let caches = Caches::with_default_budget();
        let prior = Arc::new(
            DiscretePrior::new(vec![(
                Instance::new(vec![r(3, 10), r(7, 10)]).unwrap(),
                r(1, 1),
            )])
            .unwrap(),
        );
        let post = PosteriorState::from_prior(prior);
        let v = value_of_b(&post, 1, 5, &caches).unwrap();
        assert_eq!(v, r(7, 10) * r(5, 1));
    }

    #[test]
    fn value_of_b_budget_guard() {
        let caches = Caches::new(100);
        let err = value_of_b(&micro1(), 1, 30, &caches).unwrap_err();
        assert!(err.to_string().contains("exact horizon too large"));
    }

    // Brute-force oracle: enumerate every deterministic policy tree and
    // evaluate it by exhaustive reward-path expansion. Independent of the
    // memoized dynamic program above.
    #[derive(Clone)]
    struct PolicyTree {
        arm: usize,
        children: Option<Box<(PolicyTree, PolicyTree)>>, // on reward 0 / 1
    }

    fn all_policies(k: usize, depth: u64) -> Vec<PolicyTree> {
        if depth == 0 {
            return vec![];
        }
        let mut out = Vec::new();
        if depth == 1 {
            for arm in 0..k {
                out.push(PolicyTree { arm, children: None });
            }
            return out;
        }
        let subs = all_policies(k, depth - 1);
        for arm in 0..k {
            for lo in &subs {
                for hi in &subs {
                    out.push(PolicyTree {
                        arm,
                        children: Some(Box::new((lo.clone(), hi.clone()))),
                    });
                }
            }
        }
        out
    }

    fn policy_value(policy: &PolicyTree, post: &PosteriorState<BigRational>) -> BigRational {
        let p1 = post.mean(policy.arm);
        let p0 = BigRational::from_int(1) - p1.clone();
        let mut total = p1.clone();
        if let Some(children) = &policy.children {
            if p0.to_f64() > 0.0 {
                let next = post.update(policy.arm, 0).unwrap();
                total = total + p0 * policy_value(&children.0, &next);
            }
            if p1.to_f64() > 0.0 {
                let next = post.update(policy.arm, 1).unwrap();
                total = total + p1 * policy_value(&children.1, &next);
            }
        }
        total
    }

    #[test]
    fn value_of_b_is_bayes_optimal_vs_policy_enumeration() {
        let caches = Caches::with_default_budget();
        for horizon in 1..=3u64 {
            let post = micro1();
            let dp = value_of_b(&post, 1, horizon, &caches).unwrap();
            let best = all_policies(2, horizon)
                .iter()
                .map(|p| policy_value(p, &post))
                .max()
                .unwrap();
            assert_eq!(dp, best, "horizon {horizon}");
        }
    }

    #[test]
    fn value_of_b_memo_transparency() {
        // Fresh caches vs reused caches give identical values.
        let post = micro1();
        let shared = Caches::with_default_budget();
        let v1 = value_of_b(&post, 1, 3, &shared).unwrap();
        let v2 = value_of_b(&post, 1, 3, &shared).unwrap();
        let fresh = Caches::with_default_budget();
        let v3 = value_of_b(&post, 1, 3, &fresh).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1, v3);
    }
}
