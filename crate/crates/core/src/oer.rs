//! Optimistic expected reward: the per-agent continuation values that drive
//! each agent's stay/stop decision.
//!
//! The full variant scans candidate subsets of the currently active group by
//! decreasing size (lexicographic within a size class) and returns the first
//! whose members all strictly prefer continuing over the single-agent
//! fallback; the empty set always qualifies. The efficient variant tests only
//! the full current group and otherwise collapses everyone to the fallback
//! value. Values are memoized on (time, group, algorithm state, posterior).

use std::collections::{BTreeMap, BTreeSet};

use crate::algos::{value_of_b, AlgorithmState, RecommendBranches};
use crate::bandit::{enumerate_outcomes, PosteriorState};
use crate::error::CoreError;
use crate::memo::{Caches, OerKey};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OerVariant {
    Full,
    Efficient,
}

/// Root result: the per-agent value vector, the stopping set it induces, and
/// the shared-posterior fallback value.
#[derive(Debug, Clone)]
pub struct OerOutcome<N: Scalar> {
    pub rho: Vec<N>,
    pub selected: BTreeSet<usize>,
    pub vb: N,
}

/// Agents whose value strictly exceeds their fallback value. In float mode
/// "strict" carries the fixed margin, so ties resolve to stopping.
pub fn stopping_set<N: Scalar>(rho: &[N], vb: &[N]) -> BTreeSet<usize> {
    rho.iter()
        .zip(vb)
        .enumerate()
        .filter(|(_, (r, b))| r.strictly_above(b))
        .map(|(i, _)| i)
        .collect()
}

/// Evaluates the recursion at `(t, active, algo, post)` and fills the entries
/// of agents already outside the group from `inactive_values` (their own-view
/// fallback values) when provided.
pub fn oer_root<N: Scalar>(
    t: u64,
    horizon: u64,
    m: usize,
    active: &BTreeSet<usize>,
    algo: &AlgorithmState,
    post: &PosteriorState<N>,
    variant: OerVariant,
    caches: &Caches<N>,
    inactive_values: &BTreeMap<usize, N>,
) -> Result<OerOutcome<N>, CoreError> {
    let mut rho = eval(t, horizon, m, active, algo, post, variant, caches)?;
    let vb = value_of_b(post, t, horizon, caches)?;
    for (agent, value) in inactive_values {
        if !active.contains(agent) {
            rho[*agent] = value.clone();
        }
    }
    let selected: BTreeSet<usize> = active
        .iter()
        .copied()
        .filter(|&i| rho[i].strictly_above(&vb))
        .collect();
    Ok(OerOutcome { rho, selected, vb })
}

fn eval<N: Scalar>(
    t: u64,
    horizon: u64,
    m: usize,
    active: &BTreeSet<usize>,
    algo: &AlgorithmState,
    post: &PosteriorState<N>,
    variant: OerVariant,
    caches: &Caches<N>,
) -> Result<Vec<N>, CoreError> {
    if t > horizon {
        return Ok(vec![N::zero(); m]);
    }
    check_budget(m, horizon - t + 1, caches.budget)?;
    let key = OerKey {
        t,
        active_mask: mask_of(active),
        algo: algo.clone(),
        posterior: post.key(),
        variant,
    };
    if let Some(hit) = caches.oer.borrow().get(&key) {
        return Ok(hit.clone());
    }

    let vb = value_of_b(post, t, horizon, caches)?;
    let mut result: Option<Vec<N>> = None;
    let mut full_group_rho: Option<Vec<N>> = None;

    let candidates: Vec<BTreeSet<usize>> = match variant {
        OerVariant::Full => subsets_decreasing(active),
        OerVariant::Efficient => vec![active.clone(), BTreeSet::new()],
    };

    for candidate in candidates {
        let rho = candidate_values(
            t, horizon, m, &candidate, algo, post, variant, caches, &vb,
        )?;
        if full_group_rho.is_none() {
            full_group_rho = Some(rho.clone());
        }
        let all_strict = candidate.iter().all(|&i| rho[i].strictly_above(&vb));
        if all_strict {
            if caches.props.enabled {
                check_properties(
                    t, horizon, m, active, &candidate, &rho, &vb,
                    full_group_rho.as_ref().unwrap(),
                    algo, post, variant, caches,
                )?;
            }
            result = Some(rho);
            break;
        }
    }

    // The empty candidate always qualifies, so the scan cannot fall through.
    let rho = result.ok_or_else(|| CoreError::Invariant("subset scan found no candidate".into()))?;
    caches.oer.borrow_mut().insert(key, rho.clone());
    Ok(rho)
}

/// One candidate group's value vector: members get the one-step expectation
/// under the algorithm's recommendation plus the recursive continuation;
/// everyone else gets the shared-posterior fallback value.
#[allow(clippy::too_many_arguments)]
fn candidate_values<N: Scalar>(
    t: u64,
    horizon: u64,
    m: usize,
    candidate: &BTreeSet<usize>,
    algo: &AlgorithmState,
    post: &PosteriorState<N>,
    variant: OerVariant,
    caches: &Caches<N>,
    vb: &N,
) -> Result<Vec<N>, CoreError> {
    let mut rho = vec![vb.clone(); m];
    if candidate.is_empty() {
        return Ok(rho);
    }
    let members: Vec<usize> = candidate.iter().copied().collect();
    for i in &members {
        rho[*i] = N::zero();
    }
    let branches = match algo.recommend_branches(post, candidate, t)? {
        RecommendBranches::One(rec) => vec![(N::one(), rec)],
        RecommendBranches::Mixture(mix) => {
            mix.into_iter().map(|(_, w, rec)| (w, rec)).collect()
        }
    };
    for (branch_weight, rec) in branches {
        for outcome in enumerate_outcomes(post, &rec.arms)? {
            if outcome.probability.to_f64() == 0.0 {
                continue;
            }
            let obs: Vec<(usize, u8)> = rec
                .arms
                .iter()
                .zip(&outcome.rewards)
                .map(|(&arm, &r)| (arm, r))
                .collect();
            let next_post = post.update_many(obs.iter().copied())?;
            let mut next_algo = algo.clone();
            next_algo.advance(&obs, t);
            let child = eval(
                t + 1, horizon, m, candidate, &next_algo, &next_post, variant, caches,
            )?;
            let p = branch_weight.clone() * outcome.probability.clone();
            for (rank, &agent) in members.iter().enumerate() {
                let gain = N::from_int(u64::from(outcome.rewards[rank])) + child[agent].clone();
                rho[agent] = rho[agent].clone() + p.clone() * gain;
            }
        }
    }
    Ok(rho)
}

/// Piggybacked node assertions, run on every node expanded while property
/// checking is enabled:
/// - every entry stays at or above the fallback value;
/// - when the selected group is everyone, the returned values must equal the
///   recomputed one-step expansion;
/// - when anyone collapsed to the fallback, some member of the full group
///   must fail the strict test.
#[allow(clippy::too_many_arguments)]
fn check_properties<N: Scalar>(
    t: u64,
    horizon: u64,
    m: usize,
    active: &BTreeSet<usize>,
    selected: &BTreeSet<usize>,
    rho: &[N],
    vb: &N,
    full_group_rho: &[N],
    algo: &AlgorithmState,
    post: &PosteriorState<N>,
    variant: OerVariant,
    caches: &Caches<N>,
) -> Result<(), CoreError> {
    let props = &caches.props;
    for &i in active {
        let ok = rho[i].strictly_above(vb) || rho[i].close_to(vb);
        props.record(ok, || {
            format!("value below fallback at t={t}, agent {i}: {} < {vb}", rho[i])
        });
    }
    let everyone: BTreeSet<usize> = (0..m).collect();
    if *selected == everyone {
        let recomputed = candidate_values(
            t, horizon, m, selected, algo, post, variant, caches, vb,
        )?;
        for &i in selected {
            let ok = recomputed[i].close_to(&rho[i]);
            props.record(ok, || {
                format!(
                    "all-in value mismatch at t={t}, agent {i}: {} vs {}",
                    recomputed[i], rho[i]
                )
            });
        }
    }
    if selected != active {
        // Someone collapsed: direct search for a full-group member that does
        // not strictly beat the fallback.
        let witness = active
            .iter()
            .find(|&&j| !full_group_rho[j].strictly_above(vb));
        props.record(witness.is_some(), || {
            format!("collapse at t={t} without a non-improving member of the full group")
        });
    }
    Ok(())
}

fn mask_of(set: &BTreeSet<usize>) -> u64 {
    let mut mask = 0u64;
    for &i in set {
        assert!(i < 64, "agent indices above 63 unsupported");
        mask |= 1 << i;
    }
    mask
}

/// All subsets ordered by decreasing size, lexicographic on sorted agent
/// indices within a size class.
fn subsets_decreasing(set: &BTreeSet<usize>) -> Vec<BTreeSet<usize>> {
    let items: Vec<usize> = set.iter().copied().collect();
    let mut out = Vec::with_capacity(1 << items.len());
    for size in (0..=items.len()).rev() {
        combinations(&items, size, &mut out);
    }
    out
}

fn combinations(items: &[usize], size: usize, out: &mut Vec<BTreeSet<usize>>) {
    fn go(items: &[usize], size: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<BTreeSet<usize>>) {
        if current.len() == size {
            out.push(current.iter().copied().collect());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < size - current.len() {
                break;
            }
            current.push(items[i]);
            go(items, size, i + 1, current, out);
            current.pop();
        }
    }
    go(items, size, 0, &mut Vec::new(), out);
}

fn check_budget(m: usize, remaining: u64, budget: u64) -> Result<(), CoreError> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::{AlgorithmKind, AlgorithmSpec};
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

    fn everyone(m: usize) -> BTreeSet<usize> {
        (0..m).collect()
    }

    #[test]
    fn subset_order_is_size_then_lex() {
        let subs = subsets_decreasing(&[0usize, 1, 2].iter().copied().collect());
        let rendered: Vec<Vec<usize>> = subs.iter().map(|s| s.iter().copied().collect()).collect();
        assert_eq!(
            rendered,
            vec![
                vec![0, 1, 2],
                vec![0, 1],
                vec![0, 2],
                vec![1, 2],
                vec![0],
                vec![1],
                vec![2],
                vec![],
            ]
        );
    }

    #[test]
    fn horizon_end_returns_zeros() {
        let caches = Caches::with_default_budget();
        let algo = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Maucb), 2, 2, 2);
        let out = oer_root(
            3, 2, 2, &everyone(2), &algo, &micro1(),
            OerVariant::Full, &caches, &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(out.rho, vec![r(0, 1), r(0, 1)]);
        assert!(out.selected.is_empty());
    }

    #[test]
    fn micro1_maucb_two_steps_collapses_exactly() {
        // The UCB recommender burns step 2 on the untried arm, so group play
        // is worth exactly the fallback 33/25 and nobody strictly improves.
        let caches = Caches::with_property_checks(crate::memo::DEFAULT_NODE_BUDGET);
        let algo = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Maucb), 2, 2, 2);
        let out = oer_root(
            1, 2, 2, &everyone(2), &algo, &micro1(),
            OerVariant::Full, &caches, &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(out.vb, r(33, 25));
        assert_eq!(out.rho, vec![r(33, 25), r(33, 25)]);
        assert!(out.selected.is_empty());
        for &i in &[0usize, 1] {
            assert!(out.rho[i] >= out.vb, "value below fallback for {i}");
        }
        assert_eq!(caches.props.violation_count(), 0);
    }

    #[test]
    fn efficient_agrees_when_full_selects_empty() {
        let caches = Caches::with_default_budget();
        let algo = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Maucb), 2, 2, 2);
        let full = oer_root(
            1, 2, 2, &everyone(2), &algo, &micro1(),
            OerVariant::Full, &caches, &BTreeMap::new(),
        )
        .unwrap();
        let caches2 = Caches::with_default_budget();
        let eff = oer_root(
            1, 2, 2, &everyone(2), &algo, &micro1(),
            OerVariant::Efficient, &caches2, &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(full.rho, eff.rho);
        assert_eq!(full.selected, eff.selected);
    }

    #[test]
    fn inactive_entries_take_private_values() {
        let caches = Caches::with_default_budget();
        let algo = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Maucb), 2, 2, 2);
        let active: BTreeSet<usize> = [0].into_iter().collect();
        let mut inactive = BTreeMap::new();
        inactive.insert(1usize, r(7, 5));
        let out = oer_root(
            1, 2, 2, &active, &algo, &micro1(),
            OerVariant::Full, &caches, &inactive,
        )
        .unwrap();
        assert_eq!(out.rho[1], r(7, 5));
        assert!(!out.selected.contains(&1));
    }

    #[test]
    fn stopping_set_examples() {
        let vb = vec![1.0, 1.0, 1.0];
        assert!(stopping_set(&[1.0, 1.0, 1.0], &vb).is_empty());
        assert_eq!(
            stopping_set(&[2.0, 2.0, 2.0], &vb),
            [0, 1, 2].into_iter().collect()
        );
        assert_eq!(
            stopping_set(&[2.0, 1.0, 1.5], &vb),
            [0, 2].into_iter().collect()
        );
        // Margin ties resolve to stopping in float mode.
        assert!(stopping_set(&[1.0 + 1e-12], &vec![1.0]).is_empty());
    }

    #[test]
    fn memoized_and_fresh_runs_agree() {
        let algo = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Maucb), 2, 3, 2);
        let shared = Caches::with_default_budget();
        let first = oer_root(
            1, 3, 2, &everyone(2), &algo, &micro1(),
            OerVariant::Full, &shared, &BTreeMap::new(),
        )
        .unwrap();
        let again = oer_root(
            1, 3, 2, &everyone(2), &algo, &micro1(),
            OerVariant::Full, &shared, &BTreeMap::new(),
        )
        .unwrap();
        let fresh = Caches::with_default_budget();
        let indep = oer_root(
            1, 3, 2, &everyone(2), &algo, &micro1(),
            OerVariant::Full, &fresh, &BTreeMap::new(),
        )
        .unwrap();
        assert_eq!(first.rho, again.rho);
        assert_eq!(first.rho, indep.rho);
    }

    #[test]
    fn budget_guard_trips() {
        let caches = Caches::new(1000);
        let algo = AlgorithmState::new(AlgorithmSpec::new(AlgorithmKind::Maucb), 2, 40, 2);
        let err = oer_root(
            1, 40, 2, &everyone(2), &algo, &micro1(),
            OerVariant::Full, &caches, &BTreeMap::new(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("exact horizon too large"));
    }
}
