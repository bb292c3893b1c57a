//! Bandit instances, discrete priors, exact posteriors, and joint reward
//! enumeration over Bernoulli arms.
//!
//! Priors are finite weighted sets of mean vectors. That keeps the posterior a
//! plain weight vector, so Bayes updates, continuation values, and outcome
//! enumeration are all exact in rational mode. Rewards across agents are
//! conditionally independent given the instance but correlated through it:
//! joint probabilities mix over support points rather than multiplying
//! marginals.

use std::sync::Arc;

use rand::Rng;

use crate::error::CoreError;
use crate::scalar::Scalar;

/// A fixed assignment of a Bernoulli mean to each arm.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance<N: Scalar> {
    means: Vec<N>,
}

impl<N: Scalar> Instance<N> {
    pub fn new(means: Vec<N>) -> Result<Self, CoreError> {
        if means.is_empty() {
            return Err(CoreError::InvalidInstance("needs at least one arm".into()));
        }
        for (a, mean) in means.iter().enumerate() {
            let v = mean.to_f64();
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::InvalidInstance(format!(
                    "arm {a} mean {mean} outside [0,1]"
                )));
            }
        }
        Ok(Self { means })
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, arm: usize) -> &N {
        &self.means[arm]
    }

    pub fn means(&self) -> &[N] {
        &self.means
    }

    /// Best true mean; ties broken to the lowest arm index.
    pub fn best_arm(&self) -> usize {
        best_index(&self.means)
    }

    pub fn best_mean(&self) -> &N {
        &self.means[self.best_arm()]
    }
}

/// Index of the maximum entry, lowest index on ties.
pub(crate) fn best_index<N: Scalar>(values: &[N]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the minimum entry, lowest index on ties.
pub(crate) fn worst_index<N: Scalar>(values: &[N]) -> usize {
    let mut worst = 0;
    for i in 1..values.len() {
        if values[i] < values[worst] {
            worst = i;
        }
    }
    worst
}

/// A finite mixture of instances; every support point shares the same K.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePrior<N: Scalar> {
    instances: Vec<Instance<N>>,
    weights: Vec<N>,
}

impl<N: Scalar> DiscretePrior<N> {
    /// Weight-sum tolerance is 1e-12 in float mode; rational mode is exact.
    pub fn new(support: Vec<(Instance<N>, N)>) -> Result<Self, CoreError> {
        if support.is_empty() {
            return Err(CoreError::InvalidPrior("empty support".into()));
        }
        let k = support[0].0.k();
        let mut instances = Vec::with_capacity(support.len());
        let mut weights = Vec::with_capacity(support.len());
        for (j, (instance, weight)) in support.into_iter().enumerate() {
            if instance.k() != k {
                return Err(CoreError::InvalidPrior(format!(
                    "support point {j} has {} arms, expected {k}",
                    instance.k()
                )));
            }
            if weight.to_f64() <= 0.0 {
                return Err(CoreError::InvalidPrior(format!(
                    "support point {j} has non-positive weight {weight}"
                )));
            }
            instances.push(instance);
            weights.push(weight);
        }
        let total = crate::scalar::sum(&weights);
        let ok = if N::EXACT {
            total == N::one()
        } else {
            (total.to_f64() - 1.0).abs() <= 1e-12
        };
        if !ok {
            return Err(CoreError::InvalidPrior(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { instances, weights })
    }

    pub fn k(&self) -> usize {
        self.instances[0].k()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn instance(&self, j: usize) -> &Instance<N> {
        &self.instances[j]
    }

    pub fn weights(&self) -> &[N] {
        &self.weights
    }

    /// `E[max_a mean_a]`, the per-step reward of an oracle that knows the
    /// realized instance. Used as the regret baseline.
    pub fn expected_best_mean(&self) -> N {
        let mut acc = N::zero();
        for (instance, w) in self.instances.iter().zip(&self.weights) {
            acc = acc + w.clone() * instance.best_mean().clone();
        }
        acc
    }

    /// Draws a support index with probability equal to its weight.
    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        sample_weighted(&self.weights, rng.gen::<f64>())
    }
}

/// Inverse-CDF pick of an index from (possibly unnormalized) weights at `u`.
pub(crate) fn sample_weighted<N: Scalar>(weights: &[N], u: f64) -> usize {
    let total: f64 = weights.iter().map(|w| w.to_f64()).sum();
    let mut acc = 0.0;
    let target = u * total;
    for (j, w) in weights.iter().enumerate() {
        acc += w.to_f64();
        if target < acc {
            return j;
        }
    }
    weights.len() - 1
}

/// Posterior over the support of a [`DiscretePrior`], updated by exact Bayes
/// rule on Bernoulli observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState<N: Scalar> {
    prior: Arc<DiscretePrior<N>>,
    weights: Vec<N>,
}

impl<N: Scalar> PosteriorState<N> {
    /// Posterior after zero observations: the prior weights.
    pub fn from_prior(prior: Arc<DiscretePrior<N>>) -> Self {
        let weights = prior.weights().to_vec();
        Self { prior, weights }
    }

    pub fn prior(&self) -> &Arc<DiscretePrior<N>> {
        &self.prior
    }

    pub fn weights(&self) -> &[N] {
        &self.weights
    }

    pub fn k(&self) -> usize {
        self.prior.k()
    }

    pub fn len(&self) -> usize {
        self.prior.len()
    }

    /// Memoization key: the canonical form of the weight vector.
    pub fn key(&self) -> Vec<N::Key> {
        self.weights.iter().map(|w| w.key()).collect()
    }

    /// New weights proportional to `old * mean^r * (1-mean)^(1-r)`.
    pub fn update(&self, arm: usize, reward: u8) -> Result<Self, CoreError> {
        if arm >= self.k() {
            return Err(CoreError::ArmOutOfRange { arm, k: self.k() });
        }
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut total = N::zero();
        for (j, w) in self.weights.iter().enumerate() {
            let mean = self.prior.instance(j).mean(arm).clone();
            let likelihood = if reward == 1 {
                mean
            } else {
                N::one() - mean
            };
            let updated = w.clone() * likelihood;
            total = total + updated.clone();
            weights.push(updated);
        }
        if total.to_f64() == 0.0 {
            return Err(CoreError::InconsistentObservation { arm, reward });
        }
        for w in &mut weights {
            *w = w.clone() / total.clone();
        }
        Ok(Self {
            prior: Arc::clone(&self.prior),
            weights,
        })
    }

    /// Folds a batch of observations; likelihoods commute so order is free.
    pub fn update_many<I>(&self, observations: I) -> Result<Self, CoreError>
    where
        I: IntoIterator<Item = (usize, u8)>,
    {
        let mut state = self.clone();
        for (arm, reward) in observations {
            state = state.update(arm, reward)?;
        }
        Ok(state)
    }

    /// Expected immediate reward of `arm`: `sum_j w_j * mean_j(arm)`.
    pub fn mean(&self, arm: usize) -> N {
        let mut acc = N::zero();
        for (j, w) in self.weights.iter().enumerate() {
            acc = acc + w.clone() * self.prior.instance(j).mean(arm).clone();
        }
        acc
    }

    /// Per-arm posterior means.
    pub fn arm_means(&self) -> Vec<N> {
        (0..self.k()).map(|a| self.mean(a)).collect()
    }

    pub fn sample_index<R: Rng>(&self, rng: &mut R) -> usize {
        sample_weighted(&self.weights, rng.gen::<f64>())
    }
}

/// One joint reward realization for a vector of acting agents.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardOutcome<N: Scalar> {
    /// Reward per acting agent, aligned with the `actions` argument.
    pub rewards: Vec<u8>,
    pub probability: N,
}

/// Enumerates all `2^n` joint reward vectors for `actions`, with exact joint
/// probabilities mixed over the posterior support. Probabilities sum to 1.
pub fn enumerate_outcomes<N: Scalar>(
    post: &PosteriorState<N>,
    actions: &[usize],
) -> Result<Vec<RewardOutcome<N>>, CoreError> {
    if actions.is_empty() {
        return Err(CoreError::Invariant("enumerate_outcomes with no actions".into()));
    }
    for &arm in actions {
        if arm >= post.k() {
            return Err(CoreError::ArmOutOfRange { arm, k: post.k() });
        }
    }
    let n = actions.len();
    let mut outcomes = Vec::with_capacity(1 << n);
    for bits in 0u64..(1u64 << n) {
        let rewards: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
        let mut probability = N::zero();
        for (j, w) in post.weights().iter().enumerate() {
            let mut term = w.clone();
            for (i, &arm) in actions.iter().enumerate() {
                let mean = post.prior().instance(j).mean(arm).clone();
                let factor = if rewards[i] == 1 {
                    mean
                } else {
                    N::one() - mean
                };
                term = term * factor;
            }
            probability = probability + term;
        }
        outcomes.push(RewardOutcome {
            rewards,
            probability,
        });
    }
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num::BigRational;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(n: u64, d: u64) -> BigRational {
        BigRational::from_ratio(n, d)
    }

    /// Two-point prior: (0.9, 0.1) and (0.1, 0.9), weight 1/2 each.
    pub(crate) fn micro1() -> Arc<DiscretePrior<BigRational>> {
        Arc::new(
            DiscretePrior::new(vec![
                (Instance::new(vec![r(9, 10), r(1, 10)]).unwrap(), r(1, 2)),
                (Instance::new(vec![r(1, 10), r(9, 10)]).unwrap(), r(1, 2)),
            ])
            .unwrap(),
        )
    }

    fn micro1_f64() -> Arc<DiscretePrior<f64>> {
        Arc::new(
            DiscretePrior::new(vec![
                (Instance::new(vec![0.9, 0.1]).unwrap(), 0.5),
                (Instance::new(vec![0.1, 0.9]).unwrap(), 0.5),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn prior_validation() {
        assert!(DiscretePrior::<f64>::new(vec![]).is_err());
        // Mismatched K
        assert!(DiscretePrior::new(vec![
            (Instance::new(vec![0.5]).unwrap(), 0.5),
            (Instance::new(vec![0.5, 0.5]).unwrap(), 0.5),
        ])
        .is_err());
        // Weights not summing to 1
        assert!(DiscretePrior::new(vec![(Instance::new(vec![0.5]).unwrap(), 0.9)]).is_err());
        // Zero weight
        assert!(DiscretePrior::new(vec![
            (Instance::new(vec![0.5]).unwrap(), 0.0),
            (Instance::new(vec![0.4]).unwrap(), 1.0),
        ])
        .is_err());
        assert!(Instance::new(vec![1.2]).is_err());
    }

    #[test]
    fn sample_degenerate_support_is_deterministic() {
        let prior = Arc::new(
            DiscretePrior::new(vec![(Instance::new(vec![0.3, 0.7]).unwrap(), 1.0)]).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            assert_eq!(prior.sample_index(&mut rng), 0);
        }
    }

    #[test]
    fn sample_same_seed_same_instance() {
        let prior = micro1_f64();
        let a = prior.sample_index(&mut ChaCha8Rng::seed_from_u64(42));
        let b = prior.sample_index(&mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn sample_frequency_matches_weight() {
        // Law-of-large-numbers check: 1e5 draws, frequency of support point 0
        // within [0.49, 0.51] for the symmetric two-point prior.
        let prior = micro1_f64();
        let mut rng = ChaCha8Rng::seed_from_u64(20260810);
        let draws = 100_000;
        let hits = (0..draws)
            .filter(|_| prior.sample_index(&mut rng) == 0)
            .count();
        let freq = hits as f64 / draws as f64;
        assert!((0.49..=0.51).contains(&freq), "freq {freq}");
    }

    #[test]
    fn posterior_update_micro1() {
        let post = PosteriorState::from_prior(micro1());
        // 0.5*0.9 vs 0.5*0.1, renormalized.
        let up = post.update(0, 1).unwrap();
        assert_eq!(up.weights(), &[r(9, 10), r(1, 10)]);
        let down = post.update(0, 0).unwrap();
        assert_eq!(down.weights(), &[r(1, 10), r(9, 10)]);
    }

    #[test]
    fn posterior_update_constant_arm_is_noop() {
        let prior = Arc::new(
            DiscretePrior::new(vec![
                (Instance::new(vec![r(1, 2), r(1, 10)]).unwrap(), r(1, 3)),
                (Instance::new(vec![r(1, 2), r(9, 10)]).unwrap(), r(2, 3)),
            ])
            .unwrap(),
        );
        let post = PosteriorState::from_prior(prior);
        let up = post.update(0, 1).unwrap();
        assert_eq!(up.weights(), post.weights());
    }

    #[test]
    fn posterior_update_impossible_observation() {
        let prior = Arc::new(
            DiscretePrior::new(vec![
                (Instance::new(vec![1.0, 0.5]).unwrap(), 0.5),
                (Instance::new(vec![1.0, 0.2]).unwrap(), 0.5),
            ])
            .unwrap(),
        );
        let post = PosteriorState::from_prior(prior);
        let err = post.update(0, 0).unwrap_err();
        assert!(err.to_string().contains("inconsistent observation"));
    }

    #[test]
    fn posterior_mean_values() {
        let post = PosteriorState::from_prior(micro1());
        assert_eq!(post.mean(0), r(1, 2));
        let skewed = post.update(0, 1).unwrap();
        // 0.9*0.9 + 0.1*0.1 = 0.82
        assert_eq!(skewed.mean(0), r(82, 100));
        let degenerate = Arc::new(
            DiscretePrior::new(vec![(Instance::new(vec![r(3, 10), r(7, 10)]).unwrap(), r(1, 1))])
                .unwrap(),
        );
        let post = PosteriorState::from_prior(degenerate);
        assert_eq!(post.mean(1), r(7, 10));
    }

    #[test]
    fn enumerate_single_agent_symmetric() {
        let post = PosteriorState::from_prior(micro1());
        let outcomes = enumerate_outcomes(&post, &[0]).unwrap();
        assert_eq!(outcomes.len(), 2);
        assert_eq!(outcomes[0].rewards, vec![0]);
        assert_eq!(outcomes[0].probability, r(1, 2));
        assert_eq!(outcomes[1].rewards, vec![1]);
        assert_eq!(outcomes[1].probability, r(1, 2));
    }

    #[test]
    fn enumerate_two_agents_correlated() {
        let post = PosteriorState::from_prior(micro1());
        let outcomes = enumerate_outcomes(&post, &[0, 0]).unwrap();
        // P(1,1) = 0.5*0.81 + 0.5*0.01 = 0.41, not 0.25: correlation through
        // the shared instance.
        let both = outcomes
            .iter()
            .find(|o| o.rewards == vec![1, 1])
            .unwrap();
        assert_eq!(both.probability, r(41, 100));
        let total = crate::scalar::sum(
            &outcomes.iter().map(|o| o.probability.clone()).collect::<Vec<_>>(),
        );
        assert_eq!(total, r(1, 1));
    }

    #[test]
    fn expected_best_mean_micro1() {
        assert_eq!(micro1().expected_best_mean(), r(9, 10));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_prior() -> impl Strategy<Value = Arc<DiscretePrior<BigRational>>> {
            // 1-3 arms, 1-3 support points, means and weights on a small
            // rational grid. Weight normalization is exact by construction.
            (1usize..=3, 1usize..=3).prop_flat_map(|(k, s)| {
                let means = proptest::collection::vec(1u64..=19, k * s);
                let raw_w = proptest::collection::vec(1u64..=5, s);
                (Just(k), Just(s), means, raw_w).prop_map(|(k, s, means, raw_w)| {
                    let total: u64 = raw_w.iter().sum();
                    let support = (0..s)
                        .map(|j| {
                            let mv = (0..k)
                                .map(|a| BigRational::from_ratio(means[j * k + a], 20))
                                .collect();
                            (
                                Instance::new(mv).unwrap(),
                                BigRational::from_ratio(raw_w[j], total),
                            )
                        })
                        .collect();
                    Arc::new(DiscretePrior::new(support).unwrap())
                })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn updates_stay_normalized(prior in arb_prior(), obs in proptest::collection::vec((0usize..3, 0u8..2), 0..6)) {
                let mut post = PosteriorState::from_prior(prior);
                for (arm, reward) in obs {
                    let arm = arm % post.k();
                    post = post.update(arm, reward).unwrap();
                    let total = crate::scalar::sum(post.weights());
                    prop_assert_eq!(total, BigRational::from_int(1));
                    prop_assert!(post.weights().iter().all(|w| w.to_f64() >= 0.0));
                }
            }

            #[test]
            fn updates_commute(prior in arb_prior(), a in 0usize..3, ra in 0u8..2, b in 0usize..3, rb in 0u8..2) {
                let post = PosteriorState::from_prior(prior);
                let a = a % post.k();
                let b = b % post.k();
                let ab = post.update(a, ra).unwrap().update(b, rb).unwrap();
                let ba = post.update(b, rb).unwrap().update(a, ra).unwrap();
                prop_assert_eq!(ab.weights(), ba.weights());
            }

            #[test]
            fn marginal_matches_posterior_mean(prior in arb_prior(), actions in proptest::collection::vec(0usize..3, 1..4)) {
                let post = PosteriorState::from_prior(prior);
                let actions: Vec<usize> = actions.iter().map(|a| a % post.k()).collect();
                let outcomes = enumerate_outcomes(&post, &actions).unwrap();
                let total = crate::scalar::sum(&outcomes.iter().map(|o| o.probability.clone()).collect::<Vec<_>>());
                prop_assert_eq!(total, BigRational::from_int(1));
                for (i, &arm) in actions.iter().enumerate() {
                    let marginal = crate::scalar::sum(
                        &outcomes.iter().filter(|o| o.rewards[i] == 1).map(|o| o.probability.clone()).collect::<Vec<_>>(),
                    );
                    prop_assert_eq!(marginal, post.mean(arm));
                }
            }
        }
    }
}
