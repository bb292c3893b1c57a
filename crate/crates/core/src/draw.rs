//! Shared randomness, one draw per step.
//!
//! Agents consuming shared randomness (Thompson-style instance sampling) must
//! all observe the same draw. In Monte Carlo mode the draw is an inverse-CDF
//! pick from a seeded uniform; in exact mode the evaluator first probes a step
//! to learn the consumed distribution, then enumerates each support index as a
//! weighted branch. The resolved index is public and gets recorded into every
//! agent's view so past recommendations can be recomputed.

use std::cell::RefCell;

use crate::bandit::sample_weighted;
use crate::error::CoreError;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub enum DrawMode<N: Scalar> {
    /// Inverse-CDF sampling at a fixed uniform value.
    Sample { u: f64 },
    /// Exact-mode branch: the draw is pinned to a support index.
    Fixed { index: usize },
    /// Probe pass: record the queried weights, provisionally return index 0.
    Probe,
}

#[derive(Debug)]
pub struct SharedDraw<N: Scalar> {
    mode: DrawMode<N>,
    resolved: RefCell<Option<ResolvedDraw<N>>>,
}

#[derive(Debug, Clone)]
pub(crate) struct ResolvedDraw<N: Scalar> {
    pub index: usize,
    pub weights: Vec<N>,
    pub weight_key: Vec<N::Key>,
}

impl<N: Scalar> SharedDraw<N> {
    pub fn new(mode: DrawMode<N>) -> Self {
        Self {
            mode,
            resolved: RefCell::new(None),
        }
    }

    pub fn sampling(u: f64) -> Self {
        Self::new(DrawMode::Sample { u })
    }

    pub fn fixed(index: usize) -> Self {
        Self::new(DrawMode::Fixed { index })
    }

    pub fn probe() -> Self {
        Self::new(DrawMode::Probe)
    }

    /// Resolves the step's draw against `weights`. All queriers within one
    /// step must present identical weights; the first query pins them.
    pub fn pick(&self, weights: &[N]) -> Result<usize, CoreError> {
        let key: Vec<N::Key> = weights.iter().map(|w| w.key()).collect();
        let mut slot = self.resolved.borrow_mut();
        if let Some(resolved) = slot.as_ref() {
            if resolved.weight_key != key {
                return Err(CoreError::MissingDraw(
                    "shared draw queried with diverging weights within one step".into(),
                ));
            }
            return Ok(resolved.index);
        }
        let index = match &self.mode {
            DrawMode::Sample { u } => sample_weighted(weights, *u),
            DrawMode::Fixed { index } => {
                if *index >= weights.len() {
                    return Err(CoreError::MissingDraw(format!(
                        "fixed draw index {index} outside support of size {}",
                        weights.len()
                    )));
                }
                *index
            }
            DrawMode::Probe => 0,
        };
        *slot = Some(ResolvedDraw {
            index,
            weights: weights.to_vec(),
            weight_key: key,
        });
        Ok(index)
    }

    /// Whether any strategy consumed the draw, and with what weights.
    pub(crate) fn consumed(&self) -> Option<ResolvedDraw<N>> {
        self.resolved.borrow().clone()
    }

    pub fn is_probe(&self) -> bool {
        matches!(self.mode, DrawMode::Probe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_stable_within_step() {
        let draw: SharedDraw<f64> = SharedDraw::sampling(0.6);
        let w = vec![0.5, 0.5];
        let first = draw.pick(&w).unwrap();
        assert_eq!(first, 1);
        assert_eq!(draw.pick(&w).unwrap(), first);
    }

    #[test]
    fn diverging_weights_rejected() {
        let draw: SharedDraw<f64> = SharedDraw::sampling(0.3);
        draw.pick(&[0.5, 0.5]).unwrap();
        assert!(draw.pick(&[0.9, 0.1]).is_err());
    }

    #[test]
    fn probe_records_consumption() {
        let draw: SharedDraw<f64> = SharedDraw::probe();
        assert!(draw.consumed().is_none());
        assert_eq!(draw.pick(&[0.2, 0.8]).unwrap(), 0);
        let resolved = draw.consumed().unwrap();
        assert_eq!(resolved.weights, vec![0.2, 0.8]);
    }
}
