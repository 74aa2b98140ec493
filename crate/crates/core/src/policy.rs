//! Linear softmax policy over state features.
//!
//! Parameters are stored as one block of `feature_dim` weights per action:
//! `logit(a) = theta[a*d .. (a+1)*d] . x`. The score (gradient of
//! `ln pi(a|s)` in theta) has block `b` equal to `x * (1[b = a] - pi(b|s))`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::scalar::{real, Scalar};

#[derive(Clone, Debug)]
pub struct SoftmaxLinearPolicy<F: Scalar> {
    theta: ParamVector<F>,
    feature_dim: usize,
    num_actions: usize,
}

impl<F: Scalar> SoftmaxLinearPolicy<F> {
    pub fn new(feature_dim: usize, num_actions: usize) -> Result<Self> {
        if feature_dim == 0 || num_actions == 0 {
            return Err(Error::invalid("policy needs feature_dim >= 1 and num_actions >= 1"));
        }
        Ok(SoftmaxLinearPolicy { theta: ParamVector::zeros(feature_dim * num_actions), feature_dim, num_actions })
    }

    pub fn with_theta(theta: ParamVector<F>, feature_dim: usize, num_actions: usize) -> Result<Self> {
        if theta.len() != feature_dim * num_actions {
            return Err(Error::DimensionMismatch { expected: feature_dim * num_actions, got: theta.len() });
        }
        Ok(SoftmaxLinearPolicy { theta, feature_dim, num_actions })
    }

    pub fn theta(&self) -> &ParamVector<F> {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: ParamVector<F>) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::DimensionMismatch { expected: self.theta.len(), got: theta.len() });
        }
        self.theta = theta;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn param_dim(&self) -> usize {
        self.feature_dim * self.num_actions
    }

    fn check_features(&self, features: &[F]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::DimensionMismatch { expected: self.feature_dim, got: features.len() });
        }
        Ok(())
    }

    pub fn logits(&self, features: &[F]) -> Result<Vec<F>> {
        self.check_features(features)?;
        let theta = self.theta.as_slice();
        Ok((0..self.num_actions)
            .map(|a| {
                let block = &theta[a * self.feature_dim..(a + 1) * self.feature_dim];
                block.iter().zip(features).map(|(w, x)| *w * *x).sum()
            })
            .collect())
    }

    /// Softmax stabilized by subtracting the max logit.
    pub fn action_probs(&self, features: &[F]) -> Result<Vec<F>> {
        let logits = self.logits(features)?;
        Ok(softmax(&logits))
    }

    /// `ln pi(a|s)`, computed from logits so it stays finite even when the
    /// probability underflows.
    pub fn log_prob(&self, features: &[F], action: usize) -> Result<F> {
        let logits = self.logits(features)?;
        if action >= self.num_actions {
            return Err(Error::IndexOutOfRange { index: action, len: self.num_actions });
        }
        let max = logits.iter().fold(F::neg_infinity(), |m, l| m.max(*l));
        let lse: F = logits.iter().map(|l| (*l - max).exp()).sum::<F>().ln() + max;
        Ok(logits[action] - lse)
    }

    /// Gradient of `ln pi(a|s)` with respect to theta.
    pub fn score(&self, features: &[F], action: usize) -> Result<ParamVector<F>> {
        self.check_features(features)?;
        if action >= self.num_actions {
            return Err(Error::IndexOutOfRange { index: action, len: self.num_actions });
        }
        let probs = self.action_probs(features)?;
        let mut out = vec![F::zero(); self.param_dim()];
        for b in 0..self.num_actions {
            let indicator = if b == action { F::one() } else { F::zero() };
            let coef = indicator - probs[b];
            let block = &mut out[b * self.feature_dim..(b + 1) * self.feature_dim];
            for (slot, x) in block.iter_mut().zip(features) {
                *slot = coef * *x;
            }
        }
        Ok(ParamVector::from_vec_unchecked(out))
    }

    /// `w . score(s, a)` without materializing the score vector.
    pub fn score_dot(&self, w: &ParamVector<F>, features: &[F], action: usize) -> Result<F> {
        self.check_features(features)?;
        if w.len() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: w.len() });
        }
        let probs = self.action_probs(features)?;
        let ws = w.as_slice();
        let mut total = F::zero();
        for b in 0..self.num_actions {
            let block = &ws[b * self.feature_dim..(b + 1) * self.feature_dim];
            let wx: F = block.iter().zip(features).map(|(wi, xi)| *wi * *xi).sum();
            let indicator = if b == action { F::one() } else { F::zero() };
            total = total + (indicator - probs[b]) * wx;
        }
        Ok(total)
    }

    /// Inverse-CDF sampling; ties go to the lowest-index action whose
    /// cumulative probability exceeds the draw. Returns the action and its
    /// log probability.
    pub fn sample_action<R: Rng>(&self, features: &[F], rng: &mut R) -> Result<(usize, F)> {
        let probs = self.action_probs(features)?;
        let u = real::<F>(rng.random::<f64>());
        let mut cum = F::zero();
        let mut chosen = self.num_actions - 1;
        for (a, p) in probs.iter().enumerate() {
            cum = cum + *p;
            if u < cum {
                chosen = a;
                break;
            }
        }
        let logp = self.log_prob(features, chosen)?;
        Ok((chosen, logp))
    }

    pub fn entropy(&self, features: &[F]) -> Result<F> {
        let logits = self.logits(features)?;
        let probs = softmax(&logits);
        let max = logits.iter().fold(F::neg_infinity(), |m, l| m.max(*l));
        let lse: F = logits.iter().map(|l| (*l - max).exp()).sum::<F>().ln() + max;
        // -sum p ln p with ln p from logits, so underflowed probs contribute 0
        let mut h = F::zero();
        for (p, l) in probs.iter().zip(&logits) {
            if *p > F::zero() {
                h = h - *p * (*l - lse);
            }
        }
        Ok(h)
    }
}

fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, l| m.max(*l));
    let exps: Vec<F> = logits.iter().map(|l| (*l - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy_from(theta: &[f64], d: usize, a: usize) -> SoftmaxLinearPolicy<f64> {
        SoftmaxLinearPolicy::with_theta(ParamVector::from_vec(theta.to_vec()).unwrap(), d, a).unwrap()
    }

    #[test]
    fn zero_theta_is_uniform() {
        let p = SoftmaxLinearPolicy::<f64>::new(3, 4).unwrap();
        let probs = p.action_probs(&[0.3, -1.0, 2.0]).unwrap();
        for pr in probs {
            assert!((pr - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_gap_one_gives_known_probs() {
        // logits (1, 0) -> (0.7311, 0.2689)
        let p = policy_from(&[1.0, 0.0], 1, 2);
        let probs = p.action_probs(&[1.0]).unwrap();
        assert!((probs[0] - 0.7311).abs() < 1e-4);
        assert!((probs[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn probs_invariant_to_logit_shift() {
        // Adding a constant to every block shifts all logits equally.
        let base = policy_from(&[0.4, -0.2, 1.1, 0.9, -0.3, 0.0], 2, 3);
        let shifted = policy_from(&[0.4 + 5.0, -0.2, 1.1 + 5.0, 0.9, -0.3 + 5.0, 0.0], 2, 3);
        let x = [1.0, 0.7];
        let a = base.action_probs(&x).unwrap();
        let b = shifted.action_probs(&x).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert!((pa - pb).abs() < 1e-12);
        }
    }

    #[test]
    fn probs_sum_to_one_under_extreme_logits() {
        let p = policy_from(&[400.0, -400.0], 1, 2);
        let probs = p.action_probs(&[1.0]).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn score_for_uniform_two_action_policy() {
        let p = SoftmaxLinearPolicy::<f64>::new(1, 2).unwrap();
        let s = p.score(&[1.0], 0).unwrap();
        assert!((s.as_slice()[0] - 0.5).abs() < 1e-15);
        assert!((s.as_slice()[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn score_expectation_is_zero() {
        let p = policy_from(&[0.3, -0.7, 0.2, 1.5, -0.1, 0.8], 2, 3);
        let x = [0.9, -0.4];
        let probs = p.action_probs(&x).unwrap();
        let mut expectation = ParamVector::zeros(6);
        for a in 0..3 {
            expectation.axpy_mut(probs[a], &p.score(&x, a).unwrap()).unwrap();
        }
        assert!(expectation.norm_linf() < 1e-12);
    }

    #[test]
    fn score_matches_finite_differences() {
        let theta = [0.3, -0.7, 0.2, 1.5, -0.1, 0.8];
        let p = policy_from(&theta, 2, 3);
        let x = [0.9, -0.4];
        let action = 2;
        let analytic = p.score(&x, action).unwrap();
        let eps = 1e-6;
        for i in 0..theta.len() {
            let mut plus = theta.to_vec();
            plus[i] += eps;
            let mut minus = theta.to_vec();
            minus[i] -= eps;
            let lp = policy_from(&plus, 2, 3).log_prob(&x, action).unwrap();
            let lm = policy_from(&minus, 2, 3).log_prob(&x, action).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            assert!(
                (analytic.as_slice()[i] - fd).abs() < 1e-6,
                "coordinate {i}: analytic {} vs fd {}",
                analytic.as_slice()[i],
                fd
            );
        }
    }

    #[test]
    fn score_dot_matches_explicit_score() {
        let p = policy_from(&[0.3, -0.7, 0.2, 1.5, -0.1, 0.8], 2, 3);
        let x = [0.9, -0.4];
        let w = ParamVector::from_vec(vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        for a in 0..3 {
            let explicit = w.dot(&p.score(&x, a).unwrap()).unwrap();
            let fused = p.score_dot(&w, &x, a).unwrap();
            assert!((explicit - fused).abs() < 1e-14);
        }
    }

    #[test]
    fn sampling_frequencies_match_probs() {
        let p = SoftmaxLinearPolicy::<f64>::new(1, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            let (a, logp) = p.sample_action(&[1.0], &mut rng).unwrap();
            assert!((logp - (1.0f64 / 3.0).ln()).abs() < 1e-12);
            counts[a] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn sampling_saturates_with_large_logit_gap() {
        let p = policy_from(&[20.0, 0.0], 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let hits = (0..n).filter(|_| p.sample_action(&[1.0], &mut rng).unwrap().0 == 0).count();
        assert!(hits as f64 / n as f64 > 0.999);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = policy_from(&[0.5, -0.5, 0.1, 0.0, 0.2, -0.2], 2, 3);
        let draw = |seed: u64| -> Vec<usize> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| p.sample_action(&[1.0, 0.3], &mut rng).unwrap().0).collect()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn entropy_of_uniform_is_ln_k() {
        for k in [2usize, 3, 5] {
            let p = SoftmaxLinearPolicy::<f64>::new(2, k).unwrap();
            let h = p.entropy(&[0.4, -0.9]).unwrap();
            assert!((h - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_near_deterministic_is_small() {
        let p = policy_from(&[10.0, 0.0], 1, 2);
        assert!(p.entropy(&[1.0]).unwrap() < 0.01);
    }

    #[test]
    fn entropy_invariant_to_action_relabeling() {
        let p1 = policy_from(&[0.8, -0.3, 0.1, 0.5], 2, 2);
        let p2 = policy_from(&[0.1, 0.5, 0.8, -0.3], 2, 2);
        let x = [1.0, -1.0];
        let h1 = p1.entropy(&x).unwrap();
        let h2 = p2.entropy(&x).unwrap();
        assert!((h1 - h2).abs() < 1e-14);
    }
}
