//! The learned reward model and the learned sigmoid discount.
//!
//! The reward has three linear heads over state features `x`:
//!
//! ```text
//! r(s, a) = w1.x(s) + (w2.x(s)) * r_p(s, a) + (w3.x(s)) * r_aux(s, a)
//! ```
//!
//! a free state bonus, a gate on the primary reward, and a gate on the
//! auxiliary reward. The full parameter vector is `phi = (w1 | w2 | w3)`.
//! The discount is `gamma = sigmoid(varphi)`, kept in (0, 1) by
//! construction.

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::scalar::{real, Scalar};

#[derive(Clone, Debug)]
pub struct AlignmentReward<F: Scalar> {
    w1: ParamVector<F>,
    w2: ParamVector<F>,
    w3: ParamVector<F>,
}

impl<F: Scalar> AlignmentReward<F> {
    pub fn zeros(feature_dim: usize) -> Self {
        AlignmentReward {
            w1: ParamVector::zeros(feature_dim),
            w2: ParamVector::zeros(feature_dim),
            w3: ParamVector::zeros(feature_dim),
        }
    }

    pub fn from_heads(w1: ParamVector<F>, w2: ParamVector<F>, w3: ParamVector<F>) -> Result<Self> {
        if w1.len() != w2.len() || w2.len() != w3.len() {
            return Err(Error::invalid("reward heads must share one feature dimension"));
        }
        Ok(AlignmentReward { w1, w2, w3 })
    }

    /// Starts as the identity on the primary reward: `r = r_p`.
    /// `unit_weights` must satisfy `unit . x(s) = 1` for every state.
    pub fn pass_through(unit_weights: &[F]) -> Result<Self> {
        let w2 = ParamVector::from_vec(unit_weights.to_vec())?;
        let d = w2.len();
        Ok(AlignmentReward { w1: ParamVector::zeros(d), w2, w3: ParamVector::zeros(d) })
    }

    /// Starts at the naive combination `r = r_p + r_aux`, the objective an
    /// unaligned agent would optimize. Outer updates then reshape it.
    pub fn naive_start(unit_weights: &[F]) -> Result<Self> {
        let w2 = ParamVector::from_vec(unit_weights.to_vec())?;
        let w3 = w2.clone();
        let d = w2.len();
        Ok(AlignmentReward { w1: ParamVector::zeros(d), w2, w3 })
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.len()
    }

    pub fn phi_dim(&self) -> usize {
        3 * self.w1.len()
    }

    pub fn phi(&self) -> ParamVector<F> {
        ParamVector::concat(&[&self.w1, &self.w2, &self.w3])
    }

    pub fn set_phi(&mut self, phi: &ParamVector<F>) -> Result<()> {
        let d = self.feature_dim();
        if phi.len() != 3 * d {
            return Err(Error::DimensionMismatch { expected: 3 * d, got: phi.len() });
        }
        let s = phi.as_slice();
        self.w1 = ParamVector::from_vec(s[0..d].to_vec())?;
        self.w2 = ParamVector::from_vec(s[d..2 * d].to_vec())?;
        self.w3 = ParamVector::from_vec(s[2 * d..3 * d].to_vec())?;
        Ok(())
    }

    fn check_features(&self, features: &[F]) -> Result<()> {
        if features.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch { expected: self.feature_dim(), got: features.len() });
        }
        Ok(())
    }

    pub fn eval(&self, features: &[F], r_primary: F, r_aux: F) -> Result<F> {
        self.check_features(features)?;
        let dot = |w: &ParamVector<F>| -> F { w.as_slice().iter().zip(features).map(|(a, b)| *a * *b).sum() };
        Ok(dot(&self.w1) + dot(&self.w2) * r_primary + dot(&self.w3) * r_aux)
    }

    /// Gradient of `eval` in phi: `(x | r_p x | r_aux x)`.
    pub fn grad(&self, features: &[F], r_primary: F, r_aux: F) -> Result<ParamVector<F>> {
        self.check_features(features)?;
        let d = self.feature_dim();
        let mut out = vec![F::zero(); 3 * d];
        for (i, x) in features.iter().enumerate() {
            out[i] = *x;
            out[d + i] = r_primary * *x;
            out[2 * d + i] = r_aux * *x;
        }
        ParamVector::from_vec(out)
    }
}

/// Discount parameterized through a sigmoid so it stays in (0, 1).
#[derive(Clone, Copy, Debug)]
pub struct LearnedDiscount<F: Scalar> {
    varphi: F,
}

impl<F: Scalar> LearnedDiscount<F> {
    pub fn new(varphi: F) -> Result<Self> {
        if !varphi.is_finite() {
            return Err(Error::NonFinite("LearnedDiscount::new"));
        }
        Ok(LearnedDiscount { varphi })
    }

    pub fn varphi(&self) -> F {
        self.varphi
    }

    pub fn set_varphi(&mut self, varphi: F) -> Result<()> {
        if !varphi.is_finite() {
            return Err(Error::NonFinite("LearnedDiscount::set_varphi"));
        }
        self.varphi = varphi;
        Ok(())
    }

    /// Strictly inside (0, 1): the sigmoid is clamped away from the
    /// endpoints by machine epsilon so saturation cannot round to 0 or 1.
    pub fn gamma(&self) -> F {
        sigmoid(self.varphi).max(F::epsilon()).min(F::one() - F::epsilon())
    }

    /// `d gamma / d varphi = gamma * (1 - gamma)`.
    pub fn dgamma(&self) -> F {
        let g = self.gamma();
        g * (F::one() - g)
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Initial discount parameter; `sigmoid(4.6)` is 0.99 to within 5e-3.
pub fn default_varphi_init<F: Scalar>() -> F {
    real::<F>(4.6)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(values: &[f64]) -> ParamVector<f64> {
        ParamVector::from_vec(values.to_vec()).unwrap()
    }

    #[test]
    fn pass_through_reproduces_primary_reward() {
        let unit = [1.0f64, 0.0, 0.0];
        let r = AlignmentReward::pass_through(&unit).unwrap();
        let x = [1.0, 0.4, -0.7];
        for (rp, ra) in [(0.0, 3.0), (100.0, -2.0), (-1.5, 0.0)] {
            assert!((r.eval(&x, rp, ra).unwrap() - rp).abs() < 1e-12);
        }
    }

    #[test]
    fn naive_start_reproduces_reward_sum() {
        let unit = [1.0f64, 0.0];
        let r = AlignmentReward::naive_start(&unit).unwrap();
        let x = [1.0, -0.3];
        assert!((r.eval(&x, 100.0, 50.0).unwrap() - 150.0).abs() < 1e-12);
    }

    #[test]
    fn negative_aux_gate_flips_aux_sign() {
        // w3 . x = -1 turns +50 auxiliary reward into -50.
        let r = AlignmentReward::from_heads(pv(&[0.0]), pv(&[0.0]), pv(&[-1.0])).unwrap();
        let got = r.eval(&[1.0], 7.0, 50.0).unwrap();
        assert!((got + 50.0).abs() < 1e-12);
    }

    #[test]
    fn eval_matches_independent_dot_products() {
        let (w1, w2, w3) = ([0.2, -0.4, 0.9], [1.0, 0.1, -0.2], [-0.5, 0.3, 0.7]);
        let r = AlignmentReward::from_heads(pv(&w1), pv(&w2), pv(&w3)).unwrap();
        let x = [0.8, -1.2, 0.05];
        let (rp, ra) = (2.5, -4.0);
        let dot = |w: &[f64]| -> f64 { w.iter().zip(&x).map(|(a, b)| a * b).sum() };
        let expected = dot(&w1) + dot(&w2) * rp + dot(&w3) * ra;
        assert!((r.eval(&x, rp, ra).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn grad_blocks_at_zero_rewards() {
        let r = AlignmentReward::<f64>::zeros(2);
        let g = r.grad(&[0.3, -0.6], 0.0, 0.0).unwrap();
        assert_eq!(g.as_slice(), &[0.3, -0.6, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut r = AlignmentReward::from_heads(pv(&[0.2, -0.4]), pv(&[1.0, 0.1]), pv(&[-0.5, 0.3])).unwrap();
        let x = [0.8, -1.2];
        let (rp, ra) = (2.5, -4.0);
        let analytic = r.grad(&x, rp, ra).unwrap();
        let phi = r.phi();
        let eps = 1e-6;
        for i in 0..phi.len() {
            let mut plus = phi.clone();
            plus.set(i, plus.get(i).unwrap() + eps).unwrap();
            let mut minus = phi.clone();
            minus.set(i, minus.get(i).unwrap() - eps).unwrap();
            r.set_phi(&plus).unwrap();
            let fp = r.eval(&x, rp, ra).unwrap();
            r.set_phi(&minus).unwrap();
            let fm = r.eval(&x, rp, ra).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            assert!((analytic.get(i).unwrap() - fd).abs() < 1e-8, "phi[{i}]");
        }
    }

    #[test]
    fn discount_known_values() {
        let d = LearnedDiscount::new(0.0f64).unwrap();
        assert!((d.gamma() - 0.5).abs() < 1e-15);
        assert!((d.dgamma() - 0.25).abs() < 1e-15);

        let d = LearnedDiscount::new(default_varphi_init::<f64>()).unwrap();
        assert!((d.gamma() - 0.99).abs() < 5e-3);
    }

    #[test]
    fn discount_grad_matches_finite_differences() {
        for &v in &[-3.0f64, -0.5, 0.0, 1.2, 4.6] {
            let eps = 1e-6;
            let gp = LearnedDiscount::new(v + eps).unwrap().gamma();
            let gm = LearnedDiscount::new(v - eps).unwrap().gamma();
            let fd = (gp - gm) / (2.0 * eps);
            let analytic = LearnedDiscount::new(v).unwrap().dgamma();
            assert!((analytic - fd).abs() < 1e-8, "varphi {v}");
        }
    }

    #[test]
    fn discount_saturates_without_overflow() {
        let hi = LearnedDiscount::new(500.0f64).unwrap();
        assert!(hi.gamma() <= 1.0 && hi.gamma() > 0.9999);
        let lo = LearnedDiscount::new(-500.0f64).unwrap();
        assert!(lo.gamma() >= 0.0 && lo.gamma() < 1e-4);
        assert!(hi.dgamma().is_finite() && lo.dgamma().is_finite());
    }

    #[test]
    fn phi_round_trip() {
        let r = AlignmentReward::from_heads(pv(&[1.0, 2.0]), pv(&[3.0, 4.0]), pv(&[5.0, 6.0])).unwrap();
        let phi = r.phi();
        assert_eq!(phi.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut other = AlignmentReward::<f64>::zeros(2);
        other.set_phi(&phi).unwrap();
        assert_eq!(other.phi(), phi);
    }

    proptest! {
        // eval is linear in phi for fixed inputs.
        #[test]
        fn eval_linear_in_phi(
            p1 in proptest::collection::vec(-2.0..2.0f64, 6),
            p2 in proptest::collection::vec(-2.0..2.0f64, 6),
            rp in -5.0..5.0f64,
            ra in -5.0..5.0f64,
        ) {
            let x = [0.7, -0.2];
            let mut r = AlignmentReward::<f64>::zeros(2);
            let phi1 = pv(&p1);
            let phi2 = pv(&p2);
            r.set_phi(&phi1).unwrap();
            let e1 = r.eval(&x, rp, ra).unwrap();
            r.set_phi(&phi2).unwrap();
            let e2 = r.eval(&x, rp, ra).unwrap();
            r.set_phi(&phi1.add(&phi2).unwrap()).unwrap();
            let esum = r.eval(&x, rp, ra).unwrap();
            prop_assert!((esum - (e1 + e2)).abs() < 1e-9);
        }

        #[test]
        fn gamma_stays_in_open_unit_interval(v in -50.0..50.0f64) {
            let d = LearnedDiscount::new(v).unwrap();
            prop_assert!(d.gamma() > 0.0 && d.gamma() < 1.0);
        }
    }
}
