//! Flat parameter vectors and the first-order optimizers used on them.
//!
//! All updates follow the ascent convention: `params <- params + step(grad)`
//! where `grad` points uphill. Callers that minimize pass the negated
//! gradient.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Dense parameter vector with a fixed length and finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector<F: Scalar>(Vec<F>);

impl<F: Scalar> ParamVector<F> {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![F::zero(); len])
    }

    /// Rejects NaN and infinite entries; the length is fixed afterwards.
    pub fn from_vec(values: Vec<F>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ParamVector::from_vec"));
        }
        Ok(ParamVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn get(&self, index: usize) -> Result<F> {
        self.0
            .get(index)
            .copied()
            .ok_or(Error::IndexOutOfRange { index, len: self.0.len() })
    }

    pub fn set(&mut self, index: usize, value: F) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("ParamVector::set"));
        }
        match self.0.get_mut(index) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => Err(Error::IndexOutOfRange { index, len: self.0.len() }),
        }
    }

    pub(crate) fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| *a + *b).collect()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| *a - *b).collect()))
    }

    pub fn scale(&self, factor: F) -> Self {
        ParamVector(self.0.iter().map(|a| *a * factor).collect())
    }

    /// `self <- self + factor * other`.
    pub fn axpy_mut(&mut self, factor: F, other: &Self) -> Result<()> {
        self.check_len(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a = *a + factor * *b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<F> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| *a * *b).sum())
    }

    pub fn norm_l2(&self) -> F {
        self.0.iter().map(|a| *a * *a).sum::<F>().sqrt()
    }

    pub fn norm_linf(&self) -> F {
        self.0.iter().fold(F::zero(), |m, a| m.max(a.abs()))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.0.iter()
    }

    pub fn concat(parts: &[&Self]) -> Self {
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            out.extend_from_slice(&p.0);
        }
        ParamVector(out)
    }

    pub(crate) fn from_vec_unchecked(values: Vec<F>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ParamVector(values)
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.0
    }

    pub(crate) fn ensure_finite(self, context: &'static str) -> Result<Self> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(context));
        }
        Ok(self)
    }
}

/// `params + lr * grad`.
pub fn sgd_step<F: Scalar>(params: &ParamVector<F>, grad: &ParamVector<F>, lr: F) -> Result<ParamVector<F>> {
    params.check_len(grad)?;
    let mut out = params.clone();
    out.axpy_mut(lr, grad)?;
    out.ensure_finite("sgd_step")
}

/// Which optimizer an [`OptimizerState`] runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

/// Per-parameter optimizer state. RMSprop uses decay 0.99 and eps 1e-8;
/// Adam uses betas (0.9, 0.999) and eps 1e-8.
#[derive(Clone, Debug)]
pub struct OptimizerState<F: Scalar> {
    pub kind: OptimizerKind,
    pub lr: F,
    /// First-moment accumulator (Adam only; zero otherwise).
    pub m: ParamVector<F>,
    /// Second-moment / squared-gradient accumulator.
    pub v: ParamVector<F>,
    pub steps: u64,
}

const RMSPROP_DECAY: f64 = 0.99;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl<F: Scalar> OptimizerState<F> {
    pub fn new(kind: OptimizerKind, lr: F, dim: usize) -> Self {
        OptimizerState { kind, lr, m: ParamVector::zeros(dim), v: ParamVector::zeros(dim), steps: 0 }
    }

    /// Applies one ascent step, updating the accumulators in place.
    pub fn apply(&mut self, params: &ParamVector<F>, grad: &ParamVector<F>) -> Result<ParamVector<F>> {
        match self.kind {
            OptimizerKind::Sgd => {
                self.steps += 1;
                sgd_step(params, grad, self.lr)
            }
            OptimizerKind::RmsProp => {
                let (next, state) = rmsprop_step(self, params, grad, self.lr)?;
                *self = state;
                Ok(next)
            }
            OptimizerKind::Adam => {
                let (next, state) = adam_step(self, params, grad, self.lr)?;
                *self = state;
                Ok(next)
            }
        }
    }
}

/// RMSprop ascent step: `acc' = 0.99 acc + 0.01 g^2`,
/// `params + lr * g / (sqrt(acc') + eps)`.
pub fn rmsprop_step<F: Scalar>(
    state: &OptimizerState<F>,
    params: &ParamVector<F>,
    grad: &ParamVector<F>,
    lr: F,
) -> Result<(ParamVector<F>, OptimizerState<F>)> {
    params.check_len(grad)?;
    state.v.check_len(grad)?;
    let decay = real::<F>(RMSPROP_DECAY);
    let eps = real::<F>(EPS);
    let mut next = params.clone();
    let mut acc = state.v.clone();
    for i in 0..grad.len() {
        let g = grad.0[i];
        let a = decay * acc.0[i] + (F::one() - decay) * g * g;
        acc.0[i] = a;
        next.0[i] = next.0[i] + lr * g / (a.sqrt() + eps);
    }
    let next = next.ensure_finite("rmsprop_step params")?;
    let acc = acc.ensure_finite("rmsprop_step accumulator")?;
    let mut out_state = state.clone();
    out_state.v = acc;
    out_state.steps += 1;
    Ok((next, out_state))
}

/// Adam ascent step with bias correction.
pub fn adam_step<F: Scalar>(
    state: &OptimizerState<F>,
    params: &ParamVector<F>,
    grad: &ParamVector<F>,
    lr: F,
) -> Result<(ParamVector<F>, OptimizerState<F>)> {
    params.check_len(grad)?;
    state.m.check_len(grad)?;
    state.v.check_len(grad)?;
    let b1 = real::<F>(ADAM_BETA1);
    let b2 = real::<F>(ADAM_BETA2);
    let eps = real::<F>(EPS);
    let t = state.steps + 1;
    let bc1 = F::one() - b1.powi(t as i32);
    let bc2 = F::one() - b2.powi(t as i32);
    let mut next = params.clone();
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    for i in 0..grad.len() {
        let g = grad.0[i];
        m.0[i] = b1 * m.0[i] + (F::one() - b1) * g;
        v.0[i] = b2 * v.0[i] + (F::one() - b2) * g * g;
        let m_hat = m.0[i] / bc1;
        let v_hat = v.0[i] / bc2;
        next.0[i] = next.0[i] + lr * m_hat / (v_hat.sqrt() + eps);
    }
    let next = next.ensure_finite("adam_step params")?;
    let m = m.ensure_finite("adam_step m")?;
    let v = v.ensure_finite("adam_step v")?;
    let mut out_state = state.clone();
    out_state.m = m;
    out_state.v = v;
    out_state.steps = t;
    Ok((next, out_state))
}
