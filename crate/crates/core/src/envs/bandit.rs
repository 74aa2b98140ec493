//! Single-state, single-step bandit with three arms. Small enough that every
//! off-policy quantity has a closed form, which makes it the reference case
//! for checking estimator bias and gradient conditioning.

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};
use rand::Rng;

/// Arm payoffs. The last arm is optimal; the first is mediocre, so data
/// logged by a first-arm-heavy policy misranks the arms unless importance
/// weighting or a learned correction fixes it.
pub const BANDIT_REWARDS: [f64; 3] = [0.2, 0.5, 1.0];

/// A logging policy that mostly pulls the mediocre arm.
pub const BEHAVIOR_BETA: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Clone, Debug, Default)]
pub struct Bandit {
    done: bool,
}

impl Bandit {
    pub fn new() -> Self {
        Bandit { done: false }
    }
}

impl Environment for Bandit {
    fn reset<R: Rng + ?Sized>(&mut self, _rng: &mut R) -> Vec<f64> {
        self.done = false;
        self.observation()
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, _rng: &mut R) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::invalid("bandit: episode already finished"));
        }
        if action >= BANDIT_REWARDS.len() {
            return Err(Error::IndexOutOfRange { index: action, len: BANDIT_REWARDS.len() });
        }
        self.done = true;
        Ok(StepOutcome {
            observation: self.observation(),
            r_primary: BANDIT_REWARDS[action],
            r_aux: 0.0,
            terminal: true,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![0.0]
    }

    fn num_actions(&self) -> usize {
        BANDIT_REWARDS.len()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn potential(&self) -> Option<f64> {
        Some(0.0)
    }
}
