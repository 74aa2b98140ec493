//! Pole balancing on a pushed cart. Every surviving step pays 1; the episode
//! ends when the cart leaves the track, the pole falls past the angle limit,
//! or 500 steps elapse.

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};
use rand::Rng;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const POLE_HALF_LENGTH: f64 = 0.5;
const FORCE: f64 = 10.0;
const TAU: f64 = 0.02;
const HORIZON: usize = 500;

pub const X_LIMIT: f64 = 2.4;
pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;

/// Bang-bang gains frozen after an offline grid search; greedy rollouts from
/// the standard start box survive the full 500-step cap with margin (the
/// search required 450).
pub const PD_KP: f64 = 20.0;
pub const PD_KD: f64 = 2.0;

/// Reference controller: push right iff the angle PD signal is positive,
/// left on ties.
pub fn pd_controller(theta: f64, theta_dot: f64) -> usize {
    usize::from(PD_KP * theta + PD_KD * theta_dot > 0.0)
}

/// Auxiliary reward menu for the cart. Both variants compare the action
/// against the reference controller, so neither admits a state potential.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpAux {
    /// +5 for matching the reference controller's action, -1 otherwise.
    MatchPd,
    /// The negation: rewards disagreeing with a controller that balances.
    AntiPd,
}

#[derive(Clone, Debug)]
pub struct CartPole {
    aux: Option<CpAux>,
    x: f64,
    x_dot: f64,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(aux: Option<CpAux>) -> Self {
        CartPole { aux, x: 0.0, x_dot: 0.0, theta: 0.0, theta_dot: 0.0, steps: 0, done: false }
    }
}

impl Environment for CartPole {
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.x = rng.random_range(-0.05..0.05);
        self.x_dot = rng.random_range(-0.05..0.05);
        self.theta = rng.random_range(-0.05..0.05);
        self.theta_dot = rng.random_range(-0.05..0.05);
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, _rng: &mut R) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::invalid("cart pole: episode already finished"));
        }
        // 0 = push left, 1 = push right.
        let force = match action {
            0 => -FORCE,
            1 => FORCE,
            _ => return Err(Error::IndexOutOfRange { index: action, len: 2 }),
        };
        let r_aux = match self.aux {
            None => 0.0,
            Some(variant) => {
                let matched = action == pd_controller(self.theta, self.theta_dot);
                let value = if matched { 5.0 } else { -1.0 };
                match variant {
                    CpAux::MatchPd => value,
                    CpAux::AntiPd => -value,
                }
            }
        };
        let (sin, cos) = self.theta.sin_cos();
        let total_mass = CART_MASS + POLE_MASS;
        let pole_moment = POLE_MASS * POLE_HALF_LENGTH;
        let temp = (force + pole_moment * self.theta_dot * self.theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;
        // Forward Euler on the pre-step derivatives.
        self.x += TAU * self.x_dot;
        self.x_dot += TAU * x_acc;
        self.theta += TAU * self.theta_dot;
        self.theta_dot += TAU * theta_acc;
        self.steps += 1;
        let terminal = self.x.abs() > X_LIMIT || self.theta.abs() > THETA_LIMIT;
        self.done = terminal || self.steps >= HORIZON;
        Ok(StepOutcome {
            observation: self.observation(),
            r_primary: 1.0,
            r_aux,
            terminal,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn potential(&self) -> Option<f64> {
        match self.aux {
            None => Some(0.0),
            Some(_) => None,
        }
    }
}
