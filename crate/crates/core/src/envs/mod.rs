//! The four evaluation environments and their auxiliary reward catalogs.
//!
//! Each environment emits a primary reward (the quantity final policies are
//! judged by) and an auxiliary reward chosen from a small per-environment
//! menu. Auxiliary values are pure functions of (state, action, next state),
//! so replayed trajectories carry everything reward learning needs.

mod bandit;
mod cart_pole;
mod gridworld;
mod mountain_car;

pub use bandit::{Bandit, BANDIT_REWARDS, BEHAVIOR_BETA};
pub use cart_pole::{pd_controller, CartPole, CpAux, PD_KD, PD_KP, THETA_LIMIT, X_LIMIT};
pub use gridworld::{GridWorld, GwAux};
pub use mountain_car::{McAux, MountainCar};

use crate::error::Result;
use crate::features::{Featurizer, FourierBasis, TileCoder};
use rand::Rng;

/// What one accepted action produced.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub r_primary: f64,
    pub r_aux: f64,
    /// True termination (goal reached, pole dropped), not a horizon cutoff.
    pub terminal: bool,
}

/// An episodic task with a primary reward and an optional auxiliary stream.
pub trait Environment {
    /// Starts a fresh episode and returns the initial observation.
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64>;

    /// Applies an action. Errors once the episode has ended, whether by
    /// termination or by reaching the horizon.
    fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<StepOutcome>;

    fn observation(&self) -> Vec<f64>;

    fn num_actions(&self) -> usize;

    /// Hard episode cap; callers stop after this many accepted steps.
    fn horizon(&self) -> usize;

    /// The auxiliary value read off the current state alone. `None` when the
    /// configured variant depends on the action, in which case it admits no
    /// state potential.
    fn potential(&self) -> Option<f64>;
}

/// Runtime-selected environment.
#[derive(Clone, Debug)]
pub enum AnyEnv {
    GridWorld(GridWorld),
    MountainCar(MountainCar),
    CartPole(CartPole),
    Bandit(Bandit),
}

impl AnyEnv {
    /// A feature map sized to this environment's observation ranges.
    pub fn default_featurizer(&self) -> Result<Featurizer<f64>> {
        match self {
            AnyEnv::GridWorld(_) => Ok(Featurizer::Fourier(FourierBasis::new(
                3,
                vec![(0.0, 4.0), (0.0, 4.0)],
            )?)),
            AnyEnv::MountainCar(_) => Ok(Featurizer::Tiles(TileCoder::new(
                4,
                5,
                vec![(-1.2, 0.6), (-0.07, 0.07)],
            )?)),
            AnyEnv::CartPole(_) => Ok(Featurizer::Fourier(FourierBasis::new(
                3,
                vec![
                    (-X_LIMIT, X_LIMIT),
                    (-3.0, 3.0),
                    (-THETA_LIMIT, THETA_LIMIT),
                    (-3.5, 3.5),
                ],
            )?)),
            AnyEnv::Bandit(_) => Ok(Featurizer::OneHot(1)),
        }
    }
}

impl Environment for AnyEnv {
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self {
            AnyEnv::GridWorld(e) => e.reset(rng),
            AnyEnv::MountainCar(e) => e.reset(rng),
            AnyEnv::CartPole(e) => e.reset(rng),
            AnyEnv::Bandit(e) => e.reset(rng),
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<StepOutcome> {
        match self {
            AnyEnv::GridWorld(e) => e.step(action, rng),
            AnyEnv::MountainCar(e) => e.step(action, rng),
            AnyEnv::CartPole(e) => e.step(action, rng),
            AnyEnv::Bandit(e) => e.step(action, rng),
        }
    }

    fn observation(&self) -> Vec<f64> {
        match self {
            AnyEnv::GridWorld(e) => e.observation(),
            AnyEnv::MountainCar(e) => e.observation(),
            AnyEnv::CartPole(e) => e.observation(),
            AnyEnv::Bandit(e) => e.observation(),
        }
    }

    fn num_actions(&self) -> usize {
        match self {
            AnyEnv::GridWorld(e) => e.num_actions(),
            AnyEnv::MountainCar(e) => e.num_actions(),
            AnyEnv::CartPole(e) => e.num_actions(),
            AnyEnv::Bandit(e) => e.num_actions(),
        }
    }

    fn horizon(&self) -> usize {
        match self {
            AnyEnv::GridWorld(e) => e.horizon(),
            AnyEnv::MountainCar(e) => e.horizon(),
            AnyEnv::CartPole(e) => e.horizon(),
            AnyEnv::Bandit(e) => e.horizon(),
        }
    }

    fn potential(&self) -> Option<f64> {
        match self {
            AnyEnv::GridWorld(e) => e.potential(),
            AnyEnv::MountainCar(e) => e.potential(),
            AnyEnv::CartPole(e) => e.potential(),
            AnyEnv::Bandit(e) => e.potential(),
        }
    }
}

/// Draws an index from an explicit probability vector by inverse CDF.
/// The last index absorbs any rounding slack.
pub fn sample_from_probs<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    debug_assert!(!probs.is_empty());
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    probs.len() - 1
}
