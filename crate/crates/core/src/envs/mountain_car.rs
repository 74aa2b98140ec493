//! Underpowered car in a valley. The engine alone cannot climb the right
//! hill, so the car must rock back and forth to build momentum. Reaching the
//! hilltop pays 1 and ends the episode.

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};
use rand::Rng;

const X_MIN: f64 = -1.2;
const X_MAX: f64 = 0.6;
const V_MAX: f64 = 0.07;
const GOAL_X: f64 = 0.5;
const HORIZON: usize = 1000;

/// Auxiliary reward menu for the car.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McAux {
    /// Absolute velocity of the state the action was taken in. Admits a state
    /// potential, but rewards speed in either direction, including away from
    /// the goal.
    AbsVelocity,
    /// 1 when the push matches the sign of the current velocity (the classic
    /// energy-pumping rule), else 0. Depends on the action.
    EnergyPump,
}

#[derive(Clone, Debug)]
pub struct MountainCar {
    aux: Option<McAux>,
    x: f64,
    v: f64,
    steps: usize,
    done: bool,
}

impl MountainCar {
    pub fn new(aux: Option<McAux>) -> Self {
        MountainCar { aux, x: -0.5, v: 0.0, steps: 0, done: false }
    }
}

impl Environment for MountainCar {
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.x = rng.random_range(-0.6..-0.4);
        self.v = 0.0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, _rng: &mut R) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::invalid("mountain car: episode already finished"));
        }
        // 0 = push left, 1 = coast, 2 = push right.
        let push = match action {
            0 => -1.0,
            1 => 0.0,
            2 => 1.0,
            _ => return Err(Error::IndexOutOfRange { index: action, len: 3 }),
        };
        let r_aux = match self.aux {
            None => 0.0,
            Some(McAux::AbsVelocity) => self.v.abs(),
            Some(McAux::EnergyPump) => {
                let aligned = (self.v > 0.0 && action == 2)
                    || (self.v < 0.0 && action == 0)
                    || (self.v == 0.0 && action == 1);
                if aligned {
                    1.0
                } else {
                    0.0
                }
            }
        };
        self.v = (self.v + 0.001 * push - 0.0025 * (3.0 * self.x).cos()).clamp(-V_MAX, V_MAX);
        // The left wall clips position only; momentum carries through.
        self.x = (self.x + self.v).clamp(X_MIN, X_MAX);
        self.steps += 1;
        let terminal = self.x >= GOAL_X;
        self.done = terminal || self.steps >= HORIZON;
        Ok(StepOutcome {
            observation: self.observation(),
            r_primary: if terminal { 1.0 } else { 0.0 },
            r_aux,
            terminal,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.x, self.v]
    }

    fn num_actions(&self) -> usize {
        3
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn potential(&self) -> Option<f64> {
        match self.aux {
            None => Some(0.0),
            Some(McAux::AbsVelocity) => Some(self.v.abs()),
            Some(McAux::EnergyPump) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn one_step_dynamics_from_the_valley() {
        let mut env = MountainCar::new(None);
        env.x = -0.5;
        env.v = 0.0;
        let out = env.step(2, &mut rng()).unwrap();
        assert!((out.observation[1] - 0.0008231569958307428).abs() < 1e-15);
        assert!((out.observation[0] - -0.49917684300416926).abs() < 1e-15);
        assert_eq!(out.r_primary, 0.0);
        assert!(!out.terminal);
    }

    #[test]
    fn left_wall_clips_position_but_not_velocity() {
        let mut env = MountainCar::new(None);
        env.x = X_MIN;
        env.v = -V_MAX;
        let out = env.step(0, &mut rng()).unwrap();
        assert_eq!(out.observation[0], X_MIN);
        assert!(out.observation[1] < 0.0, "velocity should stay negative");
    }

    #[test]
    fn velocity_saturates_at_the_cap() {
        let mut env = MountainCar::new(None);
        env.x = -0.5;
        env.v = V_MAX;
        let out = env.step(2, &mut rng()).unwrap();
        assert!(out.observation[1] <= V_MAX);
    }

    #[test]
    fn abs_velocity_aux_reads_the_current_state() {
        let mut env = MountainCar::new(Some(McAux::AbsVelocity));
        env.x = -0.5;
        env.v = 0.03;
        let mut r = rng();
        assert_eq!(env.step(0, &mut r).unwrap().r_aux, 0.03);
        env.v = -0.02;
        assert_eq!(env.step(2, &mut r).unwrap().r_aux, 0.02);
    }

    #[test]
    fn energy_pump_aux_truth_table() {
        let mut r = rng();
        let cases = [
            (0.03, 2, 1.0),
            (0.03, 0, 0.0),
            (0.03, 1, 0.0),
            (-0.03, 0, 1.0),
            (-0.03, 2, 0.0),
            (0.0, 1, 1.0),
            (0.0, 2, 0.0),
        ];
        for (v, action, expected) in cases {
            let mut env = MountainCar::new(Some(McAux::EnergyPump));
            env.x = -0.5;
            env.v = v;
            assert_eq!(env.step(action, &mut r).unwrap().r_aux, expected, "v={v} a={action}");
        }
    }

    #[test]
    fn energy_pumping_policy_reaches_the_goal() {
        let mut env = MountainCar::new(None);
        let mut r = rng();
        env.reset(&mut r);
        let mut total = 0.0;
        for step in 0..HORIZON {
            let action = if env.v < 0.0 { 0 } else { 2 };
            let out = env.step(action, &mut r).unwrap();
            total += out.r_primary;
            if out.terminal {
                assert_eq!(out.r_primary, 1.0);
                assert!(out.observation[0] >= GOAL_X);
                assert!(step < HORIZON - 1, "should summit well before the cap");
                break;
            }
        }
        assert_eq!(total, 1.0);
    }

    #[test]
    fn reset_draws_start_position_from_the_band() {
        let mut env = MountainCar::new(None);
        let mut r = rng();
        for _ in 0..100 {
            let obs = env.reset(&mut r);
            assert!(obs[0] >= -0.6 && obs[0] < -0.4);
            assert_eq!(obs[1], 0.0);
        }
    }

    #[test]
    fn stepping_a_finished_episode_is_a_protocol_error() {
        let mut env = MountainCar::new(None);
        env.x = 0.49;
        env.v = V_MAX;
        let mut r = rng();
        let out = env.step(2, &mut r).unwrap();
        assert!(out.terminal);
        assert!(env.step(2, &mut r).is_err());
    }

    #[test]
    fn potential_is_only_defined_for_state_based_aux() {
        assert_eq!(MountainCar::new(Some(McAux::AbsVelocity)).potential(), Some(0.0));
        assert_eq!(MountainCar::new(Some(McAux::EnergyPump)).potential(), None);
        assert_eq!(MountainCar::new(None).potential(), Some(0.0));
    }
}
