//! 5x5 grid: start at the bottom-left corner, goal at the top-right.
//! Reaching the goal pays 100 and ends the episode; every other step pays 0.

use super::{Environment, StepOutcome};
use crate::error::{Error, Result};
use rand::Rng;
use std::cmp::Ordering;

const GRID_MAX: usize = 4;
const GOAL: (usize, usize) = (4, 4);
const CENTER: (usize, usize) = (2, 2);
const HORIZON: usize = 100;

/// Auxiliary reward menu for the grid. All three variants are functions of
/// the entered cell, so each admits a state potential.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GwAux {
    /// Negative squared Euclidean distance from the entered cell to the goal.
    NegL2,
    /// Flat +50 whenever the entered cell is the center of the grid.
    CenterBonus,
    /// Manhattan distance to the goal, paid positively in the start-adjacent
    /// half and negatively in the goal-adjacent half. The positive half pulls
    /// the agent away from the goal; the negative half pulls it in.
    PartialManhattan,
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    aux: Option<GwAux>,
    x: usize,
    y: usize,
    steps: usize,
    done: bool,
}

impl GridWorld {
    pub fn new(aux: Option<GwAux>) -> Self {
        GridWorld { aux, x: 0, y: 0, steps: 0, done: false }
    }
}

fn aux_value(variant: GwAux, x: usize, y: usize) -> f64 {
    let dx = GOAL.0 as f64 - x as f64;
    let dy = GOAL.1 as f64 - y as f64;
    match variant {
        GwAux::NegL2 => -(dx * dx + dy * dy),
        GwAux::CenterBonus => {
            if (x, y) == CENTER {
                50.0
            } else {
                0.0
            }
        }
        GwAux::PartialManhattan => {
            let m = dx.abs() + dy.abs();
            // The anti-diagonal x + y = 4 splits the halves and pays nothing.
            match (x + y).cmp(&GRID_MAX) {
                Ordering::Less => m,
                Ordering::Greater => -m,
                Ordering::Equal => 0.0,
            }
        }
    }
}

impl Environment for GridWorld {
    fn reset<R: Rng + ?Sized>(&mut self, _rng: &mut R) -> Vec<f64> {
        self.x = 0;
        self.y = 0;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    fn step<R: Rng + ?Sized>(&mut self, action: usize, _rng: &mut R) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::invalid("gridworld: episode already finished"));
        }
        // 0 = up, 1 = down, 2 = left, 3 = right; bumping a wall keeps position.
        let (nx, ny) = match action {
            0 => (self.x, (self.y + 1).min(GRID_MAX)),
            1 => (self.x, self.y.saturating_sub(1)),
            2 => (self.x.saturating_sub(1), self.y),
            3 => ((self.x + 1).min(GRID_MAX), self.y),
            _ => return Err(Error::IndexOutOfRange { index: action, len: 4 }),
        };
        let r_aux = self.aux.map_or(0.0, |v| aux_value(v, nx, ny));
        self.x = nx;
        self.y = ny;
        self.steps += 1;
        let terminal = (nx, ny) == GOAL;
        self.done = terminal || self.steps >= HORIZON;
        Ok(StepOutcome {
            observation: self.observation(),
            r_primary: if terminal { 100.0 } else { 0.0 },
            r_aux,
            terminal,
        })
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.x as f64, self.y as f64]
    }

    fn num_actions(&self) -> usize {
        4
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn potential(&self) -> Option<f64> {
        Some(self.aux.map_or(0.0, |v| aux_value(v, self.x, self.y)))
    }
}
