//! Episode records and the FIFO replay buffer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One transition as the inner loop consumes it: the state features, the
/// action taken, both reward signals, and the behavior policy's log
/// probability of the action at collection time.
#[derive(Clone, Debug)]
pub struct Step<F: Scalar> {
    pub features: Vec<F>,
    pub action: usize,
    pub r_primary: F,
    pub r_aux: F,
    pub behavior_logprob: F,
}

/// A full episode. `terminated` distinguishes a terminal transition from a
/// horizon cutoff.
#[derive(Clone, Debug, Default)]
pub struct Trajectory<F: Scalar> {
    pub steps: Vec<Step<F>>,
    pub terminated: bool,
}

impl<F: Scalar> Trajectory<F> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn return_primary(&self) -> F {
        self.steps.iter().map(|s| s.r_primary).sum()
    }

    pub fn return_aux(&self) -> F {
        self.steps.iter().map(|s| s.r_aux).sum()
    }
}

/// Bounded FIFO buffer of episodes. Pushing past capacity evicts the
/// oldest episode.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<F: Scalar> {
    episodes: std::collections::VecDeque<Trajectory<F>>,
    capacity: usize,
}

impl<F: Scalar> ReplayBuffer<F> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay buffer capacity must be >= 1"));
        }
        Ok(ReplayBuffer { episodes: std::collections::VecDeque::with_capacity(capacity.min(4096)), capacity })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: Trajectory<F>) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn get(&self, index: usize) -> Option<&Trajectory<F>> {
        self.episodes.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory<F>> {
        self.episodes.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample<'a, R: Rng>(&'a self, rng: &mut R, count: usize) -> Result<Vec<&'a Trajectory<F>>> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok((0..count).map(|_| &self.episodes[rng.random_range(0..self.episodes.len())]).collect())
    }

    /// Uniform sample without replacement; `count >= len` yields every
    /// episode exactly once (and consumes no randomness).
    pub fn sample_distinct<'a, R: Rng>(
        &'a self,
        rng: &mut R,
        count: usize,
    ) -> Result<Vec<&'a Trajectory<F>>> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = self.episodes.len();
        if count >= n {
            return Ok(self.episodes.iter().collect());
        }
        let mut index: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = rng.random_range(i..n);
            index.swap(i, j);
        }
        Ok(index[..count].iter().map(|&i| &self.episodes[i]).collect())
    }
}
