//! State featurizers: Fourier basis, tile coding, and one-hot encoding.
//!
//! All featurizers first normalize each observation coordinate into [0, 1]
//! using per-dimension bounds, clamping anything outside. Feature maps are
//! pure functions of the observation.

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};

/// Fourier cosine basis over box-bounded observations.
///
/// Feature `i` is `cos(pi * c_i . s_norm)` where the integer coefficient
/// vectors `c_i` range over `{0, ..., order}^dim` in row-major order (last
/// dimension fastest). The first coefficient vector is all zeros, so the
/// first feature is identically 1.
#[derive(Clone, Debug)]
pub struct FourierBasis<F: Scalar> {
    order: usize,
    bounds: Vec<(F, F)>,
    coefficients: Vec<Vec<F>>,
}

impl<F: Scalar> FourierBasis<F> {
    pub fn new(order: usize, bounds: Vec<(F, F)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("FourierBasis needs at least one dimension"));
        }
        for (lo, hi) in &bounds {
            if !(*lo < *hi) {
                return Err(Error::invalid("FourierBasis bounds must satisfy lo < hi"));
            }
        }
        let dim = bounds.len();
        let n = order + 1;
        let count = n.checked_pow(dim as u32).ok_or_else(|| Error::invalid("Fourier basis too large"))?;
        let mut coefficients = Vec::with_capacity(count);
        let mut c = vec![0usize; dim];
        loop {
            coefficients.push(c.iter().map(|&k| real::<F>(k as f64)).collect());
            // count up in base order+1, last dimension fastest
            let mut d = dim;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                c[d] += 1;
                if c[d] < n {
                    break;
                }
                c[d] = 0;
                if d == 0 {
                    return Ok(FourierBasis { order, bounds, coefficients });
                }
            }
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn input_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn features(&self, observation: &[F]) -> Result<Vec<F>> {
        let s = normalize(&self.bounds, observation)?;
        let pi = real::<F>(std::f64::consts::PI);
        Ok(self
            .coefficients
            .iter()
            .map(|c| {
                let phase: F = c.iter().zip(&s).map(|(ci, si)| *ci * *si).sum();
                (pi * phase).cos()
            })
            .collect())
    }
}

/// Uniformly offset tile coding.
///
/// Each of the `tilings` grids has `tiles_per_dim` tiles per dimension over
/// the normalized unit box; tiling `k` is shifted along every dimension by
/// `k / (tilings * tiles_per_dim)`. A state activates exactly one tile per
/// tiling and each tiling owns a disjoint index range, so exactly `tilings`
/// of the `tilings * tiles_per_dim^dim` features are 1.
#[derive(Clone, Debug)]
pub struct TileCoder<F: Scalar> {
    tiles_per_dim: usize,
    tilings: usize,
    bounds: Vec<(F, F)>,
}

impl<F: Scalar> TileCoder<F> {
    pub fn new(tiles_per_dim: usize, tilings: usize, bounds: Vec<(F, F)>) -> Result<Self> {
        if tiles_per_dim == 0 || tilings == 0 {
            return Err(Error::invalid("TileCoder needs tiles_per_dim >= 1 and tilings >= 1"));
        }
        if bounds.is_empty() {
            return Err(Error::invalid("TileCoder needs at least one dimension"));
        }
        for (lo, hi) in &bounds {
            if !(*lo < *hi) {
                return Err(Error::invalid("TileCoder bounds must satisfy lo < hi"));
            }
        }
        Ok(TileCoder { tiles_per_dim, tilings, bounds })
    }

    pub fn input_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn tilings(&self) -> usize {
        self.tilings
    }

    pub fn dim(&self) -> usize {
        self.tilings * self.tiles_per_dim.pow(self.bounds.len() as u32)
    }

    /// One active index per tiling, in tiling order.
    pub fn active_indices(&self, observation: &[F]) -> Result<Vec<usize>> {
        let s = normalize(&self.bounds, observation)?;
        let tiles = self.tiles_per_dim;
        let cells_per_tiling = tiles.pow(self.bounds.len() as u32);
        let denom = real::<F>((self.tilings * tiles) as f64);
        let mut out = Vec::with_capacity(self.tilings);
        for k in 0..self.tilings {
            let offset = real::<F>(k as f64) / denom;
            let mut cell = 0usize;
            let mut stride = 1usize;
            for si in &s {
                let scaled = (*si + offset) * real::<F>(tiles as f64);
                let idx = scaled.floor().to_f64().unwrap_or(0.0).max(0.0) as usize;
                let idx = idx.min(tiles - 1);
                cell += idx * stride;
                stride *= tiles;
            }
            out.push(k * cells_per_tiling + cell);
        }
        Ok(out)
    }

    pub fn features(&self, observation: &[F]) -> Result<Vec<F>> {
        let mut out = vec![F::zero(); self.dim()];
        for idx in self.active_indices(observation)? {
            out[idx] = F::one();
        }
        Ok(out)
    }
}

/// One-hot encoding of a discrete index.
pub fn one_hot<F: Scalar>(num_values: usize, index: usize) -> Result<Vec<F>> {
    if index >= num_values {
        return Err(Error::IndexOutOfRange { index, len: num_values });
    }
    let mut out = vec![F::zero(); num_values];
    out[index] = F::one();
    Ok(out)
}

fn normalize<F: Scalar>(bounds: &[(F, F)], observation: &[F]) -> Result<Vec<F>> {
    if observation.len() != bounds.len() {
        return Err(Error::DimensionMismatch { expected: bounds.len(), got: observation.len() });
    }
    Ok(bounds
        .iter()
        .zip(observation)
        .map(|((lo, hi), x)| {
            let clamped = x.max(*lo).min(*hi);
            (clamped - *lo) / (*hi - *lo)
        })
        .collect())
}

/// A featurizer an experiment binds to an environment's observations.
#[derive(Clone, Debug)]
pub enum Featurizer<F: Scalar> {
    Fourier(FourierBasis<F>),
    Tiles(TileCoder<F>),
    /// One-hot over `n` discrete states; observations carry the index in
    /// their first component.
    OneHot(usize),
}

impl<F: Scalar> Featurizer<F> {
    pub fn dim(&self) -> usize {
        match self {
            Featurizer::Fourier(b) => b.dim(),
            Featurizer::Tiles(t) => t.dim(),
            Featurizer::OneHot(n) => *n,
        }
    }

    pub fn features(&self, observation: &[F]) -> Result<Vec<F>> {
        match self {
            Featurizer::Fourier(b) => b.features(observation),
            Featurizer::Tiles(t) => t.features(observation),
            Featurizer::OneHot(n) => {
                let index = observation
                    .first()
                    .ok_or(Error::DimensionMismatch { expected: 1, got: 0 })?
                    .to_f64()
                    .unwrap_or(-1.0);
                if index < 0.0 || index.fract() != 0.0 {
                    return Err(Error::invalid("one-hot observation must be a non-negative integer"));
                }
                one_hot(*n, index as usize)
            }
        }
    }

    /// Weights `w` with `w . features(s) = 1` for every observation.
    /// Used to initialize reward heads that should start as pass-through.
    pub fn unit_weights(&self) -> Vec<F> {
        match self {
            Featurizer::Fourier(b) => {
                let mut w = vec![F::zero(); b.dim()];
                w[0] = F::one();
                w
            }
            Featurizer::Tiles(t) => {
                vec![F::one() / real::<F>(t.tilings() as f64); t.dim()]
            }
            Featurizer::OneHot(n) => vec![F::one(); *n],
        }
    }
}
