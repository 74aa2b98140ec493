//! Library for learning behavior-aligned rewards and discount factors.
//!
//! An agent's designer typically hands it a primary reward (what they
//! actually want) plus auxiliary signals (hints that may be misspecified).
//! This crate learns a parameterized reward and discount for the inner
//! policy-optimization loop such that the resulting policy maximizes the
//! designer's primary objective, even when the auxiliary signal would
//! otherwise derail it. The outer updates are computed with implicit
//! gradients through the inner fixed point, using finite-difference
//! Hessian-vector products and a Neumann-series inverse.
//!
//! The numeric core ([`param`], [`features`], [`policy`], [`reward`],
//! [`inner`], [`outer`], [`ridge`], [`tabular`]) is generic over the scalar
//! type through [`scalar::Scalar`] (implemented for `f32` and `f64`).
//! Concrete `f64` aliases are exported at the crate root; the environments
//! and the experiment harness use those.

pub mod envs;
pub mod error;
pub mod features;
pub mod harness;
pub mod inner;
pub mod linalg;
pub mod outer;
pub mod param;
pub mod policy;
pub mod reward;
pub mod ridge;
pub mod scalar;
pub mod tabular;
pub mod trajectory;

pub use error::{Error, Result};

/// Default scalar type for experiments and the CLI.
pub type Real = f64;

pub type ParamVec = param::ParamVector<Real>;
pub type Optimizer = param::OptimizerState<Real>;
pub type Featurizer = features::Featurizer<Real>;
pub type SoftmaxPolicy = policy::SoftmaxLinearPolicy<Real>;
pub type RewardModel = reward::AlignmentReward<Real>;
pub type Discount = reward::LearnedDiscount<Real>;
pub type Traj = trajectory::Trajectory<Real>;
pub type Replay = trajectory::ReplayBuffer<Real>;
