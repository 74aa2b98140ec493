//! Inner-loop policy-gradient machinery.
//!
//! The inner update for a batch `B` of episodes is
//!
//! ```text
//! est(theta) = (1/|B|) sum_tau sum_t score(S_t, A_t) * sum_{j>=t} gamma^{j-t} r(S_j, A_j)
//! ```
//!
//! with the learned reward `r` and learned discount `gamma`. No importance
//! correction is applied when the batch comes from the replay buffer; the
//! learned reward is what compensates for the off-policy reuse. On a fixed
//! batch the estimate is exactly the theta-gradient of [`inner_objective`].
//!
//! Smoothing keeps the update's Jacobian invertible at the fixed point:
//! either an L2 pull `-lambda * theta` or an entropy bonus that replaces
//! `r` with `r - lambda * ln pi_theta` inside the return.

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::{OptimizerState, ParamVector};
use crate::policy::SoftmaxLinearPolicy;
use crate::reward::{AlignmentReward, LearnedDiscount};
use crate::scalar::Scalar;
use crate::trajectory::{ReplayBuffer, Trajectory};

/// Smoothing applied to the raw inner update.
#[derive(Clone, Copy, Debug)]
pub enum RegMode<F: Scalar> {
    L2 { lambda: F },
    Entropy { lambda: F },
}

/// Reverse-recursion discounted suffix sums: `G_t = r_t + gamma * G_{t+1}`.
pub fn discounted_returns<F: Scalar>(rewards: &[F], gamma: F) -> Vec<F> {
    let mut out = vec![F::zero(); rewards.len()];
    let mut acc = F::zero();
    for (slot, r) in out.iter_mut().zip(rewards.iter()).rev() {
        acc = *r + gamma * acc;
        *slot = acc;
    }
    out
}

/// Learned-reward value at every step of the episode.
pub fn reward_values<F: Scalar>(episode: &Trajectory<F>, model: &AlignmentReward<F>) -> Result<Vec<F>> {
    episode.steps.iter().map(|s| model.eval(&s.features, s.r_primary, s.r_aux)).collect()
}

pub(crate) fn accumulate_weighted_scores<F: Scalar>(
    acc: &mut ParamVector<F>,
    policy: &SoftmaxLinearPolicy<F>,
    episode: &Trajectory<F>,
    weights: &[F],
    scale: F,
) -> Result<()> {
    let d = policy.feature_dim();
    for (step, g) in episode.steps.iter().zip(weights) {
        let probs = policy.action_probs(&step.features)?;
        let coef_all = scale * *g;
        let out = acc.as_mut_slice();
        for (b, p) in probs.iter().enumerate() {
            let indicator = if b == step.action { F::one() } else { F::zero() };
            let coef = coef_all * (indicator - *p);
            let block = &mut out[b * d..(b + 1) * d];
            for (slot, x) in block.iter_mut().zip(&step.features) {
                *slot = *slot + coef * *x;
            }
        }
    }
    Ok(())
}

/// Step rewards as the inner loop sees them: the learned reward, plus the
/// entropy bonus when that smoothing mode is active.
pub(crate) fn effective_rewards<F: Scalar>(
    policy: &SoftmaxLinearPolicy<F>,
    episode: &Trajectory<F>,
    model: &AlignmentReward<F>,
    mode: RegMode<F>,
) -> Result<Vec<F>> {
    let mut rewards = reward_values(episode, model)?;
    if let RegMode::Entropy { lambda } = mode {
        for (r, step) in rewards.iter_mut().zip(&episode.steps) {
            *r = *r - lambda * policy.log_prob(&step.features, step.action)?;
        }
    }
    Ok(rewards)
}

/// Raw batch estimate of the inner update, without smoothing.
pub fn inner_update_estimate<F: Scalar>(
    policy: &SoftmaxLinearPolicy<F>,
    batch: &[&Trajectory<F>],
    model: &AlignmentReward<F>,
    disc: &LearnedDiscount<F>,
) -> Result<ParamVector<F>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let gamma = disc.gamma();
    let scale = F::one() / F::from_usize(batch.len()).unwrap();
    let mut acc = ParamVector::zeros(policy.param_dim());
    for episode in batch {
        let rewards = reward_values(episode, model)?;
        let returns = discounted_returns(&rewards, gamma);
        accumulate_weighted_scores(&mut acc, policy, episode, &returns, scale)?;
    }
    Ok(acc)
}

/// Batch objective whose theta-gradient (returns held fixed) is
/// [`inner_update_estimate`]. Useful for finite-difference checks.
pub fn inner_objective<F: Scalar>(
    policy: &SoftmaxLinearPolicy<F>,
    batch: &[&Trajectory<F>],
    model: &AlignmentReward<F>,
    disc: &LearnedDiscount<F>,
) -> Result<F> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let gamma = disc.gamma();
    let scale = F::one() / F::from_usize(batch.len()).unwrap();
    let mut total = F::zero();
    for episode in batch {
        let rewards = reward_values(episode, model)?;
        let returns = discounted_returns(&rewards, gamma);
        for (step, g) in episode.steps.iter().zip(&returns) {
            total = total + scale * policy.log_prob(&step.features, step.action)? * *g;
        }
    }
    Ok(total)
}

/// Applies smoothing to a raw estimate.
///
/// L2 subtracts `lambda * theta`. Entropy folds `-lambda * ln pi_theta`
/// into the reward before the returns are formed, which requires
/// re-walking the batch.
pub fn regularized_update<F: Scalar>(
    raw: &ParamVector<F>,
    policy: &SoftmaxLinearPolicy<F>,
    batch: &[&Trajectory<F>],
    disc: &LearnedDiscount<F>,
    mode: RegMode<F>,
) -> Result<ParamVector<F>> {
    match mode {
        RegMode::L2 { lambda } => {
            let mut out = raw.clone();
            out.axpy_mut(-lambda, policy.theta())?;
            Ok(out)
        }
        RegMode::Entropy { lambda } => {
            if batch.is_empty() {
                return Err(Error::EmptyBatch);
            }
            let gamma = disc.gamma();
            let scale = F::one() / F::from_usize(batch.len()).unwrap();
            let mut out = raw.clone();
            for episode in batch {
                let bonuses: Vec<F> = episode
                    .steps
                    .iter()
                    .map(|s| policy.log_prob(&s.features, s.action).map(|lp| -lambda * lp))
                    .collect::<Result<_>>()?;
                let returns = discounted_returns(&bonuses, gamma);
                accumulate_weighted_scores(&mut out, policy, episode, &returns, scale)?;
            }
            Ok(out)
        }
    }
}

/// Raw estimate plus smoothing in one call. This is the update whose fixed
/// point the outer loop differentiates through.
pub fn inner_update<F: Scalar>(
    policy: &SoftmaxLinearPolicy<F>,
    batch: &[&Trajectory<F>],
    model: &AlignmentReward<F>,
    disc: &LearnedDiscount<F>,
    mode: RegMode<F>,
) -> Result<ParamVector<F>> {
    let raw = inner_update_estimate(policy, batch, model, disc)?;
    regularized_update(&raw, policy, batch, disc, mode)
}

/// Designer-objective estimate and its policy gradient, from on-policy
/// episodes: `J = mean discounted primary return`, `v = dJ/dtheta` in the
/// same gamma-dropped form as the inner estimate.
pub fn outer_objective_grad<F: Scalar>(
    policy: &SoftmaxLinearPolicy<F>,
    batch: &[&Trajectory<F>],
    gamma_outer: F,
) -> Result<(F, ParamVector<F>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let scale = F::one() / F::from_usize(batch.len()).unwrap();
    let mut j = F::zero();
    let mut v = ParamVector::zeros(policy.param_dim());
    for episode in batch {
        let rewards: Vec<F> = episode.steps.iter().map(|s| s.r_primary).collect();
        let returns = discounted_returns(&rewards, gamma_outer);
        if let Some(g0) = returns.first() {
            j = j + scale * *g0;
        }
        accumulate_weighted_scores(&mut v, policy, episode, &returns, scale)?;
    }
    Ok((j, v))
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ConvergeStats {
    pub batches_sampled: usize,
    pub last_update_norm: f64,
}

/// Runs `steps` inner updates, each on a single episode drawn uniformly
/// with replacement from the replay buffer. No new episodes are collected
/// here; the inner loop only ever replays.
pub fn inner_converge<F: Scalar, R: Rng>(
    policy: &mut SoftmaxLinearPolicy<F>,
    buffer: &ReplayBuffer<F>,
    model: &AlignmentReward<F>,
    disc: &LearnedDiscount<F>,
    mode: RegMode<F>,
    optimizer: &mut OptimizerState<F>,
    steps: usize,
    rng: &mut R,
) -> Result<ConvergeStats> {
    let mut stats = ConvergeStats::default();
    for _ in 0..steps {
        let batch = buffer.sample(rng, 1)?;
        let update = inner_update(policy, &batch, model, disc, mode)?;
        stats.batches_sampled += 1;
        stats.last_update_norm = crate::scalar::to_f64(update.norm_l2());
        let next = optimizer.apply(policy.theta(), &update)?;
        policy.set_theta(next)?;
    }
    Ok(stats)
}
