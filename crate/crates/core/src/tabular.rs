//! Exact computations on small finite MDPs.
//!
//! Everything here is brute force on purpose: visitation measures by
//! forward propagation of the state distribution, q-values by backward
//! induction, and expected updates by enumerating every trajectory with
//! its probability. These exact quantities are the ground truth that the
//! sampled estimators elsewhere in the crate are tested against, and they
//! machine-check the three structural facts the method rests on:
//!
//! 1. potential-based shaping never moves the expected update (but can
//!    inflate its variance),
//! 2. a reward table `q * d_gamma / d_bar` with a zero learned discount
//!    reproduces the discounted-visitation policy gradient on-policy,
//! 3. the same construction with the behavior policy's visitation in the
//!    denominator reproduces the fully importance-corrected update from
//!    off-policy data with no correction applied.
//!
//! The time-dependent effects that would break facts 2 and 3 on arbitrary
//! MDPs are avoided the standard way: the test MDPs encode time in the
//! state (chains and layered graphs), so q-values are time-independent.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::one_hot;
use crate::param::ParamVector;
use crate::policy::SoftmaxLinearPolicy;

/// Hard cap on DFS prefixes during trajectory enumeration.
const ENUMERATION_LIMIT: u128 = 1_000_000;

const DIST_TOL: f64 = 1e-12;

/// A finite MDP with a step cap. `horizon` counts actions, so an episode
/// visits at most `horizon + 1` states; entering a terminal state ends it
/// early.
#[derive(Clone, Debug)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transition[s][a][s']`, each row a distribution.
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `r_primary[s][a]`.
    pub r_primary: Vec<Vec<f64>>,
    pub r_aux: Vec<Vec<f64>>,
    /// Start distribution over states.
    pub d0: Vec<f64>,
    pub terminal: Vec<bool>,
    /// Maximum number of steps per episode.
    pub horizon: usize,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        if s_n == 0 || a_n == 0 || self.horizon == 0 {
            return Err(Error::invalid("empty MDP"));
        }
        if self.transition.len() != s_n
            || self.r_primary.len() != s_n
            || self.r_aux.len() != s_n
            || self.d0.len() != s_n
            || self.terminal.len() != s_n
        {
            return Err(Error::invalid("state-indexed table has wrong length"));
        }
        for s in 0..s_n {
            if self.transition[s].len() != a_n || self.r_primary[s].len() != a_n || self.r_aux[s].len() != a_n {
                return Err(Error::invalid("action-indexed table has wrong length"));
            }
            for a in 0..a_n {
                check_distribution(&self.transition[s][a], "transition row")?;
            }
        }
        check_distribution(&self.d0, "start distribution")?;
        Ok(())
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_policy_table(mdp: &TabularMdp, table: &[Vec<f64>]) -> Result<()> {
    if table.len() != mdp.num_states {
        return Err(Error::invalid("policy table has wrong number of states"));
    }
    for row in table {
        if row.len() != mdp.num_actions {
            return Err(Error::invalid("policy table row has wrong number of actions"));
        }
        check_distribution(row, "policy row")?;
    }
    Ok(())
}

/// State-action occupancies accumulated over the horizon.
#[derive(Clone, Debug)]
pub struct VisitationResult {
    /// Unnormalized, discounted: `sum_t gamma^t Pr(S_t = s, A_t = a)`.
    pub d_gamma: Vec<Vec<f64>>,
    /// Unnormalized, undiscounted.
    pub d_bar: Vec<Vec<f64>>,
    /// `d_bar` scaled to sum to one.
    pub d_norm: Vec<Vec<f64>>,
}

/// Propagates the state distribution forward, accumulating discounted and
/// undiscounted state-action mass. Mass entering a terminal state stops
/// contributing: no action is taken there.
pub fn visitation(mdp: &TabularMdp, policy_table: &[Vec<f64>], gamma: f64) -> Result<VisitationResult> {
    mdp.validate()?;
    check_policy_table(mdp, policy_table)?;
    let (s_n, a_n) = (mdp.num_states, mdp.num_actions);
    let mut d_gamma = vec![vec![0.0; a_n]; s_n];
    let mut d_bar = vec![vec![0.0; a_n]; s_n];
    let mut p = mdp.d0.clone();
    let mut disc = 1.0;
    for _ in 0..mdp.horizon {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            if mdp.terminal[s] || p[s] == 0.0 {
                continue;
            }
            for a in 0..a_n {
                let mass = p[s] * policy_table[s][a];
                d_bar[s][a] += mass;
                d_gamma[s][a] += disc * mass;
                for (s2, prob) in mdp.transition[s][a].iter().enumerate() {
                    next[s2] += mass * prob;
                }
            }
        }
        p = next;
        disc *= gamma;
    }
    let total: f64 = d_bar.iter().flatten().sum();
    let d_norm = if total > 0.0 {
        d_bar.iter().map(|row| row.iter().map(|v| v / total).collect()).collect()
    } else {
        d_bar.clone()
    };
    Ok(VisitationResult { d_gamma, d_bar, d_norm })
}

/// Expected discounted primary return of taking `a` in `s` and following
/// the policy, with the full horizon remaining, by backward induction.
/// Exact at every reachable pair when time is encoded in the state.
pub fn qvalues(mdp: &TabularMdp, policy_table: &[Vec<f64>], gamma: f64) -> Result<Vec<Vec<f64>>> {
    mdp.validate()?;
    check_policy_table(mdp, policy_table)?;
    let (s_n, a_n) = (mdp.num_states, mdp.num_actions);
    // q[k](s,a): value with k steps remaining; k=1 is the bare reward
    let mut q = mdp.r_primary.clone();
    for _ in 1..mdp.horizon {
        let mut next = mdp.r_primary.clone();
        for s in 0..s_n {
            for a in 0..a_n {
                let mut future = 0.0;
                for (s2, prob) in mdp.transition[s][a].iter().enumerate() {
                    if mdp.terminal[s2] || *prob == 0.0 {
                        continue;
                    }
                    let v: f64 = (0..a_n).map(|a2| policy_table[s2][a2] * q[s2][a2]).sum();
                    future += prob * v;
                }
                next[s][a] += gamma * future;
            }
        }
        q = next;
    }
    Ok(q)
}

/// How the enumerated update weights each timestep.
#[derive(Clone, Copy, Debug)]
pub enum Weighting<'a> {
    /// `sum_t psi_t G_t`: the biased on-policy form that drops `gamma^t`.
    Dropped,
    /// `sum_t gamma^t psi_t G_t`: the unbiased discounted policy gradient.
    GammaT,
    /// Episodes drawn from `behavior`, fully importance corrected:
    /// `sum_t gamma^t rho_{0:t} psi_t sum_j gamma^{j-t} rho_{(t,j]} r_j`.
    OffPolicyIs { behavior: &'a [Vec<f64>] },
    /// Episodes drawn from `behavior`, no correction at all: the update a
    /// replay buffer consumer actually computes.
    OffPolicyUncorrected { behavior: &'a [Vec<f64>] },
}

/// First and second moments of the sampled update across episodes.
#[derive(Clone, Debug)]
pub struct UpdateMoments {
    pub mean: ParamVector<f64>,
    /// `E[||update||^2]`, for total-variance comparisons.
    pub second_moment: f64,
}

impl UpdateMoments {
    /// Total variance `E||u||^2 - ||E u||^2`.
    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean.dot(&self.mean).unwrap_or(0.0)
    }
}

/// Per-step reward used by the enumerated estimator.
enum PathReward<'a> {
    Table(&'a [Vec<f64>]),
    /// Primary reward plus `gamma * potential(next) - potential(current)`,
    /// with the potential pinned to zero past the end of the episode
    /// (terminal or cut off alike).
    ShapedPrimary { potential: &'a [f64] },
}

struct PathStep {
    state: usize,
    action: usize,
    // single-step ratio pi/beta; 1 when sampling on-policy
    ratio: f64,
    reward: f64,
}

struct Enumerator<'a> {
    mdp: &'a TabularMdp,
    policy: &'a SoftmaxLinearPolicy<f64>,
    pi_table: Vec<Vec<f64>>,
    sample_table: Vec<Vec<f64>>,
    reward: PathReward<'a>,
    gamma: f64,
    weighting_dropped: bool,
    corrected: bool,
    features: Vec<Vec<f64>>,
    prefixes: u128,
    mean: ParamVector<f64>,
    second_moment: f64,
    path: Vec<PathStep>,
}

impl<'a> Enumerator<'a> {
    fn step_reward(&self, state: usize, action: usize, next: Option<usize>) -> f64 {
        match &self.reward {
            PathReward::Table(t) => t[state][action],
            PathReward::ShapedPrimary { potential } => {
                let ahead = match next {
                    Some(s2) => potential[s2],
                    None => 0.0,
                };
                self.mdp.r_primary[state][action] + self.gamma * ahead - potential[state]
            }
        }
    }

    /// Estimator value for the completed path on top of the stack.
    fn leaf_value(&self) -> Result<ParamVector<f64>> {
        let n = self.path.len();
        let mut value = ParamVector::zeros(self.policy.param_dim());
        if n == 0 {
            return Ok(value);
        }
        // suffix returns, importance-corrected inside when requested
        let mut g = vec![0.0; n];
        let mut acc = 0.0;
        for t in (0..n).rev() {
            let corr = if self.corrected && t + 1 < n { self.path[t + 1].ratio } else { 1.0 };
            acc = self.path[t].reward + self.gamma * corr * acc;
            g[t] = acc;
        }
        let mut weight = 1.0;
        for (t, step) in self.path.iter().enumerate() {
            if !self.weighting_dropped {
                // gamma^t, with the cumulative ratio folded in when corrected
                if t == 0 {
                    weight = if self.corrected { step.ratio } else { 1.0 };
                } else {
                    weight *= self.gamma * if self.corrected { step.ratio } else { 1.0 };
                }
            }
            let psi = self.policy.score(&self.features[step.state], step.action)?;
            value.axpy_mut(weight * g[t], &psi)?;
        }
        Ok(value)
    }

    fn record_leaf(&mut self, prob: f64) -> Result<()> {
        let value = self.leaf_value()?;
        self.mean.axpy_mut(prob, &value)?;
        self.second_moment += prob * value.dot(&value)?;
        Ok(())
    }

    fn dfs(&mut self, state: usize, depth: usize, prob: f64) -> Result<()> {
        self.prefixes += 1;
        if self.prefixes > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge(self.prefixes));
        }
        if self.mdp.terminal[state] || depth == self.mdp.horizon {
            return self.record_leaf(prob);
        }
        for a in 0..self.mdp.num_actions {
            let pa = self.sample_table[state][a];
            if pa == 0.0 {
                continue;
            }
            let ratio = self.pi_table[state][a] / pa;
            for s2 in 0..self.mdp.num_states {
                let pt = self.mdp.transition[state][a][s2];
                if pt == 0.0 {
                    continue;
                }
                // shaping looks one state ahead; the potential is pinned
                // to zero wherever the episode ends, terminal or cut off
                let ends = self.mdp.terminal[s2] || depth + 1 == self.mdp.horizon;
                let reward = self.step_reward(state, a, if ends { None } else { Some(s2) });
                self.path.push(PathStep { state, action: a, ratio, reward });
                self.dfs(s2, depth + 1, prob * pa * pt)?;
                self.path.pop();
            }
        }
        Ok(())
    }
}

fn probs_from_policy(policy: &SoftmaxLinearPolicy<f64>, num_states: usize) -> Result<Vec<Vec<f64>>> {
    (0..num_states).map(|s| policy.action_probs(&one_hot::<f64>(num_states, s)?)).collect()
}

/// Builds the per-state action distribution table of a one-hot softmax
/// policy, the bridge between this module and the shared policy code.
pub fn policy_table(policy: &SoftmaxLinearPolicy<f64>, num_states: usize) -> Result<Vec<Vec<f64>>> {
    probs_from_policy(policy, num_states)
}

fn enumerate_update(
    mdp: &TabularMdp,
    policy: &SoftmaxLinearPolicy<f64>,
    weighting: Weighting,
    reward: PathReward,
    gamma: f64,
) -> Result<UpdateMoments> {
    mdp.validate()?;
    if policy.feature_dim() != mdp.num_states || policy.num_actions() != mdp.num_actions {
        return Err(Error::invalid("policy shape does not match the MDP"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!("gamma {gamma} outside [0, 1]")));
    }
    let pi_table = probs_from_policy(policy, mdp.num_states)?;
    let (sample_table, dropped, corrected) = match weighting {
        Weighting::Dropped => (pi_table.clone(), true, false),
        Weighting::GammaT => (pi_table.clone(), false, false),
        Weighting::OffPolicyIs { behavior } => {
            check_policy_table(mdp, behavior)?;
            (behavior.to_vec(), false, true)
        }
        Weighting::OffPolicyUncorrected { behavior } => {
            check_policy_table(mdp, behavior)?;
            (behavior.to_vec(), true, false)
        }
    };
    let features: Vec<Vec<f64>> =
        (0..mdp.num_states).map(|s| one_hot::<f64>(mdp.num_states, s)).collect::<Result<_>>()?;
    let mut en = Enumerator {
        mdp,
        policy,
        pi_table,
        sample_table,
        reward,
        gamma,
        weighting_dropped: dropped,
        corrected,
        features,
        prefixes: 0,
        mean: ParamVector::zeros(policy.param_dim()),
        second_moment: 0.0,
        path: Vec::new(),
    };
    for s in 0..mdp.num_states {
        if mdp.d0[s] > 0.0 {
            en.dfs(s, 0, mdp.d0[s])?;
        }
    }
    Ok(UpdateMoments { mean: en.mean, second_moment: en.second_moment })
}

/// Exact expectation (and second moment) of the sampled update under the
/// chosen weighting, by enumerating every trajectory.
pub fn exact_expected_update(
    mdp: &TabularMdp,
    policy: &SoftmaxLinearPolicy<f64>,
    reward_table: &[Vec<f64>],
    gamma: f64,
    weighting: Weighting,
) -> Result<UpdateMoments> {
    if reward_table.len() != mdp.num_states
        || reward_table.iter().any(|row| row.len() != mdp.num_actions)
    {
        return Err(Error::invalid("reward table shape does not match the MDP"));
    }
    enumerate_update(mdp, policy, weighting, PathReward::Table(reward_table), gamma)
}

/// Outcome of one identity check: the measured gap and the tolerance it
/// was held to.
#[derive(Clone, Debug)]
pub struct PropReport {
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn report(max_abs_diff: f64, tolerance: f64) -> PropReport {
    PropReport { max_abs_diff, tolerance, pass: max_abs_diff <= tolerance }
}

/// Shaping invariance: the expected dropped-weighting update is identical
/// under `r_p` and under `r_p + gamma Phi(s') - Phi(s)` (potential zero at
/// episode end). Also returns both total variances; shaping is allowed to
/// move those.
pub struct ShapingReport {
    pub update: PropReport,
    pub variance_shaped: f64,
    pub variance_primary: f64,
}

pub fn shaping_invariance_check(
    mdp: &TabularMdp,
    policy: &SoftmaxLinearPolicy<f64>,
    potential: &[f64],
    gamma: f64,
) -> Result<ShapingReport> {
    if potential.len() != mdp.num_states {
        return Err(Error::invalid("potential table has wrong length"));
    }
    let plain = exact_expected_update(mdp, policy, &mdp.r_primary, gamma, Weighting::Dropped)?;
    let shaped =
        enumerate_update(mdp, policy, Weighting::Dropped, PathReward::ShapedPrimary { potential }, gamma)?;
    let diff = shaped.mean.sub(&plain.mean)?.norm_linf();
    Ok(ShapingReport {
        update: report(diff, 1e-10),
        variance_shaped: shaped.variance(),
        variance_primary: plain.variance(),
    })
}

/// Builds `r(s,a) = q(s,a) * d_gamma(s,a) / d_bar(s,a)` (zero where the
/// pair is never visited), the reward table that lets a zero learned
/// discount reproduce the discounted-visitation gradient.
pub fn alignment_reward_table(
    q: &[Vec<f64>],
    vis: &VisitationResult,
) -> Vec<Vec<f64>> {
    q.iter()
        .zip(vis.d_gamma.iter().zip(&vis.d_bar))
        .map(|(q_row, (dg_row, db_row))| {
            q_row
                .iter()
                .zip(dg_row.iter().zip(db_row))
                .map(|(qv, (dg, db))| if *db > 0.0 { qv * dg / db } else { 0.0 })
                .collect()
        })
        .collect()
}

/// On-policy reproduction: the dropped-weighting update with the
/// constructed reward and zero discount equals the gamma^t-weighted
/// update with the primary reward.
pub fn visitation_ratio_check(mdp: &TabularMdp, policy: &SoftmaxLinearPolicy<f64>, gamma: f64) -> Result<PropReport> {
    let table = probs_from_policy(policy, mdp.num_states)?;
    let vis = visitation(mdp, &table, gamma)?;
    let q = qvalues(mdp, &table, gamma)?;
    let constructed = alignment_reward_table(&q, &vis);
    let lhs = exact_expected_update(mdp, policy, &constructed, 0.0, Weighting::Dropped)?;
    let rhs = exact_expected_update(mdp, policy, &mdp.r_primary, gamma, Weighting::GammaT)?;
    Ok(report(lhs.mean.sub(&rhs.mean)?.norm_linf(), 1e-8))
}

/// Off-policy reproduction: with the behavior visitation in the
/// denominator, the uncorrected update from behavior episodes equals the
/// fully importance-corrected one.
pub fn off_policy_ratio_check(
    mdp: &TabularMdp,
    policy: &SoftmaxLinearPolicy<f64>,
    behavior: &[Vec<f64>],
    gamma: f64,
) -> Result<PropReport> {
    check_policy_table(mdp, behavior)?;
    if behavior.iter().any(|row| row.iter().any(|p| *p <= 0.0)) {
        return Err(Error::invalid("behavior policy must have full support"));
    }
    let pi_table = probs_from_policy(policy, mdp.num_states)?;
    let pi_vis = visitation(mdp, &pi_table, gamma)?;
    let beta_vis = visitation(mdp, behavior, 1.0)?;
    let q = qvalues(mdp, &pi_table, gamma)?;
    let mut constructed = vec![vec![0.0; mdp.num_actions]; mdp.num_states];
    for s in 0..mdp.num_states {
        for a in 0..mdp.num_actions {
            let db = beta_vis.d_bar[s][a];
            if db > 0.0 {
                constructed[s][a] = q[s][a] * pi_vis.d_gamma[s][a] / db;
            }
        }
    }
    let lhs = exact_expected_update(
        mdp,
        policy,
        &constructed,
        0.0,
        Weighting::OffPolicyUncorrected { behavior },
    )?;
    let rhs =
        exact_expected_update(mdp, policy, &mdp.r_primary, gamma, Weighting::OffPolicyIs { behavior })?;
    Ok(report(lhs.mean.sub(&rhs.mean)?.norm_linf(), 1e-8))
}

/// Random dense MDP with one absorbing terminal state. Useful for checks
/// that hold on any MDP (shaping invariance); horizon cutoffs will bite.
pub fn random_mdp<R: Rng>(rng: &mut R, num_states: usize, num_actions: usize, horizon: usize) -> TabularMdp {
    let s_n = num_states + 1; // last index is terminal
    let term = s_n - 1;
    let mut transition = vec![vec![vec![0.0; s_n]; num_actions]; s_n];
    let mut r_primary = vec![vec![0.0; num_actions]; s_n];
    let mut r_aux = vec![vec![0.0; num_actions]; s_n];
    for s in 0..s_n {
        for a in 0..num_actions {
            if s == term {
                transition[s][a][term] = 1.0;
                continue;
            }
            // random distribution with a floor of mass on terminal so
            // most trajectories end before the cutoff
            let mut row: Vec<f64> = (0..s_n).map(|_| rng.random_range(0.05..1.0)).collect();
            row[term] += 0.3;
            let total: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= total;
            }
            transition[s][a] = row;
            r_primary[s][a] = rng.random_range(-1.0..1.0);
            r_aux[s][a] = rng.random_range(-1.0..1.0);
        }
    }
    let mut d0 = vec![0.0; s_n];
    for v in d0.iter_mut().take(num_states) {
        *v = rng.random_range(0.1..1.0);
    }
    let total: f64 = d0.iter().sum();
    for v in d0.iter_mut() {
        *v /= total;
    }
    let mut terminal = vec![false; s_n];
    terminal[term] = true;
    TabularMdp {
        num_states: s_n,
        num_actions,
        transition,
        r_primary,
        r_aux,
        d0,
        terminal,
        horizon,
    }
}

/// Random MDP whose states encode their own depth: `layers` ranks of
/// `base_states` states each, flowing strictly downward into a terminal
/// sink. Every episode ends in exactly `layers` steps, q-values are
/// time-independent, and the visitation-ratio constructions are exact.
pub fn random_layered_mdp<R: Rng>(
    rng: &mut R,
    base_states: usize,
    num_actions: usize,
    layers: usize,
) -> TabularMdp {
    let s_n = base_states * layers + 1;
    let term = s_n - 1;
    let id = |layer: usize, b: usize| layer * base_states + b;
    let mut transition = vec![vec![vec![0.0; s_n]; num_actions]; s_n];
    let mut r_primary = vec![vec![0.0; num_actions]; s_n];
    let mut r_aux = vec![vec![0.0; num_actions]; s_n];
    for layer in 0..layers {
        for b in 0..base_states {
            let s = id(layer, b);
            for a in 0..num_actions {
                r_primary[s][a] = rng.random_range(-1.0..1.0);
                r_aux[s][a] = rng.random_range(-1.0..1.0);
                if layer + 1 == layers {
                    transition[s][a][term] = 1.0;
                } else {
                    let row: Vec<f64> = (0..base_states).map(|_| rng.random_range(0.05..1.0)).collect();
                    let total: f64 = row.iter().sum();
                    for (b2, v) in row.iter().enumerate() {
                        transition[s][a][id(layer + 1, b2)] = v / total;
                    }
                }
            }
        }
    }
    for a in 0..num_actions {
        transition[term][a][term] = 1.0;
    }
    let mut d0 = vec![0.0; s_n];
    for b in 0..base_states {
        d0[id(0, b)] = rng.random_range(0.1..1.0);
    }
    let total: f64 = d0.iter().sum();
    for v in d0.iter_mut() {
        *v /= total;
    }
    let mut terminal = vec![false; s_n];
    terminal[term] = true;
    TabularMdp {
        num_states: s_n,
        num_actions,
        transition,
        r_primary,
        r_aux,
        d0,
        terminal,
        horizon: layers,
    }
}

/// Random one-hot softmax policy over the MDP's state space.
pub fn random_tabular_policy<R: Rng>(rng: &mut R, mdp: &TabularMdp) -> SoftmaxLinearPolicy<f64> {
    let dim = mdp.num_states * mdp.num_actions;
    let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    SoftmaxLinearPolicy::with_theta(
        ParamVector::from_vec(theta).unwrap(),
        mdp.num_states,
        mdp.num_actions,
    )
    .unwrap()
}

/// Random full-support action table.
pub fn random_behavior_table<R: Rng>(rng: &mut R, mdp: &TabularMdp, min_support: f64) -> Vec<Vec<f64>> {
    (0..mdp.num_states)
        .map(|_| {
            let mut row: Vec<f64> = (0..mdp.num_actions).map(|_| rng.random_range(min_support..1.0)).collect();
            let total: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= total;
            }
            row
        })
        .collect()
}
