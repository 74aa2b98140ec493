//! Training loops: the bi-level reward-alignment run and the single-level
//! baselines, sharing one rollout and evaluation path. Every run is driven
//! by a single seeded RNG, so equal configs and seeds replay bit-for-bit.

use super::config::{AuxKind, EnvKind, ExperimentConfig, MethodKind, RegChoice};
use super::manifest::RunManifest;
use super::metrics::{Clock, MetricsRow};
use crate::envs::{
    AnyEnv, Bandit, CartPole, CpAux, Environment, GridWorld, GwAux, McAux, MountainCar,
};
use crate::error::{Error, Result};
use crate::features::Featurizer;
use crate::inner::{accumulate_weighted_scores, discounted_returns, inner_converge, RegMode};
use crate::outer::{outer_step, NeumannConfig, OuterConfig};
use crate::param::{OptimizerState, ParamVector};
use crate::policy::SoftmaxLinearPolicy;
use crate::reward::{AlignmentReward, LearnedDiscount};
use crate::trajectory::{ReplayBuffer, Step, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn build_env(config: &ExperimentConfig) -> Result<AnyEnv> {
    let env = match (config.env, config.aux_variant) {
        (EnvKind::GridWorld, AuxKind::None) => AnyEnv::GridWorld(GridWorld::new(None)),
        (EnvKind::GridWorld, AuxKind::GwNegL2) => AnyEnv::GridWorld(GridWorld::new(Some(GwAux::NegL2))),
        (EnvKind::GridWorld, AuxKind::GwCenterBonus) => {
            AnyEnv::GridWorld(GridWorld::new(Some(GwAux::CenterBonus)))
        }
        (EnvKind::GridWorld, AuxKind::GwPartialManhattan) => {
            AnyEnv::GridWorld(GridWorld::new(Some(GwAux::PartialManhattan)))
        }
        (EnvKind::MountainCar, AuxKind::None) => AnyEnv::MountainCar(MountainCar::new(None)),
        (EnvKind::MountainCar, AuxKind::McAbsVelocity) => {
            AnyEnv::MountainCar(MountainCar::new(Some(McAux::AbsVelocity)))
        }
        (EnvKind::MountainCar, AuxKind::McEnergyPump) => {
            AnyEnv::MountainCar(MountainCar::new(Some(McAux::EnergyPump)))
        }
        (EnvKind::CartPole, AuxKind::None) => AnyEnv::CartPole(CartPole::new(None)),
        (EnvKind::CartPole, AuxKind::CpMatchPd) => AnyEnv::CartPole(CartPole::new(Some(CpAux::MatchPd))),
        (EnvKind::CartPole, AuxKind::CpAntiPd) => AnyEnv::CartPole(CartPole::new(Some(CpAux::AntiPd))),
        (EnvKind::Bandit, AuxKind::None) => AnyEnv::Bandit(Bandit::new()),
        (env, aux) => {
            return Err(Error::Config(format!(
                "aux_variant {} cannot be attached to env {}",
                aux.token(),
                env.token()
            )))
        }
    };
    Ok(env)
}

/// One sampled episode plus the bookkeeping the runners need.
struct RolloutOutcome {
    trajectory: Trajectory<f64>,
    /// Acting-state potentials, recorded only when requested.
    potentials: Vec<f64>,
    return_primary: f64,
    return_aux: f64,
}

fn rollout<R: Rng>(
    env: &mut AnyEnv,
    featurizer: &Featurizer<f64>,
    policy: &SoftmaxLinearPolicy<f64>,
    want_potentials: bool,
    rng: &mut R,
) -> Result<RolloutOutcome> {
    let mut obs = env.reset(rng);
    let mut steps = Vec::new();
    let mut potentials = Vec::new();
    let mut terminated = false;
    let mut return_primary = 0.0;
    let mut return_aux = 0.0;
    for _ in 0..env.horizon() {
        if want_potentials {
            potentials.push(env.potential().ok_or_else(|| {
                Error::invalid("state potential requested for an action-dependent auxiliary reward")
            })?);
        }
        let features = featurizer.features(&obs)?;
        let (action, behavior_logprob) = policy.sample_action(&features, rng)?;
        let out = env.step(action, rng)?;
        return_primary += out.r_primary;
        return_aux += out.r_aux;
        steps.push(Step {
            features,
            action,
            r_primary: out.r_primary,
            r_aux: out.r_aux,
            behavior_logprob,
        });
        obs = out.observation;
        if out.terminal {
            terminated = true;
            break;
        }
    }
    Ok(RolloutOutcome {
        trajectory: Trajectory { steps, terminated },
        potentials,
        return_primary,
        return_aux,
    })
}

/// Mean undiscounted primary return over sampled episodes.
pub fn evaluate<R: Rng>(
    env: &mut AnyEnv,
    featurizer: &Featurizer<f64>,
    policy: &SoftmaxLinearPolicy<f64>,
    episodes: usize,
    rng: &mut R,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::invalid("evaluate needs at least one episode"));
    }
    let mut total = 0.0;
    for _ in 0..episodes {
        total += rollout(env, featurizer, policy, false, rng)?.return_primary;
    }
    Ok(total / episodes as f64)
}

/// Which per-step reward stream a baseline feeds to its policy update.
#[derive(Clone, Copy, Debug)]
enum StreamKind {
    /// Primary plus auxiliary, added blindly.
    Combined,
    /// Primary only.
    Primary,
    /// Primary plus state-potential shaping; the potential past the episode
    /// end is pinned to zero.
    PotentialState,
    /// Primary plus the action-dependent analogue built from the auxiliary
    /// values themselves.
    PotentialAction,
}

fn stream_rewards(
    kind: StreamKind,
    episode: &Trajectory<f64>,
    potentials: &[f64],
    gamma: f64,
) -> Vec<f64> {
    let n = episode.len();
    (0..n)
        .map(|t| {
            let step = &episode.steps[t];
            match kind {
                StreamKind::Combined => step.r_primary + step.r_aux,
                StreamKind::Primary => step.r_primary,
                StreamKind::PotentialState => {
                    let ahead = if t + 1 < n { potentials[t + 1] } else { 0.0 };
                    step.r_primary + gamma * ahead - potentials[t]
                }
                StreamKind::PotentialAction => {
                    let ahead = if t + 1 < n { episode.steps[t + 1].r_aux } else { 0.0 };
                    step.r_primary + gamma * ahead - step.r_aux
                }
            }
        })
        .collect()
}

/// Score-weighted return update, optionally with per-step baseline values
/// subtracted from the returns.
fn reinforce_update(
    policy: &SoftmaxLinearPolicy<f64>,
    episode: &Trajectory<f64>,
    rewards: &[f64],
    gamma: f64,
    baseline: Option<&[f64]>,
) -> Result<ParamVector<f64>> {
    let mut returns = discounted_returns(rewards, gamma);
    if let Some(values) = baseline {
        for (g, v) in returns.iter_mut().zip(values) {
            *g -= v;
        }
    }
    let mut update = ParamVector::zeros(policy.param_dim());
    accumulate_weighted_scores(&mut update, policy, episode, &returns, 1.0)?;
    Ok(update)
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// One sequential TD(0) pass; the value past the episode end is pinned to
/// zero.
fn critic_td_pass(w: &mut [f64], episode: &Trajectory<f64>, rewards: &[f64], gamma: f64, lr: f64) {
    let n = episode.len();
    for t in 0..n {
        let x = &episode.steps[t].features;
        let v_next = if t + 1 < n { dot(w, &episode.steps[t + 1].features) } else { 0.0 };
        let delta = rewards[t] + gamma * v_next - dot(w, x);
        let scale = lr * delta;
        for (wi, xi) in w.iter_mut().zip(x) {
            *wi += scale * xi;
        }
    }
}

/// Everything a finished run hands back to the caller.
pub struct RunResult {
    pub rows: Vec<MetricsRow>,
    pub manifest: RunManifest,
    pub policy: SoftmaxLinearPolicy<f64>,
    /// The learned reward model; `None` for baseline methods.
    pub model: Option<AlignmentReward<f64>>,
    /// The learned discount; `None` for baseline methods.
    pub discount: Option<LearnedDiscount<f64>>,
}

fn run_baseline(config: &ExperimentConfig, clock: &Clock) -> Result<RunResult> {
    let stream = match config.method {
        MethodKind::Naive | MethodKind::ActorCritic => StreamKind::Combined,
        MethodKind::ReinforceRp => StreamKind::Primary,
        MethodKind::PotentialState => StreamKind::PotentialState,
        MethodKind::PotentialAction => StreamKind::PotentialAction,
        MethodKind::Barfi => return Err(Error::invalid("the baseline runner cannot run method barfi")),
    };
    let mut env = build_env(config)?;
    let featurizer = env.default_featurizer()?;
    let mut policy = SoftmaxLinearPolicy::new(featurizer.dim(), env.num_actions())?;
    let mut optimizer = OptimizerState::new(config.optimizer, config.alpha_theta, policy.param_dim());
    let mut critic = (config.method == MethodKind::ActorCritic).then(|| vec![0.0; featurizer.dim()]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let want_potentials = config.method == MethodKind::PotentialState;
    let mut rows = Vec::with_capacity(config.total_episodes);

    for episode in 0..config.total_episodes {
        let out = rollout(&mut env, &featurizer, &policy, want_potentials, &mut rng)?;
        rows.push(MetricsRow {
            episode,
            return_primary: out.return_primary,
            return_aux: out.return_aux,
            gamma_value: config.gamma_env,
            phi_l2norm: 0.0,
            wallclock_ms: clock.elapsed_ms(),
        });
        if out.trajectory.is_empty() {
            continue;
        }
        let rewards = stream_rewards(stream, &out.trajectory, &out.potentials, config.gamma_env);
        let values = critic.as_ref().map(|w| {
            out.trajectory.steps.iter().map(|s| dot(w, &s.features)).collect::<Vec<_>>()
        });
        let mut update =
            reinforce_update(&policy, &out.trajectory, &rewards, config.gamma_env, values.as_deref())?;
        update.axpy_mut(-config.lambda_theta, policy.theta())?;
        let next = optimizer.apply(policy.theta(), &update)?;
        policy.set_theta(next)?;
        if let Some(w) = critic.as_mut() {
            critic_td_pass(w, &out.trajectory, &rewards, config.gamma_env, config.alpha_theta);
        }
    }

    let mut manifest = RunManifest::new(config);
    manifest.episodes = config.total_episodes;
    manifest.final_gamma = config.gamma_env;
    manifest.wallclock_ms = clock.elapsed_ms();
    Ok(RunResult { rows, manifest, policy, model: None, discount: None })
}

fn run_barfi(config: &ExperimentConfig, clock: &Clock) -> Result<RunResult> {
    let mut env = build_env(config)?;
    let featurizer = env.default_featurizer()?;
    let mut policy = SoftmaxLinearPolicy::new(featurizer.dim(), env.num_actions())?;
    let mut model = AlignmentReward::naive_start(&featurizer.unit_weights())?;
    let mut disc = LearnedDiscount::new(config.varphi_init)?;
    let reg = match config.inner_reg_mode {
        RegChoice::L2 => RegMode::L2 { lambda: config.lambda_theta },
        RegChoice::Entropy => RegMode::Entropy { lambda: config.lambda_theta },
    };
    let mut theta_opt = OptimizerState::new(config.optimizer, config.alpha_theta, policy.param_dim());
    let mut phi_opt = OptimizerState::new(config.optimizer, config.alpha_phi, model.phi_dim());
    let mut varphi_opt = OptimizerState::new(config.optimizer, config.alpha_varphi, 1);
    let outer_cfg = OuterConfig {
        neumann: NeumannConfig { eta: config.eta, n: config.n },
        lambda_phi: config.lambda_phi,
        lambda_gamma: config.lambda_gamma,
        gamma_outer: config.gamma_outer,
    };
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::with_capacity(config.total_episodes);
    let mut manifest = RunManifest::new(config);
    let mut episode = 0usize;

    for _ in 0..config.n0 {
        let out = rollout(&mut env, &featurizer, &policy, false, &mut rng)?;
        rows.push(MetricsRow {
            episode,
            return_primary: out.return_primary,
            return_aux: out.return_aux,
            gamma_value: disc.gamma(),
            phi_l2norm: model.phi().norm_l2(),
            wallclock_ms: clock.elapsed_ms(),
        });
        episode += 1;
        buffer.push(out.trajectory);
    }
    inner_converge(&mut policy, &buffer, &model, &disc, reg, &mut theta_opt, config.ni + config.n0, &mut rng)?;

    let outer_iterations = (config.total_episodes - config.n0) / config.delta;
    for _ in 0..outer_iterations {
        let mut d_on = Vec::with_capacity(config.delta);
        for _ in 0..config.delta {
            let out = rollout(&mut env, &featurizer, &policy, false, &mut rng)?;
            rows.push(MetricsRow {
                episode,
                return_primary: out.return_primary,
                return_aux: out.return_aux,
                gamma_value: disc.gamma(),
                phi_l2norm: model.phi().norm_l2(),
                wallclock_ms: clock.elapsed_ms(),
            });
            episode += 1;
            d_on.push(out.trajectory);
        }
        {
            let on_refs: Vec<&Trajectory<f64>> = d_on.iter().collect();
            // Jacobian estimates want buffer coverage, not a bootstrap: a
            // subsample only exists to bound the per-step cost when the
            // buffer is large, so draw without replacement.
            let off_refs = buffer.sample_distinct(&mut rng, config.outer_batch)?;
            match outer_step(&policy, &model, &disc, reg, &on_refs, &off_refs, &outer_cfg) {
                Ok(step) => {
                    let phi = phi_opt.apply(&model.phi(), &step.phi_update)?;
                    model.set_phi(&phi)?;
                    let varphi = varphi_opt.apply(
                        &ParamVector::from_vec(vec![disc.varphi()])?,
                        &ParamVector::from_vec(vec![step.varphi_update])?,
                    )?;
                    disc.set_varphi(varphi.get(0)?)?;
                    manifest.outer_iterations += 1;
                    if manifest.first_outer_episode.is_none() {
                        manifest.first_outer_episode = Some(episode);
                    }
                    log::info!(
                        "outer update at episode {episode}: J={:.3}, gamma={:.4}, |phi|={:.4}",
                        step.j_estimate,
                        disc.gamma(),
                        model.phi().norm_l2()
                    );
                    log::debug!(
                        "outer diagnostics at episode {episode}: |v|={:.3e}, |y|={:.3e}, \
                         |dphi|={:.3e}, dvarphi={:.3e}",
                        step.v_norm,
                        step.y_norm,
                        step.phi_update.norm_l2(),
                        step.varphi_update
                    );
                }
                Err(Error::NeumannDivergence { iteration, growth }) => {
                    manifest.neumann_skips += 1;
                    log::warn!(
                        "episode {episode}: Neumann recursion diverged at term {iteration} \
                         (growth {growth:.2e}); skipping this outer update"
                    );
                }
                Err(other) => return Err(other),
            }
        }
        for trajectory in d_on {
            buffer.push(trajectory);
        }
        inner_converge(&mut policy, &buffer, &model, &disc, reg, &mut theta_opt, config.ni, &mut rng)?;
    }

    manifest.episodes = episode;
    manifest.final_gamma = disc.gamma();
    manifest.final_phi_l2norm = model.phi().norm_l2();
    manifest.wallclock_ms = clock.elapsed_ms();
    Ok(RunResult { rows, manifest, policy, model: Some(model), discount: Some(disc) })
}

/// Validates the config and dispatches to the right training loop.
pub fn run(config: &ExperimentConfig, clock: &Clock) -> Result<RunResult> {
    config.validate()?;
    log::info!("starting run: {config}, seed {}", config.seed);
    if config.method == MethodKind::Barfi {
        run_barfi(config, clock)
    } else {
        run_baseline(config, clock)
    }
}
