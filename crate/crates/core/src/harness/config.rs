//! Experiment configuration: a flat `key = value` text format with strict
//! unknown-key rejection, per-environment defaults, and full validation up
//! front so a run can only fail for numerical reasons.

use crate::error::{Error, Result};
use crate::param::OptimizerKind;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    GridWorld,
    MountainCar,
    CartPole,
    Bandit,
}

impl EnvKind {
    pub fn token(self) -> &'static str {
        match self {
            EnvKind::GridWorld => "gridworld",
            EnvKind::MountainCar => "mountain_car",
            EnvKind::CartPole => "cart_pole",
            EnvKind::Bandit => "bandit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuxKind {
    GwNegL2,
    GwCenterBonus,
    GwPartialManhattan,
    McAbsVelocity,
    McEnergyPump,
    CpMatchPd,
    CpAntiPd,
    None,
}

impl AuxKind {
    pub fn token(self) -> &'static str {
        match self {
            AuxKind::GwNegL2 => "GW_negL2",
            AuxKind::GwCenterBonus => "GW_centerBonus",
            AuxKind::GwPartialManhattan => "GW_partialManhattan",
            AuxKind::McAbsVelocity => "MC_absVelocity",
            AuxKind::McEnergyPump => "MC_energyPump",
            AuxKind::CpMatchPd => "CP_matchPD",
            AuxKind::CpAntiPd => "CP_antiPD",
            AuxKind::None => "none",
        }
    }

    /// Which environment this auxiliary variant belongs to; `None` fits any.
    pub fn env(self) -> Option<EnvKind> {
        match self {
            AuxKind::GwNegL2 | AuxKind::GwCenterBonus | AuxKind::GwPartialManhattan => {
                Some(EnvKind::GridWorld)
            }
            AuxKind::McAbsVelocity | AuxKind::McEnergyPump => Some(EnvKind::MountainCar),
            AuxKind::CpMatchPd | AuxKind::CpAntiPd => Some(EnvKind::CartPole),
            AuxKind::None => None,
        }
    }

    /// Whether the variant is a pure function of state, so it can serve as a
    /// shaping potential.
    pub fn admits_state_potential(self) -> bool {
        !matches!(self, AuxKind::McEnergyPump | AuxKind::CpMatchPd | AuxKind::CpAntiPd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    Barfi,
    Naive,
    PotentialState,
    PotentialAction,
    ReinforceRp,
    ActorCritic,
}

impl MethodKind {
    pub fn token(self) -> &'static str {
        match self {
            MethodKind::Barfi => "barfi",
            MethodKind::Naive => "naive",
            MethodKind::PotentialState => "potential_state",
            MethodKind::PotentialAction => "potential_action",
            MethodKind::ReinforceRp => "reinforce_rp",
            MethodKind::ActorCritic => "actor_critic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegChoice {
    L2,
    Entropy,
}

impl RegChoice {
    pub fn token(self) -> &'static str {
        match self {
            RegChoice::L2 => "L2",
            RegChoice::Entropy => "Entropy",
        }
    }
}

fn optimizer_token(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::RmsProp => "rmsprop",
        OptimizerKind::Adam => "adam",
    }
}

/// A fully-resolved experiment description. Every run is a pure function of
/// this struct plus the seed.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub aux_variant: AuxKind,
    pub method: MethodKind,
    pub alpha_theta: f64,
    pub alpha_phi: f64,
    pub alpha_varphi: f64,
    pub lambda_theta: f64,
    pub lambda_phi: f64,
    pub lambda_gamma: f64,
    /// Neumann step size.
    pub eta: f64,
    /// Neumann series length.
    pub n: usize,
    /// Fresh on-policy episodes per outer update.
    pub delta: usize,
    /// Warm-up episodes collected before any outer update.
    pub n0: usize,
    /// Inner policy updates per outer iteration.
    pub ni: usize,
    pub buffer_capacity: usize,
    pub total_episodes: usize,
    /// Replay episodes sampled for each outer step's Jacobian estimates.
    pub outer_batch: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub varphi_init: f64,
    pub inner_reg_mode: RegChoice,
    /// Discount used by the baselines' return estimates.
    pub gamma_env: f64,
    /// Discount used by the outer (designer) objective.
    pub gamma_outer: f64,
}

impl ExperimentConfig {
    /// Defaults for an environment/method pair. The caller still supplies
    /// env, aux_variant, and method through the config file.
    pub fn defaults(env: EnvKind, method: MethodKind) -> Self {
        let mut c = ExperimentConfig {
            env,
            aux_variant: AuxKind::None,
            method,
            alpha_theta: 1e-3,
            alpha_phi: 5e-3,
            alpha_varphi: 5e-3,
            lambda_theta: 0.25,
            lambda_phi: 0.0625,
            lambda_gamma: 4.0,
            eta: 5e-4,
            n: 5,
            delta: 3,
            n0: 150,
            ni: 15,
            buffer_capacity: 1000,
            total_episodes: 3900,
            // Jacobian estimates from small replay subsamples occasionally
            // lose negative-definiteness and trip the divergence guard for
            // many consecutive outer steps; 256 keeps that rare.
            outer_batch: 256,
            optimizer: OptimizerKind::RmsProp,
            seed: 0,
            varphi_init: crate::reward::default_varphi_init(),
            inner_reg_mode: RegChoice::L2,
            gamma_env: 0.99,
            gamma_outer: 1.0,
        };
        match env {
            EnvKind::GridWorld => {} // the template above
            EnvKind::MountainCar => {
                c.alpha_theta = 0.015625;
                c.alpha_phi = 0.0625;
                c.alpha_varphi = 0.0625;
                c.lambda_theta = 0.0;
                c.lambda_phi = 0.0;
                c.lambda_gamma = 0.25;
                c.eta = 1e-3;
                c.n0 = 50;
                c.buffer_capacity = 50;
                c.total_episodes = 1250;
                c.outer_batch = 50;
                // Sparse +1 at the flag: at 0.99 the credit spread over a
                // 1000-step episode is too flat for RMSprop at batch 1, and
                // the softmax saturates on early noise before the pump
                // pattern forms. 0.9 concentrates credit near the summit.
                // Only the fixed-gamma baselines read this.
                c.gamma_env = 0.9;
            }
            EnvKind::CartPole => {
                c.alpha_phi = 1e-3;
                c.lambda_theta = 1.0;
                c.lambda_phi = 0.0;
                c.buffer_capacity = 10_000;
                c.total_episodes = 2550;
                c.outer_batch = 32;
            }
            EnvKind::Bandit => {
                c.alpha_theta = 0.05;
                c.alpha_phi = 0.02;
                c.alpha_varphi = 0.02;
                c.lambda_theta = 0.1;
                c.lambda_phi = 0.01;
                c.lambda_gamma = 1.0;
                c.eta = 0.05;
                c.n = 10;
                c.delta = 5;
                c.n0 = 20;
                c.ni = 10;
                c.buffer_capacity = 200;
                c.total_episodes = 520;
                c.outer_batch = 100;
                c.gamma_env = 1.0;
            }
        }
        // Per-method step sizes where the defaults differ from the bi-level
        // column.
        match (env, method) {
            (EnvKind::MountainCar, MethodKind::ActorCritic) => {
                c.alpha_theta = 0.03125;
                c.lambda_theta = 0.25;
            }
            (EnvKind::MountainCar, m) if m != MethodKind::Barfi => {
                c.alpha_theta = 0.125;
            }
            (EnvKind::CartPole, MethodKind::ActorCritic) => {
                c.alpha_theta = 5e-4;
                c.lambda_theta = 0.0;
            }
            (EnvKind::CartPole, MethodKind::Barfi) => {
                // With L2 smoothing the 256-feature softmax saturates within
                // a few outer cycles and the objective gradient vanishes,
                // freezing the reward heads. The entropy bonus keeps the
                // policy stochastic enough for the outer signal to survive.
                c.inner_reg_mode = RegChoice::Entropy;
            }
            _ => {}
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(required) = self.aux_variant.env() {
            if required != self.env {
                return Err(Error::Config(format!(
                    "aux_variant {} belongs to env {}, not {}",
                    self.aux_variant.token(),
                    required.token(),
                    self.env.token()
                )));
            }
        }
        if self.env == EnvKind::Bandit && self.aux_variant != AuxKind::None {
            return Err(Error::Config("bandit has no auxiliary reward; use aux_variant = none".into()));
        }
        if !(self.alpha_theta > 0.0) {
            return Err(Error::Config("alpha_theta must be > 0".into()));
        }
        for (name, v) in [
            ("alpha_phi", self.alpha_phi),
            ("alpha_varphi", self.alpha_varphi),
            ("lambda_theta", self.lambda_theta),
            ("lambda_phi", self.lambda_phi),
            ("lambda_gamma", self.lambda_gamma),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.gamma_env > 0.0 && self.gamma_env <= 1.0) {
            return Err(Error::Config(format!("gamma_env must lie in (0, 1], got {}", self.gamma_env)));
        }
        if !(self.gamma_outer > 0.0 && self.gamma_outer <= 1.0) {
            return Err(Error::Config(format!("gamma_outer must lie in (0, 1], got {}", self.gamma_outer)));
        }
        if !self.varphi_init.is_finite() {
            return Err(Error::Config("varphi_init must be finite".into()));
        }
        if self.total_episodes == 0 {
            return Err(Error::Config("total_episodes must be >= 1".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity must be >= 1".into()));
        }
        if self.method == MethodKind::Barfi {
            if self.delta == 0 {
                return Err(Error::Config("delta must be >= 1".into()));
            }
            if self.n0 == 0 {
                return Err(Error::Config("N0 must be >= 1".into()));
            }
            if self.ni == 0 {
                return Err(Error::Config("Ni must be >= 1".into()));
            }
            if self.n == 0 {
                return Err(Error::Config("n must be >= 1".into()));
            }
            if !(self.eta > 0.0) {
                return Err(Error::Config("eta must be > 0".into()));
            }
            if self.outer_batch == 0 {
                return Err(Error::Config("outer_batch must be >= 1".into()));
            }
            if self.total_episodes <= self.n0 {
                return Err(Error::Config(format!(
                    "total_episodes ({}) must exceed the warm-up N0 ({})",
                    self.total_episodes, self.n0
                )));
            }
            if (self.total_episodes - self.n0) % self.delta != 0 {
                return Err(Error::Config(format!(
                    "total_episodes - N0 ({}) must be divisible by delta ({})",
                    self.total_episodes - self.n0,
                    self.delta
                )));
            }
        }
        if self.method == MethodKind::PotentialState && !self.aux_variant.admits_state_potential() {
            return Err(Error::Config(format!(
                "potential_state needs a state-based auxiliary reward, but {} depends on the action; \
                 use potential_action instead",
                self.aux_variant.token()
            )));
        }
        Ok(())
    }

    /// The config as a JSON object (used by the run manifest). Keys match the
    /// config-file spelling so a manifest can be replayed by hand.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "env": self.env.token(),
            "aux_variant": self.aux_variant.token(),
            "method": self.method.token(),
            "alpha_theta": self.alpha_theta,
            "alpha_phi": self.alpha_phi,
            "alpha_varphi": self.alpha_varphi,
            "lambda_theta": self.lambda_theta,
            "lambda_phi": self.lambda_phi,
            "lambda_gamma": self.lambda_gamma,
            "eta": self.eta,
            "n": self.n,
            "delta": self.delta,
            "N0": self.n0,
            "Ni": self.ni,
            "buffer_capacity": self.buffer_capacity,
            "total_episodes": self.total_episodes,
            "outer_batch": self.outer_batch,
            "optimizer": optimizer_token(self.optimizer),
            "seed": self.seed,
            "varphi_init": self.varphi_init,
            "inner_reg_mode": self.inner_reg_mode.token(),
            "gamma_env": self.gamma_env,
            "gamma_outer": self.gamma_outer,
        })
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} / {} / aux {}",
            self.env.token(),
            self.method.token(),
            self.aux_variant.token()
        )
    }
}

fn parse_env(value: &str) -> Result<EnvKind> {
    match value {
        "gridworld" => Ok(EnvKind::GridWorld),
        "mountain_car" => Ok(EnvKind::MountainCar),
        "cart_pole" => Ok(EnvKind::CartPole),
        "bandit" => Ok(EnvKind::Bandit),
        other => Err(Error::Config(format!(
            "unknown env '{other}' (expected gridworld, mountain_car, cart_pole, or bandit)"
        ))),
    }
}

fn parse_aux(value: &str) -> Result<AuxKind> {
    let all = [
        AuxKind::GwNegL2,
        AuxKind::GwCenterBonus,
        AuxKind::GwPartialManhattan,
        AuxKind::McAbsVelocity,
        AuxKind::McEnergyPump,
        AuxKind::CpMatchPd,
        AuxKind::CpAntiPd,
        AuxKind::None,
    ];
    all.into_iter().find(|k| k.token() == value).ok_or_else(|| {
        Error::Config(format!("unknown aux_variant '{value}'"))
    })
}

fn parse_method(value: &str) -> Result<MethodKind> {
    let all = [
        MethodKind::Barfi,
        MethodKind::Naive,
        MethodKind::PotentialState,
        MethodKind::PotentialAction,
        MethodKind::ReinforceRp,
        MethodKind::ActorCritic,
    ];
    all.into_iter().find(|k| k.token() == value).ok_or_else(|| {
        Error::Config(format!("unknown method '{value}'"))
    })
}

fn parse_optimizer(value: &str) -> Result<OptimizerKind> {
    match value {
        "sgd" => Ok(OptimizerKind::Sgd),
        "rmsprop" => Ok(OptimizerKind::RmsProp),
        "adam" => Ok(OptimizerKind::Adam),
        other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
    }
}

fn parse_reg_mode(value: &str) -> Result<RegChoice> {
    match value {
        "L2" => Ok(RegChoice::L2),
        "Entropy" => Ok(RegChoice::Entropy),
        other => Err(Error::Config(format!("unknown inner_reg_mode '{other}' (expected L2 or Entropy)"))),
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{value}'")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got '{value}'")))
}

/// Parses the flat `key = value` format. `#` starts a comment; blank lines
/// are ignored. `env`, `aux_variant`, and `method` are required; every other
/// key falls back to the per-environment defaults. Unknown and duplicate
/// keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value', got '{line}'", line_no + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if value.is_empty() {
            return Err(Error::Config(format!("line {}: key '{key}' has no value", line_no + 1)));
        }
        if entries.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
    }

    let missing: Vec<&str> = ["env", "aux_variant", "method"]
        .into_iter()
        .filter(|k| !entries.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
    }

    let env = parse_env(&entries.remove("env").unwrap())?;
    let aux_variant = parse_aux(&entries.remove("aux_variant").unwrap())?;
    let method = parse_method(&entries.remove("method").unwrap())?;

    let mut config = ExperimentConfig::defaults(env, method);
    config.aux_variant = aux_variant;

    let mut unknown = Vec::new();
    for (key, value) in entries {
        match key.as_str() {
            "alpha_theta" => config.alpha_theta = parse_f64(&key, &value)?,
            "alpha_phi" => config.alpha_phi = parse_f64(&key, &value)?,
            "alpha_varphi" => config.alpha_varphi = parse_f64(&key, &value)?,
            "lambda_theta" => config.lambda_theta = parse_f64(&key, &value)?,
            "lambda_phi" => config.lambda_phi = parse_f64(&key, &value)?,
            "lambda_gamma" => config.lambda_gamma = parse_f64(&key, &value)?,
            "eta" => config.eta = parse_f64(&key, &value)?,
            "n" => config.n = parse_usize(&key, &value)?,
            "delta" => config.delta = parse_usize(&key, &value)?,
            "N0" => config.n0 = parse_usize(&key, &value)?,
            "Ni" => config.ni = parse_usize(&key, &value)?,
            "buffer_capacity" => config.buffer_capacity = parse_usize(&key, &value)?,
            "total_episodes" => config.total_episodes = parse_usize(&key, &value)?,
            "outer_batch" => config.outer_batch = parse_usize(&key, &value)?,
            "optimizer" => config.optimizer = parse_optimizer(&value)?,
            "seed" => config.seed = parse_u64(&key, &value)?,
            "varphi_init" => config.varphi_init = parse_f64(&key, &value)?,
            "inner_reg_mode" => config.inner_reg_mode = parse_reg_mode(&value)?,
            "gamma_env" => config.gamma_env = parse_f64(&key, &value)?,
            "gamma_outer" => config.gamma_outer = parse_f64(&key, &value)?,
            _ => unknown.push(key),
        }
    }
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
    }

    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
