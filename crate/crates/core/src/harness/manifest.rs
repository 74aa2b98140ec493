//! Run manifest: everything needed to identify and replay a finished run.

use super::config::ExperimentConfig;

/// Build identifier stamped at compile time (the git commit, or "unknown"
/// outside a checkout).
pub fn build_id() -> &'static str {
    env!("BARFI_BUILD_ID")
}

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub config: serde_json::Value,
    pub seed: u64,
    pub build_id: String,
    pub episodes: usize,
    /// Outer iterations that applied an update (skips excluded).
    pub outer_iterations: usize,
    /// Outer steps dropped because the Neumann recursion diverged.
    pub neumann_skips: usize,
    /// Episode index right after the first applied outer update, if any.
    pub first_outer_episode: Option<usize>,
    pub final_gamma: f64,
    pub final_phi_l2norm: f64,
    pub wallclock_ms: u64,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        RunManifest {
            config: config.to_json(),
            seed: config.seed,
            build_id: build_id().to_string(),
            episodes: 0,
            outer_iterations: 0,
            neumann_skips: 0,
            first_outer_episode: None,
            final_gamma: f64::NAN,
            final_phi_l2norm: 0.0,
            wallclock_ms: 0,
        }
    }

    pub fn to_json_string(&self) -> String {
        let value = serde_json::json!({
            "config": self.config,
            "seed": self.seed,
            "build_id": self.build_id,
            "episodes": self.episodes,
            "outer_iterations": self.outer_iterations,
            "neumann_skips": self.neumann_skips,
            "first_outer_episode": self.first_outer_episode,
            "final_gamma": if self.final_gamma.is_finite() { serde_json::json!(self.final_gamma) } else { serde_json::Value::Null },
            "final_phi_l2norm": self.final_phi_l2norm,
            "wallclock_ms": self.wallclock_ms,
        });
        serde_json::to_string_pretty(&value).expect("manifest serialization cannot fail")
    }
}
