//! Command-line front end: trains single runs and seed sweeps, verifies the
//! enumerable reward identities, and demos the implicit-gradient pipeline on
//! a ridge problem. All library work lives in barfi-core; this binary only
//! parses arguments and moves bytes to disk.

use barfi_core::error::{Error, Result};
use barfi_core::harness::{load_config, run, to_csv, Clock};
use barfi_core::outer::NeumannConfig;
use barfi_core::ridge;
use barfi_core::tabular::{
    off_policy_ratio_check, random_behavior_table, random_layered_mdp, random_mdp,
    random_tabular_policy, shaping_invariance_check, visitation_ratio_check, TabularMdp,
};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::{Command as ProcessCommand, ExitCode};

#[derive(Parser)]
#[command(name = "barfi", version, about = "Reward and discount alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics.csv plus manifest.json.
    Run {
        /// Path to a key = value config file.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one process per seed in a half-open range, e.g. --seeds 0..5.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Half-open seed range "a..b".
        #[arg(long)]
        seeds: String,
        /// Parent output directory; each run writes to <out>/seed_<s>.
        #[arg(long)]
        out: PathBuf,
    },
    /// Machine-check the shaping and visitation-ratio identities on
    /// enumerable MDPs.
    CheckProps,
    /// Compare exact and Neumann-series implicit gradients on a small ridge
    /// regression.
    RidgeDemo,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BARFI_LOG", "warn"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, &out),
        Command::Sweep { config, seeds, out } => cmd_sweep(&config, &seeds, &out),
        Command::CheckProps => cmd_check_props(),
        Command::RidgeDemo => cmd_ridge_demo(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_run(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut config = load_config(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(out)?;
    let result = run(&config, &Clock::wall())?;

    std::fs::write(out.join("metrics.csv"), to_csv(&result.rows))?;
    std::fs::write(out.join("manifest.json"), result.manifest.to_json_string() + "\n")?;

    let tail = result.rows.len().min(100);
    let recent: f64 = result.rows[result.rows.len() - tail..]
        .iter()
        .map(|r| r.return_primary)
        .sum::<f64>()
        / tail as f64;
    println!(
        "{} seed {}: {} episodes, mean primary return over last {}: {:.2}, final gamma {:.4}, \
         skipped outer steps {}",
        config,
        config.seed,
        result.manifest.episodes,
        tail,
        recent,
        result.manifest.final_gamma,
        result.manifest.neumann_skips
    );
    println!("wrote {}", out.join("metrics.csv").display());
    Ok(())
}

fn parse_seed_range(text: &str) -> Result<std::ops::Range<u64>> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| Error::InvalidArgument("seed range must look like a..b".into()))?;
    let start: u64 = a
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument("seed range start must be a non-negative integer".into()))?;
    let end: u64 = b
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument("seed range end must be a non-negative integer".into()))?;
    if start >= end {
        return Err(Error::InvalidArgument("seed range must be non-empty (a < b)".into()));
    }
    Ok(start..end)
}

fn cmd_sweep(config_path: &Path, seeds: &str, out: &Path) -> Result<()> {
    let range = parse_seed_range(seeds)?;
    load_config(config_path)?; // fail fast before spawning workers
    std::fs::create_dir_all(out)?;
    let exe = std::env::current_exe()?;
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);

    let seeds: Vec<u64> = range.collect();
    let mut failed = Vec::new();
    for chunk in seeds.chunks(workers) {
        let mut children = Vec::new();
        for &seed in chunk {
            let child = ProcessCommand::new(&exe)
                .arg("run")
                .arg("--config")
                .arg(config_path)
                .arg("--seed")
                .arg(seed.to_string())
                .arg("--out")
                .arg(out.join(format!("seed_{seed}")))
                .spawn()?;
            children.push((seed, child));
        }
        for (seed, mut child) in children {
            let status = child.wait()?;
            if !status.success() {
                failed.push(seed);
            }
        }
    }
    if failed.is_empty() {
        println!("sweep complete: {} runs under {}", seeds.len(), out.display());
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("sweep finished with failed seeds: {failed:?}")))
    }
}

struct CheckOutcome {
    label: &'static str,
    max_gap: f64,
    tolerance: f64,
    pass: bool,
}

impl CheckOutcome {
    fn print(&self) {
        println!(
            "[{}] {:<55} max gap {:.3e} (tolerance {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.label,
            self.max_gap,
            self.tolerance
        );
    }
}

fn cmd_check_props() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut checks = Vec::new();

    // Potential-based shaping leaves the expected update untouched.
    let mut worst = 0.0f64;
    let mut tol = 0.0f64;
    for _ in 0..20 {
        let mdp = random_mdp(&mut rng, 3, 2, 3);
        let policy = random_tabular_policy(&mut rng, &mdp);
        let potential: Vec<f64> =
            (0..mdp.num_states).map(|_| rng.random_range(-2.0..2.0)).collect();
        let report = shaping_invariance_check(&mdp, &policy, &potential, 0.9)?;
        worst = worst.max(report.update.max_abs_diff);
        tol = report.update.tolerance;
    }
    checks.push(CheckOutcome {
        label: "shaping leaves expected update invariant",
        max_gap: worst,
        tolerance: tol,
        pass: worst <= tol,
    });

    // An over-optimistic potential still inflates the update variance.
    let one_step = TabularMdp {
        num_states: 2,
        num_actions: 2,
        transition: vec![
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        ],
        r_primary: vec![vec![0.5, 0.25], vec![0.0, 0.0]],
        r_aux: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        d0: vec![1.0, 0.0],
        terminal: vec![false, true],
        horizon: 1,
    };
    let policy = random_tabular_policy(&mut rng, &one_step);
    let report = shaping_invariance_check(&one_step, &policy, &[1.5, 0.0], 0.9)?;
    let gap = report.variance_shaped - report.variance_primary;
    checks.push(CheckOutcome {
        label: "optimistic potential inflates update variance",
        max_gap: gap,
        tolerance: 0.0,
        pass: report.update.pass && gap > 0.0,
    });

    // With the visitation-ratio reward, a zero discount reproduces the
    // discounted update from on-policy data.
    let mut worst = 0.0f64;
    let mut tol = 0.0f64;
    for _ in 0..10 {
        let mdp = random_layered_mdp(&mut rng, 3, 2, 3);
        let policy = random_tabular_policy(&mut rng, &mdp);
        let report = visitation_ratio_check(&mdp, &policy, 0.9)?;
        worst = worst.max(report.max_abs_diff);
        tol = report.tolerance;
    }
    checks.push(CheckOutcome {
        label: "visitation-ratio reward matches discounted update",
        max_gap: worst,
        tolerance: tol,
        pass: worst <= tol,
    });

    // Same trick under an off-policy denominator: plain regression on
    // logged data reproduces the fully importance-corrected update.
    let mut worst = 0.0f64;
    let mut tol = 0.0f64;
    for _ in 0..10 {
        let mdp = random_layered_mdp(&mut rng, 3, 2, 3);
        let policy = random_tabular_policy(&mut rng, &mdp);
        let behavior = random_behavior_table(&mut rng, &mdp, 0.05);
        let report = off_policy_ratio_check(&mdp, &policy, &behavior, 0.9)?;
        worst = worst.max(report.max_abs_diff);
        tol = report.tolerance;
    }
    checks.push(CheckOutcome {
        label: "off-policy ratio reward matches importance-weighted update",
        max_gap: worst,
        tolerance: tol,
        pass: worst <= tol,
    });

    let mut all_pass = true;
    for check in &checks {
        check.print();
        all_pass &= check.pass;
    }
    if all_pass {
        Ok(())
    } else {
        Err(Error::InvalidArgument("at least one identity check failed".into()))
    }
}

fn cmd_ridge_demo() -> Result<()> {
    let problem = ridge::demo_problem();
    println!("ridge regression, 2 weights, 5 train rows, 3 validation rows");
    println!("d(validation loss)/d(lambda) via the implicit gradient:");
    for lambda in [0.1, 0.5, 2.0] {
        let theta = problem.solve(lambda)?;
        let loss = problem.val_loss(&theta)?;
        let exact = problem.lambda_grad_exact(lambda)?;
        let cfg = NeumannConfig { eta: 0.9 / problem.gram_spectral_bound(lambda)?, n: 400 };
        let neumann = problem.lambda_grad_neumann(lambda, &cfg)?;
        println!(
            "  lambda {lambda:<4} val loss {loss:.6}  exact {exact:+.8}  neumann {neumann:+.8}  |diff| {:.2e}",
            (exact - neumann).abs()
        );
    }
    Ok(())
}
