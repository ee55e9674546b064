//! Shared fixtures for the acceptance run: the seeded config generator,
//! pinned tolerances and the per-criterion outcome.

use bufrelay::SystemConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed of the 100-config corpus shared by most criteria.
pub const CONFIG_SEED: u64 = 2024;

/// Throughput agreement between solvers.
pub const SOLVER_AGREEMENT_TOL: f64 = 1e-7;
/// Updated inverse and stationary vector against a fresh solve.
pub const UPDATE_TOL: f64 = 1e-8;
/// `pi P = pi`, max-abs.
pub const BALANCE_TOL: f64 = 1e-10;
/// `sum pi = 1` and the worked three-state case.
pub const MASS_TOL: f64 = 1e-12;
/// Closed-form throughput against the chain sweep.
pub const CLOSED_FORM_TOL: f64 = 1e-10;
/// Slack when comparing closed-form objective values for the minimum.
pub const OBJECTIVE_SLACK: f64 = 1e-12;
/// Simulated mean within this many standard errors of the analytic value.
pub const SIM_SIGMAS: f64 = 3.0;
/// Relative band on the leading flop coefficients.
pub const FLOP_COEFFICIENT_BAND: f64 = 0.3;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

pub fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Rates in 1..=6, buffer up to 120, link probabilities in [0.05, 0.95].
pub fn random_configs(seed: u64, count: usize) -> Vec<SystemConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let rs = rng.gen_range(1..=6);
            let rr = rng.gen_range(1..=6);
            let nr = rng.gen_range(rs.max(rr) + 1..=120);
            let ps = rng.gen_range(0.05..=0.95);
            let pr = rng.gen_range(0.05..=0.95);
            SystemConfig::new(rs, rr, nr, ps, pr).expect("generated config is valid")
        })
        .collect()
}

pub fn label(c: &SystemConfig) -> String {
    format!("({},{},{},{:.3},{:.3})", c.rs, c.rr, c.nr, c.ps, c.pr)
}
