//! Wall-clock and flop comparison of the four ways to find the threshold.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::chain::{brute_force_search, optimal_threshold_search};
use crate::csv::{fmt_float, CsvTable};
use crate::error::Result;
use crate::mdp::{policy_iteration_solve, rvia_solve, SolverSettings};
use crate::model::SystemConfig;

/// Repetitions per timing; the median is reported.
pub const TIMING_REPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub nr: usize,
    pub states: usize,
    /// Seconds.
    pub t_pia: f64,
    pub t_rvia: f64,
    pub t_brute: f64,
    pub t_alg3: f64,
    pub flops_direct: u64,
    pub flops_updated: u64,
}

fn median_secs<T>(mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut runs: Vec<Duration> = Vec::with_capacity(TIMING_REPS);
    for _ in 0..TIMING_REPS {
        let start = Instant::now();
        std::hint::black_box(f()?);
        runs.push(start.elapsed());
    }
    runs.sort();
    Ok(runs[TIMING_REPS / 2].as_secs_f64())
}

pub fn bench_row(cfg: &SystemConfig, settings: &SolverSettings) -> Result<BenchRow> {
    let alg3 = optimal_threshold_search(cfg)?;
    let brute = brute_force_search(cfg)?;
    Ok(BenchRow {
        nr: cfg.nr,
        states: alg3.trace.len(),
        t_pia: median_secs(|| policy_iteration_solve(cfg))?,
        t_rvia: median_secs(|| rvia_solve(cfg, settings))?,
        t_brute: median_secs(|| brute_force_search(cfg))?,
        t_alg3: median_secs(|| optimal_threshold_search(cfg))?,
        flops_direct: brute.flops,
        flops_updated: alg3.flops,
    })
}

impl BenchRow {
    /// `t_alg3 <= t_brute <= t_rvia <= t_pia`.
    pub fn ordered(&self) -> bool {
        self.t_alg3 <= self.t_brute && self.t_brute <= self.t_rvia && self.t_rvia <= self.t_pia
    }

    pub fn to_csv(rows: &[BenchRow]) -> String {
        let mut t = CsvTable::new(&[
            "nr",
            "states",
            "t_pia",
            "t_rvia",
            "t_brute",
            "t_alg3",
            "flops_direct",
            "flops_updated",
        ]);
        for r in rows {
            t.push([
                r.nr.to_string(),
                r.states.to_string(),
                fmt_float(r.t_pia),
                fmt_float(r.t_rvia),
                fmt_float(r.t_brute),
                fmt_float(r.t_alg3),
                r.flops_direct.to_string(),
                r.flops_updated.to_string(),
            ]);
        }
        t.finish()
    }
}
