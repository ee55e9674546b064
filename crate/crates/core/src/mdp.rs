//! Average-reward dynamic programming over the relay queue.
//!
//! After fixing greedy rates, the only decision left is which hop to serve
//! when both are on. The Bellman equation is
//!
//! ```text
//! theta + V(Q) = max_{a_r} J(Q, a_r)
//! ```
//!
//! where `J` averages the one-slot reward plus the value of the next queue
//! over the four channel states. Two solvers are provided: relative value
//! iteration (RVIA) and Howard policy iteration (PIA). Both operate on the
//! full queue space `0..=nr`, transient states included.

use serde::{Deserialize, Serialize};

use crate::csv::{fmt_float, CsvTable};
use crate::error::{Error, Result};
use crate::linalg::{Flops, Lu, Matrix};
use crate::model::{PolicySpec, SystemConfig};

/// `J(Q, 1) - J(Q, 0)` within this band counts as a tie, broken toward the
/// source-relay hop.
pub const TIE_TOL: f64 = 1e-9;

/// Slack allowed by the structural certificates.
pub const STRUCTURE_SLACK: f64 = 1e-9;

/// Relative value function and average reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub v: Vec<f64>,
    pub theta: f64,
    /// State whose relative value is pinned to zero.
    pub reference: usize,
}

impl ValueFunction {
    /// Rows `(q, V(q))` preceded by a `# theta=` line.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::with_preamble(
            &format!("# theta={}\n", fmt_float(self.theta)),
            &["q", "value"],
        );
        for (q, v) in self.v.iter().enumerate() {
            t.push([q.to_string(), fmt_float(*v)]);
        }
        t.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Stop once `max - min` of successive iterate differences drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub reference: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol: 1e-10,
            max_iter: 1_000_000,
            reference: 0,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidSettings(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidSettings("max_iter must be at least 1".into()));
        }
        if self.reference > cfg.nr {
            return Err(Error::InvalidSettings(format!(
                "reference state {} outside 0..={}",
                self.reference, cfg.nr
            )));
        }
        Ok(())
    }
}

/// The structural facts certified on a converged value function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Property {
    /// `V` non-decreasing.
    Monotone,
    /// `V(Q+1) - V(Q) <= 1`.
    UnitIncrement,
    /// Increments over a span of `rs + rr` do not grow.
    KConcave,
    /// `J(Q, 1) - J(Q, 0)` non-decreasing.
    Supermodular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureReport {
    pub monotone: bool,
    pub increments_le_one: bool,
    pub k_concave: bool,
    pub supermodular: bool,
    pub first_violation: Option<(Property, usize)>,
}

impl Default for StructureReport {
    fn default() -> Self {
        StructureReport {
            monotone: true,
            increments_le_one: true,
            k_concave: true,
            supermodular: true,
            first_violation: None,
        }
    }
}

impl StructureReport {
    pub fn all_hold(&self) -> bool {
        self.monotone && self.increments_le_one && self.k_concave && self.supermodular
    }

    fn flag(&mut self, prop: Property, q: usize) {
        match prop {
            Property::Monotone => self.monotone = false,
            Property::UnitIncrement => self.increments_le_one = false,
            Property::KConcave => self.k_concave = false,
            Property::Supermodular => self.supermodular = false,
        }
        if self.first_violation.is_none() {
            self.first_violation = Some((prop, q));
        }
    }

    /// Combines two reports; violations from `self` are listed first.
    pub fn merge(mut self, other: StructureReport) -> StructureReport {
        self.monotone &= other.monotone;
        self.increments_le_one &= other.increments_le_one;
        self.k_concave &= other.k_concave;
        self.supermodular &= other.supermodular;
        self.first_violation = self.first_violation.or(other.first_violation);
        self
    }
}

/// Split of `J(Q, a)` into the part common to both actions and the
/// both-hops-on term for each action.
#[inline]
fn j_parts(v: &[f64], q: usize, cfg: &SystemConfig) -> (f64, f64, f64) {
    let (ps, pr) = (cfg.ps, cfg.pr);
    let (qs, qr) = (cfg.ps_bar(), cfg.pr_bar());
    let v_up = v[cfg.up(q)];
    let drain = cfg.delivered(q) as f64 + v[cfg.down(q)];
    let common = qs * qr * v[q] + ps * qr * v_up + qs * pr * drain;
    (common, ps * pr * v_up, ps * pr * drain)
}

/// `J(Q, a_r)`: expected one-slot reward plus next-state value when the
/// relay-destination hop is served at `(1, 1)` iff `a_r`.
pub fn state_action_reward(v: &[f64], q: usize, a_r: bool, cfg: &SystemConfig) -> Result<f64> {
    if q > cfg.nr || v.len() != cfg.num_states() {
        return Err(Error::QueueOutOfRange { q, nr: cfg.nr });
    }
    let (common, hold, serve) = j_parts(v, q, cfg);
    Ok(common + if a_r { serve } else { hold })
}

/// `J(Q, 1) - J(Q, 0)` for every queue state.
pub fn delta_j(v: &[f64], cfg: &SystemConfig) -> Vec<f64> {
    (0..=cfg.nr)
        .map(|q| {
            let (_, hold, serve) = j_parts(v, q, cfg);
            serve - hold
        })
        .collect()
}

/// Relative value iteration from `V_0 = 0`.
///
/// The returned `theta` is within `tol` of the optimal average reward: the
/// span stopping rule brackets it between the smallest and largest
/// one-step increments.
pub fn rvia_solve(cfg: &SystemConfig, settings: &SolverSettings) -> Result<ValueFunction> {
    cfg.require_interior()?;
    settings.validate(cfg)?;
    let n = cfg.num_states();
    let q0 = settings.reference;
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    for _ in 0..settings.max_iter {
        for (q, slot) in next.iter_mut().enumerate() {
            let (common, hold, serve) = j_parts(&v, q, cfg);
            *slot = common + hold.max(serve);
        }
        let theta = next[q0];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (nv, ov) in next.iter_mut().zip(&v) {
            *nv -= theta;
            let d = *nv - ov;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        std::mem::swap(&mut v, &mut next);
        span = hi - lo;
        if span < settings.tol {
            return Ok(ValueFunction {
                v,
                theta,
                reference: q0,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        span,
    })
}

/// Result of policy iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterationSolution {
    pub theta: f64,
    /// Entry `q` is `true` when the relay-destination hop is served at `(1, 1)`.
    pub actions: Vec<bool>,
    pub value: ValueFunction,
    pub iterations: usize,
}

impl PolicyIterationSolution {
    pub fn policy(&self) -> PolicySpec {
        PolicySpec::Tabular(self.actions.clone())
    }
}

/// Solves `theta + V(q) - sum_q' P(q, q') V(q') = r(q)` with `V(0) = 0`.
///
/// Unknown slot 0 carries `theta`; slot `q >= 1` carries `V(q)`.
fn evaluate_policy(cfg: &SystemConfig, actions: &[bool]) -> Result<ValueFunction> {
    let n = cfg.num_states();
    let (ps, pr) = (cfg.ps, cfg.pr);
    let (qs, qr) = (cfg.ps_bar(), cfg.pr_bar());
    let mut m = Matrix::zeros(n, n);
    let mut rhs = vec![0.0; n];
    for (q, &serve) in actions.iter().enumerate() {
        let both = ps * pr;
        let p_up = ps * qr + if serve { 0.0 } else { both };
        let p_down = qs * pr + if serve { both } else { 0.0 };
        m[(q, 0)] += 1.0;
        let mut sub = |col: usize, p: f64| {
            if col != 0 {
                m[(q, col)] -= p;
            }
        };
        sub(q, qs * qr);
        sub(cfg.up(q), p_up);
        sub(cfg.down(q), p_down);
        if q != 0 {
            m[(q, q)] += 1.0;
        }
        rhs[q] = p_down * cfg.delivered(q) as f64;
    }
    let lu = Lu::factor(m, &mut Flops::default()).map_err(|_| Error::SingularEvaluation)?;
    let x = lu.solve(&rhs, &mut Flops::default());
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularEvaluation);
    }
    let theta = x[0];
    let mut v = x;
    v[0] = 0.0;
    Ok(ValueFunction {
        v,
        theta,
        reference: 0,
    })
}

/// Howard policy iteration starting from "always serve the source hop".
///
/// Improvement switches an action only when the other one is better by
/// more than [`TIE_TOL`], so the loop cannot cycle on ties.
pub fn policy_iteration_solve(cfg: &SystemConfig) -> Result<PolicyIterationSolution> {
    cfg.require_interior()?;
    let n = cfg.num_states();
    let mut actions = vec![false; n];
    // each round fixes at least one state for good; 2n is generous
    for iteration in 1..=2 * n + 2 {
        let value = evaluate_policy(cfg, &actions)?;
        let dj = delta_j(&value.v, cfg);
        let mut changed = false;
        for (a, d) in actions.iter_mut().zip(&dj) {
            let want = if *d > TIE_TOL {
                true
            } else if *d < -TIE_TOL {
                false
            } else {
                *a
            };
            changed |= want != *a;
            *a = want;
        }
        if !changed {
            return Ok(PolicyIterationSolution {
                theta: value.theta,
                actions,
                value,
                iterations: iteration,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: 2 * n + 2,
        span: f64::NAN,
    })
}

/// Greedy action at `(1, 1)` for every queue, ties toward the source hop.
pub fn greedy_actions(v: &[f64], cfg: &SystemConfig) -> Vec<bool> {
    delta_j(v, cfg).into_iter().map(|d| d > TIE_TOL).collect()
}

/// Reads the optimal threshold off a converged value function: the largest
/// `Q` at which the source hop is preferred when both hops are on.
pub fn extract_threshold(v: &ValueFunction, cfg: &SystemConfig) -> Result<usize> {
    threshold_of_actions(&greedy_actions(&v.v, cfg))
}

/// First `Q` at which serving the relay hop is at least as good as serving
/// the source hop, ties included; `None` if there is none. Exceeds the
/// threshold by one unless `Q = threshold + 1` is an exact tie.
pub fn rd_switch_state(v: &ValueFunction, cfg: &SystemConfig) -> Option<usize> {
    delta_j(&v.v, cfg).iter().position(|&d| d >= -TIE_TOL)
}

/// Threshold of a step-shaped action table.
pub fn threshold_of_actions(actions: &[bool]) -> Result<usize> {
    let first_serve = actions.iter().position(|&a| a);
    match first_serve {
        Some(0) => Err(Error::NotThreshold { q: 0 }),
        Some(k) => match actions[k..].iter().position(|&a| !a) {
            Some(off) => Err(Error::NotThreshold { q: k + off }),
            None => Ok(k - 1),
        },
        None => Ok(actions.len() - 1),
    }
}

/// Checks monotonicity, unit increments and `K`-concavity with `K = rs + rr`.
pub fn check_value_properties(v: &[f64], cfg: &SystemConfig) -> StructureReport {
    let mut report = StructureReport::default();
    let inc: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    for (q, d) in inc.iter().enumerate() {
        if *d < -STRUCTURE_SLACK {
            report.flag(Property::Monotone, q);
            break;
        }
    }
    for (q, d) in inc.iter().enumerate() {
        if *d > 1.0 + STRUCTURE_SLACK {
            report.flag(Property::UnitIncrement, q);
            break;
        }
    }
    let k = cfg.rs + cfg.rr;
    for q in 0..inc.len().saturating_sub(k) {
        if inc[q + k] > inc[q] + STRUCTURE_SLACK {
            report.flag(Property::KConcave, q);
            break;
        }
    }
    report
}

/// Checks that `J(Q, 1) - J(Q, 0)` is non-decreasing in `Q`.
pub fn check_supermodularity(v: &[f64], cfg: &SystemConfig) -> StructureReport {
    let mut report = StructureReport::default();
    let dj = delta_j(v, cfg);
    if let Some(q) = dj.windows(2).position(|w| w[1] < w[0] - STRUCTURE_SLACK) {
        report.flag(Property::Supermodular, q);
    }
    report
}

/// Number of strict sign changes along `values`, treating entries within
/// `tol` of zero as signless.
pub fn sign_changes(values: &[f64], tol: f64) -> usize {
    let mut last = 0i8;
    let mut changes = 0;
    for &x in values {
        let s = if x > tol {
            1
        } else if x < -tol {
            -1
        } else {
            0
        };
        if s != 0 {
            if last != 0 && s != last {
                changes += 1;
            }
            last = s;
        }
    }
    changes
}

/// Largest `|theta + V(Q) - max_a J(Q, a)|` over all states.
pub fn bellman_residual(vf: &ValueFunction, cfg: &SystemConfig) -> f64 {
    (0..=cfg.nr)
        .map(|q| {
            let (common, hold, serve) = j_parts(&vf.v, q, cfg);
            (vf.theta + vf.v[q] - (common + hold.max(serve))).abs()
        })
        .fold(0.0, f64::max)
}
