//! Threshold search over the queue Markov chain.
//!
//! Under a threshold policy the relay queue is a finite Markov chain whose
//! recurrent class `C` does not depend on the threshold. Throughput is
//! `pi . r`, so the best threshold can be found by sweeping `q_th` over `C`.
//! Adjacent thresholds change a single row of `P`, which makes the reduced
//! steady-state system a rank-one modification of the previous one. The
//! sweep keeps the inverse current with Sherman-Morrison instead of
//! eliminating from scratch at every step.
//!
//! Indexing: thresholds are numbered `k = 1..=|C|` with `q_th = c_k`.
//! For index `k`, the partition removes column `d = min(k + 1, |C|)` of
//! `A(k) = I - P(k)^T` (1-based) and its last row.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::csv::{fmt_float, CsvTable};
use crate::error::{Error, Result};
use crate::linalg::{Flops, Lu, Matrix};
use crate::model::SystemConfig;

/// Sherman-Morrison denominators smaller than this trigger a direct refactor.
pub const DENOMINATOR_TOL: f64 = 1e-12;

/// Normwise backward error above which the updated inverse is discarded
/// and `Ahat(k)` is inverted from scratch.
pub const REFRESH_TOL: f64 = 1e-12;

/// Throughputs this close are treated as tied optima.
pub const OPTIMUM_TIE_TOL: f64 = 1e-12;

/// Recurrent class of the queue together with its arithmetic description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentStructure {
    /// `rs / gcd(rs, rr)`.
    pub a: usize,
    /// `rr / gcd(rs, rr)`.
    pub b: usize,
    /// Base step `gcd(rs, rr)`.
    pub r: usize,
    /// `nr = n * r + l` with `0 <= l < r`.
    pub n: usize,
    pub l: usize,
    pub nr: usize,
    /// Sorted recurrent states, computed by reachability.
    pub states: Vec<usize>,
}

impl RecurrentStructure {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Position of `q` in `states`.
    pub fn index_of(&self, q: usize) -> Option<usize> {
        self.states.binary_search(&q).ok()
    }

    /// Multiples of `r` together with `l + k r`, both up to `nr`.
    pub fn formula_states(&self) -> Vec<usize> {
        let mut set: BTreeSet<usize> = (0..=self.n).map(|k| k * self.r).collect();
        if self.l != 0 {
            set.extend((0..=self.n).map(|k| self.l + k * self.r));
        }
        set.into_iter().collect()
    }

    /// `(l + 1)(n + 1)`.
    pub fn formula_size(&self) -> usize {
        (self.l + 1) * (self.n + 1)
    }

    pub fn matches_formula_states(&self) -> bool {
        self.states == self.formula_states()
    }

    /// `true` when the computed class size differs from `(l + 1)(n + 1)`.
    /// Expected for `l >= 2`.
    pub fn size_diverges(&self) -> bool {
        self.len() != self.formula_size()
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// States reachable from 0 that can also return to 0, using the greedy
/// moves up, down and stay (which appear under every threshold).
pub fn recurrent_class(cfg: &SystemConfig) -> Result<RecurrentStructure> {
    cfg.require_interior()?;
    let n_states = cfg.num_states();
    let forward = |q: usize| [cfg.up(q), cfg.down(q)];
    let mut from_zero = vec![false; n_states];
    let mut stack = vec![0];
    from_zero[0] = true;
    while let Some(q) = stack.pop() {
        for next in forward(q) {
            if !from_zero[next] {
                from_zero[next] = true;
                stack.push(next);
            }
        }
    }
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n_states];
    for q in 0..n_states {
        for next in forward(q) {
            preds[next].push(q);
        }
    }
    let mut to_zero = vec![false; n_states];
    let mut stack = vec![0];
    to_zero[0] = true;
    while let Some(q) = stack.pop() {
        for &p in &preds[q] {
            if !to_zero[p] {
                to_zero[p] = true;
                stack.push(p);
            }
        }
    }
    let states = (0..n_states)
        .filter(|&q| from_zero[q] && to_zero[q])
        .collect();
    let r = gcd(cfg.rs, cfg.rr);
    Ok(RecurrentStructure {
        a: cfg.rs / r,
        b: cfg.rr / r,
        r,
        n: cfg.nr / r,
        l: cfg.nr % r,
        nr: cfg.nr,
        states,
    })
}

/// Transition matrix and departure rates over `C` for one threshold.
#[derive(Debug, Clone)]
pub struct ChainModel {
    pub structure: RecurrentStructure,
    pub q_th: usize,
    /// Row-stochastic, indexed by positions in `structure.states`.
    pub p: Matrix,
    pub r: Vec<f64>,
}

impl ChainModel {
    /// 1-based sweep index of `q_th`.
    pub fn k(&self) -> usize {
        self.structure.index_of(self.q_th).expect("threshold in C") + 1
    }

    pub fn throughput(&self, pi: &SteadyState) -> f64 {
        pi.throughput(&self.r)
    }
}

fn check_threshold(structure: &RecurrentStructure, q_th: usize) -> Result<()> {
    match structure.index_of(q_th) {
        Some(_) => Ok(()),
        None => Err(Error::ThresholdNotRecurrent { q: q_th }),
    }
}

fn fill_transitions(cfg: &SystemConfig, structure: &RecurrentStructure, q_th: usize) -> Matrix {
    let c = &structure.states;
    let mut p = Matrix::zeros(c.len(), c.len());
    let (ps, pr) = (cfg.ps, cfg.pr);
    let (qs, qr) = (cfg.ps_bar(), cfg.pr_bar());
    let pos = |q: usize| {
        structure
            .index_of(q)
            .expect("C is closed under the greedy moves")
    };
    for (i, &state) in c.iter().enumerate() {
        let (up, down) = (pos(cfg.up(state)), pos(cfg.down(state)));
        p[(i, i)] += qs * qr;
        if state > q_th {
            p[(i, up)] += ps * qr;
            p[(i, down)] += pr;
        } else {
            p[(i, up)] += ps;
            p[(i, down)] += qs * pr;
        }
    }
    p
}

/// `P(q_th)` over the recurrent class.
pub fn build_transition_matrix(
    cfg: &SystemConfig,
    structure: &RecurrentStructure,
    q_th: usize,
) -> Result<ChainModel> {
    check_threshold(structure, q_th)?;
    Ok(ChainModel {
        structure: structure.clone(),
        q_th,
        p: fill_transitions(cfg, structure, q_th),
        r: departure_rates(cfg, structure, q_th)?,
    })
}

/// Expected packets delivered per slot from each recurrent state.
pub fn departure_rates(
    cfg: &SystemConfig,
    structure: &RecurrentStructure,
    q_th: usize,
) -> Result<Vec<f64>> {
    check_threshold(structure, q_th)?;
    Ok(structure
        .states
        .iter()
        .map(|&i| {
            let served = if i > q_th {
                cfg.pr
            } else {
                cfg.ps_bar() * cfg.pr
            };
            served * cfg.delivered(i) as f64
        })
        .collect())
}

/// Stationary distribution over `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub pi: Vec<f64>,
}

impl SteadyState {
    pub fn throughput(&self, r: &[f64]) -> f64 {
        self.pi.iter().zip(r).map(|(p, r)| p * r).sum()
    }

    /// `max_j |(pi^T P)_j - pi_j|`.
    pub fn balance_residual(&self, p: &Matrix) -> f64 {
        (0..p.cols())
            .map(|j| {
                let flow: f64 = self.pi.iter().enumerate().map(|(i, x)| x * p[(i, j)]).sum();
                (flow - self.pi[j]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Reduced system for one sweep index, with the inverse of `Ahat`.
#[derive(Debug, Clone)]
pub struct PartitionedSystem {
    /// 1-based sweep index.
    pub k: usize,
    /// `I - P(k)^T`.
    pub a: Matrix,
    /// `A` with column `d` swapped to the end, then the last row and column dropped.
    pub ahat: Matrix,
    /// Column `d` of `A` without its last entry.
    pub y: Vec<f64>,
    /// Column order applied to `A`: a single transposition of `d` with the last column.
    pub perm: Vec<usize>,
    pub ahat_inv: Matrix,
}

/// Removed column (0-based) for sweep index `k`.
fn removed_column(k: usize, size: usize) -> usize {
    k.min(size - 1)
}

fn assemble(p: &Matrix, k: usize) -> (Matrix, Matrix, Vec<f64>, Vec<usize>) {
    let size = p.rows();
    let m = size - 1;
    let mut a = p.transpose();
    for i in 0..size {
        for j in 0..size {
            a[(i, j)] = if i == j { 1.0 } else { 0.0 } - a[(i, j)];
        }
    }
    let d = removed_column(k, size);
    let mut perm: Vec<usize> = (0..size).collect();
    perm.swap(d, m);
    let mut ahat = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            ahat[(i, j)] = a[(i, perm[j])];
        }
    }
    let y = (0..m).map(|i| a[(i, d)]).collect();
    (a, ahat, y, perm)
}

impl PartitionedSystem {
    /// Builds the system for `model` and inverts `Ahat` by elimination.
    pub fn direct(model: &ChainModel, flops: &mut Flops) -> Result<PartitionedSystem> {
        let k = model.k();
        if model.structure.len() < 2 {
            return Err(Error::InvalidSettings(
                "recurrent class needs at least two states".into(),
            ));
        }
        let (a, ahat, y, perm) = assemble(&model.p, k);
        let ahat_inv = Lu::factor(ahat.clone(), flops)?.inverse(flops);
        Ok(PartitionedSystem {
            k,
            a,
            ahat,
            y,
            perm,
            ahat_inv,
        })
    }

    fn dim(&self) -> usize {
        self.ahat.rows()
    }

    /// `xhat = -Ahat^{-1} y` from the stored inverse.
    pub fn reduced_solution(&self, flops: &mut Flops) -> Vec<f64> {
        let mut x = self.ahat_inv.mul_vec(&self.y, flops);
        x.iter_mut().for_each(|v| *v = -*v);
        x
    }

    /// `||Ahat xhat + y|| / (||Ahat|| ||xhat|| + ||y||)`, infinity norms.
    pub fn backward_error(&self, xhat: &[f64], flops: &mut Flops) -> f64 {
        let mut res = self.ahat.mul_vec(xhat, flops);
        let m = self.dim();
        for (r, y) in res.iter_mut().zip(&self.y) {
            *r += y;
        }
        flops.add(m);
        let norm_a = (0..m)
            .map(|i| self.ahat.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let inf = |v: &[f64]| v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
        let scale = norm_a * inf(xhat) + inf(&self.y);
        flops.add(m * m + m);
        let err = inf(&res) / scale;
        if err.is_finite() {
            err
        } else {
            f64::INFINITY
        }
    }

    /// Reassembles `x = K [xhat; 1]` and normalizes it to sum to one.
    pub fn steady_state_from(&self, xhat: &[f64]) -> SteadyState {
        let size = self.perm.len();
        let mut x = vec![0.0; size];
        for (j, v) in xhat.iter().enumerate() {
            x[self.perm[j]] = *v;
        }
        x[self.perm[size - 1]] = 1.0;
        normalize(x)
    }

    pub fn steady_state(&self, flops: &mut Flops) -> SteadyState {
        self.steady_state_from(&self.reduced_solution(flops))
    }
}

/// Scales to unit mass. Roundoff can leave entries of order -1e-16 on
/// states with negligible mass; those are clipped and the rest rescaled.
fn normalize(mut x: Vec<f64>) -> SteadyState {
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v = (*v / total).max(0.0));
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    SteadyState { pi: x }
}

/// Stationary distribution by partition and Gaussian elimination.
pub fn steady_state_direct(model: &ChainModel) -> Result<SteadyState> {
    steady_state_counted(model, &mut Flops::default())
}

/// Same as [`steady_state_direct`], charging the solve to `flops`.
pub fn steady_state_counted(model: &ChainModel, flops: &mut Flops) -> Result<SteadyState> {
    let size = model.structure.len();
    if size == 1 {
        return Ok(SteadyState { pi: vec![1.0] });
    }
    let (_, ahat, y, perm) = assemble(&model.p, model.k());
    let rhs: Vec<f64> = y.iter().map(|v| -v).collect();
    let xhat = Lu::factor(ahat, flops)?.solve(&rhs, flops);
    let mut x = vec![0.0; size];
    for (j, v) in xhat.into_iter().enumerate() {
        x[perm[j]] = v;
    }
    x[perm[size - 1]] = 1.0;
    Ok(normalize(x))
}

/// Outcome of one Sherman-Morrison step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateKind {
    /// `Ahat` did not change.
    Unchanged,
    /// Rank-one formula applied.
    RankOne,
}

/// Moves `prev` from index `k` to `k + 1`, where `next` is the chain for
/// threshold `c_{k+1}`.
///
/// The new reduced matrix is the old one with two columns exchanged and
/// then one column replaced, so its inverse follows from a row swap of the
/// old inverse and a Sherman-Morrison correction.
pub fn rank_one_inverse_update(
    prev: &PartitionedSystem,
    next: &ChainModel,
    flops: &mut Flops,
) -> Result<(PartitionedSystem, UpdateKind)> {
    let k = prev.k;
    if next.k() != k + 1 {
        return Err(Error::InvalidSettings(format!(
            "update expects index {}, got {}",
            k + 1,
            next.k()
        )));
    }
    let (a, ahat, y, perm) = assemble(&next.p, k + 1);
    let m = prev.dim();
    let mut inv = prev.ahat_inv.clone();
    // column of Ahat(k + 1) that differs from the (swapped) previous one, 0-based
    let j = k;
    let kind = if j + 1 < m {
        inv.swap_rows(j, j + 1);
        Some((j, j + 1))
    } else if j < m {
        Some((j, j))
    } else {
        None
    };
    let kind = match kind {
        None => UpdateKind::Unchanged,
        Some((col, old_col)) => {
            let u: Vec<f64> = (0..m)
                .map(|i| ahat[(i, col)] - prev.ahat[(i, old_col)])
                .collect();
            flops.add(m);
            let w = inv.mul_vec(&u, flops);
            let den = 1.0 + w[col];
            flops.add(1);
            if den.abs() < DENOMINATOR_TOL || !den.is_finite() {
                return Err(Error::DenominatorNearZero { value: den });
            }
            let z: Vec<f64> = inv.row(col).to_vec();
            let scaled: Vec<f64> = w.iter().map(|v| v / den).collect();
            flops.add(m);
            for (i, s) in scaled.iter().enumerate() {
                for (b, zj) in inv.row_mut(i).iter_mut().zip(&z) {
                    *b -= s * zj;
                }
            }
            flops.add(2 * m * m);
            UpdateKind::RankOne
        }
    };
    Ok((
        PartitionedSystem {
            k: k + 1,
            a,
            ahat,
            y,
            perm,
            ahat_inv: inv,
        },
        kind,
    ))
}

/// Per-threshold throughput of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub q_th: usize,
    /// Maximum throughput over the trace.
    pub rbar: f64,
    /// `(q_th, throughput)` for every recurrent threshold, ascending.
    pub trace: Vec<(usize, f64)>,
    pub flops: u64,
    /// Steps where the updated inverse failed the backward-error check
    /// or the denominator guard and was rebuilt by elimination.
    pub refreshes: usize,
}

impl ThresholdSearch {
    pub fn trace_csv(&self) -> String {
        let mut t = CsvTable::new(&["q_th", "throughput"]);
        for (q, v) in &self.trace {
            t.push([q.to_string(), fmt_float(*v)]);
        }
        t.finish()
    }
}

/// Maximum throughput and the last threshold within [`OPTIMUM_TIE_TOL`]
/// of it, so roundoff between two exactly optimal thresholds cannot decide
/// the winner.
fn best_of(trace: &[(usize, f64)]) -> (usize, f64) {
    let top = trace.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let q = trace
        .iter()
        .rev()
        .find(|t| t.1 >= top - OPTIMUM_TIE_TOL)
        .expect("trace is non-empty")
        .0;
    (q, top)
}

/// One step of the updated sweep, as seen by diagnostics.
#[derive(Debug, Clone)]
pub struct SweepStep {
    pub model: ChainModel,
    pub system: PartitionedSystem,
    pub pi: SteadyState,
    pub refreshed: bool,
}

/// Runs the rank-one sweep, handing every step to `visit`.
pub fn sweep_updated<F>(cfg: &SystemConfig, flops: &mut Flops, mut visit: F) -> Result<usize>
where
    F: FnMut(&SweepStep),
{
    let structure = recurrent_class(cfg)?;
    let mut refreshes = 0;
    let mut system: Option<PartitionedSystem> = None;
    for &q_th in &structure.states {
        let model = build_transition_matrix(cfg, &structure, q_th)?;
        if structure.len() == 1 {
            let system = PartitionedSystem {
                k: 1,
                a: Matrix::zeros(1, 1),
                ahat: Matrix::zeros(0, 0),
                y: Vec::new(),
                perm: vec![0],
                ahat_inv: Matrix::zeros(0, 0),
            };
            let pi = SteadyState { pi: vec![1.0] };
            visit(&SweepStep {
                model,
                system,
                pi,
                refreshed: false,
            });
            continue;
        }
        let mut refreshed = false;
        let mut current = match system.take() {
            None => PartitionedSystem::direct(&model, flops)?,
            Some(prev) => match rank_one_inverse_update(&prev, &model, flops) {
                Ok((next, _)) => next,
                Err(Error::DenominatorNearZero { .. }) => {
                    refreshed = true;
                    PartitionedSystem::direct(&model, flops)?
                }
                Err(e) => return Err(e),
            },
        };
        let mut xhat = current.reduced_solution(flops);
        if !refreshed && current.backward_error(&xhat, flops) > REFRESH_TOL {
            refreshed = true;
            current = PartitionedSystem::direct(&model, flops)?;
            xhat = current.reduced_solution(flops);
        }
        refreshes += refreshed as usize;
        let pi = current.steady_state_from(&xhat);
        visit(&SweepStep {
            model,
            system: current.clone(),
            pi,
            refreshed,
        });
        system = Some(current);
    }
    Ok(refreshes)
}

/// Best threshold over `C` using the rank-one sweep.
pub fn optimal_threshold_search(cfg: &SystemConfig) -> Result<ThresholdSearch> {
    let mut flops = Flops::default();
    let mut trace = Vec::new();
    let refreshes = sweep_updated(cfg, &mut flops, |step| {
        trace.push((step.model.q_th, step.model.throughput(&step.pi)));
    })?;
    let (q_th, rbar) = best_of(&trace);
    Ok(ThresholdSearch {
        q_th,
        rbar,
        trace,
        flops: flops.0,
        refreshes,
    })
}

/// Best threshold over `C`, eliminating from scratch at every index.
pub fn brute_force_search(cfg: &SystemConfig) -> Result<ThresholdSearch> {
    let structure = recurrent_class(cfg)?;
    let mut flops = Flops::default();
    let mut trace = Vec::with_capacity(structure.len());
    for &q_th in &structure.states {
        let model = build_transition_matrix(cfg, &structure, q_th)?;
        let pi = steady_state_counted(&model, &mut flops)?;
        trace.push((q_th, model.throughput(&pi)));
    }
    let (q_th, rbar) = best_of(&trace);
    Ok(ThresholdSearch {
        q_th,
        rbar,
        trace,
        flops: flops.0,
        refreshes: 0,
    })
}

/// Every queue threshold equivalent to the recurrent threshold `q_th`.
pub fn map_threshold_set(q_th: usize, structure: &RecurrentStructure) -> Result<Vec<usize>> {
    let idx = structure
        .index_of(q_th)
        .ok_or(Error::ThresholdNotRecurrent { q: q_th })?;
    Ok(match structure.states.get(idx + 1) {
        Some(&next) => (q_th..next).collect(),
        None => vec![q_th],
    })
}

/// Recurrent threshold that behaves like queue threshold `q` on `C`:
/// the largest recurrent state not above `q`.
pub fn recurrent_threshold(q: usize, structure: &RecurrentStructure) -> usize {
    let idx = structure.states.partition_point(|&c| c <= q);
    structure.states[idx.saturating_sub(1)]
}

/// Long-run throughput of `Threshold(q)` for any `q` in `0..=nr`.
pub fn threshold_throughput(cfg: &SystemConfig, q: usize) -> Result<f64> {
    if q > cfg.nr {
        return Err(Error::QueueOutOfRange { q, nr: cfg.nr });
    }
    let structure = recurrent_class(cfg)?;
    let model = build_transition_matrix(cfg, &structure, recurrent_threshold(q, &structure))?;
    Ok(model.throughput(&steady_state_direct(&model)?))
}

/// Flop totals of the two sweeps for one config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounters {
    pub states: usize,
    pub flops_direct: u64,
    pub flops_updated: u64,
}

impl OpCounters {
    pub fn to_csv(rows: &[OpCounters]) -> String {
        let mut t = CsvTable::new(&["states", "flops_direct", "flops_updated"]);
        for r in rows {
            t.push([
                r.states.to_string(),
                r.flops_direct.to_string(),
                r.flops_updated.to_string(),
            ]);
        }
        t.finish()
    }
}

/// Runs both sweeps and reports their flop counts.
pub fn op_counters(cfg: &SystemConfig) -> Result<OpCounters> {
    let updated = optimal_threshold_search(cfg)?;
    let direct = brute_force_search(cfg)?;
    Ok(OpCounters {
        states: updated.trace.len(),
        flops_direct: direct.flops,
        flops_updated: updated.flops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rs: usize, rr: usize, nr: usize, ps: f64, pr: f64) -> SystemConfig {
        SystemConfig::new(rs, rr, nr, ps, pr).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn recurrent_class_examples() {
        let s = recurrent_class(&cfg(2, 1, 3, 0.5, 0.5)).unwrap();
        assert_eq!((s.r, s.n, s.l), (1, 3, 0));
        assert_eq!(s.states, vec![0, 1, 2, 3]);

        let s = recurrent_class(&cfg(2, 2, 3, 0.5, 0.5)).unwrap();
        assert_eq!((s.r, s.n, s.l), (2, 1, 1));
        assert_eq!(s.states, vec![0, 1, 2, 3]);
        assert_eq!(s.formula_size(), 4);
        assert!(s.matches_formula_states());

        let s = recurrent_class(&cfg(1, 2, 4, 0.5, 0.5)).unwrap();
        assert_eq!(s.states, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn recurrent_class_with_gaps() {
        let s = recurrent_class(&cfg(4, 2, 40, 0.5, 0.5)).unwrap();
        assert_eq!(s.len(), 21);
        assert!(s.states.iter().all(|q| q % 2 == 0));

        // l = 3: two residue classes, not (l + 1)(n + 1) states
        let s = recurrent_class(&cfg(5, 5, 13, 0.5, 0.5)).unwrap();
        assert_eq!(s.l, 3);
        assert_eq!(s.states, vec![0, 3, 5, 8, 10, 13]);
        assert!(s.matches_formula_states());
        assert!(s.size_diverges());
    }

    #[test]
    fn three_state_transitions() {
        let c = cfg(1, 1, 2, 0.5, 0.5);
        let s = recurrent_class(&c).unwrap();
        let m = build_transition_matrix(&c, &s, 1).unwrap();
        let expect = Matrix::from_rows(&[
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.25, 0.5],
            vec![0.0, 0.5, 0.5],
        ]);
        assert!(m.p.max_abs_diff(&expect) < 1e-15);
        assert!(close(&m.r, &[0.0, 0.25, 0.5], 1e-15));
        assert!(matches!(
            build_transition_matrix(
                &cfg(4, 2, 40, 0.5, 0.5),
                &recurrent_class(&cfg(4, 2, 40, 0.5, 0.5)).unwrap(),
                3
            ),
            Err(Error::ThresholdNotRecurrent { q: 3 })
        ));
    }

    #[test]
    fn adjacent_thresholds_differ_in_one_row() {
        let c = cfg(2, 3, 11, 0.3, 0.6);
        let s = recurrent_class(&c).unwrap();
        for k in 0..s.len() - 1 {
            let a = build_transition_matrix(&c, &s, s.states[k]).unwrap();
            let b = build_transition_matrix(&c, &s, s.states[k + 1]).unwrap();
            for i in 0..s.len() {
                let same = close(a.p.row(i), b.p.row(i), 0.0);
                assert_eq!(same, i != k + 1, "row {i} at k = {}", k + 1);
            }
        }
    }

    #[test]
    fn departure_rate_edges() {
        let c = cfg(2, 3, 9, 0.4, 0.7);
        let s = recurrent_class(&c).unwrap();
        for &q in &s.states {
            let r = departure_rates(&c, &s, q).unwrap();
            assert_eq!(r[0], 0.0);
            if q < c.nr {
                assert!((r.last().unwrap() - 0.7 * 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn three_state_steady_states() {
        let c = cfg(1, 1, 2, 0.5, 0.5);
        let s = recurrent_class(&c).unwrap();
        let pi1 = steady_state_direct(&build_transition_matrix(&c, &s, 1).unwrap()).unwrap();
        assert!(close(&pi1.pi, &[0.2, 0.4, 0.4], 1e-12));
        let pi0 = steady_state_direct(&build_transition_matrix(&c, &s, 0).unwrap()).unwrap();
        assert!(close(&pi0.pi, &[0.4, 0.4, 0.2], 1e-12));
    }

    #[test]
    fn two_state_symmetric_chain() {
        let s = RecurrentStructure {
            a: 1,
            b: 1,
            r: 1,
            n: 1,
            l: 0,
            nr: 1,
            states: vec![0, 1],
        };
        let m = ChainModel {
            structure: s,
            q_th: 0,
            p: Matrix::from_rows(&[vec![0.3, 0.7], vec![0.7, 0.3]]),
            r: vec![0.0, 1.0],
        };
        let pi = steady_state_direct(&m).unwrap();
        assert!(close(&pi.pi, &[0.5, 0.5], 1e-15));
    }

    #[test]
    fn updated_inverse_matches_direct() {
        let c = cfg(1, 2, 4, 0.5, 0.5);
        let s = recurrent_class(&c).unwrap();
        let mut flops = Flops::default();
        let first = build_transition_matrix(&c, &s, s.states[0]).unwrap();
        let mut sys = PartitionedSystem::direct(&first, &mut flops).unwrap();
        for &q in &s.states[1..] {
            let model = build_transition_matrix(&c, &s, q).unwrap();
            let (next, _) = rank_one_inverse_update(&sys, &model, &mut flops).unwrap();
            let direct = PartitionedSystem::direct(&model, &mut Flops::default()).unwrap();
            assert!(
                next.ahat_inv.max_abs_diff(&direct.ahat_inv) < 1e-12,
                "k = {}",
                next.k
            );
            let pi = next.steady_state(&mut Flops::default());
            let pi_direct = steady_state_direct(&model).unwrap();
            assert!(close(&pi.pi, &pi_direct.pi, 1e-12));
            sys = next;
        }
    }

    #[test]
    fn zero_update_is_a_row_swap() {
        // last step leaves Ahat untouched
        let c = cfg(1, 1, 3, 0.4, 0.6);
        let s = recurrent_class(&c).unwrap();
        let n = s.len();
        let prev_model = build_transition_matrix(&c, &s, s.states[n - 2]).unwrap();
        let prev = PartitionedSystem::direct(&prev_model, &mut Flops::default()).unwrap();
        let model = build_transition_matrix(&c, &s, s.states[n - 1]).unwrap();
        let (next, kind) = rank_one_inverse_update(&prev, &model, &mut Flops::default()).unwrap();
        assert_eq!(kind, UpdateKind::Unchanged);
        assert_eq!(next.ahat_inv, prev.ahat_inv);
        assert_eq!(next.ahat, prev.ahat);
    }

    #[test]
    fn sweep_on_three_states_keeps_last_maximizer() {
        let c = cfg(1, 1, 2, 0.5, 0.5);
        let res = optimal_threshold_search(&c).unwrap();
        assert!((res.trace[0].1 - 0.3).abs() < 1e-12);
        assert!((res.trace[1].1 - 0.3).abs() < 1e-12);
        assert_eq!(res.q_th, 1);
        assert!((res.rbar - 0.3).abs() < 1e-12);
        let brute = brute_force_search(&c).unwrap();
        assert_eq!(brute.q_th, 1);
    }

    #[test]
    fn sweeps_agree() {
        for (rs, rr, nr, ps, pr) in [
            (1, 2, 14, 0.5, 0.5),
            (3, 2, 50, 0.5, 0.5),
            (4, 6, 33, 0.2, 0.8),
        ] {
            let c = cfg(rs, rr, nr, ps, pr);
            let a = optimal_threshold_search(&c).unwrap();
            let b = brute_force_search(&c).unwrap();
            assert_eq!(a.q_th, b.q_th);
            for (x, y) in a.trace.iter().zip(&b.trace) {
                assert!((x.1 - y.1).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn threshold_set_mapping() {
        let s = RecurrentStructure {
            a: 1,
            b: 1,
            r: 2,
            n: 2,
            l: 0,
            nr: 4,
            states: vec![0, 2, 4],
        };
        assert_eq!(map_threshold_set(2, &s).unwrap(), vec![2, 3]);
        assert_eq!(map_threshold_set(4, &s).unwrap(), vec![4]);
        assert!(map_threshold_set(1, &s).is_err());
        let s = recurrent_class(&cfg(1, 2, 4, 0.5, 0.5)).unwrap();
        assert_eq!(map_threshold_set(3, &s).unwrap(), vec![3]);
    }

    #[test]
    fn any_queue_threshold_maps_into_c() {
        let c = cfg(4, 2, 40, 0.5, 0.5);
        let s = recurrent_class(&c).unwrap();
        assert_eq!(recurrent_threshold(0, &s), 0);
        assert_eq!(recurrent_threshold(5, &s), 4);
        assert_eq!(recurrent_threshold(40, &s), 40);
        let res = optimal_threshold_search(&c).unwrap();
        let at4 = res.trace.iter().find(|t| t.0 == 4).unwrap().1;
        assert!((threshold_throughput(&c, 5).unwrap() - at4).abs() < 1e-12);
    }

    #[test]
    fn counters_positive_on_smallest_sweep() {
        // nr > max(rs, rr) keeps |C| >= 3
        let c = cfg(1, 1, 2, 0.5, 0.5);
        let oc = op_counters(&c).unwrap();
        assert_eq!(oc.states, 3);
        assert!(oc.flops_direct > 0 && oc.flops_updated > 0);
        assert_eq!(
            OpCounters::to_csv(&[oc]).lines().next(),
            Some("states,flops_direct,flops_updated")
        );
    }
}
