//! Seeded sample-path simulation of the relay queue.
//!
//! Each replication owns two ChaCha8 streams derived from the run seed: one
//! for the channel and one for randomized policy decisions. Two policies
//! simulated with the same settings therefore see the same channel path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::{fmt_float, CsvTable};
use crate::error::{Error, Result};
use crate::model::{
    select_action, step_queue, ChannelState, ControlAction, PolicySpec, SystemConfig,
};

/// Batches per replication used for the standard error.
pub const BATCHES_PER_REPLICATION: usize = 10;

const CHANNEL_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSettings {
    pub horizon: u64,
    pub seed: u64,
    /// Leading slots left out of the throughput average.
    pub warmup: u64,
    pub replications: usize,
}

impl SimSettings {
    /// Settings with the default warmup of 1% of the horizon.
    pub fn new(horizon: u64, seed: u64, replications: usize) -> Self {
        SimSettings {
            horizon,
            seed,
            warmup: horizon / 100,
            replications,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon <= self.warmup {
            return Err(Error::InvalidSettings(format!(
                "horizon {} must exceed warmup {}",
                self.horizon, self.warmup
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidSettings(
                "need at least one replication".into(),
            ));
        }
        Ok(())
    }

    fn window(&self) -> u64 {
        self.horizon - self.warmup
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `index` under run seed `seed`.
pub fn replication_seed(seed: u64, index: usize) -> u64 {
    mix(seed ^ mix(index as u64))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Independent on/off draws for the two hops.
pub fn sample_channel<R: Rng + ?Sized>(rng: &mut R, cfg: &SystemConfig) -> ChannelState {
    ChannelState::new(rng.gen_bool(cfg.ps), rng.gen_bool(cfg.pr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    /// Mean delivered packets per slot after warmup.
    pub throughput: f64,
    /// Packets admitted per slot over the whole horizon.
    pub arrival_rate: f64,
    /// Packets delivered per slot over the whole horizon.
    pub departure_rate: f64,
    #[serde(skip)]
    batch_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: String,
    pub mean_throughput: f64,
    /// Batch-means standard error of `mean_throughput`.
    pub std_error: f64,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    pub per_replication: Vec<Replication>,
    /// Post-warmup visits to each queue length, summed over replications.
    pub occupancy_histogram: Vec<u64>,
    pub arrival_rate: f64,
    pub departure_rate: f64,
}

impl SimResult {
    /// `(replication, seed, throughput)` rows.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["replication", "seed", "throughput"]);
        for r in &self.per_replication {
            t.push([
                r.index.to_string(),
                r.seed.to_string(),
                fmt_float(r.throughput),
            ]);
        }
        t.finish()
    }

    pub fn histogram_csv(&self) -> String {
        let mut t = CsvTable::new(&["q", "count"]);
        for (q, c) in self.occupancy_histogram.iter().enumerate() {
            t.push([q.to_string(), c.to_string()]);
        }
        t.finish()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// Largest per-replication `|arrival rate - departure rate|`.
    pub fn flow_balance_gap(&self) -> f64 {
        self.per_replication
            .iter()
            .map(|r| (r.arrival_rate - r.departure_rate).abs())
            .fold(0.0, f64::max)
    }
}

fn run_replication(
    cfg: &SystemConfig,
    policy: &PolicySpec,
    settings: &SimSettings,
    index: usize,
) -> Result<(Replication, Vec<u64>)> {
    let seed = replication_seed(settings.seed, index);
    let mut channel = stream(seed, CHANNEL_STREAM);
    let mut decisions = stream(seed, POLICY_STREAM);
    let window = settings.window();
    let batches = (BATCHES_PER_REPLICATION as u64).min(window).max(1);
    let mut histogram = vec![0u64; cfg.num_states()];
    let mut batch_sums = vec![0u64; batches as usize];
    let mut batch_lens = vec![0u64; batches as usize];
    let (mut arrived, mut delivered) = (0u64, 0u64);
    let mut q = 0usize;
    for t in 0..settings.horizon {
        let g = sample_channel(&mut channel, cfg);
        let draw = (policy.needs_draw() && g.gs && g.gr).then(|| decisions.gen::<f64>());
        let action = select_action(q, g, policy, draw, cfg)?;
        let (next, reward) = step_queue(q, action, cfg)?;
        if action.a_s {
            arrived += action.u_s as u64;
        }
        delivered += reward as u64;
        if t >= settings.warmup {
            let s = t - settings.warmup;
            histogram[q] += 1;
            let b = (s * batches / window) as usize;
            batch_sums[b] += reward as u64;
            batch_lens[b] += 1;
        }
        q = next;
    }
    let post: u64 = batch_sums.iter().sum();
    let h = settings.horizon as f64;
    Ok((
        Replication {
            index,
            seed,
            throughput: post as f64 / window as f64,
            arrival_rate: arrived as f64 / h,
            departure_rate: delivered as f64 / h,
            batch_means: batch_sums
                .iter()
                .zip(&batch_lens)
                .map(|(s, l)| *s as f64 / *l as f64)
                .collect(),
        },
        histogram,
    ))
}

/// Runs `settings.replications` independent paths from an empty buffer.
pub fn simulate(
    cfg: &SystemConfig,
    policy: &PolicySpec,
    settings: &SimSettings,
) -> Result<SimResult> {
    cfg.validate()?;
    policy.validate(cfg)?;
    settings.validate()?;
    let runs = (0..settings.replications)
        .into_par_iter()
        .map(|i| run_replication(cfg, policy, settings, i))
        .collect::<Result<Vec<_>>>()?;
    let mut histogram = vec![0u64; cfg.num_states()];
    let mut per_replication = Vec::with_capacity(runs.len());
    for (rep, hist) in runs {
        for (h, c) in histogram.iter_mut().zip(hist) {
            *h += c;
        }
        per_replication.push(rep);
    }
    let reps = per_replication.len() as f64;
    let mean_throughput = per_replication.iter().map(|r| r.throughput).sum::<f64>() / reps;
    let batch: Vec<f64> = per_replication
        .iter()
        .flat_map(|r| r.batch_means.iter().copied())
        .collect();
    let std_error = if batch.len() > 1 {
        let nb = batch.len() as f64;
        let mean = batch.iter().sum::<f64>() / nb;
        let var = batch.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (nb - 1.0);
        (var / nb).sqrt()
    } else {
        0.0
    };
    Ok(SimResult {
        policy: policy.to_string(),
        mean_throughput,
        std_error,
        horizon: settings.horizon,
        warmup: settings.warmup,
        seed: settings.seed,
        arrival_rate: per_replication.iter().map(|r| r.arrival_rate).sum::<f64>() / reps,
        departure_rate: per_replication
            .iter()
            .map(|r| r.departure_rate)
            .sum::<f64>()
            / reps,
        per_replication,
        occupancy_histogram: histogram,
    })
}

/// Fixed-threshold and channel-only reference schemes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    /// Serve the relay hop whenever it holds a packet.
    Dopn,
    /// Serve the relay hop once it can fill a full slot.
    Adop,
    /// Keep the buffer about half full.
    Top,
    /// Coin flip with the given probability of serving the relay hop.
    CsiOnly(f64),
}

pub fn baseline_policy(kind: Baseline, cfg: &SystemConfig) -> PolicySpec {
    match kind {
        Baseline::Dopn => PolicySpec::Threshold(0),
        Baseline::Adop => PolicySpec::Threshold(cfg.rr),
        Baseline::Top => PolicySpec::Threshold(cfg.nr / 2),
        Baseline::CsiOnly(sigma) => PolicySpec::CsiOnly(sigma),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub policy: String,
    pub mean_throughput: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&["name", "policy", "mean_throughput", "std_error"]);
        for r in &self.rows {
            t.push([
                r.name.clone(),
                r.policy.clone(),
                fmt_float(r.mean_throughput),
                fmt_float(r.std_error),
            ]);
        }
        t.finish()
    }
}

/// Simulates every named policy with the same seeds, so all of them face
/// the same channel realizations.
pub fn compare(
    cfg: &SystemConfig,
    policies: &[(String, PolicySpec)],
    settings: &SimSettings,
) -> Result<Comparison> {
    if policies.is_empty() {
        return Err(Error::InvalidSettings("nothing to compare".into()));
    }
    let rows = policies
        .iter()
        .map(|(name, p)| {
            let r = simulate(cfg, p, settings)?;
            Ok(ComparisonRow {
                name: name.clone(),
                policy: r.policy,
                mean_throughput: r.mean_throughput,
                std_error: r.std_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { rows })
}

/// How the comparator deviates from greedy rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Perturbation {
    /// Same rates as greedy.
    None,
    /// Each slot, rates drawn uniformly from `0..=greedy`.
    RandomReduction,
    /// Every rate is zero.
    ZeroRates,
    /// Neither hop is served when both are on.
    IdleOnBoth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceTrial {
    pub perturbation: Perturbation,
    pub seed: u64,
    pub greedy_reward: u64,
    pub comparator_reward: u64,
    /// Smallest `greedy - comparator` cumulative reward over all prefixes.
    pub min_gap: i64,
}

impl DominanceTrial {
    pub fn holds(&self) -> bool {
        self.greedy_reward >= self.comparator_reward
    }
}

/// Runs a comparator against a greedy-rate twin on one channel path.
///
/// The comparator picks its hop with `policy` on its own queue and may then
/// shrink or drop the transmission. The twin serves whichever hop the
/// comparator picked (or, when the comparator idles, the hop `policy`
/// would pick for the twin) at greedy rates on its own queue.
pub fn dominance_trial(
    cfg: &SystemConfig,
    policy: &PolicySpec,
    perturbation: Perturbation,
    horizon: u64,
    seed: u64,
) -> Result<DominanceTrial> {
    cfg.validate()?;
    policy.validate(cfg)?;
    let mut channel = stream(seed, CHANNEL_STREAM);
    let mut decisions = stream(seed, POLICY_STREAM);
    let (mut q, mut q_star) = (0usize, 0usize);
    let (mut reward, mut reward_star) = (0u64, 0u64);
    let mut min_gap = 0i64;
    for _ in 0..horizon {
        let g = sample_channel(&mut channel, cfg);
        let draw = (policy.needs_draw() && g.gs && g.gr).then(|| decisions.gen::<f64>());
        let chosen = select_action(q, g, policy, draw, cfg)?;
        let modified = match perturbation {
            Perturbation::None => chosen,
            Perturbation::RandomReduction => ControlAction {
                u_s: decisions.gen_range(0..=chosen.u_s),
                u_r: decisions.gen_range(0..=chosen.u_r),
                ..chosen
            },
            Perturbation::ZeroRates => ControlAction {
                u_s: 0,
                u_r: 0,
                ..chosen
            },
            Perturbation::IdleOnBoth if g.gs && g.gr => ControlAction::IDLE,
            Perturbation::IdleOnBoth => chosen,
        };
        let (serve_source, serve_relay) = if modified.a_s || modified.a_r {
            (modified.a_s, modified.a_r)
        } else {
            let own = select_action(q_star, g, policy, draw, cfg)?;
            (own.a_s, own.a_r)
        };
        let twin = if serve_relay {
            ControlAction::relay(cfg.rr.min(q_star))
        } else if serve_source {
            ControlAction::source(cfg.rs.min(cfg.nr - q_star))
        } else {
            ControlAction::IDLE
        };
        let (next, r) = step_queue(q, modified, cfg)?;
        let (next_star, r_star) = step_queue(q_star, twin, cfg)?;
        q = next;
        q_star = next_star;
        reward += r as u64;
        reward_star += r_star as u64;
        min_gap = min_gap.min(reward_star as i64 - reward as i64);
    }
    Ok(DominanceTrial {
        perturbation,
        seed,
        greedy_reward: reward_star,
        comparator_reward: reward,
        min_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominanceSettings {
    pub horizon: u64,
    /// Number of random-reduction comparators.
    pub trials: usize,
    pub seed: u64,
}

/// Every trial of a dominance battery.
pub fn dominance_trials(
    cfg: &SystemConfig,
    policy: &PolicySpec,
    settings: &DominanceSettings,
) -> Result<Vec<DominanceTrial>> {
    let fixed = [
        Perturbation::None,
        Perturbation::ZeroRates,
        Perturbation::IdleOnBoth,
    ];
    let jobs: Vec<(Perturbation, u64)> = fixed
        .iter()
        .map(|&p| (p, settings.seed))
        .chain((0..settings.trials).map(|i| {
            (
                Perturbation::RandomReduction,
                replication_seed(settings.seed, i),
            )
        }))
        .collect();
    jobs.into_par_iter()
        .map(|(p, seed)| dominance_trial(cfg, policy, p, settings.horizon, seed))
        .collect()
}

/// `true` iff greedy rates collect at least as much reward as every
/// comparator in the battery.
pub fn dominance_check(
    cfg: &SystemConfig,
    policy: &PolicySpec,
    settings: &DominanceSettings,
) -> Result<bool> {
    Ok(dominance_trials(cfg, policy, settings)?
        .iter()
        .all(DominanceTrial::holds))
}
