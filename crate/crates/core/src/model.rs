//! System parameters, per-slot state/action vocabulary and the queue update.
//!
//! Time is slotted. In each slot the relay observes its buffer occupancy `Q`
//! and the on/off state of both hops, then activates at most one hop
//! (half-duplex). Rates are always the greedy ones: the source sends as much
//! as the buffer can absorb and the relay drains as much as it holds, each
//! capped by the link rate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the two-hop relay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Max packets per slot on the source-relay hop.
    pub rs: usize,
    /// Max packets per slot on the relay-destination hop.
    pub rr: usize,
    /// Relay buffer size in packets.
    pub nr: usize,
    /// Probability the source-relay hop is on.
    pub ps: f64,
    /// Probability the relay-destination hop is on.
    pub pr: f64,
}

impl SystemConfig {
    pub fn new(rs: usize, rr: usize, nr: usize, ps: f64, pr: f64) -> Result<Self> {
        SystemConfig { rs, rr, nr, ps, pr }.validate()
    }

    /// Checks the standing assumptions and returns the config unchanged.
    pub fn validate(self) -> Result<Self> {
        if self.rs == 0 || self.rr == 0 {
            return Err(Error::ZeroRate {
                rs: self.rs,
                rr: self.rr,
            });
        }
        let max_rate = self.rs.max(self.rr);
        if self.nr <= max_rate {
            return Err(Error::BufferTooSmall {
                nr: self.nr,
                max_rate,
            });
        }
        for (name, value) in [("ps", self.ps), ("pr", self.pr)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ProbabilityOutOfRange { name, value });
            }
        }
        Ok(self)
    }

    /// Analytic solvers need both hops to be strictly random.
    pub fn require_interior(&self) -> Result<()> {
        self.validate()?;
        for (name, value) in [("ps", self.ps), ("pr", self.pr)] {
            if value <= 0.0 || value >= 1.0 {
                return Err(Error::DegenerateProbability { name, value });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn ps_bar(&self) -> f64 {
        1.0 - self.ps
    }

    #[inline]
    pub fn pr_bar(&self) -> f64 {
        1.0 - self.pr
    }

    /// Number of queue states, `nr + 1`.
    #[inline]
    pub fn num_states(&self) -> usize {
        self.nr + 1
    }

    /// `true` when `rs == rr`, `nr` is a multiple of the rate and `ps == pr`.
    pub fn is_symmetric(&self) -> bool {
        self.rs == self.rr && self.nr.is_multiple_of(self.rs) && self.ps == self.pr
    }

    /// Queue after a source-relay transmission at greedy rate.
    #[inline]
    pub fn up(&self, q: usize) -> usize {
        (q + self.rs).min(self.nr)
    }

    /// Queue after a relay-destination transmission at greedy rate.
    #[inline]
    pub fn down(&self, q: usize) -> usize {
        q.saturating_sub(self.rr)
    }

    /// Packets delivered by a relay-destination transmission at greedy rate.
    #[inline]
    pub fn delivered(&self, q: usize) -> usize {
        q.min(self.rr)
    }

    /// Serializes to the flat `key = value` format read by [`RawConfig`].
    pub fn to_kv_string(&self) -> String {
        format!(
            "rs = {}\nrr = {}\nnr = {}\nps = {}\npr = {}\n",
            self.rs, self.rr, self.nr, self.ps, self.pr
        )
    }
}

impl FromStr for SystemConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RawConfig::parse_kv(s)?.resolve()
    }
}

/// Possibly incomplete config, as read from a file or command-line flags.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RawConfig {
    pub rs: Option<usize>,
    pub rr: Option<usize>,
    pub nr: Option<usize>,
    pub ps: Option<f64>,
    pub pr: Option<f64>,
}

impl RawConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = || {
                Error::Parse(format!(
                    "line {}: bad value for {key}: {value:?}",
                    lineno + 1
                ))
            };
            match key {
                "rs" => raw.rs = Some(value.parse().map_err(|_| bad())?),
                "rr" => raw.rr = Some(value.parse().map_err(|_| bad())?),
                "nr" => raw.nr = Some(value.parse().map_err(|_| bad())?),
                "ps" => raw.ps = Some(value.parse().map_err(|_| bad())?),
                "pr" => raw.pr = Some(value.parse().map_err(|_| bad())?),
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(raw)
    }

    /// Fields set in `other` win.
    pub fn overridden_by(self, other: RawConfig) -> RawConfig {
        RawConfig {
            rs: other.rs.or(self.rs),
            rr: other.rr.or(self.rr),
            nr: other.nr.or(self.nr),
            ps: other.ps.or(self.ps),
            pr: other.pr.or(self.pr),
        }
    }

    pub fn resolve(self) -> Result<SystemConfig> {
        let missing = |k: &str| Error::Parse(format!("missing key {k}"));
        SystemConfig {
            rs: self.rs.ok_or_else(|| missing("rs"))?,
            rr: self.rr.ok_or_else(|| missing("rr"))?,
            nr: self.nr.ok_or_else(|| missing("nr"))?,
            ps: self.ps.ok_or_else(|| missing("ps"))?,
            pr: self.pr.ok_or_else(|| missing("pr"))?,
        }
        .validate()
    }
}

/// Joint on/off state of the two hops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelState {
    pub gs: bool,
    pub gr: bool,
}

impl ChannelState {
    pub const fn new(gs: bool, gr: bool) -> Self {
        ChannelState { gs, gr }
    }
}

/// Link selection plus the rates used on each hop in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControlAction {
    pub a_s: bool,
    pub a_r: bool,
    pub u_s: usize,
    pub u_r: usize,
}

impl ControlAction {
    pub const IDLE: ControlAction = ControlAction {
        a_s: false,
        a_r: false,
        u_s: 0,
        u_r: 0,
    };

    pub fn source(u_s: usize) -> Self {
        ControlAction {
            a_s: true,
            u_s,
            ..Self::IDLE
        }
    }

    pub fn relay(u_r: usize) -> Self {
        ControlAction {
            a_r: true,
            u_r,
            ..Self::IDLE
        }
    }
}

/// How the relay picks a hop when both are on. Rates are always greedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    /// Serve the relay-destination hop iff `Q > threshold`.
    Threshold(usize),
    /// Per-queue choice; entry `q` is `true` to serve the relay-destination hop.
    Tabular(Vec<bool>),
    /// Serve the relay-destination hop with probability `sigma`, ignoring `Q`.
    CsiOnly(f64),
}

impl PolicySpec {
    pub fn validate(&self, cfg: &SystemConfig) -> Result<()> {
        match self {
            PolicySpec::Threshold(q) if *q > cfg.nr => Err(Error::InvalidPolicy(format!(
                "threshold {q} exceeds buffer {}",
                cfg.nr
            ))),
            PolicySpec::Tabular(table) if table.len() != cfg.num_states() => {
                Err(Error::InvalidPolicy(format!(
                    "table has {} entries, expected {}",
                    table.len(),
                    cfg.num_states()
                )))
            }
            PolicySpec::CsiOnly(sigma) if !(0.0..=1.0).contains(sigma) => Err(
                Error::InvalidPolicy(format!("sigma {sigma} outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    /// Whether [`select_action`] consumes a uniform draw when both hops are on.
    pub fn needs_draw(&self) -> bool {
        matches!(self, PolicySpec::CsiOnly(_))
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Threshold(q) => write!(f, "threshold:{q}"),
            PolicySpec::Tabular(t) => {
                let bits: String = t.iter().map(|&b| if b { '1' } else { '0' }).collect();
                write!(f, "tabular:{bits}")
            }
            PolicySpec::CsiOnly(s) => write!(f, "csi:{s}"),
        }
    }
}

fn check_queue(q: usize, cfg: &SystemConfig) -> Result<()> {
    if q > cfg.nr {
        Err(Error::QueueOutOfRange { q, nr: cfg.nr })
    } else {
        Ok(())
    }
}

/// Greedy rates `(min(rs, nr - q), min(rr, q))`.
pub fn optimal_rates(q: usize, cfg: &SystemConfig) -> Result<(usize, usize)> {
    check_queue(q, cfg)?;
    Ok((cfg.rs.min(cfg.nr - q), cfg.rr.min(q)))
}

/// Picks the hop for queue `q` under channel `g`.
///
/// `draw` must be a uniform sample in `[0, 1)` when the policy is
/// [`PolicySpec::CsiOnly`] and both hops are on; it is ignored otherwise.
pub fn select_action(
    q: usize,
    g: ChannelState,
    policy: &PolicySpec,
    draw: Option<f64>,
    cfg: &SystemConfig,
) -> Result<ControlAction> {
    let (u_s, u_r) = optimal_rates(q, cfg)?;
    let serve_relay = match (g.gs, g.gr) {
        (false, false) => return Ok(ControlAction::IDLE),
        (true, false) => false,
        (false, true) => true,
        (true, true) => match policy {
            PolicySpec::Threshold(th) => q > *th,
            PolicySpec::Tabular(table) => *table
                .get(q)
                .ok_or_else(|| Error::InvalidPolicy(format!("table has no entry for Q = {q}")))?,
            PolicySpec::CsiOnly(sigma) => draw.ok_or(Error::MissingRandomness)? < *sigma,
        },
    };
    Ok(if serve_relay {
        ControlAction::relay(u_r)
    } else {
        ControlAction::source(u_s)
    })
}

/// Applies one slot of queue dynamics. Returns the next queue and the
/// number of packets delivered to the destination.
pub fn step_queue(q: usize, action: ControlAction, cfg: &SystemConfig) -> Result<(usize, usize)> {
    check_queue(q, cfg)?;
    let infeasible = |reason: String| Err(Error::InfeasibleAction { q, reason });
    if action.a_s && action.a_r {
        return infeasible("both hops scheduled".into());
    }
    if action.u_s > cfg.rs.min(cfg.nr - q) {
        return infeasible(format!("u_s = {} exceeds available room", action.u_s));
    }
    if action.u_r > cfg.rr.min(q) {
        return infeasible(format!("u_r = {} exceeds queued packets", action.u_r));
    }
    let arrivals = if action.a_s { action.u_s } else { 0 };
    let departures = if action.a_r { action.u_r } else { 0 };
    Ok((q + arrivals - departures, departures))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rs: usize, rr: usize, nr: usize) -> SystemConfig {
        SystemConfig::new(rs, rr, nr, 0.5, 0.5).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(SystemConfig::new(1, 2, 4, 0.5, 0.5).is_ok());
        assert!(matches!(
            SystemConfig::new(2, 2, 2, 0.5, 0.5),
            Err(Error::BufferTooSmall { nr: 2, max_rate: 2 })
        ));
        assert!(matches!(
            SystemConfig::new(1, 2, 4, 1.2, 0.5),
            Err(Error::ProbabilityOutOfRange { name: "ps", .. })
        ));
        assert!(SystemConfig::new(1, 2, 4, f64::NAN, 0.5).is_err());
        assert!(SystemConfig::new(0, 2, 4, 0.5, 0.5).is_err());
    }

    #[test]
    fn interior_requirement() {
        let c = SystemConfig::new(1, 1, 3, 0.0, 0.5).unwrap();
        assert!(matches!(
            c.require_interior(),
            Err(Error::DegenerateProbability { name: "ps", .. })
        ));
        assert!(cfg(1, 1, 3).require_interior().is_ok());
    }

    #[test]
    fn rates_examples() {
        assert_eq!(optimal_rates(0, &cfg(2, 1, 3)).unwrap(), (2, 0));
        let c = cfg(2, 1, 3);
        assert_eq!(optimal_rates(3, &c).unwrap(), (0, 1));
        assert_eq!(optimal_rates(3, &cfg(1, 2, 4)).unwrap(), (1, 2));
        assert!(matches!(
            optimal_rates(5, &cfg(1, 2, 4)),
            Err(Error::QueueOutOfRange { q: 5, nr: 4 })
        ));
    }

    #[test]
    fn action_examples() {
        let c = SystemConfig::new(2, 3, 8, 0.5, 0.5).unwrap();
        let th = PolicySpec::Threshold(3);
        let a = select_action(5, ChannelState::new(false, true), &th, None, &c).unwrap();
        assert_eq!(a, ControlAction::relay(3));
        let a = select_action(4, ChannelState::new(true, true), &th, None, &c).unwrap();
        assert!(a.a_r && !a.a_s);
        let a = select_action(3, ChannelState::new(true, true), &th, None, &c).unwrap();
        assert_eq!(a, ControlAction::source(2));
        let a = select_action(3, ChannelState::new(false, false), &th, None, &c).unwrap();
        assert_eq!(a, ControlAction::IDLE);
        assert_eq!(
            select_action(
                3,
                ChannelState::new(true, true),
                &PolicySpec::CsiOnly(0.5),
                None,
                &c
            ),
            Err(Error::MissingRandomness)
        );
        // draw is only needed at (1, 1)
        let a = select_action(
            3,
            ChannelState::new(true, false),
            &PolicySpec::CsiOnly(0.5),
            None,
            &c,
        )
        .unwrap();
        assert_eq!(a, ControlAction::source(2));
        let a = select_action(
            3,
            ChannelState::new(true, true),
            &PolicySpec::CsiOnly(0.5),
            Some(0.25),
            &c,
        )
        .unwrap();
        assert_eq!(a, ControlAction::relay(3));
    }

    #[test]
    fn step_examples() {
        let c = cfg(1, 2, 4);
        assert_eq!(step_queue(2, ControlAction::source(1), &c).unwrap(), (3, 0));
        assert_eq!(step_queue(2, ControlAction::relay(2), &c).unwrap(), (0, 2));
        assert_eq!(step_queue(4, ControlAction::source(0), &c).unwrap(), (4, 0));
        assert!(step_queue(4, ControlAction::source(1), &c).is_err());
        assert!(step_queue(1, ControlAction::relay(2), &c).is_err());
        let both = ControlAction {
            a_s: true,
            a_r: true,
            u_s: 0,
            u_r: 0,
        };
        assert!(step_queue(1, both, &c).is_err());
    }

    #[test]
    fn kv_round_trip_and_overrides() {
        let c = SystemConfig::new(3, 2, 50, 0.25, 0.75).unwrap();
        let parsed: SystemConfig = c.to_kv_string().parse().unwrap();
        assert_eq!(parsed, c);

        let file = RawConfig::parse_kv("# relay\nrs=1\nrr = 2 \nnr=14\nps=0.5\npr=0.5\n").unwrap();
        let flags = RawConfig {
            nr: Some(20),
            ..Default::default()
        };
        let merged = file.overridden_by(flags).resolve().unwrap();
        assert_eq!(merged.nr, 20);
        assert_eq!(merged.rs, 1);

        assert!(RawConfig::parse_kv("rs: 1").is_err());
        assert!(RawConfig::parse_kv("xx = 1").is_err());
        assert!(RawConfig::parse_kv("rs = a").is_err());
        assert!(RawConfig::parse_kv("rs = 1").unwrap().resolve().is_err());
    }

    #[test]
    fn policy_validation() {
        let c = cfg(1, 2, 4);
        assert!(PolicySpec::Threshold(5).validate(&c).is_err());
        assert!(PolicySpec::Tabular(vec![false; 4]).validate(&c).is_err());
        assert!(PolicySpec::CsiOnly(1.5).validate(&c).is_err());
        assert!(PolicySpec::Threshold(4).validate(&c).is_ok());
    }
}
