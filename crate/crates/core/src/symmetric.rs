//! Closed forms for equal rates, equal link probabilities and a buffer
//! that is a whole number of packets-per-slot.
//!
//! With `rs = rr = R`, `nr = n R` and `ps = pr = p`, the recurrent class is
//! `{0, R, ..., n R}` and the chain under threshold `m R` is birth-death
//! with geometric tails, so everything reduces to powers of `1 - p`.

use serde::{Deserialize, Serialize};

use crate::chain::SteadyState;
use crate::error::{Error, Result};
use crate::model::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricConfig {
    /// Common rate.
    pub r: usize,
    /// Buffer in units of `r`.
    pub n: usize,
    pub p: f64,
}

impl SymmetricConfig {
    pub fn new(r: usize, n: usize, p: f64) -> Result<Self> {
        if r == 0 {
            return Err(Error::ZeroRate { rs: r, rr: r });
        }
        if n < 2 {
            return Err(Error::BufferTooSmall {
                nr: n * r,
                max_rate: r,
            });
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::DegenerateP(p));
        }
        Ok(SymmetricConfig { r, n, p })
    }

    /// `None` unless `cfg` has equal rates, equal probabilities and `r | nr`.
    pub fn from_config(cfg: &SystemConfig) -> Option<Result<Self>> {
        cfg.is_symmetric()
            .then(|| SymmetricConfig::new(cfg.rs, cfg.nr / cfg.rs, cfg.ps))
    }

    pub fn to_config(&self) -> Result<SystemConfig> {
        SystemConfig::new(self.r, self.r, self.n * self.r, self.p, self.p)
    }

    #[inline]
    pub fn p_bar(&self) -> f64 {
        1.0 - self.p
    }

    fn check_m(&self, m: usize) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::DegenerateP(self.p));
        }
        if m > self.n {
            return Err(Error::InvalidPolicy(format!(
                "m = {m} exceeds n = {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Shared denominator `pb^{2m+2} + pb^{n+1} - 2 pb^{m+1}`.
    fn denominator(&self, m: usize) -> f64 {
        let pb = self.p_bar();
        pb.powi(2 * m as i32 + 2) + pb.powi(self.n as i32 + 1) - 2.0 * pb.powi(m as i32 + 1)
    }
}

/// Stationary distribution over `{0, R, ..., n R}` under threshold `m R`.
pub fn symmetric_steady_state(sc: &SymmetricConfig, m: usize) -> Result<SteadyState> {
    sc.check_m(m)?;
    let pb = sc.p_bar();
    let mut pi = Vec::with_capacity(sc.n + 1);
    pi.push((pb.powi(2 * m as i32 + 2) - pb.powi(2 * m as i32 + 1)) / sc.denominator(m));
    for i in 0..sc.n {
        let prev = pi[i];
        pi.push(match i.cmp(&m) {
            std::cmp::Ordering::Less => prev / pb,
            std::cmp::Ordering::Equal => prev,
            std::cmp::Ordering::Greater => pb * prev,
        });
    }
    Ok(SteadyState { pi })
}

/// Loss term of [`symmetric_throughput`]; smaller is better.
///
/// Equals `pi_0(m) + pi_n(m)` for `m < n`. At `m = n` the top state never
/// serves the relay hop when both are on and the two quantities part ways;
/// this expression remains the one that yields the throughput.
pub fn symmetric_objective(sc: &SymmetricConfig, m: usize) -> Result<f64> {
    sc.check_m(m)?;
    let pb = sc.p_bar();
    let n = sc.n as i32;
    let m2 = 2 * m as i32;
    let num = pb.powi(n + 1) - pb.powi(n) + pb.powi(m2 + 2) - pb.powi(m2 + 1);
    Ok(num / sc.denominator(m))
}

/// Throughput of threshold `m R`.
pub fn symmetric_throughput(sc: &SymmetricConfig, m: usize) -> Result<f64> {
    let obj = symmetric_objective(sc, m)?;
    let (p, pb, r) = (sc.p, sc.p_bar(), sc.r as f64);
    Ok((p + p * pb) * r / 2.0 - p * pb * r / 2.0 * obj)
}

/// The objective written in `x = pb^m` and extended to real `x`.
pub fn objective_in_x(sc: &SymmetricConfig, x: f64) -> f64 {
    let pb = sc.p_bar();
    let n = sc.n as i32;
    let num = pb.powi(n + 1) - pb.powi(n) + pb * pb * x * x - pb * x * x;
    let den = pb * pb * x * x + pb.powi(n + 1) - 2.0 * pb * x;
    num / den
}

/// Stationary point `pb^{(n-1)/2}` of [`objective_in_x`].
pub fn continuous_optimum(sc: &SymmetricConfig) -> f64 {
    sc.p_bar().powf((sc.n as f64 - 1.0) / 2.0)
}

/// Optimal queue thresholds. Odd `n` gives `R` consecutive values centred
/// on the middle of the buffer; even `n` gives `2R`.
pub fn symmetric_optimal_threshold(sc: &SymmetricConfig) -> Vec<usize> {
    let (r, n) = (sc.r, sc.n);
    if n % 2 == 1 {
        ((n - 1) * r / 2..(n + 1) * r / 2).collect()
    } else {
        (n * r / 2 - r..n * r / 2 + r).collect()
    }
}

/// Every `m` attaining the smallest objective, within `tol`.
pub fn objective_minimizers(sc: &SymmetricConfig, tol: f64) -> Result<Vec<usize>> {
    let values = (0..=sc.n)
        .map(|m| symmetric_objective(sc, m))
        .collect::<Result<Vec<f64>>>()?;
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((0..=sc.n).filter(|&m| values[m] <= best + tol).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn three_state_distributions() {
        let sc = SymmetricConfig::new(1, 2, 0.5).unwrap();
        assert!(close(
            &symmetric_steady_state(&sc, 1).unwrap().pi,
            &[0.2, 0.4, 0.4],
            1e-15
        ));
        assert!(close(
            &symmetric_steady_state(&sc, 0).unwrap().pi,
            &[0.4, 0.4, 0.2],
            1e-15
        ));
        assert!((symmetric_objective(&sc, 1).unwrap() - 0.6).abs() < 1e-15);
        assert!((symmetric_objective(&sc, 0).unwrap() - 0.6).abs() < 1e-15);
        assert!((symmetric_throughput(&sc, 1).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn distributions_sum_to_one() {
        for (r, n, p) in [(1, 7, 0.3), (3, 12, 0.85), (2, 30, 0.1)] {
            let sc = SymmetricConfig::new(r, n, p).unwrap();
            for m in 0..=n {
                let pi = symmetric_steady_state(&sc, m).unwrap().pi;
                assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if m < n {
                    let obj = symmetric_objective(&sc, m).unwrap();
                    assert!((obj - (pi[0] + pi[n])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn near_certain_links_alternate() {
        let sc = SymmetricConfig::new(3, 6, 1.0 - 1e-9).unwrap();
        assert!((symmetric_throughput(&sc, 3).unwrap() - 1.5).abs() < 1e-6);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(
            SymmetricConfig::new(1, 4, 1.0),
            Err(Error::DegenerateP(_))
        ));
        assert!(SymmetricConfig::new(1, 1, 0.5).is_err());
        let sc = SymmetricConfig::new(1, 4, 0.5).unwrap();
        assert!(symmetric_objective(&sc, 5).is_err());
    }

    #[test]
    fn optimal_threshold_sets() {
        let set = |r, n| symmetric_optimal_threshold(&SymmetricConfig::new(r, n, 0.5).unwrap());
        assert_eq!(set(2, 5), vec![4, 5]);
        assert_eq!(set(1, 14), vec![6, 7]);
        assert_eq!(set(1, 2), vec![0, 1]);
        let sc = SymmetricConfig::new(1, 2, 0.5).unwrap();
        assert_eq!(objective_minimizers(&sc, 1e-12).unwrap(), vec![0, 1]);
    }

    #[test]
    fn from_config_detects_symmetry() {
        let c = SystemConfig::new(2, 2, 10, 0.4, 0.4).unwrap();
        let sc = SymmetricConfig::from_config(&c).unwrap().unwrap();
        assert_eq!((sc.r, sc.n), (2, 5));
        let c = SystemConfig::new(2, 2, 11, 0.4, 0.4).unwrap();
        assert!(SymmetricConfig::from_config(&c).is_none());
    }

    #[test]
    fn x_form_matches_integer_objective() {
        let sc = SymmetricConfig::new(1, 9, 0.35).unwrap();
        for m in 0..=9 {
            let x = sc.p_bar().powi(m as i32);
            assert!((objective_in_x(&sc, x) - symmetric_objective(&sc, m).unwrap()).abs() < 1e-12);
        }
    }
}
