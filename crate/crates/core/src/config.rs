//! System parameters and scheduling policies.

use alloc::format;
use alloc::string::String;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Scheduling policy for the shared buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    /// The exact MDS queue. Simulation only.
    Mds,
    /// MDS-Reservation(t): only the first `t` waiting batches may start jobs.
    Reservation(usize),
    /// M^k/M/n(t): the distinct-server rule is dropped while more than `t`
    /// batches wait.
    MkMn(usize),
}

impl Policy {
    /// The depth parameter `t`, or `None` for the MDS queue.
    pub fn depth(&self) -> Option<usize> {
        match *self {
            Policy::Mds => None,
            Policy::Reservation(t) | Policy::MkMn(t) => Some(t),
        }
    }

    /// Short family name used in output files.
    pub fn family(&self) -> &'static str {
        match self {
            Policy::Mds => "mds",
            Policy::Reservation(_) => "resv",
            Policy::MkMn(_) => "mkmn",
        }
    }

    /// Whether a compressed Markov chain exists for this policy.
    pub fn has_chain(&self) -> bool {
        !matches!(self, Policy::Mds)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Mds => write!(f, "mds"),
            Policy::Reservation(t) => write!(f, "resv({t})"),
            Policy::MkMn(t) => write!(f, "mkmn({t})"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    /// Accepts `mds`, `resv(t)`, `reservation(t)` and `mkmn(t)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "mds" {
            return Ok(Policy::Mds);
        }
        let bad = || Error::InvalidConfig(format!("unknown policy `{s}`"));
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let t: usize = rest
            .strip_suffix(')')
            .ok_or_else(bad)?
            .trim()
            .parse()
            .map_err(|_| bad())?;
        match name.trim() {
            "resv" | "reservation" => Ok(Policy::Reservation(t)),
            "mkmn" => Ok(Policy::MkMn(t)),
            _ => Err(bad()),
        }
    }
}

/// An `(n, k)` system with Poisson batch arrivals and exponential service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    pub n: usize,
    pub k: usize,
    /// Batch arrival rate `lambda`.
    pub arrival_rate: f64,
    /// Per-server service rate `mu`.
    pub service_rate: f64,
    pub policy: Policy,
}

impl SystemConfig {
    pub fn new(
        n: usize,
        k: usize,
        arrival_rate: f64,
        service_rate: f64,
        policy: Policy,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            n,
            k,
            arrival_rate,
            service_rate,
            policy,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks `1 <= k <= n`, `mu > 0` and `lambda > 0`.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return Err(invalid(format!(
                "arrival rate must be positive, got {}",
                self.arrival_rate
            )));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but allows a zero arrival rate.
    pub(crate) fn validate_structure(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(invalid(format!(
                "need 1 <= k <= n, got n = {}, k = {}",
                self.n, self.k
            )));
        }
        if !(self.service_rate.is_finite() && self.service_rate > 0.0) {
            return Err(invalid(format!(
                "service rate must be positive, got {}",
                self.service_rate
            )));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return Err(invalid(format!(
                "arrival rate must be finite and non-negative, got {}",
                self.arrival_rate
            )));
        }
        Ok(())
    }

    /// Depth `t` of the policy, or 0 for the MDS queue.
    pub fn depth(&self) -> usize {
        self.policy.depth().unwrap_or(0)
    }

    /// Copy with a different arrival rate.
    pub fn with_arrival_rate(&self, arrival_rate: f64) -> Self {
        SystemConfig {
            arrival_rate,
            ..*self
        }
    }

    /// Copy with a different policy.
    pub fn with_policy(&self, policy: Policy) -> Self {
        SystemConfig { policy, ..*self }
    }

    /// `n mu / k`, the throughput of the MDS queue and of every M^k/M/n(t).
    pub fn capacity(&self) -> f64 {
        self.n as f64 * self.service_rate / self.k as f64
    }

    /// Offered load `lambda k / (n mu)`.
    pub fn load(&self) -> f64 {
        self.arrival_rate / self.capacity()
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

impl fmt::Display for SystemConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} n={} k={} lambda={} mu={}",
            self.policy, self.n, self.k, self.arrival_rate, self.service_rate
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn parse_policies() {
        assert_eq!("mds".parse::<Policy>().unwrap(), Policy::Mds);
        assert_eq!(" Resv(2) ".parse::<Policy>().unwrap(), Policy::Reservation(2));
        assert_eq!("reservation(0)".parse::<Policy>().unwrap(), Policy::Reservation(0));
        assert_eq!("mkmn(1)".parse::<Policy>().unwrap(), Policy::MkMn(1));
        assert!("mkmn".parse::<Policy>().is_err());
        assert!("fifo(1)".parse::<Policy>().is_err());
        assert!("resv(-1)".parse::<Policy>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for p in [Policy::Mds, Policy::Reservation(3), Policy::MkMn(0)] {
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
    }

    #[test]
    fn validation() {
        assert!(SystemConfig::new(4, 2, 1.0, 1.0, Policy::Mds).is_ok());
        assert!(SystemConfig::new(2, 4, 1.0, 1.0, Policy::Mds).is_err());
        assert!(SystemConfig::new(4, 0, 1.0, 1.0, Policy::Mds).is_err());
        assert!(SystemConfig::new(4, 2, 0.0, 1.0, Policy::Mds).is_err());
        assert!(SystemConfig::new(4, 2, 1.0, -1.0, Policy::Mds).is_err());
        assert!(SystemConfig::new(4, 2, f64::NAN, 1.0, Policy::Mds).is_err());
    }

    #[test]
    fn capacity_and_load() {
        let cfg = SystemConfig::new(10, 5, 1.0, 2.0, Policy::MkMn(1)).unwrap();
        assert_eq!(cfg.capacity(), 4.0);
        assert_eq!(cfg.load(), 0.25);
    }
}
