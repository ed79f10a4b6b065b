//! Experiment specification files.
//!
//! A spec is a flat text file with one `key = value` pair per line.
//! Lists are comma separated; a range `a:step:b` expands to an inclusive
//! arithmetic grid. `#` starts a comment.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mdsq_core::Policy;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Solve,
    Simulate,
    Throughput,
    Sweep,
    DegradedReads,
}

impl FromStr for Kind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "solve" => Ok(Kind::Solve),
            "simulate" => Ok(Kind::Simulate),
            "throughput" => Ok(Kind::Throughput),
            "sweep" => Ok(Kind::Sweep),
            "degraded-reads" => Ok(Kind::DegradedReads),
            _ => Err(format!("unknown experiment `{s}`")),
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Solve => "solve",
            Kind::Simulate => "simulate",
            Kind::Throughput => "throughput",
            Kind::Sweep => "sweep",
            Kind::DegradedReads => "degraded-reads",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}`, expected csv or json")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: Kind,
    pub n: usize,
    pub k: usize,
    pub service_rate: f64,
    pub arrival_rates: Vec<f64>,
    pub policies: Vec<Policy>,
    pub seed: u64,
    pub replications: usize,
    pub warmup_batches: u64,
    pub horizon_batches: u64,
    /// Largest occupancy in CCDF tables.
    pub x_max: usize,
    /// Stationary mass allowed outside the latency truncation.
    pub tail: f64,
    /// Server counts for throughput tables.
    pub n_values: Vec<usize>,
    /// Helpers per repair in degraded-read runs.
    pub d: Option<usize>,
    pub repair_speedup: Option<f64>,
    pub format: Format,
    pub out: Option<PathBuf>,
    /// Directory for plain-text dumps of the generator blocks.
    pub dump_blocks: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(kind: Kind) -> Self {
        ExperimentSpec {
            kind,
            n: 10,
            k: 5,
            service_rate: 1.0,
            arrival_rates: vec![1.0],
            policies: vec![Policy::Reservation(1)],
            seed: 1,
            replications: 1,
            warmup_batches: 10_000,
            horizon_batches: 1_000_000,
            x_max: 40,
            tail: 1e-8,
            n_values: Vec::new(),
            d: None,
            repair_speedup: None,
            format: Format::Csv,
            out: None,
            dump_blocks: None,
        }
    }

    /// Parses `text` on top of `self`; later keys win.
    pub fn apply(&mut self, text: &str) -> Result<(), SpecError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SpecError::Syntax {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SpecError> {
        let bad = |msg: String| SpecError::Value {
            key: key.to_string(),
            msg,
        };
        match key {
            "experiment" => self.kind = value.parse().map_err(bad)?,
            "n" => self.n = parse_one(value).map_err(bad)?,
            "k" => self.k = parse_one(value).map_err(bad)?,
            "mu" | "service_rate" => self.service_rate = parse_one(value).map_err(bad)?,
            "lambda" | "arrival_rate" => self.arrival_rates = parse_grid(value).map_err(bad)?,
            "policies" | "policy" => {
                self.policies = split(value)
                    .map(|p| p.parse::<Policy>().map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()
                    .map_err(bad)?
            }
            "seed" => self.seed = parse_one(value).map_err(bad)?,
            "replications" => self.replications = parse_one(value).map_err(bad)?,
            "warmup" => self.warmup_batches = parse_one(value).map_err(bad)?,
            "horizon" => self.horizon_batches = parse_one(value).map_err(bad)?,
            "x_max" => self.x_max = parse_one(value).map_err(bad)?,
            "tail" => self.tail = parse_one(value).map_err(bad)?,
            "n_values" => {
                self.n_values = parse_grid(value)
                    .map_err(bad)?
                    .into_iter()
                    .map(|x| {
                        if x.fract() == 0.0 && x >= 1.0 {
                            Ok(x as usize)
                        } else {
                            Err(format!("`{x}` is not a server count"))
                        }
                    })
                    .collect::<Result<_, _>>()
                    .map_err(bad)?
            }
            "d" => self.d = Some(parse_one(value).map_err(bad)?),
            "repair_speedup" => self.repair_speedup = Some(parse_one(value).map_err(bad)?),
            "format" => self.format = value.parse().map_err(bad)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "dump_blocks" => self.dump_blocks = Some(PathBuf::from(value)),
            _ => return Err(SpecError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let fail = |m: String| Err(SpecError::Invalid(m));
        if self.kind != Kind::Throughput && (self.k == 0 || self.k > self.n) {
            return fail(format!("need 1 <= k <= n, got n = {}, k = {}", self.n, self.k));
        }
        if !(self.service_rate.is_finite() && self.service_rate > 0.0) {
            return fail(format!("mu must be positive, got {}", self.service_rate));
        }
        if self.kind != Kind::Throughput {
            if self.arrival_rates.is_empty() {
                return fail("empty lambda grid".into());
            }
            if self.arrival_rates.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
                return fail("every lambda must be positive".into());
            }
            if self.arrival_rates.windows(2).any(|w| w[1] <= w[0]) {
                return fail("lambda grid must be strictly increasing".into());
            }
        }
        if self.kind != Kind::DegradedReads && self.policies.is_empty() {
            return fail("no policies".into());
        }
        if self.kind == Kind::Solve && self.policies.contains(&Policy::Mds) {
            return fail("the MDS policy has no Markov chain; use simulate or sweep".into());
        }
        if self.kind == Kind::Throughput {
            if self.n_values.is_empty() {
                return fail("throughput needs n_values".into());
            }
            if let Some(&n) = self.n_values.iter().find(|&&n| n < self.k) {
                return fail(format!("n = {n} is smaller than k = {}", self.k));
            }
        }
        if self.kind == Kind::DegradedReads {
            match self.d {
                Some(d) if self.k <= d && d < self.n => {}
                Some(d) => return fail(format!("need k <= d <= n - 1, got d = {d}")),
                None => return fail("degraded-reads needs d".into()),
            }
            if let Some(s) = self.repair_speedup {
                if !(s.is_finite() && s > 0.0) {
                    return fail(format!("repair_speedup must be positive, got {s}"));
                }
            }
        }
        let simulates = matches!(self.kind, Kind::Simulate | Kind::DegradedReads)
            || (self.kind == Kind::Sweep && self.policies.contains(&Policy::Mds));
        if simulates {
            if self.replications == 0 {
                return fail("replications must be at least 1".into());
            }
            if self.horizon_batches <= self.warmup_batches {
                return fail("horizon must exceed warmup".into());
            }
        }
        if !(self.tail > 0.0 && self.tail < 1.0) {
            return fail(format!("tail must lie in (0, 1), got {}", self.tail));
        }
        Ok(())
    }
}

fn split(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_one<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| format!("`{value}`: {e}"))
}

/// Comma-separated numbers and `start:step:end` ranges.
fn parse_grid(value: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in split(value) {
        let parts: Vec<&str> = item.split(':').map(str::trim).collect();
        match parts.as_slice() {
            [x] => out.push(parse_one(x)?),
            [a, step, b] => {
                let (a, step, b): (f64, f64, f64) = (parse_one(a)?, parse_one(step)?, parse_one(b)?);
                if step.is_nan() || step <= 0.0 || b < a {
                    return Err(format!("bad range `{item}`"));
                }
                let count = ((b - a) / step + 1e-9).floor() as usize;
                // Round to the step's precision so 0.1:0.1:0.3 prints as
                // 0.1, 0.2, 0.3.
                out.extend((0..=count).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9));
            }
            _ => return Err(format!("bad list item `{item}`")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lists_and_ranges() {
        let mut s = ExperimentSpec::new(Kind::Solve);
        s.apply("n = 4\nk=2 # comment\nlambda = 0.1:0.1:0.5, 1.2\npolicies = resv(1), mkmn(0)\n")
            .unwrap();
        assert_eq!((s.n, s.k), (4, 2));
        assert_eq!(s.arrival_rates, vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.2]);
        assert_eq!(s.policies, vec![Policy::Reservation(1), Policy::MkMn(0)]);
        s.validate().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = ExperimentSpec::new(Kind::Solve);
        assert!(matches!(s.apply("bogus = 1"), Err(SpecError::UnknownKey(_))));
        assert!(s.apply("n 4").is_err());
        s.apply("lambda = 1.0, 0.5").unwrap();
        assert!(s.validate().is_err());
        let mut s = ExperimentSpec::new(Kind::Solve);
        s.apply("policies = mds").unwrap();
        assert!(s.validate().is_err());
    }
}
