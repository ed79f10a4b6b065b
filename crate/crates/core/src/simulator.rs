//! Discrete-event simulation of every policy, including the MDS queue.
//!
//! Randomness comes from ChaCha8 streams derived from a single `u64`
//! seed: stream 0 drives batch arrivals and stream `1 + i` drives the
//! service times of server `i`. Runs of different policies with the same
//! seed therefore share their random inputs.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Exp};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::math::sqrt;
use crate::policies::{Audit, BatchId, SimState};

/// Normal quantile used for all 95% confidence intervals.
pub const Z95: f64 = 1.96;

/// Number of contiguous groups for batch-means intervals within a run.
pub const BATCH_MEANS_GROUPS: usize = 30;

/// Latency quantile levels reported by every run.
pub const QUANTILE_LEVELS: [f64; 4] = [0.5, 0.9, 0.95, 0.99];

/// The run stops early once this many batches wait.
pub const SATURATION_BUFFER: usize = 1_000_000;

/// Arrival counts delimiting a run.
///
/// Batches `warmup_batches..horizon_batches` (by arrival order) are
/// measured. Time averages cover the interval between the arrivals of
/// batch `warmup_batches` and batch `horizon_batches`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunPlan {
    pub seed: u64,
    pub warmup_batches: u64,
    pub horizon_batches: u64,
}

impl RunPlan {
    pub fn new(seed: u64, warmup_batches: u64, horizon_batches: u64) -> Self {
        RunPlan {
            seed,
            warmup_batches,
            horizon_batches,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon_batches <= self.warmup_batches {
            return Err(Error::InvalidPlan(format!(
                "horizon {} must exceed warmup {}",
                self.horizon_batches, self.warmup_batches
            )));
        }
        Ok(())
    }

    fn measured(&self) -> u64 {
        self.horizon_batches - self.warmup_batches
    }
}

/// 95% confidence half-widths.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Halfwidths {
    pub mean_batch_latency: f64,
    pub waiting_fraction: f64,
    pub observed_throughput: f64,
}

/// Output of one run or an aggregate of replications.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub config: SystemConfig,
    pub mean_batch_latency: f64,
    /// `(level, latency)` pairs for [`QUANTILE_LEVELS`].
    pub latency_quantiles: Vec<(f64, f64)>,
    /// Time-average probability of `m` jobs in the system, indexed by `m`.
    pub occupancy_histogram: Vec<f64>,
    /// Distribution of `m` seen by measured arrivals just before arriving.
    pub arrival_occupancy: Vec<f64>,
    /// Fraction of measured batches that could not start all jobs at once.
    pub waiting_fraction: f64,
    /// Measured batches that finished.
    pub completed_batches: u64,
    /// Batch completions per unit time over the measurement window.
    pub observed_throughput: f64,
    pub ci: Halfwidths,
    /// Seed of the run, or the base seed of a replication set.
    pub seed: u64,
    pub warmup_batches: u64,
    pub horizon_batches: u64,
    pub replications: usize,
    /// The buffer grew past [`SATURATION_BUFFER`] and the run was cut.
    pub saturated: bool,
    pub audit: Audit,
}

impl MetricsReport {
    /// `P(M > x)` from the time-average histogram.
    pub fn occupancy_ccdf(&self, x_max: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(x_max + 1);
        let mut below = 0.0;
        for x in 0..=x_max {
            below += self.occupancy_histogram.get(x).copied().unwrap_or(0.0);
            out.push((1.0 - below).max(0.0));
        }
        out
    }

    /// Latency quantile at one of [`QUANTILE_LEVELS`].
    pub fn quantile(&self, level: f64) -> Option<f64> {
        self.latency_quantiles
            .iter()
            .find(|(l, _)| (*l - level).abs() < 1e-12)
            .map(|(_, v)| *v)
    }
}

/// Independent random streams for arrivals and each server.
pub struct Streams {
    arrivals: ChaCha8Rng,
    servers: Vec<ChaCha8Rng>,
}

impl Streams {
    pub fn new(seed: u64, n: usize) -> Self {
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Streams {
            arrivals: stream(0),
            servers: (0..n as u64).map(|i| stream(i + 1)).collect(),
        }
    }
}

struct Ledger {
    /// Batch id of `open[0]`.
    base: BatchId,
    /// Arrival time and jobs not yet finished, per batch in id order.
    open: VecDeque<(f64, usize)>,
}

/// Runs one replication.
pub fn run(cfg: &SystemConfig, plan: &RunPlan) -> Result<MetricsReport> {
    cfg.validate()?;
    plan.validate()?;
    let (n, k) = (cfg.n, cfg.k);
    let inter = Exp::new(cfg.arrival_rate).map_err(|_| invalid_rate())?;
    let service = Exp::new(cfg.service_rate).map_err(|_| invalid_rate())?;
    let mut rng = Streams::new(plan.seed, n);
    let mut state = SimState::new(cfg)?;
    let mut finish = vec![f64::INFINITY; n];
    let mut ledger = Ledger {
        base: 0,
        open: VecDeque::new(),
    };

    let measured = plan.measured() as usize;
    let mut latency = vec![f64::NAN; measured];
    let mut waited = vec![false; measured];
    let mut pending = measured;
    let mut occupancy: Vec<f64> = Vec::new();
    let mut arrival_occ: Vec<f64> = Vec::new();
    let mut completion_times: Vec<f64> = Vec::new();
    let mut window: (Option<f64>, Option<f64>) = (None, None);
    let mut saturated = false;

    let mut now = 0.0;
    let mut next_arrival = inter.sample(&mut rng.arrivals);
    let mut arrived: u64 = 0;
    let mut jobs = 0usize;

    while arrived < plan.horizon_batches || pending > 0 {
        let (server, t_done) = finish
            .iter()
            .enumerate()
            .fold((usize::MAX, f64::INFINITY), |best, (i, &t)| if t < best.1 { (i, t) } else { best });
        let t_event = next_arrival.min(t_done);
        if window.0.is_some() && window.1.is_none() {
            bump(&mut occupancy, jobs, t_event - now);
        }
        now = t_event;

        if next_arrival <= t_done {
            let idx = arrived;
            if idx == plan.warmup_batches {
                window.0 = Some(now);
            }
            if idx == plan.horizon_batches {
                window.1 = Some(now);
            }
            let in_window = idx >= plan.warmup_batches && idx < plan.horizon_batches;
            if in_window {
                bump(&mut arrival_occ, jobs, 1.0);
            }
            let eff = state.on_arrival();
            debug_assert_eq!(eff.batch, idx);
            ledger.open.push_back((now, k));
            for &(s, _) in &eff.started {
                finish[s] = now + service.sample(&mut rng.servers[s]);
            }
            if in_window {
                waited[(idx - plan.warmup_batches) as usize] = eff.waits;
            }
            jobs += k;
            arrived += 1;
            next_arrival = now + inter.sample(&mut rng.arrivals);
            if state.buffer().len() > SATURATION_BUFFER {
                saturated = true;
                break;
            }
        } else {
            let eff = state.on_departure(server)?;
            finish[server] = f64::INFINITY;
            jobs -= 1;
            let slot = (eff.finished - ledger.base) as usize;
            ledger.open[slot].1 -= 1;
            if ledger.open[slot].1 == 0 {
                let id = eff.finished;
                if window.0.is_some() && window.1.is_none() {
                    completion_times.push(now);
                }
                if id >= plan.warmup_batches && id < plan.horizon_batches {
                    latency[(id - plan.warmup_batches) as usize] = now - ledger.open[slot].0;
                    pending -= 1;
                }
                while ledger.open.front().is_some_and(|b| b.1 == 0) {
                    ledger.open.pop_front();
                    ledger.base += 1;
                }
            }
            for &(s, _) in &eff.started {
                finish[s] = now + service.sample(&mut rng.servers[s]);
            }
        }
    }

    let start = window.0.unwrap_or(now);
    let end = window.1.unwrap_or(now);
    let span = end - start;
    normalize(&mut occupancy);
    normalize(&mut arrival_occ);

    let done: Vec<f64> = latency.iter().copied().filter(|x| !x.is_nan()).collect();
    let (mean_latency, ci_latency) = batch_means(&latency);
    let flags: Vec<f64> = waited.iter().map(|&w| f64::from(u8::from(w))).collect();
    let (waiting_fraction, ci_wait) = batch_means(&flags);
    let (throughput, ci_thr) = throughput_stats(&completion_times, start, span);

    Ok(MetricsReport {
        config: *cfg,
        mean_batch_latency: mean_latency,
        latency_quantiles: quantiles(&done),
        occupancy_histogram: occupancy,
        arrival_occupancy: arrival_occ,
        waiting_fraction,
        completed_batches: done.len() as u64,
        observed_throughput: throughput,
        ci: Halfwidths {
            mean_batch_latency: ci_latency,
            waiting_fraction: ci_wait,
            observed_throughput: ci_thr,
        },
        seed: plan.seed,
        warmup_batches: plan.warmup_batches,
        horizon_batches: plan.horizon_batches,
        replications: 1,
        saturated,
        audit: state.audit(),
    })
}

fn invalid_rate() -> Error {
    Error::InvalidConfig("rates must be positive and finite".into())
}

fn bump(hist: &mut Vec<f64>, at: usize, by: f64) {
    if hist.len() <= at {
        hist.resize(at + 1, 0.0);
    }
    hist[at] += by;
}

fn normalize(hist: &mut [f64]) {
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|x| *x /= total);
    }
}

/// Mean of the finite samples and the batch-means 95% half-width over
/// contiguous groups.
fn batch_means(samples: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    let n = finite.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = finite.iter().sum::<f64>() / n as f64;
    let groups = BATCH_MEANS_GROUPS.min(n);
    if groups < 2 {
        return (mean, f64::NAN);
    }
    let means: Vec<f64> = (0..groups)
        .map(|g| {
            let chunk = &finite[g * n / groups..(g + 1) * n / groups];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    (mean, Z95 * std_error(&means))
}

fn throughput_stats(times: &[f64], start: f64, span: f64) -> (f64, f64) {
    if span <= 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let rate = times.len() as f64 / span;
    let groups = BATCH_MEANS_GROUPS;
    let mut counts = vec![0.0; groups];
    for &t in times {
        let g = (((t - start) / span) * groups as f64) as usize;
        counts[g.min(groups - 1)] += 1.0;
    }
    let rates: Vec<f64> = counts.iter().map(|c| c * groups as f64 / span).collect();
    (rate, Z95 * std_error(&rates))
}

/// Standard error of the mean of `xs`.
fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    sqrt(var / n)
}

/// Nearest-rank quantiles at [`QUANTILE_LEVELS`].
fn quantiles(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    QUANTILE_LEVELS
        .iter()
        .map(|&q| {
            let v = if sorted.is_empty() {
                f64::NAN
            } else {
                let rank = libm::ceil(q * sorted.len() as f64) as usize;
                sorted[rank.clamp(1, sorted.len()) - 1]
            };
            (q, v)
        })
        .collect()
}

/// Runs `count` replications with seeds `base_seed, base_seed + 1, ...`
/// one after the other and aggregates them.
pub fn replicate(
    cfg: &SystemConfig,
    count: usize,
    base_seed: u64,
    warmup_batches: u64,
    horizon_batches: u64,
) -> Result<MetricsReport> {
    Sequential.replicate(
        cfg,
        &ReplicationPlan {
            count,
            base_seed,
            warmup_batches,
            horizon_batches,
        },
    )
}

/// A set of replications.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicationPlan {
    pub count: usize,
    pub base_seed: u64,
    pub warmup_batches: u64,
    pub horizon_batches: u64,
}

impl ReplicationPlan {
    /// Plan of replication `r`.
    pub fn run_plan(&self, r: usize) -> RunPlan {
        RunPlan::new(
            self.base_seed.wrapping_add(r as u64),
            self.warmup_batches,
            self.horizon_batches,
        )
    }
}

/// Strategy for running a set of replications.
pub trait Replicator {
    fn replicate(&self, cfg: &SystemConfig, plan: &ReplicationPlan) -> Result<MetricsReport>;
}

/// Runs replications in order on the current thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Replicator for Sequential {
    fn replicate(&self, cfg: &SystemConfig, plan: &ReplicationPlan) -> Result<MetricsReport> {
        let reports = (0..plan.count)
            .map(|r| run(cfg, &plan.run_plan(r)))
            .collect::<Result<Vec<_>>>()?;
        aggregate(reports)
    }
}

/// Combines replications: means of per-run means, intervals pooled from
/// the per-run batch means, averaged histograms and quantiles.
///
/// Reports are sorted by seed first, so the result does not depend on
/// the order in which they were produced.
pub fn aggregate(mut reports: Vec<MetricsReport>) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::InvalidPlan("no replications".into()));
    }
    reports.sort_by_key(|r| r.seed);
    if reports.len() == 1 {
        return Ok(reports.pop().unwrap_or_else(|| unreachable!()));
    }
    let r = reports.len() as f64;
    // Runs are independent, so the variance of the average is the sum of
    // the per-run batch-means variances over r^2.
    let stat = |f: &dyn Fn(&MetricsReport) -> (f64, f64)| -> (f64, f64) {
        let (sum, sq) = reports.iter().map(f).fold((0.0, 0.0), |(s, q), (x, h)| (s + x, q + h * h));
        (sum / r, sqrt(sq) / r)
    };
    let (latency, ci_latency) = stat(&|m| (m.mean_batch_latency, m.ci.mean_batch_latency));
    let (waiting, ci_wait) = stat(&|m| (m.waiting_fraction, m.ci.waiting_fraction));
    let (throughput, ci_thr) =
        stat(&|m| (m.observed_throughput, m.ci.observed_throughput));
    let average = |get: &dyn Fn(&MetricsReport) -> &Vec<f64>| -> Vec<f64> {
        let len = reports.iter().map(|m| get(m).len()).max().unwrap_or(0);
        let mut out = vec![0.0; len];
        for m in &reports {
            for (o, x) in out.iter_mut().zip(get(m)) {
                *o += x / r;
            }
        }
        out
    };
    let first = &reports[0];
    let latency_quantiles = first
        .latency_quantiles
        .iter()
        .enumerate()
        .map(|(i, &(level, _))| {
            let v = reports.iter().map(|m| m.latency_quantiles[i].1).sum::<f64>() / r;
            (level, v)
        })
        .collect();
    Ok(MetricsReport {
        config: first.config,
        mean_batch_latency: latency,
        latency_quantiles,
        occupancy_histogram: average(&|m| &m.occupancy_histogram),
        arrival_occupancy: average(&|m| &m.arrival_occupancy),
        waiting_fraction: waiting,
        completed_batches: reports.iter().map(|m| m.completed_batches).sum(),
        observed_throughput: throughput,
        ci: Halfwidths {
            mean_batch_latency: ci_latency,
            waiting_fraction: ci_wait,
            observed_throughput: ci_thr,
        },
        seed: first.seed,
        warmup_batches: first.warmup_batches,
        horizon_batches: first.horizon_batches,
        replications: reports.len(),
        saturated: reports.iter().any(|m| m.saturated),
        audit: Audit {
            distinct_violations: reports.iter().map(|m| m.audit.distinct_violations).sum(),
            relaxed_reuses: reports.iter().map(|m| m.audit.relaxed_reuses).sum(),
        },
    })
}

/// Throughput of a system that always has a backlog.
///
/// The buffer is topped up to `2n + t + 2` waiting batches after every
/// event. The first tenth of the `horizon_batches` completions is
/// discarded as warm-up.
pub fn measure_saturation_throughput(
    cfg: &SystemConfig,
    seed: u64,
    horizon_batches: u64,
) -> Result<f64> {
    cfg.validate_structure()?;
    if horizon_batches < 10 {
        return Err(Error::InvalidPlan("horizon must be at least 10 batches".into()));
    }
    let service = Exp::new(cfg.service_rate).map_err(|_| invalid_rate())?;
    let mut rng = Streams::new(seed, cfg.n);
    let mut state = SimState::new(cfg)?;
    let mut finish = vec![f64::INFINITY; cfg.n];
    let backlog = 2 * cfg.n + cfg.depth() + 2;
    let mut remaining: VecDeque<usize> = VecDeque::new();
    let mut base: BatchId = 0;
    let warmup = horizon_batches / 10;
    let mut completed = 0u64;
    let mut start = 0.0;
    let mut now = 0.0;
    let top_up = |state: &mut SimState,
                  finish: &mut [f64],
                  remaining: &mut VecDeque<usize>,
                  rng: &mut Streams,
                  now: f64| {
        while state.buffer().len() < backlog {
            let eff = state.on_arrival();
            remaining.push_back(cfg.k);
            for &(s, _) in &eff.started {
                finish[s] = now + service.sample(&mut rng.servers[s]);
            }
        }
    };
    top_up(&mut state, &mut finish, &mut remaining, &mut rng, now);
    while completed < horizon_batches {
        let (server, t) = finish
            .iter()
            .enumerate()
            .fold((usize::MAX, f64::INFINITY), |best, (i, &t)| if t < best.1 { (i, t) } else { best });
        if server == usize::MAX {
            return Err(Error::InvalidPlan("no busy server under backlog".into()));
        }
        now = t;
        let eff = state.on_departure(server)?;
        finish[server] = f64::INFINITY;
        let slot = (eff.finished - base) as usize;
        remaining[slot] -= 1;
        if remaining[slot] == 0 {
            completed += 1;
            if completed == warmup {
                start = now;
            }
            while remaining.front() == Some(&0) {
                remaining.pop_front();
                base += 1;
            }
        }
        for &(s, _) in &eff.started {
            finish[s] = now + service.sample(&mut rng.servers[s]);
        }
        top_up(&mut state, &mut finish, &mut remaining, &mut rng, now);
    }
    Ok((completed - warmup) as f64 / (now - start))
}
