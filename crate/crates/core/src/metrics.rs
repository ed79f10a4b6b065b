//! Analytic performance metrics of the bounding chains.
//!
//! Mean batch latency follows a tagged batch from its arrival until its
//! last job enters service, then adds the expected maximum of the
//! residual service times of its jobs. Under MDS-Reservation(t) batches
//! behind the tagged one never affect it, so the tagged chain ignores
//! later arrivals. Under M^k/M/n(t) later arrivals can push the system
//! into its relaxed mode, so they are followed until `t` of them have
//! arrived; after that the system stays relaxed while the tagged batch
//! waits and everything behind it is irrelevant.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::chain::QbdBlocks;
use crate::config::{Policy, SystemConfig};
use crate::dynamics::{self, Outcome, Source};
use crate::error::{Error, Result};
use crate::math::harmonic;
use crate::qbd::{max_throughput, StationaryDistribution};
use crate::simulator::{MetricsReport, ReplicationPlan, Replicator};
use crate::statespace::{decode_state, encode_state, ChainState, FullConfiguration};

/// `P(M > x)` for `x = 0..=x_max`, where `M` is the number of jobs.
pub fn occupancy_ccdf(
    blocks: &QbdBlocks,
    dist: &StationaryDistribution,
    x_max: usize,
) -> Vec<f64> {
    let layout = blocks.layout;
    let all_levels: f64 = dist.levels_from(1).iter().sum();
    let mut out = Vec::with_capacity(x_max + 1);
    let mut level = 0;
    let mut beyond = 0.0;
    let mut current = Vec::new();
    for x in 0..=x_max {
        let p = if x < layout.boundary_max {
            let b: f64 = blocks
                .boundary_states
                .iter()
                .zip(&dist.pi_boundary)
                .filter(|(s, _)| s.m > x)
                .map(|(_, p)| p)
                .sum();
            b + all_levels
        } else {
            let l = layout.level_of(x + 1);
            if l != level {
                level = l;
                current = dist.level(level);
                beyond = dist.levels_from(level + 1).iter().sum();
            }
            let shift = (level - 1) * layout.width;
            let here: f64 = blocks
                .level_states
                .iter()
                .zip(&current)
                .filter(|(s, _)| s.m + shift > x)
                .map(|(_, p)| p)
                .sum();
            here + beyond
        };
        out.push(p.max(0.0));
    }
    out
}

/// Probability that an arriving batch cannot start all of its jobs at
/// once. By PASTA this is the stationary mass of states whose arrival
/// leaves part of the new batch buffered.
pub fn waiting_probability(
    cfg: &SystemConfig,
    blocks: &QbdBlocks,
    dist: &StationaryDistribution,
) -> Result<f64> {
    let waits = |s: &ChainState| -> Result<f64> {
        let conf = decode_state(s, cfg)?;
        Ok(if dynamics::arrival(cfg.policy, &conf).arrival_waits {
            1.0
        } else {
            0.0
        })
    };
    let mut p = 0.0;
    for (s, pi) in blocks.boundary_states.iter().zip(&dist.pi_boundary) {
        p += pi * waits(s)?;
    }
    for (s, pi) in blocks.level_states.iter().zip(dist.levels_from(1)) {
        p += pi * waits(s)?;
    }
    Ok(p)
}

/// Expected latency of a batch arriving to each state, over the boundary
/// and the first `levels` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyProfile {
    /// Pre-arrival states: boundary first, then level by level.
    pub states: Vec<ChainState>,
    pub delays: Vec<f64>,
    pub levels: usize,
    /// Stationary mass of the levels beyond `levels`.
    pub tail_mass: f64,
}

impl LatencyProfile {
    pub fn delay_of(&self, state: &ChainState) -> Option<f64> {
        self.states
            .iter()
            .position(|s| s == state)
            .map(|i| self.delays[i])
    }
}

/// Mean latency and the probability mass left out by truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanLatency {
    pub value: f64,
    pub omitted_mass: f64,
}

/// Computes per-state latencies for every state up to the level where the
/// remaining stationary mass drops below `tail_mass`.
pub fn latency_profile(
    cfg: &SystemConfig,
    blocks: &QbdBlocks,
    dist: &StationaryDistribution,
    tail_mass: f64,
) -> Result<LatencyProfile> {
    cfg.validate()?;
    const MAX_LEVELS: usize = 1_000_000;
    let mut levels = 1;
    let mut pi = dist.pi_level1.clone();
    let mut beyond;
    loop {
        pi = dist.r.left_mul(&pi);
        beyond = dist.tail_operator.left_mul(&pi).iter().sum::<f64>();
        if beyond < tail_mass {
            break;
        }
        levels += 1;
        if levels > MAX_LEVELS {
            return Err(Error::Truncation {
                levels,
                tail: beyond,
            });
        }
    }

    let mut states = blocks.boundary_states.clone();
    for l in 1..=levels {
        states.extend(blocks.level(l));
    }
    let mut chain = TaggedChain::new(cfg);
    let roots: Vec<Node> = states
        .iter()
        .map(|s| chain.root(s))
        .collect::<Result<_>>()?;
    chain.solve()?;
    let delays = roots.iter().map(|n| chain.value(n)).collect();
    Ok(LatencyProfile {
        states,
        delays,
        levels,
        tail_mass: beyond,
    })
}

/// `sum_i pi_i d_i` over the states covered by `profile`.
pub fn mean_latency(profile: &LatencyProfile, dist: &StationaryDistribution) -> MeanLatency {
    let qb = dist.pi_boundary.len();
    let mut value: f64 = dist
        .pi_boundary
        .iter()
        .zip(&profile.delays)
        .map(|(p, d)| p * d)
        .sum();
    let mut pi = dist.pi_level1.clone();
    let ql = pi.len();
    for l in 0..profile.levels {
        if l > 0 {
            pi = dist.r.left_mul(&pi);
        }
        let d = &profile.delays[qb + l * ql..qb + (l + 1) * ql];
        value += pi.iter().zip(d).map(|(p, d)| p * d).sum::<f64>();
    }
    MeanLatency {
        value,
        omitted_mass: profile.tail_mass,
    }
}

/// Fraction of capacity lost by MDS-Reservation(t) for each `n`:
/// `1 - lambda*(n) k / (n mu)`.
pub fn throughput_loss_curve(
    k: usize,
    t: usize,
    n_range: impl IntoIterator<Item = usize>,
    mu: f64,
) -> Result<Vec<(usize, f64)>> {
    n_range
        .into_iter()
        .map(|n| {
            let cfg = SystemConfig {
                n,
                k,
                arrival_rate: 1.0,
                service_rate: mu,
                policy: Policy::Reservation(t),
            };
            let lambda = max_throughput(&cfg)?;
            Ok((n, 1.0 - lambda / cfg.capacity()))
        })
        .collect()
}

/// One arrival rate of a degraded-read comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedReadPoint {
    pub arrival_rate: f64,
    /// MDS(n-1, k) queue: each read decodes from `k` of the `n - 1`
    /// surviving servers. `None` when unstable.
    pub reconstruction: Option<MetricsReport>,
    /// MDS(n-1, d) queue with service rate `mu * speedup`: each read pulls
    /// a smaller piece from `d` helpers. `None` when unstable.
    pub repair: Option<MetricsReport>,
}

/// Inputs of [`degraded_read_compare`].
#[derive(Debug, Clone, PartialEq)]
pub struct DegradedReadSetup {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub service_rate: f64,
    /// Service-rate multiplier of the repair download; `d - k + 1` when
    /// `None`.
    pub repair_speedup: Option<f64>,
    pub arrival_rates: Vec<f64>,
}

impl DegradedReadSetup {
    pub fn speedup(&self) -> f64 {
        self.repair_speedup.unwrap_or((self.d - self.k + 1) as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.k == 0 || self.k > self.d || self.d + 1 > self.n {
            return Err(Error::InvalidConfig(alloc::format!(
                "need 1 <= k <= d <= n - 1, got n = {}, k = {}, d = {}",
                self.n, self.k, self.d
            )));
        }
        let s = self.speedup();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidConfig(alloc::format!("bad repair speedup {s}")));
        }
        Ok(())
    }

    /// Stability limit of the reconstruction queue.
    pub fn reconstruction_limit(&self) -> f64 {
        (self.n - 1) as f64 * self.service_rate / self.k as f64
    }

    /// Stability limit of the repair queue.
    pub fn repair_limit(&self) -> f64 {
        (self.n - 1) as f64 * self.service_rate * self.speedup() / self.d as f64
    }
}

/// Simulates reads of a file whose server has failed, served either by
/// decoding from `k` survivors or by repair downloads from `d` helpers.
pub fn degraded_read_compare(
    setup: &DegradedReadSetup,
    plan: &ReplicationPlan,
    replicator: &impl Replicator,
) -> Result<Vec<DegradedReadPoint>> {
    setup.validate()?;
    let mut out = Vec::with_capacity(setup.arrival_rates.len());
    for &lambda in &setup.arrival_rates {
        let recon = SystemConfig::new(setup.n - 1, setup.k, lambda, setup.service_rate, Policy::Mds)?;
        let repair = SystemConfig::new(
            setup.n - 1,
            setup.d,
            lambda,
            setup.service_rate * setup.speedup(),
            Policy::Mds,
        )?;
        let reconstruction = if lambda < setup.reconstruction_limit() {
            Some(replicator.replicate(&recon, plan)?)
        } else {
            None
        };
        let repair = if lambda < setup.repair_limit() {
            Some(replicator.replicate(&repair, plan)?)
        } else {
            None
        };
        out.push(DegradedReadPoint {
            arrival_rate: lambda,
            reconstruction,
            repair,
        });
    }
    Ok(out)
}

/// Where a tagged-batch transition lands.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    /// The tagged batch has started all its jobs; value is the remaining
    /// expected latency.
    Done(f64),
    /// Relaxed M^k/M/n(t) with at least `t` batches behind the tagged one.
    Locked { ahead: usize, buffered: usize, in_service: usize },
    Open(usize),
}

/// State of the tagged chain while later arrivals still matter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    /// `t - h` where `h` counts batches behind the tagged one. Arrivals
    /// lower it, completions keep it, so sorting by it first and `m`
    /// second gives an order in which every successor comes earlier.
    rank: usize,
    state: ChainState,
    /// Position of the tagged batch among the waiting batches, 1-based.
    position: usize,
    /// Jobs of the tagged batch in service, tracked explicitly while the
    /// system is relaxed.
    relaxed_in_service: Option<usize>,
}

struct TaggedChain<'a> {
    cfg: &'a SystemConfig,
    t: usize,
    arrivals: bool,
    harmonic: Vec<f64>,
    index: BTreeMap<Key, usize>,
    keys: Vec<Key>,
    edges: Vec<Vec<(f64, Node)>>,
    values: Vec<f64>,
    locked: Vec<f64>,
    locked_max_ahead: usize,
}

impl<'a> TaggedChain<'a> {
    fn new(cfg: &'a SystemConfig) -> Self {
        let mu = cfg.service_rate;
        TaggedChain {
            cfg,
            t: cfg.depth(),
            arrivals: matches!(cfg.policy, Policy::MkMn(_)),
            harmonic: (0..=cfg.k).map(|s| harmonic(s) / mu).collect(),
            index: BTreeMap::new(),
            keys: Vec::new(),
            edges: Vec::new(),
            values: Vec::new(),
            locked: Vec::new(),
            locked_max_ahead: 0,
        }
    }

    /// Node reached when the tagged batch arrives to `state`.
    fn root(&mut self, state: &ChainState) -> Result<Node> {
        let conf = decode_state(state, self.cfg)?;
        let o = dynamics::arrival(self.cfg.policy, &conf);
        if !o.arrival_waits {
            return Ok(Node::Done(self.harmonic[self.cfg.k]));
        }
        let position = o.next.waiting_batches();
        let s = o.started_at(conf.waiting_batches());
        self.place(&o.next, position, s, 0)
    }

    /// Classifies a configuration with the tagged batch at `position`.
    fn place(
        &mut self,
        conf: &FullConfiguration,
        position: usize,
        in_service: usize,
        behind: usize,
    ) -> Result<Node> {
        let relaxed = dynamics::is_relaxed(self.cfg.policy, conf);
        if relaxed && behind >= self.t {
            let ahead = conf.buffered_before(position - 1);
            self.locked_max_ahead = self.locked_max_ahead.max(ahead);
            return Ok(Node::Locked {
                ahead,
                buffered: conf.batch(position - 1).map_or(0, |b| b.buffered),
                in_service,
            });
        }
        let key = Key {
            rank: self.t.saturating_sub(behind),
            state: encode_state(conf, self.t),
            position,
            relaxed_in_service: relaxed.then_some(in_service),
        };
        Ok(Node::Open(self.intern(key)))
    }

    fn intern(&mut self, key: Key) -> usize {
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.keys.len();
        self.index.insert(key.clone(), id);
        self.keys.push(key);
        self.edges.push(Vec::new());
        id
    }

    /// Follows the tagged batch through one event.
    fn follow(
        &mut self,
        o: &Outcome,
        position: usize,
        in_service: usize,
        behind: usize,
    ) -> Result<Node> {
        let s = in_service + o.started_at(position - 1);
        if position == 1 && o.cleared_front.is_some() {
            return Ok(Node::Done(self.harmonic[s]));
        }
        let position = position - usize::from(o.cleared_front.is_some());
        self.place(&o.next, position, s, behind)
    }

    fn expand(&mut self, id: usize) -> Result<()> {
        let key = self.keys[id].clone();
        let mut conf = decode_state(&key.state, self.cfg)?;
        let p = key.position;
        let behind = conf.waiting_batches() - p;
        let relaxed = dynamics::is_relaxed(self.cfg.policy, &conf);
        let classes = match key.relaxed_in_service {
            Some(s) => {
                conf.clear_in_service();
                conf.batch_mut(p - 1).in_service = s;
                let mut c = Vec::new();
                if s > 0 {
                    c.push((Source::Waiting(p - 1), s));
                }
                if conf.busy() > s {
                    c.push((Source::Other, conf.busy() - s));
                }
                c
            }
            None => dynamics::completion_classes(self.cfg.policy, &conf),
        };
        debug_assert_eq!(relaxed, key.relaxed_in_service.is_some());
        let tagged_s = conf.batch(p - 1).map_or(0, |b| b.in_service);
        let (lambda, mu) = (self.cfg.arrival_rate, self.cfg.service_rate);
        let mut edges = Vec::new();
        if self.arrivals && behind < self.t {
            let o = dynamics::arrival(self.cfg.policy, &conf);
            edges.push((lambda, self.follow(&o, p, tagged_s, behind + 1)?));
        }
        for (source, mult) in classes {
            let o = dynamics::completion(self.cfg.policy, &conf, source);
            let own = usize::from(source == Source::Waiting(p - 1));
            edges.push((mult as f64 * mu, self.follow(&o, p, tagged_s - own, behind)?));
        }
        self.edges[id] = edges;
        Ok(())
    }

    fn solve(&mut self) -> Result<()> {
        let mut next = 0;
        while next < self.keys.len() {
            self.expand(next)?;
            next += 1;
        }
        self.solve_locked();
        let mut order: Vec<usize> = (0..self.keys.len()).collect();
        order.sort_by(|&a, &b| self.keys[a].cmp(&self.keys[b]));
        self.values = vec![f64::NAN; self.keys.len()];
        for id in order {
            let mut total = 0.0;
            let mut acc = 1.0;
            for &(rate, node) in &self.edges[id] {
                let v = self.value(&node);
                debug_assert!(v.is_finite(), "successor evaluated out of order");
                total += rate;
                acc += rate * v;
            }
            self.values[id] = acc / total;
        }
        Ok(())
    }

    fn locked_index(&self, ahead: usize, buffered: usize, in_service: usize) -> usize {
        let k1 = self.cfg.k + 1;
        (ahead * k1 + buffered) * k1 + in_service
    }

    /// Relaxed system, no later arrival matters: every completion starts
    /// the next buffered job in FIFO order, all `n` servers busy.
    fn solve_locked(&mut self) {
        let (n, k) = (self.cfg.n, self.cfg.k);
        let mu = self.cfg.service_rate;
        let k1 = k + 1;
        self.locked = vec![f64::NAN; (self.locked_max_ahead + 1) * k1 * k1];
        let max_total = self.locked_max_ahead + k;
        for total in 1..=max_total {
            for buffered in 1..=k.min(total) {
                let ahead = total - buffered;
                if ahead > self.locked_max_ahead {
                    continue;
                }
                for s in 0..=k - buffered {
                    // Completion of a tagged job, then of any other job.
                    let mut acc = 1.0;
                    if s > 0 {
                        acc += s as f64 * mu * self.advance(ahead, buffered, s - 1);
                    }
                    acc += (n - s) as f64 * mu * self.advance(ahead, buffered, s);
                    let i = self.locked_index(ahead, buffered, s);
                    self.locked[i] = acc / (n as f64 * mu);
                }
            }
        }
    }

    /// The freed server takes the head job of the buffer.
    fn advance(&self, ahead: usize, buffered: usize, s: usize) -> f64 {
        if ahead > 0 {
            self.locked[self.locked_index(ahead - 1, buffered, s)]
        } else if buffered == 1 {
            self.harmonic[s + 1]
        } else {
            self.locked[self.locked_index(0, buffered - 1, s + 1)]
        }
    }

    fn value(&self, node: &Node) -> f64 {
        match *node {
            Node::Done(v) => v,
            Node::Open(id) => self.values[id],
            Node::Locked {
                ahead,
                buffered,
                in_service,
            } => self.locked[self.locked_index(ahead, buffered, in_service)],
        }
    }
}
