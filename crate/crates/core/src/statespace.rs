//! Compressed chain states and their decoding into full configurations.
//!
//! A chain state keeps only the total number of jobs `m` and the buffered
//! job counts `w_1..w_t` of the first `t` waiting batches. Everything else
//! (idle servers, how many jobs of each batch are in service, how many
//! full batches wait behind the tracked ones) follows from the policy
//! structure and is recovered by [`decode_state`].

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::ops::RangeInclusive;

use crate::config::{Policy, SystemConfig};
use crate::error::{Error, Result};
use crate::math::ceil_div;

/// Compressed state `(w_1, ..., w_t, m)`.
///
/// Ordered by `m` first and then lexicographically by `w`, which is the
/// canonical order inside every QBD block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainState {
    /// Jobs in the system, buffered or in service.
    pub m: usize,
    /// Buffered jobs of the first `t` waiting batches, zero-padded.
    pub w: Vec<usize>,
}

impl ChainState {
    pub fn new(w: Vec<usize>, m: usize) -> Self {
        ChainState { m, w }
    }

    /// Number of tracked batches that are actually waiting.
    pub fn tracked_waiting(&self) -> usize {
        self.w.iter().take_while(|&&w| w > 0).count()
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for w in &self.w {
            write!(f, "{w}, ")?;
        }
        write!(f, "{})", self.m)
    }
}

/// A waiting batch: jobs still in the buffer and jobs of it in service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BatchState {
    pub buffered: usize,
    pub in_service: usize,
}

/// Full picture behind a compressed state.
///
/// Waiting batches are stored as a list of explicit leading batches
/// followed by `full_tail` batches that have not started any job. The
/// representation is canonical: the explicit list never ends with an
/// untouched full batch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FullConfiguration {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    /// Idle servers.
    pub z: usize,
    explicit: Vec<BatchState>,
    full_tail: usize,
}

impl FullConfiguration {
    pub(crate) fn from_parts(
        n: usize,
        k: usize,
        m: usize,
        z: usize,
        explicit: Vec<BatchState>,
        full_tail: usize,
    ) -> Self {
        let mut c = FullConfiguration {
            n,
            k,
            m,
            z,
            explicit,
            full_tail,
        };
        c.canonicalize();
        c
    }

    /// Number of waiting batches `b`.
    pub fn waiting_batches(&self) -> usize {
        self.explicit.len() + self.full_tail
    }

    /// The `i`-th waiting batch (0-based), if any.
    pub fn batch(&self, i: usize) -> Option<BatchState> {
        if i < self.explicit.len() {
            Some(self.explicit[i])
        } else if i < self.waiting_batches() {
            Some(self.untouched())
        } else {
            None
        }
    }

    /// All waiting batches in arrival order.
    pub fn batches(&self) -> impl Iterator<Item = BatchState> + '_ {
        let full = self.untouched();
        self.explicit
            .iter()
            .copied()
            .chain(core::iter::repeat_n(full, self.full_tail))
    }

    /// Busy servers.
    pub fn busy(&self) -> usize {
        self.n - self.z
    }

    /// Busy servers working on jobs of batches that are no longer waiting.
    pub fn other_in_service(&self) -> usize {
        let tracked: usize = self.explicit.iter().map(|b| b.in_service).sum();
        self.busy() - tracked
    }

    /// Buffered jobs across all waiting batches.
    pub fn buffered_jobs(&self) -> usize {
        self.explicit.iter().map(|b| b.buffered).sum::<usize>() + self.full_tail * self.k
    }

    /// Buffered jobs of the batches strictly before position `p`.
    pub fn buffered_before(&self, p: usize) -> usize {
        self.batches().take(p).map(|b| b.buffered).sum()
    }

    pub(crate) fn explicit_batches(&self) -> &[BatchState] {
        &self.explicit
    }

    pub(crate) fn clear_in_service(&mut self) {
        for b in &mut self.explicit {
            b.in_service = 0;
        }
    }

    fn untouched(&self) -> BatchState {
        BatchState {
            buffered: self.k,
            in_service: 0,
        }
    }

    pub(crate) fn batch_mut(&mut self, i: usize) -> &mut BatchState {
        debug_assert!(i < self.waiting_batches());
        while self.explicit.len() <= i {
            self.full_tail -= 1;
            let full = self.untouched();
            self.explicit.push(full);
        }
        &mut self.explicit[i]
    }

    pub(crate) fn remove(&mut self, i: usize) -> BatchState {
        self.batch_mut(i);
        self.explicit.remove(i)
    }

    pub(crate) fn push_back(&mut self, batch: BatchState) {
        if batch == self.untouched() {
            self.full_tail += 1;
        } else {
            let full = self.untouched();
            self.explicit
                .extend(core::iter::repeat_n(full, self.full_tail));
            self.full_tail = 0;
            self.explicit.push(batch);
        }
    }

    pub(crate) fn canonicalize(&mut self) {
        let full = self.untouched();
        while self.explicit.last() == Some(&full) {
            self.explicit.pop();
            self.full_tail += 1;
        }
    }

    /// Checks the counting invariants shared by every policy.
    pub fn is_consistent(&self) -> bool {
        let tracked: usize = self.explicit.iter().map(|b| b.in_service).sum();
        self.z <= self.n
            && tracked <= self.busy()
            && self
                .batches()
                .all(|b| b.buffered >= 1 && b.buffered + b.in_service <= self.k)
            && self.m == self.busy() + self.buffered_jobs()
    }
}

/// Range of `m` values making up the boundary and each level of the QBD.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelLayout {
    /// Largest `m` in the boundary block.
    pub boundary_max: usize,
    /// Number of `m` values per level, equal to `k`.
    pub width: usize,
}

impl LevelLayout {
    pub fn for_config(cfg: &SystemConfig) -> Result<Self> {
        let (n, k) = (cfg.n, cfg.k);
        let boundary_max = match cfg.policy {
            Policy::Reservation(t) => n - k + t * k,
            Policy::MkMn(t) => n + t * k,
            Policy::Mds => return Err(Error::NoChain(cfg.policy)),
        };
        Ok(LevelLayout {
            boundary_max,
            width: k,
        })
    }

    /// Level holding `m`; 0 is the boundary.
    pub fn level_of(&self, m: usize) -> usize {
        if m <= self.boundary_max {
            0
        } else {
            ceil_div(m - self.boundary_max, self.width)
        }
    }

    /// `m` values of level `level >= 1`.
    pub fn level_range(&self, level: usize) -> RangeInclusive<usize> {
        debug_assert!(level >= 1);
        let lo = self.boundary_max + (level - 1) * self.width + 1;
        lo..=lo + self.width - 1
    }

    /// Largest `m` covered by the boundary and the first `levels` levels.
    pub fn max_m(&self, levels: usize) -> usize {
        self.boundary_max + levels * self.width
    }
}

/// Number of busy servers in state `m` of MDS-Reservation(0).
///
/// Batches start whole, so once the buffer is non-empty fewer than `k`
/// servers are idle and the busy count is pinned by `m mod k`.
pub fn reservation0_service_count(m: usize, cfg: &SystemConfig) -> usize {
    let (n, k) = (cfg.n, cfg.k);
    if m <= n {
        m
    } else {
        let r = (n as i64 - m as i64).rem_euclid(k as i64) as usize;
        n - r
    }
}

/// Recovers the full configuration behind `state`.
///
/// Fails with [`Error::UnreachableState`] when the state violates the
/// structure the policy maintains.
pub fn decode_state(state: &ChainState, cfg: &SystemConfig) -> Result<FullConfiguration> {
    let (n, k, m) = (cfg.n, cfg.k, state.m);
    let (t, relaxed) = match cfg.policy {
        Policy::Reservation(t) => (t, false),
        Policy::MkMn(t) => (t, true),
        Policy::Mds => return Err(Error::NoChain(cfg.policy)),
    };
    let bad = |why: &str| Error::UnreachableState(format!("{state}: {why}"));
    if state.w.len() != t {
        return Err(bad("wrong number of tracked batches"));
    }
    if relaxed && t == 0 {
        // Jobs beyond the n servers fill whole batches from the back; the
        // head batch holds the remainder.
        if m <= n {
            return Ok(FullConfiguration::from_parts(n, k, m, n - m, Vec::new(), 0));
        }
        let excess = m - n;
        let b = ceil_div(excess, k);
        let head = excess - (b - 1) * k;
        let first = BatchState {
            buffered: head,
            in_service: k - head,
        };
        return Ok(FullConfiguration::from_parts(
            n,
            k,
            m,
            0,
            alloc::vec![first],
            b - 1,
        ));
    }

    let q = state.tracked_waiting();
    if state.w[q..].iter().any(|&w| w != 0) {
        return Err(bad("a tracked batch follows an empty slot"));
    }
    let w = &state.w[..q];
    if w.iter().any(|&x| x > k) || w.windows(2).any(|p| p[0] > p[1]) {
        return Err(bad("buffered counts must be non-decreasing and at most k"));
    }
    let sum: usize = w.iter().sum();
    if sum > m {
        return Err(bad("more buffered jobs than jobs"));
    }
    let d = m - sum;
    let j = if d > n { ceil_div(d - n, k) } else { 0 };
    let z = n + j * k - d;
    if j > 0 && q < t {
        return Err(bad("untracked batches behind a free tracking slot"));
    }
    if j > 0 && relaxed && z != 0 {
        return Err(bad("idle servers while the buffer is relaxed"));
    }
    let mut explicit = Vec::with_capacity(q);
    for i in 0..q {
        let s = if i + 1 < q {
            w[i + 1] - w[i]
        } else {
            match k.checked_sub(z + w[i]) {
                Some(s) => s,
                None => return Err(bad("idle servers could take buffered jobs")),
            }
        };
        explicit.push(BatchState {
            buffered: w[i],
            in_service: s,
        });
    }
    Ok(FullConfiguration::from_parts(n, k, m, z, explicit, j))
}

/// Compresses a full configuration into the chain state of depth `t`.
pub fn encode_state(conf: &FullConfiguration, t: usize) -> ChainState {
    let mut w: Vec<usize> = conf.batches().take(t).map(|b| b.buffered).collect();
    w.resize(t, 0);
    ChainState::new(w, conf.m)
}

/// All vectors `w` of length `t` with a non-decreasing prefix of values in
/// `1..=k` followed by zeros, in lexicographic order.
pub fn tracked_patterns(t: usize, k: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, t: usize, k: usize, out: &mut Vec<Vec<usize>>) {
        let mut done = prefix.clone();
        done.resize(t, 0);
        out.push(done);
        if prefix.len() == t {
            return;
        }
        let lo = prefix.last().copied().unwrap_or(1);
        for v in lo..=k {
            prefix.push(v);
            extend(prefix, t, k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), t, k, &mut out);
    out.sort();
    out
}

/// Every decodable state in the boundary and the first `level_limit`
/// levels, in canonical order.
pub fn enumerate_states(cfg: &SystemConfig, level_limit: usize) -> Result<Vec<ChainState>> {
    cfg.validate_structure()?;
    let layout = LevelLayout::for_config(cfg)?;
    let patterns = tracked_patterns(cfg.depth(), cfg.k);
    let mut out = Vec::new();
    for m in 0..=layout.max_m(level_limit) {
        for w in &patterns {
            let s = ChainState::new(w.clone(), m);
            if decode_state(&s, cfg).is_ok() {
                out.push(s);
            }
        }
    }
    Ok(out)
}
