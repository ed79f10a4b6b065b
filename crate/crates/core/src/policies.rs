//! Job-level scheduling for every policy, as used by the simulator.
//!
//! [`SimState`] tracks which server runs which batch and, for each waiting
//! batch, which servers have already served one of its jobs. Ties are
//! broken deterministically: idle servers are taken in increasing index
//! order and buffered jobs of a batch are interchangeable.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::{Policy, SystemConfig};
use crate::error::{Error, Result};
use crate::statespace::ChainState;

/// Monotone batch identifier, counting arrivals from 0.
pub type BatchId = u64;

/// Fixed-size set of server indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ServerSet {
    words: Vec<u64>,
}

impl ServerSet {
    pub fn new(n: usize) -> Self {
        ServerSet {
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }
}

/// A batch with jobs still in the buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaitingBatch {
    pub id: BatchId,
    pub buffered: usize,
    /// Servers that have started a job of this batch.
    pub served_by: ServerSet,
}

/// Counters for rule checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Audit {
    /// A server started a second job of the same batch under a policy
    /// that forbids it. Always zero unless there is a bug.
    pub distinct_violations: u64,
    /// Second jobs of the same batch started while M^k/M/n(t) was relaxed.
    pub relaxed_reuses: u64,
}

/// Effect of a batch arrival.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalEffect {
    pub batch: BatchId,
    /// Every job started by the event, as (server, batch).
    pub started: Vec<(usize, BatchId)>,
    /// Some job of the new batch had to be buffered.
    pub waits: bool,
}

/// Effect of a job completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepartureEffect {
    /// Batch whose job just finished.
    pub finished: BatchId,
    pub started: Vec<(usize, BatchId)>,
}

/// Servers, buffer and served-sets of a running system.
#[derive(Debug, Clone)]
pub struct SimState {
    n: usize,
    k: usize,
    policy: Policy,
    servers: Vec<Option<BatchId>>,
    buffer: VecDeque<WaitingBatch>,
    next_id: BatchId,
    audit: Audit,
}

impl SimState {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.validate_structure()?;
        Ok(SimState {
            n: cfg.n,
            k: cfg.k,
            policy: cfg.policy,
            servers: vec![None; cfg.n],
            buffer: VecDeque::new(),
            next_id: 0,
            audit: Audit::default(),
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// Batch served by server `i`, if busy.
    pub fn server(&self, i: usize) -> Option<BatchId> {
        self.servers[i]
    }

    pub fn idle_servers(&self) -> usize {
        self.servers.iter().filter(|s| s.is_none()).count()
    }

    pub fn buffer(&self) -> &VecDeque<WaitingBatch> {
        &self.buffer
    }

    pub fn buffered_jobs(&self) -> usize {
        self.buffer.iter().map(|b| b.buffered).sum()
    }

    /// Jobs in the system, buffered or in service.
    pub fn jobs_in_system(&self) -> usize {
        self.n - self.idle_servers() + self.buffered_jobs()
    }

    /// Servers currently running a job of batch `id`.
    pub fn in_service_of(&self, id: BatchId) -> usize {
        self.servers.iter().filter(|s| **s == Some(id)).count()
    }

    pub fn audit(&self) -> Audit {
        self.audit
    }

    /// Compressed chain state `(w_1..w_t, m)` for the bounding policies.
    pub fn chain_state(&self) -> Option<ChainState> {
        let t = self.policy.depth()?;
        let mut w: Vec<usize> = self.buffer.iter().take(t).map(|b| b.buffered).collect();
        w.resize(t, 0);
        Some(ChainState::new(w, self.jobs_in_system()))
    }

    fn relaxed(&self) -> bool {
        matches!(self.policy, Policy::MkMn(t) if self.buffer.len() > t)
    }

    fn idle(&self) -> impl Iterator<Item = usize> + '_ {
        self.servers
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i)
    }

    /// Starts one job of the buffered batch at `pos` on idle server `s`.
    fn start_buffered(&mut self, pos: usize, s: usize, started: &mut Vec<(usize, BatchId)>) {
        let relaxed = self.relaxed();
        let batch = &mut self.buffer[pos];
        debug_assert!(batch.buffered > 0 && self.servers[s].is_none());
        if batch.served_by.contains(s) {
            if relaxed {
                self.audit.relaxed_reuses += 1;
            } else {
                self.audit.distinct_violations += 1;
            }
        }
        batch.served_by.insert(s);
        batch.buffered -= 1;
        self.servers[s] = Some(batch.id);
        started.push((s, batch.id));
        if batch.buffered == 0 {
            self.buffer.remove(pos);
        }
    }

    /// Hands up to `k` jobs of a new batch to idle servers, lowest index
    /// first, and buffers the rest.
    fn admit(&mut self, id: BatchId, started: &mut Vec<(usize, BatchId)>) -> bool {
        let mut served_by = ServerSet::new(self.n);
        let mut left = self.k;
        let idle: Vec<usize> = self.idle().take(self.k).collect();
        for s in idle {
            served_by.insert(s);
            self.servers[s] = Some(id);
            started.push((s, id));
            left -= 1;
        }
        if left > 0 {
            self.buffer.push_back(WaitingBatch {
                id,
                buffered: left,
                served_by,
            });
        }
        left > 0
    }

    fn buffer_whole(&mut self, id: BatchId) -> bool {
        self.buffer.push_back(WaitingBatch {
            id,
            buffered: self.k,
            served_by: ServerSet::new(self.n),
        });
        true
    }

    /// Handles a batch arrival.
    pub fn on_arrival(&mut self) -> ArrivalEffect {
        let id = self.next_id;
        self.next_id += 1;
        let mut started = Vec::new();
        let b = self.buffer.len();
        let waits = match self.policy {
            Policy::Mds => self.admit(id, &mut started),
            Policy::Reservation(0) => {
                if self.idle_servers() >= self.k {
                    self.admit(id, &mut started)
                } else {
                    self.buffer_whole(id)
                }
            }
            Policy::Reservation(t) => {
                if b < t {
                    self.admit(id, &mut started)
                } else {
                    self.buffer_whole(id)
                }
            }
            Policy::MkMn(t) => {
                if b < t {
                    self.admit(id, &mut started)
                } else if b == t {
                    // The newcomer will relax the system: idle servers
                    // first finish the head batch, ignoring the
                    // distinct-server rule.
                    if b > 0 {
                        let head = self.buffer[0].id;
                        let idle: Vec<usize> = self.idle().collect();
                        for s in idle {
                            if self.buffer.front().map(|f| f.id) != Some(head) {
                                break;
                            }
                            let batch = &mut self.buffer[0];
                            if batch.served_by.contains(s) {
                                self.audit.relaxed_reuses += 1;
                            }
                            batch.served_by.insert(s);
                            batch.buffered -= 1;
                            self.servers[s] = Some(head);
                            started.push((s, head));
                            if batch.buffered == 0 {
                                self.buffer.pop_front();
                            }
                        }
                    }
                    if self.buffer.len() < b || b == 0 {
                        self.admit(id, &mut started)
                    } else {
                        self.buffer_whole(id)
                    }
                } else {
                    self.buffer_whole(id)
                }
            }
        };
        ArrivalEffect {
            batch: id,
            started,
            waits,
        }
    }

    /// Handles a job completion at server `s`.
    pub fn on_departure(&mut self, s: usize) -> Result<DepartureEffect> {
        let finished = self
            .servers
            .get(s)
            .copied()
            .flatten()
            .ok_or(Error::ServerIdle(s))?;
        self.servers[s] = None;
        let mut started = Vec::new();
        let b = self.buffer.len();
        match self.policy {
            Policy::Mds => {
                if let Some(pos) = self.first_eligible(s, b) {
                    self.start_buffered(pos, s, &mut started);
                }
            }
            Policy::Reservation(0) => {
                if b > 0 && self.idle_servers() >= self.k {
                    let idle: Vec<usize> = self.idle().take(self.k).collect();
                    for i in idle {
                        self.start_buffered(0, i, &mut started);
                    }
                }
            }
            Policy::Reservation(t) => {
                if let Some(pos) = self.first_eligible(s, t.min(b)) {
                    let flush = pos == 0 && b > t && self.buffer[0].buffered == 1;
                    self.start_buffered(pos, s, &mut started);
                    if flush {
                        // Batch t + 1 just entered the window: every idle
                        // server may start one of its jobs.
                        let idle: Vec<usize> = self.idle().collect();
                        for i in idle {
                            if self.buffer[t - 1].buffered == 0 {
                                break;
                            }
                            self.start_buffered(t - 1, i, &mut started);
                        }
                    }
                }
            }
            Policy::MkMn(t) => {
                if b > t {
                    self.start_buffered(0, s, &mut started);
                } else if let Some(pos) = self.first_eligible(s, b) {
                    self.start_buffered(pos, s, &mut started);
                }
            }
        }
        Ok(DepartureEffect { finished, started })
    }

    /// Earliest of the first `limit` waiting batches that server `s` has
    /// not served.
    fn first_eligible(&self, s: usize, limit: usize) -> Option<usize> {
        self.buffer
            .iter()
            .take(limit)
            .position(|b| !b.served_by.contains(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(n: usize, k: usize, policy: Policy) -> SimState {
        SimState::new(&SystemConfig::new(n, k, 1.0, 1.0, policy).unwrap()).unwrap()
    }

    #[test]
    fn server_set() {
        let mut s = ServerSet::new(130);
        assert!(s.is_empty());
        s.insert(0);
        s.insert(129);
        assert!(s.contains(129) && s.contains(0) && !s.contains(64));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn mds_serves_in_order_on_distinct_servers() {
        let mut st = state(4, 2, Policy::Mds);
        let a = st.on_arrival();
        assert_eq!(a.started, vec![(0, 0), (1, 0)]);
        let b = st.on_arrival();
        assert_eq!(b.started, vec![(2, 1), (3, 1)]);
        let c = st.on_arrival();
        assert!(c.waits && c.started.is_empty());
        let d = st.on_departure(0).unwrap();
        assert_eq!(d.finished, 0);
        assert_eq!(d.started, vec![(0, 2)]);
        // Server 0 has served batch 2 and must stay idle.
        let d = st.on_arrival();
        assert!(d.waits);
        let e = st.on_departure(0).unwrap();
        assert_eq!(e.started, vec![(0, 3)]);
        assert_eq!(st.audit(), Audit::default());
    }

    #[test]
    fn idle_departure_is_an_error() {
        let mut st = state(3, 2, Policy::Mds);
        assert_eq!(st.on_departure(1), Err(Error::ServerIdle(1)));
        assert_eq!(st.on_departure(7), Err(Error::ServerIdle(7)));
    }

    #[test]
    fn reservation0_starts_whole_batches() {
        let mut st = state(4, 2, Policy::Reservation(0));
        st.on_arrival();
        st.on_arrival();
        assert!(st.on_arrival().waits);
        assert!(st.on_departure(0).unwrap().started.is_empty());
        let d = st.on_departure(1).unwrap();
        assert_eq!(d.started, vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn mkmn_relaxes_beyond_t() {
        let mut st = state(2, 2, Policy::MkMn(0));
        st.on_arrival();
        st.on_arrival();
        let d = st.on_departure(0).unwrap();
        assert_eq!(d.started, vec![(0, 1)]);
        let d = st.on_departure(0).unwrap();
        assert_eq!(d.finished, 1);
        assert_eq!(d.started, vec![(0, 1)]);
        assert_eq!(st.audit().relaxed_reuses, 1);
    }
}
