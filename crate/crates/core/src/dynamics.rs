//! Event semantics on decoded configurations.
//!
//! The chain builder, the waiting-probability predicate and the tagged
//! batch chain all step a [`FullConfiguration`] through arrivals and job
//! completions with the functions here, so the policies are written down
//! once.

use alloc::vec::Vec;

use crate::config::Policy;
use crate::statespace::{BatchState, FullConfiguration};

/// Which kind of busy server finishes a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Source {
    /// A server working on a job of the waiting batch at this position.
    Waiting(usize),
    /// A server working on a batch that has left the buffer.
    Other,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub next: FullConfiguration,
    /// Jobs started per batch, keyed by the batch position before the
    /// event. For arrivals the new batch has position `b`.
    pub started: Vec<(usize, usize)>,
    /// The head batch started its last job and left the buffer; the value
    /// is that batch right after the start.
    pub cleared_front: Option<BatchState>,
    /// For arrivals: the new batch still has buffered jobs.
    pub arrival_waits: bool,
}

impl Outcome {
    pub fn started_at(&self, pos: usize) -> usize {
        self.started
            .iter()
            .filter(|(p, _)| *p == pos)
            .map(|(_, c)| c)
            .sum()
    }
}

/// Whether M^k/M/n(t) has dropped the distinct-server rule.
pub(crate) fn is_relaxed(policy: Policy, conf: &FullConfiguration) -> bool {
    matches!(policy, Policy::MkMn(t) if conf.waiting_batches() > t)
}

struct Step {
    conf: FullConfiguration,
    started: Vec<(usize, usize)>,
    cleared_front: Option<BatchState>,
}

impl Step {
    fn new(conf: &FullConfiguration) -> Self {
        Step {
            conf: conf.clone(),
            started: Vec::new(),
            cleared_front: None,
        }
    }

    /// Starts one buffered job of batch `i` on a server that just freed up.
    /// `key` is the position reported in `started`.
    fn start_one(&mut self, i: usize, key: usize) {
        self.start(i, key, 1);
    }

    fn start(&mut self, i: usize, key: usize, count: usize) {
        if count == 0 {
            return;
        }
        let batch = self.conf.batch_mut(i);
        debug_assert!(batch.buffered >= count);
        batch.buffered -= count;
        batch.in_service += count;
        self.started.push((key, count));
        if batch.buffered == 0 {
            let done = self.conf.remove(i);
            debug_assert_eq!(i, 0, "only the head batch can leave the buffer");
            if i == 0 {
                self.cleared_front = Some(done);
            }
        }
    }

    /// Gives up to `k` idle servers to a new batch and buffers the rest.
    fn admit(&mut self, key: usize) -> bool {
        let k = self.conf.k;
        let x = self.conf.z.min(k);
        self.conf.z -= x;
        if x > 0 {
            self.started.push((key, x));
        }
        if x < k {
            self.conf.push_back(BatchState {
                buffered: k - x,
                in_service: x,
            });
            true
        } else {
            false
        }
    }

    fn buffer_whole(&mut self) -> bool {
        let k = self.conf.k;
        self.conf.push_back(BatchState {
            buffered: k,
            in_service: 0,
        });
        true
    }

    fn finish(mut self, arrival_waits: bool) -> Outcome {
        self.conf.canonicalize();
        debug_assert!(self.conf.is_consistent(), "{:?}", self.conf);
        Outcome {
            next: self.conf,
            started: self.started,
            cleared_front: self.cleared_front,
            arrival_waits,
        }
    }
}

/// Applies a batch arrival.
pub(crate) fn arrival(policy: Policy, conf: &FullConfiguration) -> Outcome {
    let mut step = Step::new(conf);
    step.conf.m += conf.k;
    let b = conf.waiting_batches();
    let waits = match policy {
        Policy::Reservation(0) => {
            if b == 0 && conf.z >= conf.k {
                step.admit(b)
            } else {
                step.buffer_whole()
            }
        }
        Policy::Reservation(t) => {
            if b < t {
                step.admit(b)
            } else {
                step.buffer_whole()
            }
        }
        Policy::MkMn(t) => {
            if b < t {
                step.admit(b)
            } else if b == t {
                // The system is about to relax: idle servers first finish
                // off the head batch, then turn to the newcomer.
                let mut head_gone = b == 0;
                if b > 0 {
                    let x = step.conf.z.min(step.conf.batch(0).map_or(0, |h| h.buffered));
                    step.conf.z -= x;
                    step.start(0, 0, x);
                    head_gone = step.cleared_front.is_some();
                }
                if head_gone {
                    step.admit(b)
                } else {
                    step.buffer_whole()
                }
            } else {
                step.buffer_whole()
            }
        }
        Policy::Mds => unreachable!("the MDS queue has no compressed dynamics"),
    };
    step.finish(waits)
}

/// Busy-server classes with their multiplicities. Each class completes a
/// job at rate `multiplicity * mu`.
pub(crate) fn completion_classes(policy: Policy, conf: &FullConfiguration) -> Vec<(Source, usize)> {
    let busy = conf.busy();
    if is_relaxed(policy, conf) {
        return if busy > 0 {
            alloc::vec![(Source::Other, busy)]
        } else {
            Vec::new()
        };
    }
    // Untouched batches only sit at the back, so the explicit list covers
    // every batch with jobs in service.
    let mut out: Vec<(Source, usize)> = conf
        .explicit_batches()
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, b)| b.in_service > 0)
        .map(|(i, b)| (Source::Waiting(i), b.in_service))
        .collect();
    let others = conf.other_in_service();
    if others > 0 {
        out.push((Source::Other, others));
    }
    out
}

/// Applies a job completion by a server of class `source`.
pub(crate) fn completion(policy: Policy, conf: &FullConfiguration, source: Source) -> Outcome {
    let mut step = Step::new(conf);
    step.conf.m -= 1;
    let b = conf.waiting_batches();
    if let Source::Waiting(i) = source {
        let batch = step.conf.batch_mut(i);
        debug_assert!(batch.in_service > 0);
        batch.in_service = batch.in_service.saturating_sub(1);
    }

    if is_relaxed(policy, conf) {
        step.start_one(0, 0);
        return step.finish(false);
    }

    match (policy, source) {
        (Policy::Reservation(0), _) => {
            step.conf.z += 1;
            if b > 0 && step.conf.z >= conf.k {
                step.conf.z -= conf.k;
                step.start(0, 0, conf.k);
            }
        }
        (Policy::Reservation(t), Source::Waiting(i)) => {
            // The server has served batches up to i and may move on to
            // i + 1 only if that batch is within the reserved window.
            if i + 1 < b && i + 1 < t {
                step.start_one(i + 1, i + 1);
            } else {
                step.conf.z += 1;
            }
        }
        (Policy::Reservation(t), Source::Other) => {
            if b == 0 {
                step.conf.z += 1;
            } else {
                let flush = b > t && conf.batch(0).is_some_and(|h| h.buffered == 1);
                step.start_one(0, 0);
                if flush {
                    // Batch t + 1 enters the window and takes every idle
                    // server; none of them has served it.
                    let x = step.conf.z.min(step.conf.batch(t - 1).map_or(0, |h| h.buffered));
                    step.conf.z -= x;
                    step.start(t - 1, t, x);
                }
            }
        }
        (Policy::MkMn(_), Source::Waiting(i)) => {
            if i + 1 < b {
                step.start_one(i + 1, i + 1);
            } else {
                step.conf.z += 1;
            }
        }
        (Policy::MkMn(_), Source::Other) => {
            if b == 0 {
                step.conf.z += 1;
            } else {
                step.start_one(0, 0);
            }
        }
        (Policy::Mds, _) => unreachable!("the MDS queue has no compressed dynamics"),
    }
    step.finish(false)
}
