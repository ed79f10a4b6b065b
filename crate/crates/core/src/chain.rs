//! Quasi-birth-death generator blocks for the bounding policies.
//!
//! Level `j` of the chain groups the `k` values of `m` just above the
//! boundary plus `(j - 1) k`. Arrivals move one level up, completions at
//! most one level down, and from level 1 on the transition rates only
//! depend on the position inside the level. The generator therefore has
//! the block form
//!
//! ```text
//!     | B1  B2             |
//!     | B0  A1  A2         |
//! Q = |     A0  A1  A2     |
//!     |         A0  A1  .. |
//! ```
//!
//! with `B0: level 1 -> boundary`, `B1` inside the boundary, `B2:
//! boundary -> level 1`, and `A0`, `A1`, `A2` moving one level down,
//! staying, and one level up.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::{Policy, SystemConfig};
use crate::dynamics;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::statespace::{
    decode_state, encode_state, enumerate_states, reservation0_service_count, ChainState,
    LevelLayout,
};

/// Generator blocks plus the state order behind their rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct QbdBlocks {
    /// Level 1 to boundary.
    pub b0: Matrix,
    /// Within the boundary.
    pub b1: Matrix,
    /// Boundary to level 1.
    pub b2: Matrix,
    /// One level down.
    pub a0: Matrix,
    /// Within a level.
    pub a1: Matrix,
    /// One level up.
    pub a2: Matrix,
    pub layout: LevelLayout,
    pub boundary_states: Vec<ChainState>,
    /// States of level 1. Level `j` holds the same states shifted by
    /// `(j - 1) k` jobs.
    pub level_states: Vec<ChainState>,
}

impl QbdBlocks {
    pub fn boundary_size(&self) -> usize {
        self.boundary_states.len()
    }

    pub fn level_size(&self) -> usize {
        self.level_states.len()
    }

    /// The states of level `level >= 1`.
    pub fn level(&self, level: usize) -> impl Iterator<Item = ChainState> + '_ {
        let shift = (level - 1) * self.layout.width;
        self.level_states
            .iter()
            .map(move |s| ChainState::new(s.w.clone(), s.m + shift))
    }

    /// `A0 + A1 + A2`, the generator of the phase process.
    pub fn level_generator(&self) -> Matrix {
        self.a0.add(&self.a1).add(&self.a2)
    }

    /// The six blocks with their conventional names.
    pub fn named_blocks(&self) -> [(&'static str, &Matrix); 6] {
        [
            ("B0", &self.b0),
            ("B1", &self.b1),
            ("B2", &self.b2),
            ("A0", &self.a0),
            ("A1", &self.a1),
            ("A2", &self.a2),
        ]
    }
}

/// Outgoing transitions of a state, merged by target and ordered.
pub fn transitions(
    state: &ChainState,
    cfg: &SystemConfig,
) -> Result<Vec<(ChainState, f64)>> {
    let conf = decode_state(state, cfg)?;
    let t = cfg.depth();
    let mut out: BTreeMap<ChainState, f64> = BTreeMap::new();
    if cfg.arrival_rate > 0.0 {
        let o = dynamics::arrival(cfg.policy, &conf);
        *out.entry(encode_state(&o.next, t)).or_default() += cfg.arrival_rate;
    }
    for (source, mult) in dynamics::completion_classes(cfg.policy, &conf) {
        let o = dynamics::completion(cfg.policy, &conf, source);
        *out.entry(encode_state(&o.next, t)).or_default() += mult as f64 * cfg.service_rate;
    }
    Ok(out.into_iter().collect())
}

/// Builds the QBD blocks for `MDS-Reservation(t)` or `M^k/M/n(t)`.
///
/// Every transition is generated from the policy semantics, then the
/// level structure is checked: no transition skips a level, rows sum to
/// zero, and levels 2 and 3 reproduce the blocks found at level 1.
pub fn build_qbd(cfg: &SystemConfig) -> Result<QbdBlocks> {
    cfg.validate_structure()?;
    let layout = LevelLayout::for_config(cfg)?;
    const LEVELS: usize = 4;
    let states = enumerate_states(cfg, LEVELS)?;
    let mut groups: Vec<Vec<ChainState>> = vec![Vec::new(); LEVELS + 1];
    for s in states {
        groups[layout.level_of(s.m)].push(s);
    }
    let index: Vec<BTreeMap<ChainState, usize>> = groups
        .iter()
        .map(|g| g.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect())
        .collect();
    for level in 2..=LEVELS {
        let shift = (level - 1) * layout.width;
        let same = groups[level].len() == groups[1].len()
            && groups[level]
                .iter()
                .zip(&groups[1])
                .all(|(a, b)| a.w == b.w && a.m == b.m + shift);
        if !same {
            return Err(Error::NotLevelHomogeneous { level });
        }
    }

    let qb = groups[0].len();
    let ql = groups[1].len();
    let mut b0 = Matrix::zeros(ql, qb);
    let mut b1 = Matrix::zeros(qb, qb);
    let mut b2 = Matrix::zeros(qb, ql);
    let mut a1 = Matrix::zeros(ql, ql);
    let mut a2 = Matrix::zeros(ql, ql);

    // Rows of levels 2 and 3, kept to compare with level 1.
    let mut upper: Vec<[Matrix; 3]> = Vec::new();

    for (level, group) in groups.iter().enumerate().take(LEVELS) {
        let mut down = Matrix::zeros(ql, if level == 1 { qb } else { ql });
        let mut within = Matrix::zeros(if level == 0 { qb } else { ql }, if level == 0 { qb } else { ql });
        let mut up = Matrix::zeros(if level == 0 { qb } else { ql }, ql);
        for (row, s) in group.iter().enumerate() {
            let mut total = 0.0;
            for (target, rate) in transitions(s, cfg)? {
                let to = layout.level_of(target.m);
                let col = *index
                    .get(to)
                    .and_then(|ix| ix.get(&target))
                    .ok_or_else(|| Error::UnreachableState(alloc::format!("{target}")))?;
                total += rate;
                if to + 1 == level {
                    down[(row, col)] += rate;
                } else if to == level {
                    within[(row, col)] += rate;
                } else if to == level + 1 {
                    up[(row, col)] += rate;
                } else {
                    return Err(Error::NonAdjacentTransition { from: level, to });
                }
            }
            within[(row, row)] -= total;
        }
        match level {
            0 => {
                b1 = within;
                b2 = up;
            }
            1 => {
                b0 = down;
                a1 = within;
                a2 = up;
            }
            _ => upper.push([down, within, up]),
        }
    }
    let a0 = upper[0][0].clone();
    for (i, [down, within, up]) in upper.iter().enumerate() {
        let level = i + 2;
        let tol = 1e-12 * (1.0 + a1.max_abs());
        if down.sub(&a0).max_abs() > tol
            || within.sub(&a1).max_abs() > tol
            || up.sub(&a2).max_abs() > tol
        {
            return Err(Error::NotLevelHomogeneous { level });
        }
    }

    let blocks = QbdBlocks {
        b0,
        b1,
        b2,
        a0,
        a1,
        a2,
        layout,
        boundary_states: core::mem::take(&mut groups[0]),
        level_states: core::mem::take(&mut groups[1]),
    };
    check_row_sums(&blocks)?;
    Ok(blocks)
}

fn check_row_sums(b: &QbdBlocks) -> Result<()> {
    let tol = 1e-12 * (1.0 + b.a1.max_abs().max(b.b1.max_abs()));
    let boundary = b.b1.row_sums().into_iter().zip(b.b2.row_sums()).map(|(x, y)| x + y);
    let first = b
        .b0
        .row_sums()
        .into_iter()
        .zip(b.a1.row_sums())
        .zip(b.a2.row_sums())
        .map(|((x, y), z)| x + y + z);
    let repeating = b.level_generator().row_sums();
    for (row, sum) in boundary.chain(first).chain(repeating).enumerate() {
        if sum.abs() > tol {
            return Err(Error::RowSum { row, sum });
        }
    }
    Ok(())
}

/// Stationary distribution of the scalar chains `MDS-Reservation(0)` and
/// `M^k/M/n(0)` by the forward balance recurrence
/// `pi_m * c(m) mu = lambda * sum_{j = m-k}^{m-1} pi_j`.
///
/// Entry `m` is the probability of `m` jobs. The sequence stops once the
/// geometric tail estimate drops below `tail_mass`.
pub fn recurrence_stationary(cfg: &SystemConfig, tail_mass: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (n, k, lambda, mu) = (cfg.n, cfg.k, cfg.arrival_rate, cfg.service_rate);
    let (busy, limit): (alloc::boxed::Box<dyn Fn(usize) -> usize>, f64) = match cfg.policy {
        Policy::Reservation(0) => (
            alloc::boxed::Box::new(|m| reservation0_service_count(m, cfg)),
            reservation0_capacity(n, k, mu),
        ),
        Policy::MkMn(0) => (alloc::boxed::Box::new(move |m: usize| m.min(n)), cfg.capacity()),
        _ => {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} is not a scalar chain",
                cfg.policy
            )))
        }
    };
    if lambda >= limit {
        return Err(Error::Divergent {
            arrival_rate: lambda,
            limit,
        });
    }
    const MAX_STATES: usize = 50_000_000;
    let mut pi = vec![1.0];
    let mut window = 1.0;
    let mut total = 1.0;
    let mut block_prev = f64::NAN;
    let mut block = 0.0;
    let mut m = 1;
    loop {
        let p = lambda * window / (busy(m) as f64 * mu);
        pi.push(p);
        total += p;
        window += p;
        if m >= k {
            window -= pi[m - k];
        }
        block += p;
        if m % k == 0 {
            if m > n + 2 * k && block_prev.is_finite() && block_prev > 0.0 {
                let r = block / block_prev;
                if r < 1.0 && block * r / (1.0 - r) < tail_mass * total {
                    break;
                }
            }
            block_prev = block;
            block = 0.0;
        }
        m += 1;
        if m > MAX_STATES {
            return Err(Error::Truncation {
                levels: m / k,
                tail: f64::NAN,
            });
        }
    }
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Saturation throughput of `MDS-Reservation(0)`.
///
/// Under backlog the busy count cycles through `n - k + 1 ..= n`, one
/// completion per step, so a full cycle of `k` completions takes
/// `sum 1 / (x mu)` time on average.
pub fn reservation0_capacity(n: usize, k: usize, mu: f64) -> f64 {
    let cycle: f64 = (n - k + 1..=n).map(|x| 1.0 / (x as f64 * mu)).sum();
    1.0 / cycle
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blocks(n: usize, k: usize, policy: Policy, lambda: f64) -> QbdBlocks {
        build_qbd(&SystemConfig::new(n, k, lambda, 1.0, policy).unwrap()).unwrap()
    }

    #[test]
    fn reservation0_small_blocks() {
        let b = blocks(4, 2, Policy::Reservation(0), 1.0);
        assert_eq!((b.boundary_size(), b.level_size()), (3, 2));
        assert_eq!(b.a2, Matrix::identity(2));
    }

    #[test]
    fn levels_are_homogeneous_for_many_configs() {
        for (n, k) in [(2, 1), (3, 2), (4, 2), (5, 3), (6, 3)] {
            for t in 0..=2 {
                for policy in [Policy::Reservation(t), Policy::MkMn(t)] {
                    let b = blocks(n, k, policy, 0.7);
                    assert!(b.a2.sub(&Matrix::identity(b.level_size()).scale(0.7)).max_abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn capacity_of_reservation0() {
        assert!((reservation0_capacity(4, 2, 1.0) - 12.0 / 7.0).abs() < 1e-15);
        assert!((reservation0_capacity(10, 5, 1.0) - 2520.0 / 1627.0).abs() < 1e-15);
    }

    #[test]
    fn recurrence_sums_to_one() {
        let cfg = SystemConfig::new(4, 2, 1.0, 1.0, Policy::MkMn(0)).unwrap();
        let pi = recurrence_stationary(&cfg, 1e-14).unwrap();
        assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let cfg = cfg.with_arrival_rate(2.0);
        assert!(matches!(recurrence_stationary(&cfg, 1e-12), Err(Error::Divergent { .. })));
    }
}
