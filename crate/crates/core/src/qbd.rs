//! Matrix-geometric solution of the QBD chains.
//!
//! For a positive recurrent chain the level probabilities satisfy
//! `pi_{j+1} = pi_j R`, where `R` is the minimal non-negative solution of
//! `A2 + R A1 + R^2 A0 = 0`. The boundary and level-1 vectors come from a
//! finite linear system closed by the normalisation.

use alloc::vec;
use alloc::vec::Vec;

use crate::chain::{build_qbd, QbdBlocks};
use crate::config::{Policy, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{solve_left, Lu, Matrix};

/// How `R` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RMethod {
    /// Logarithmic reduction for `G`, then `R` from `G`. Quadratically
    /// convergent.
    #[default]
    LogarithmicReduction,
    /// `R <- -(A2 + R^2 A0) A1^{-1}` from `R = 0`. Linear convergence,
    /// slow near saturation.
    FunctionalIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on `||A2 + R A1 + R^2 A0||_inf`, relative to `||A1||_inf`.
    pub tol: f64,
    pub max_iter: usize,
    pub method: RMethod,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 1_000_000,
            method: RMethod::default(),
        }
    }
}

/// Evidence for (or against) positive recurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftCertificate {
    /// Stationary vector of `A0 + A1 + A2`.
    pub v: Vec<f64>,
    /// `v A2 1`: mean rate of moving up a level.
    pub up_rate: f64,
    /// `v A0 1`: mean rate of moving down a level.
    pub down_rate: f64,
}

impl DriftCertificate {
    pub fn is_stable(&self) -> bool {
        self.up_rate < self.down_rate
    }
}

/// Stationary distribution in matrix-geometric form.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub pi_boundary: Vec<f64>,
    pub pi_level1: Vec<f64>,
    pub r: Matrix,
    /// `(I - R)^{-1}`, used for sums over all levels.
    pub tail_operator: Matrix,
    /// Largest absolute entry of the balance residual of the boundary
    /// system.
    pub residual: f64,
}

impl StationaryDistribution {
    /// `pi_j = pi_1 R^{j-1}` for `level >= 1`.
    pub fn level(&self, level: usize) -> Vec<f64> {
        let mut x = self.pi_level1.clone();
        for _ in 1..level {
            x = self.r.left_mul(&x);
        }
        x
    }

    /// `sum_{j >= level} pi_j`, per level state.
    pub fn levels_from(&self, level: usize) -> Vec<f64> {
        self.tail_operator.left_mul(&self.level(level))
    }

    pub fn total_mass(&self) -> f64 {
        self.pi_boundary.iter().sum::<f64>() + self.levels_from(1).iter().sum::<f64>()
    }
}

/// Phase-process stationary vector and the two drift rates.
pub fn drift(blocks: &QbdBlocks) -> Result<DriftCertificate> {
    let q = blocks.level_generator();
    let v = stationary_of_generator(&q).map_err(|_| Error::Reducible)?;
    let ones = vec![1.0; q.rows()];
    let up_rate = dot(&blocks.a2.left_mul(&v), &ones);
    let down_rate = dot(&blocks.a0.left_mul(&v), &ones);
    Ok(DriftCertificate {
        v,
        up_rate,
        down_rate,
    })
}

/// Solves `x Q = 0`, `x 1 = 1` for an irreducible generator `Q`.
fn stationary_of_generator(q: &Matrix) -> Result<Vec<f64>> {
    let n = q.rows();
    let mut m = q.clone();
    for i in 0..n {
        m[(i, n - 1)] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    let v = solve_left(&m, &rhs)?;
    let scale = q.max_abs().max(1.0);
    let res = q.left_mul(&v).iter().fold(0.0, |a: f64, x| a.max(x.abs()));
    if res > 1e-12 * scale || v.iter().any(|&x| x < -1e-12) {
        return Err(Error::Reducible);
    }
    Ok(v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(blocks: &QbdBlocks, r: &Matrix) -> f64 {
    blocks
        .a2
        .add(&r.mul(&blocks.a1))
        .add(&r.mul(r).mul(&blocks.a0))
        .norm_inf()
}

/// Minimal non-negative solution `R` of `A2 + R A1 + R^2 A0 = 0`.
///
/// Fails with [`Error::NotPositiveRecurrent`] when the drift condition
/// does not hold.
pub fn solve_r(blocks: &QbdBlocks, opts: &SolverOptions) -> Result<Matrix> {
    let d = drift(blocks)?;
    if !d.is_stable() {
        return Err(Error::NotPositiveRecurrent {
            up_rate: d.up_rate,
            down_rate: d.down_rate,
        });
    }
    match opts.method {
        RMethod::LogarithmicReduction => logarithmic_reduction(blocks, opts),
        RMethod::FunctionalIteration => {
            functional_iteration(blocks, &Matrix::zeros(blocks.level_size(), blocks.level_size()), opts)
        }
    }
}

/// Functional iteration started from `seed` instead of zero.
pub fn functional_iteration(
    blocks: &QbdBlocks,
    seed: &Matrix,
    opts: &SolverOptions,
) -> Result<Matrix> {
    let inv = blocks.a1.inverse()?;
    let scale = blocks.a1.norm_inf().max(f64::MIN_POSITIVE);
    let mut r = seed.clone();
    let mut res = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let e = blocks.a2.add(&r.mul(&blocks.a1)).add(&r.mul(&r).mul(&blocks.a0));
        res = e.norm_inf() / scale;
        if res < opts.tol {
            return Ok(r);
        }
        // R - E A1^{-1} equals -(A2 + R^2 A0) A1^{-1}.
        r = r.sub(&e.mul(&inv));
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: res,
    })
}

fn logarithmic_reduction(blocks: &QbdBlocks, opts: &SolverOptions) -> Result<Matrix> {
    let n = blocks.level_size();
    let id = Matrix::identity(n);
    let neg_inv = blocks.a1.scale(-1.0).inverse()?;
    let mut h = neg_inv.mul(&blocks.a2);
    let mut l = neg_inv.mul(&blocks.a0);
    let mut g = l.clone();
    let mut t = h.clone();
    let ones = vec![1.0; n];
    let mut gap = f64::INFINITY;
    let mut converged = false;
    for _ in 0..opts.max_iter.min(200) {
        let u = h.mul(&l).add(&l.mul(&h));
        let m = id.sub(&u).inverse()?;
        h = m.mul(&h.mul(&h));
        l = m.mul(&l.mul(&l));
        g = g.add(&t.mul(&l));
        t = t.mul(&h);
        gap = g
            .right_mul(&ones)
            .iter()
            .fold(0.0, |a: f64, x| a.max((1.0 - x).abs()));
        if gap < opts.tol * 1e-2 || t.max_abs() < f64::EPSILON * 1e-4 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: opts.max_iter.min(200),
            residual: gap,
        });
    }
    let denom = blocks.a1.add(&blocks.a2.mul(&g)).scale(-1.0);
    let r = blocks.a2.mul(&denom.inverse()?);
    let scale = blocks.a1.norm_inf().max(f64::MIN_POSITIVE);
    let res = residual(blocks, &r) / scale;
    if res >= opts.tol {
        // Polish with a few functional-iteration steps.
        return functional_iteration(blocks, &r, opts);
    }
    Ok(r)
}

/// Stationary distribution of the chain described by `blocks`.
pub fn stationary(blocks: &QbdBlocks, opts: &SolverOptions) -> Result<StationaryDistribution> {
    let r = solve_r(blocks, opts)?;
    let ql = blocks.level_size();
    let qb = blocks.boundary_size();
    let tail_operator = Matrix::identity(ql).sub(&r).inverse()?;
    let closing = blocks.a1.add(&r.mul(&blocks.a0));

    // [pi_B, pi_1] [[B1, B2], [B0, A1 + R A0]] = 0, with the last column
    // swapped for the normalisation.
    let size = qb + ql;
    let mut m = Matrix::zeros(size, size);
    for i in 0..qb {
        for j in 0..qb {
            m[(i, j)] = blocks.b1[(i, j)];
        }
        for j in 0..ql {
            m[(i, qb + j)] = blocks.b2[(i, j)];
        }
    }
    for i in 0..ql {
        for j in 0..qb {
            m[(qb + i, j)] = blocks.b0[(i, j)];
        }
        for j in 0..ql {
            m[(qb + i, qb + j)] = closing[(i, j)];
        }
    }
    let original = m.clone();
    let level_mass = tail_operator.right_mul(&vec![1.0; ql]);
    for i in 0..size {
        m[(i, size - 1)] = if i < qb { 1.0 } else { level_mass[i - qb] };
    }
    let mut rhs = vec![0.0; size];
    rhs[size - 1] = 1.0;
    let x = Lu::factor(&m.transpose())?.solve(&rhs);
    let res = original.left_mul(&x).iter().fold(0.0, |a: f64, v| a.max(v.abs()));
    let (pi_boundary, pi_level1) = x.split_at(qb);
    Ok(StationaryDistribution {
        pi_boundary: pi_boundary.iter().map(|p| p.max(0.0)).collect(),
        pi_level1: pi_level1.iter().map(|p| p.max(0.0)).collect(),
        r,
        tail_operator,
        residual: res,
    })
}

/// Largest arrival rate for which the policy is stable.
///
/// `M^k/M/n(t)` always reaches the full capacity `n mu / k`. For
/// `MDS-Reservation(t)` the drift condition is bisected over `lambda`;
/// the returned value is accurate to `1e-10` relative.
pub fn max_throughput(cfg: &SystemConfig) -> Result<f64> {
    cfg.validate_structure()?;
    let cap = cfg.capacity();
    match cfg.policy {
        Policy::MkMn(_) => Ok(cap),
        Policy::Mds => Err(Error::NoChain(cfg.policy)),
        Policy::Reservation(_) => {
            // A0 + A1 + A2 does not depend on lambda, and the up rate is
            // lambda itself, so one drift evaluation gives the answer; the
            // bisection guards that assumption.
            let blocks = build_qbd(&cfg.with_arrival_rate(1.0))?;
            let d = drift(&blocks)?;
            let guess = d.down_rate / d.up_rate;
            let stable = |lambda: f64| -> Result<bool> {
                Ok(drift(&build_qbd(&cfg.with_arrival_rate(lambda))?)?.is_stable())
            };
            let (mut lo, mut hi) = (1e-9_f64, cap);
            if !stable(lo)? {
                return Ok(0.0);
            }
            if stable(hi)? {
                return Ok(hi);
            }
            // Narrow around the closed-form guess first.
            let probe = [guess * (1.0 - 1e-9), guess * (1.0 + 1e-9)];
            if probe[0] > lo && probe[1] < hi && stable(probe[0])? && !stable(probe[1])? {
                lo = probe[0];
                hi = probe[1];
            }
            while hi - lo > 1e-12 * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                if stable(mid)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}
