//! Analytic results checked against independently derived values.

use std::collections::BTreeMap;
use std::time::Instant;

use mdsq_core::chain::reservation0_capacity;
use mdsq_core::metrics::{degraded_read_compare, DegradedReadSetup};
use mdsq_core::simulator::{ReplicationPlan, Sequential};
use mdsq_core::qbd::{functional_iteration, RMethod, SolverOptions};
use mdsq_core::statespace::reservation0_service_count;
use mdsq_core::{
    build_qbd, harmonic, latency_profile, max_throughput, mean_latency, occupancy_ccdf,
    recurrence_stationary, solve_r, stationary, throughput_loss_curve, waiting_probability,
    ChainState, Matrix, Policy, SystemConfig,
};

fn cfg(n: usize, k: usize, lambda: f64, mu: f64, policy: Policy) -> SystemConfig {
    SystemConfig::new(n, k, lambda, mu, policy).unwrap()
}

fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()), "shape");
    let d = a.sub(b).max_abs();
    assert!(d <= tol, "matrices differ by {d}\n{a:?}\n{b:?}");
}

// Saturation rates of MDS-Reservation(1) with k = 2 as exact fractions,
// n = 3..=12. Frozen from rational arithmetic on n^2 (n-1) / (2n^2 - 2n + 1).
const RESV1_K2: [(usize, f64, f64); 10] = [
    (3, 18.0, 13.0),
    (4, 48.0, 25.0),
    (5, 100.0, 41.0),
    (6, 180.0, 61.0),
    (7, 294.0, 85.0),
    (8, 448.0, 113.0),
    (9, 648.0, 145.0),
    (10, 900.0, 181.0),
    (11, 1210.0, 221.0),
    (12, 1584.0, 265.0),
];

// Same for k = 3, n = 4..=10, frozen from rational arithmetic; both
// published forms reduce to these fractions.
const RESV1_K3: [(usize, f64, f64); 7] = [
    (4, 15.0, 13.0),
    (5, 3090.0, 2011.0),
    (6, 1380.0, 727.0),
    (7, 31395.0, 13954.0),
    (8, 19068.0, 7345.0),
    (9, 33012.0, 11233.0),
    (10, 81720.0, 24919.0),
];

fn k3_denominator(n: f64) -> f64 {
    3.0 * n.powi(5) - 12.0 * n.powi(4) + 22.0 * n.powi(3) - 29.0 * n.powi(2) + 26.0 * n - 8.0
}

#[test]
fn reservation1_k2_saturation_rate() {
    for (n, num, den) in RESV1_K2 {
        let nf = n as f64;
        let closed = (1.0 - 1.0 / (2.0 * nf * nf - 2.0 * nf + 1.0)) * nf / 2.0;
        assert!((closed - num / den).abs() < 1e-12);
        let start = Instant::now();
        let got = max_throughput(&cfg(n, 2, 1.0, 1.0, Policy::Reservation(1))).unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
        assert!((got - num / den).abs() < 1e-6, "n = {n}: {got} vs {}", num / den);
    }
}

#[test]
fn reservation1_k3_saturation_rate() {
    for (n, num, den) in RESV1_K3 {
        let nf = n as f64;
        let d = k3_denominator(nf);
        let first = (1.0 - (4.0 * nf.powi(3) - 8.0 * nf * nf + 2.0 * nf + 4.0) / d) * nf / 3.0;
        let second = nf * (nf - 1.0) * (nf - 2.0) * (nf.powi(3) - nf * nf + nf - 2.0) / d;
        assert!((first - num / den).abs() < 1e-12);
        assert!((second - num / den).abs() < 1e-12);
        let got = max_throughput(&cfg(n, 3, 1.0, 1.0, Policy::Reservation(1))).unwrap();
        assert!((got - first).abs() < 1e-6, "n = {n}: {got} vs {first}");
        assert!((got - second).abs() < 1e-6);
    }
}

#[test]
fn saturation_rate_scales_with_mu() {
    let got = max_throughput(&cfg(4, 2, 1.0, 2.5, Policy::Reservation(1))).unwrap();
    assert!((got - 2.5 * 48.0 / 25.0).abs() < 1e-6);
}

#[test]
fn mkmn_reaches_full_capacity() {
    for (n, k) in [(4, 2), (10, 5)] {
        for t in 0..=2 {
            let got = max_throughput(&cfg(n, k, 1.0, 1.0, Policy::MkMn(t))).unwrap();
            assert_eq!(got, n as f64 / k as f64);
        }
    }
}

#[test]
fn reservation_saturation_rates_are_ordered() {
    // More reserved batches never lose throughput, and all stay below
    // the MDS capacity.
    for (n, k) in [(4, 2), (6, 3), (10, 5)] {
        let mut prev = 0.0;
        for t in 0..=2 {
            let got = max_throughput(&cfg(n, k, 1.0, 1.0, Policy::Reservation(t))).unwrap();
            assert!(got >= prev - 1e-9 && got <= n as f64 / k as f64 + 1e-12);
            prev = got;
        }
    }
    assert!((reservation0_capacity(4, 2, 1.0) - 12.0 / 7.0).abs() < 1e-15);
}

fn fig3_blocks(l: f64, m: f64) -> [Matrix; 6] {
    [
        Matrix::from_rows(&[&[0.0, 0.0, 3.0 * m], &[0.0, 0.0, 0.0]]),
        Matrix::from_rows(&[
            &[-l, 0.0, l],
            &[m, -(m + l), 0.0],
            &[0.0, 2.0 * m, -(2.0 * m + l)],
        ]),
        Matrix::from_rows(&[&[0.0, 0.0], &[l, 0.0], &[0.0, l]]),
        Matrix::from_rows(&[&[0.0, 3.0 * m], &[0.0, 0.0]]),
        Matrix::from_rows(&[&[-(3.0 * m + l), 0.0], &[4.0 * m, -(4.0 * m + l)]]),
        Matrix::from_rows(&[&[l, 0.0], &[0.0, l]]),
    ]
}

fn fig6_blocks(l: f64, m: f64) -> [Matrix; 6] {
    [
        Matrix::from_rows(&[&[0.0, 0.0, 0.0, 0.0, 4.0 * m], &[0.0; 5]]),
        Matrix::from_rows(&[
            &[-l, 0.0, l, 0.0, 0.0],
            &[m, -(m + l), 0.0, l, 0.0],
            &[0.0, 2.0 * m, -(2.0 * m + l), 0.0, l],
            &[0.0, 0.0, 3.0 * m, -(3.0 * m + l), 0.0],
            &[0.0, 0.0, 0.0, 4.0 * m, -(4.0 * m + l)],
        ]),
        Matrix::from_rows(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[l, 0.0], &[0.0, l]]),
        Matrix::from_rows(&[&[0.0, 4.0 * m], &[0.0, 0.0]]),
        Matrix::from_rows(&[&[-(4.0 * m + l), 0.0], &[4.0 * m, -(4.0 * m + l)]]),
        Matrix::from_rows(&[&[l, 0.0], &[0.0, l]]),
    ]
}

fn check_blocks(policy: Policy, expected: fn(f64, f64) -> [Matrix; 6]) {
    for (l, m) in [(1.0, 1.0), (0.7, 1.3), (2.0, 0.5)] {
        let b = build_qbd(&cfg(4, 2, l, m, policy)).unwrap();
        let want = expected(l, m);
        for ((name, got), want) in b.named_blocks().into_iter().zip(&want) {
            let diff = got.sub(want).max_abs();
            assert!(diff < 1e-12, "{policy} {name} at lambda {l}, mu {m}: {got:?}");
        }
    }
}

#[test]
fn reservation0_blocks_match_published_matrices() {
    check_blocks(Policy::Reservation(0), fig3_blocks);
    let b = build_qbd(&cfg(4, 2, 1.0, 1.0, Policy::Reservation(0))).unwrap();
    let ms: Vec<usize> = b.boundary_states.iter().map(|s| s.m).collect();
    assert_eq!(ms, vec![0, 1, 2]);
}

#[test]
fn mkmn0_blocks_match_published_matrices() {
    check_blocks(Policy::MkMn(0), fig6_blocks);
    let b = build_qbd(&cfg(4, 2, 1.0, 1.0, Policy::MkMn(0))).unwrap();
    let ms: Vec<usize> = b.level_states.iter().map(|s| s.m).collect();
    assert_eq!(ms, vec![5, 6]);
}

#[test]
fn reservation1_k2_level_blocks() {
    // Level states (1, n-1+2j), (1, n+2j), (2, n+2j).
    for n in 3..=8 {
        let (l, m) = (0.9, 1.1);
        let nf = n as f64;
        let b = build_qbd(&cfg(n, 2, l, m, Policy::Reservation(1))).unwrap();
        assert_eq!(
            b.level_states,
            vec![
                ChainState::new(vec![1], n + 1),
                ChainState::new(vec![1], n + 2),
                ChainState::new(vec![2], n + 2)
            ]
        );
        let a0 = Matrix::from_rows(&[&[0.0, m, (nf - 1.0) * m], &[0.0; 3], &[0.0; 3]]);
        let a1 = Matrix::from_rows(&[
            &[-nf * m - l, 0.0, 0.0],
            &[(nf - 1.0) * m, -(nf - 1.0) * m - l, 0.0],
            &[nf * m, 0.0, -nf * m - l],
        ]);
        assert_close(&b.a0, &a0, 1e-12);
        assert_close(&b.a1, &a1, 1e-12);
        assert_close(&b.a2, &Matrix::identity(3).scale(l), 0.0);
        // The phase process has stationary vector proportional to
        // (n - 1, 1, (n - 1)^2 / n).
        let d = mdsq_core::drift(&b).unwrap();
        let v = [nf - 1.0, 1.0, (nf - 1.0).powi(2) / nf];
        let s: f64 = v.iter().sum();
        for (x, y) in d.v.iter().zip(v) {
            assert!((x - y / s).abs() < 1e-12);
        }
    }
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..len).map(|i| (get(a, i) - get(b, i)).abs()).sum::<f64>()
}

/// Occupancy pmf of a scalar chain from its matrix-geometric solution.
fn qbd_occupancy(c: &SystemConfig, len: usize) -> Vec<f64> {
    let b = build_qbd(c).unwrap();
    let d = stationary(&b, &SolverOptions::default()).unwrap();
    let mut out = vec![0.0; len];
    for (s, p) in b.boundary_states.iter().zip(&d.pi_boundary) {
        out[s.m] += p;
    }
    let mut level = 1;
    loop {
        let pi = d.level(level);
        let mut inside = false;
        for (s, p) in b.level(level).zip(pi) {
            if s.m < len {
                out[s.m] += p;
                inside = true;
            }
        }
        if !inside {
            break;
        }
        level += 1;
    }
    out
}

#[test]
fn scalar_chains_agree_with_recurrence() {
    for (n, k, lambda) in [(4, 2, 1.0), (10, 5, 1.5)] {
        for policy in [Policy::Reservation(0), Policy::MkMn(0)] {
            let c = cfg(n, k, lambda, 1.0, policy);
            let rec = recurrence_stationary(&c, 1e-14).unwrap();
            let qbd = qbd_occupancy(&c, rec.len() + 50);
            let tv = total_variation(&rec, &qbd);
            assert!(tv < 1e-9, "{policy} ({n},{k},{lambda}): TV {tv}");
        }
    }
}

#[test]
fn reservation0_latency_matches_death_chain() {
    // A batch arriving to m jobs starts once the jobs ahead drain to
    // n - k; before that the busy count follows the scalar chain.
    let (n, k, mu) = (10, 5, 1.3);
    let c = cfg(n, k, 1.2, mu, Policy::Reservation(0));
    let b = build_qbd(&c).unwrap();
    let d = stationary(&b, &SolverOptions::default()).unwrap();
    let p = latency_profile(&c, &b, &d, 1e-10).unwrap();
    for (s, got) in p.states.iter().zip(&p.delays).take(200) {
        let mut want = harmonic(k) / mu;
        for x in n + 1..=s.m + k {
            want += 1.0 / (reservation0_service_count(x, &c) as f64 * mu);
        }
        assert!((got - want).abs() < 1e-10, "m = {}: {got} vs {want}", s.m);
    }
}

#[test]
fn mkmn0_latency_matches_fifo_job_chain() {
    // Under M^k/M/n(0) jobs start in FIFO order on any free server. A
    // batch arriving to m jobs waits for m + k - n job starts; the last
    // one leaves the batch with a known number of jobs in service.
    let (n, k, mu) = (4, 2, 1.0);
    let c = cfg(n, k, 1.0, mu, Policy::MkMn(0));
    let b = build_qbd(&c).unwrap();
    let d = stationary(&b, &SolverOptions::default()).unwrap();
    let p = latency_profile(&c, &b, &d, 1e-10).unwrap();
    for (s, got) in p.states.iter().zip(&p.delays) {
        let want = fifo_latency(n, k, mu, s.m);
        assert!((got - want).abs() < 1e-10, "m = {}: {got} vs {want}", s.m);
    }
}

/// Expected latency of a batch arriving to `m` jobs in an M/M/n-like
/// FIFO job queue, by first-step analysis on (jobs ahead, own buffered,
/// own in service).
fn fifo_latency(n: usize, k: usize, mu: f64, m: usize) -> f64 {
    fn value(
        n: usize,
        mu: f64,
        ahead: usize,
        buffered: usize,
        own: usize,
        memo: &mut std::collections::HashMap<(usize, usize, usize), f64>,
    ) -> f64 {
        if buffered == 0 {
            return harmonic(own) / mu;
        }
        if let Some(v) = memo.get(&(ahead, buffered, own)) {
            return *v;
        }
        let step = |ahead: usize, buffered: usize, own: usize, memo: &mut _| {
            if ahead > 0 {
                value(n, mu, ahead - 1, buffered, own, memo)
            } else {
                value(n, mu, 0, buffered - 1, own + 1, memo)
            }
        };
        let mut acc = 1.0 / (n as f64 * mu);
        if own > 0 {
            acc += own as f64 / n as f64 * step(ahead, buffered, own - 1, memo);
        }
        acc += (n - own) as f64 / n as f64 * step(ahead, buffered, own, memo);
        memo.insert((ahead, buffered, own), acc);
        acc
    }
    let free = n.saturating_sub(m);
    let start = free.min(k);
    let ahead = m.saturating_sub(n);
    let mut memo = std::collections::HashMap::new();
    if start == k {
        harmonic(k) / mu
    } else {
        value(n, mu, ahead, k - start, start, &mut memo)
    }
}

#[test]
fn empty_arrival_latency() {
    let c = cfg(10, 5, 1.0, 1.0, Policy::Reservation(1));
    let b = build_qbd(&c).unwrap();
    let d = stationary(&b, &SolverOptions::default()).unwrap();
    let p = latency_profile(&c, &b, &d, 1e-8).unwrap();
    assert!((p.delays[0] - 137.0 / 60.0).abs() < 1e-12);
    let mean = mean_latency(&p, &d);
    assert!(mean.value > 137.0 / 60.0 && mean.omitted_mass < 1e-8);
}

#[test]
fn solver_routes_agree_and_r_is_minimal() {
    let c = cfg(4, 2, 1.2, 1.0, Policy::Reservation(2));
    let b = build_qbd(&c).unwrap();
    let opts = SolverOptions::default();
    let lr = solve_r(&b, &opts).unwrap();
    let fi = solve_r(
        &b,
        &SolverOptions {
            method: RMethod::FunctionalIteration,
            ..opts
        },
    )
    .unwrap();
    assert!(lr.sub(&fi).max_abs() < 1e-10);
    // Starting below the solution converges to the same matrix.
    let seeded = functional_iteration(&b, &lr.scale(0.5), &opts).unwrap();
    assert!(seeded.sub(&lr).max_abs() < 1e-10);
    assert!(lr.as_slice().iter().all(|&x| x >= -1e-15));
    assert!(lr.spectral_radius_nonneg(2000) < 1.0);
}

fn solved(c: &SystemConfig) -> (mdsq_core::QbdBlocks, mdsq_core::qbd::StationaryDistribution) {
    let b = build_qbd(c).unwrap();
    let d = stationary(&b, &SolverOptions::default()).unwrap();
    (b, d)
}

#[test]
fn mkmn0_ccdf_and_waiting_match_recurrence() {
    let c = cfg(10, 5, 1.5, 1.0, Policy::MkMn(0));
    let rec = recurrence_stationary(&c, 1e-15).unwrap();
    let (b, d) = solved(&c);
    let ccdf = occupancy_ccdf(&b, &d, 40);
    for (x, got) in ccdf.iter().enumerate() {
        let want: f64 = rec.iter().skip(x + 1).sum();
        assert!((got - want).abs() < 1e-9, "x = {x}: {got} vs {want}");
    }
    let want: f64 = rec.iter().skip(6).sum();
    let got = waiting_probability(&c, &b, &d).unwrap();
    assert!((got - want).abs() < 1e-9);
}

#[test]
fn bounds_order_occupancy() {
    let (b2, d2) = solved(&cfg(10, 5, 1.5, 1.0, Policy::Reservation(2)));
    let (b1, d1) = solved(&cfg(10, 5, 1.5, 1.0, Policy::MkMn(1)));
    let upper = occupancy_ccdf(&b2, &d2, 60);
    let lower = occupancy_ccdf(&b1, &d1, 60);
    assert!((upper[0] - (1.0 - d2.pi_boundary[0])).abs() < 1e-15);
    for (x, (u, l)) in upper.iter().zip(&lower).enumerate() {
        assert!(u + 1e-12 >= *l, "x = {x}: {u} < {l}");
    }
    assert!(upper.windows(2).all(|w| w[1] <= w[0] + 1e-15));
}

#[test]
fn latency_profile_is_bounded_and_monotone() {
    for policy in [Policy::Reservation(2), Policy::MkMn(1), Policy::MkMn(2)] {
        let c = cfg(6, 3, 1.4, 1.0, policy);
        let (b, d) = solved(&c);
        let p = latency_profile(&c, &b, &d, 1e-8).unwrap();
        let floor = harmonic(3);
        let mut last: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (s, v) in p.states.iter().zip(&p.delays) {
            assert!(v.is_finite() && *v >= floor - 1e-12, "{policy} {s}: {v}");
            if let Some(prev) = last.insert(s.w.clone(), *v) {
                assert!(*v >= prev - 1e-9, "{policy} {s}: {v} < {prev}");
            }
        }
    }
}

#[test]
fn throughput_loss_decays() {
    let t1 = throughput_loss_curve(2, 1, 3..=12, 1.0).unwrap();
    assert!((t1[1].1 - 0.04).abs() < 1e-9);
    for (n, loss) in &t1 {
        let nf = *n as f64;
        assert!((loss - 1.0 / (2.0 * nf * nf - 2.0 * nf + 1.0)).abs() < 1e-9);
    }
    assert!(t1.windows(2).all(|w| w[1].1 < w[0].1));
    let t2 = throughput_loss_curve(2, 2, 3..=12, 1.0).unwrap();
    for (a, b) in t1.iter().zip(&t2) {
        assert!(b.1 <= a.1 + 1e-9);
    }
}

#[test]
fn degraded_reads_at_light_load() {
    let setup = DegradedReadSetup {
        n: 6,
        k: 2,
        d: 3,
        service_rate: 1.0,
        repair_speedup: None,
        arrival_rates: vec![0.01, 10.0],
    };
    assert_eq!(setup.speedup(), 2.0);
    assert_eq!(setup.reconstruction_limit(), 2.5);
    assert!((setup.repair_limit() - 10.0 / 3.0).abs() < 1e-15);
    let plan = ReplicationPlan {
        count: 2,
        base_seed: 9,
        warmup_batches: 1_000,
        horizon_batches: 100_000,
    };
    let points = degraded_read_compare(&setup, &plan, &Sequential).unwrap();
    let recon = points[0].reconstruction.as_ref().unwrap();
    let repair = points[0].repair.as_ref().unwrap();
    assert!((recon.mean_batch_latency - 1.5).abs() < 0.02);
    assert!((repair.mean_batch_latency - 11.0 / 12.0).abs() < 0.02);
    assert!(points[1].reconstruction.is_none() && points[1].repair.is_none());
}
