//! Turns an [`ExperimentSpec`] into result rows.

use anyhow::{Context, Result};
use mdsq_core::metrics::{degraded_read_compare, DegradedReadSetup};
use mdsq_core::simulator::{measure_saturation_throughput, ReplicationPlan, Replicator};
use mdsq_core::{
    build_qbd, drift, latency_profile, max_throughput, mean_latency, occupancy_ccdf, stationary,
    waiting_probability, Error, MetricsReport, Policy, SolverOptions, SystemConfig,
};
use rayon::prelude::*;

use crate::dump;
use crate::output::{Method, Row, Status};
use crate::parallel::ParallelReplicator;
use crate::spec::{ExperimentSpec, Kind};

pub fn run_experiment(spec: &ExperimentSpec, pool: &ParallelReplicator) -> Result<Vec<Row>> {
    spec.validate()?;
    match spec.kind {
        Kind::Solve => grid(spec, pool, |cfg| analytic_point(spec, cfg)),
        Kind::Simulate => grid(spec, pool, |cfg| simulated_point(spec, cfg, pool, true)),
        Kind::Sweep => grid(spec, pool, |cfg| match cfg.policy {
            Policy::Mds => simulated_point(spec, cfg, pool, false),
            _ => analytic_point(spec, cfg),
        }),
        Kind::Throughput => throughput(spec, pool),
        Kind::DegradedReads => degraded(spec, pool),
    }
}

/// Evaluates `point` for every (policy, lambda) pair, in parallel, and
/// concatenates the rows in spec order.
fn grid(
    spec: &ExperimentSpec,
    pool: &ParallelReplicator,
    point: impl Fn(&SystemConfig) -> Result<Vec<Row>> + Sync,
) -> Result<Vec<Row>> {
    let mut cfgs = Vec::new();
    for &policy in &spec.policies {
        for &lambda in &spec.arrival_rates {
            cfgs.push(SystemConfig::new(spec.n, spec.k, lambda, spec.service_rate, policy)?);
        }
    }
    let parts = pool.install(|| cfgs.par_iter().map(&point).collect::<Result<Vec<_>>>())?;
    Ok(parts.into_iter().flatten().collect())
}

fn base_row(metric: &str, method: Method, cfg: &SystemConfig) -> Row {
    let mut r = Row::new(metric, method, cfg.policy, cfg.n, cfg.k, cfg.service_rate);
    r.lambda = Some(cfg.arrival_rate);
    r
}

fn unstable(method: Method, cfg: &SystemConfig, metrics: &[&str]) -> Vec<Row> {
    metrics
        .iter()
        .map(|m| {
            let mut r = base_row(m, method, cfg);
            r.status = Status::Unstable;
            r
        })
        .collect()
}

fn analytic_point(spec: &ExperimentSpec, cfg: &SystemConfig) -> Result<Vec<Row>> {
    let blocks = build_qbd(cfg).with_context(|| format!("building chain for {cfg}"))?;
    if let Some(dir) = &spec.dump_blocks {
        let name = format!("{}_lambda{}", cfg.policy, cfg.arrival_rate);
        dump::write_blocks(&dir.join(name), &blocks)?;
    }
    if !drift(&blocks)?.is_stable() {
        return Ok(unstable(Method::Analytic, cfg, &["latency", "waiting", "ccdf"]));
    }
    let dist = match stationary(&blocks, &SolverOptions::default()) {
        Ok(d) => d,
        Err(Error::NotPositiveRecurrent { .. }) => {
            return Ok(unstable(Method::Analytic, cfg, &["latency", "waiting", "ccdf"]))
        }
        Err(e) => return Err(e).with_context(|| format!("solving {cfg}")),
    };
    let profile = latency_profile(cfg, &blocks, &dist, spec.tail)?;
    let mean = mean_latency(&profile, &dist);
    let mut rows = Vec::new();
    let mut r = base_row("latency", Method::Analytic, cfg);
    r.value = Some(mean.value);
    rows.push(r);
    let mut r = base_row("waiting", Method::Analytic, cfg);
    r.value = Some(waiting_probability(cfg, &blocks, &dist)?);
    rows.push(r);
    for (x, p) in occupancy_ccdf(&blocks, &dist, spec.x_max).into_iter().enumerate() {
        let mut r = base_row("ccdf", Method::Analytic, cfg);
        r.x = Some(x as f64);
        r.value = Some(p);
        rows.push(r);
    }
    Ok(rows)
}

/// Stability from the drift condition where a chain exists, otherwise
/// from the capacity `n mu / k`.
fn is_stable(cfg: &SystemConfig) -> Result<bool> {
    Ok(match cfg.policy {
        Policy::Mds => cfg.arrival_rate < cfg.capacity(),
        _ => drift(&build_qbd(cfg)?)?.is_stable(),
    })
}

fn plan(spec: &ExperimentSpec) -> ReplicationPlan {
    ReplicationPlan {
        count: spec.replications,
        base_seed: spec.seed,
        warmup_batches: spec.warmup_batches,
        horizon_batches: spec.horizon_batches,
    }
}

fn simulated_point(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    pool: &ParallelReplicator,
    quantiles: bool,
) -> Result<Vec<Row>> {
    if !is_stable(cfg)? {
        let mut metrics = vec!["latency", "waiting", "ccdf"];
        if quantiles {
            metrics.push("quantile");
        }
        return Ok(unstable(Method::Simulated, cfg, &metrics));
    }
    let report = pool.replicate(cfg, &plan(spec))?;
    Ok(report_rows(spec, &report, quantiles))
}

pub fn report_rows(spec: &ExperimentSpec, m: &MetricsReport, quantiles: bool) -> Vec<Row> {
    let cfg = &m.config;
    let status = if m.saturated {
        Status::Saturated
    } else {
        Status::Ok
    };
    let row = |metric: &str, x: Option<f64>, value: f64, ci: Option<f64>| {
        let mut r = base_row(metric, Method::Simulated, cfg);
        r.seed = Some(m.seed);
        r.replications = Some(m.replications);
        r.x = x;
        r.value = Some(value);
        r.ci_halfwidth = ci;
        r.status = status;
        r
    };
    let mut rows = vec![
        row("latency", None, m.mean_batch_latency, Some(m.ci.mean_batch_latency)),
        row("waiting", None, m.waiting_fraction, Some(m.ci.waiting_fraction)),
    ];
    for (x, p) in m.occupancy_ccdf(spec.x_max).into_iter().enumerate() {
        rows.push(row("ccdf", Some(x as f64), p, None));
    }
    if quantiles {
        for &(level, v) in &m.latency_quantiles {
            rows.push(row("quantile", Some(level), v, None));
        }
    }
    rows
}

fn throughput(spec: &ExperimentSpec, pool: &ParallelReplicator) -> Result<Vec<Row>> {
    let mut cfgs = Vec::new();
    for &policy in &spec.policies {
        for &n in &spec.n_values {
            cfgs.push(SystemConfig::new(n, spec.k, 1.0, spec.service_rate, policy)?);
        }
    }
    let parts = pool.install(|| {
        cfgs.par_iter()
            .map(|cfg| -> Result<Vec<Row>> {
                let (method, value) = match cfg.policy {
                    Policy::Mds => (
                        Method::Simulated,
                        measure_saturation_throughput(cfg, spec.seed, spec.horizon_batches)?,
                    ),
                    _ => (Method::Analytic, max_throughput(cfg)?),
                };
                let mut rows = Vec::new();
                for (metric, v) in [
                    ("throughput", value),
                    ("loss", 1.0 - value / cfg.capacity()),
                ] {
                    let mut r = Row::new(metric, method, cfg.policy, cfg.n, cfg.k, cfg.service_rate);
                    r.value = Some(v);
                    if method == Method::Simulated {
                        r.seed = Some(spec.seed);
                    }
                    rows.push(r);
                }
                Ok(rows)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}

fn degraded(spec: &ExperimentSpec, pool: &ParallelReplicator) -> Result<Vec<Row>> {
    let d = spec.d.context("degraded-reads needs d")?;
    let setup = DegradedReadSetup {
        n: spec.n,
        k: spec.k,
        d,
        service_rate: spec.service_rate,
        repair_speedup: spec.repair_speedup,
        arrival_rates: spec.arrival_rates.clone(),
    };
    let points = degraded_read_compare(&setup, &plan(spec), pool)?;
    let mut rows = Vec::new();
    for p in points {
        for (series, k, mu, report) in [
            ("reconstruction", spec.k, spec.service_rate, &p.reconstruction),
            ("repair", d, spec.service_rate * setup.speedup(), &p.repair),
        ] {
            let mut r = Row::new("degraded", Method::Simulated, Policy::Mds, spec.n - 1, k, mu);
            r.series = series.to_string();
            r.lambda = Some(p.arrival_rate);
            match report {
                Some(m) => {
                    r.seed = Some(m.seed);
                    r.replications = Some(m.replications);
                    r.value = Some(m.mean_batch_latency);
                    r.ci_halfwidth = Some(m.ci.mean_batch_latency);
                    if m.saturated {
                        r.status = Status::Saturated;
                    }
                }
                None => r.status = Status::Unstable,
            }
            rows.push(r);
        }
    }
    Ok(rows)
}
