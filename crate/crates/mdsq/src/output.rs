//! Result rows and their CSV/JSON encodings.
//!
//! Every table shares one schema. Columns that do not apply to a row are
//! left empty in CSV and `null` in JSON.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use mdsq_core::Policy;
use serde::{Deserialize, Serialize};

use crate::spec::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Analytic,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Unstable,
    Saturated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Table the row belongs to: `latency`, `waiting`, `ccdf`, `quantile`,
    /// `throughput`, `loss` or `degraded`.
    pub metric: String,
    pub method: Method,
    /// Curve label, usually the policy.
    pub series: String,
    pub policy: String,
    pub t: Option<usize>,
    pub n: usize,
    pub k: usize,
    pub lambda: Option<f64>,
    pub mu: f64,
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    /// Occupancy for `ccdf`, quantile level for `quantile`.
    pub x: Option<f64>,
    pub value: Option<f64>,
    pub ci_halfwidth: Option<f64>,
    pub status: Status,
}

impl Row {
    pub fn new(metric: &str, method: Method, policy: Policy, n: usize, k: usize, mu: f64) -> Self {
        Row {
            metric: metric.to_string(),
            method,
            series: policy.to_string(),
            policy: policy.family().to_string(),
            t: policy.depth(),
            n,
            k,
            lambda: None,
            mu,
            seed: None,
            replications: None,
            x: None,
            value: None,
            ci_halfwidth: None,
            status: Status::Ok,
        }
    }
}

/// Rows grouped by metric, in first-appearance order.
pub fn tables(rows: &[Row]) -> Vec<(String, Vec<&Row>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&Row>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(&r.metric) {
            order.push(r.metric.clone());
        }
        groups.entry(r.metric.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|m| {
            let rows = groups.remove(&m).unwrap_or_default();
            (m, rows)
        })
        .collect()
}

pub fn encode(rows: &[&Row], format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r)?;
            }
            w.into_inner().context("flushing csv")
        }
        Format::Json => {
            let mut out = serde_json::to_vec_pretty(rows)?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

/// Writes one file per metric into `dir`, or every table to `sink`
/// separated by blank lines.
pub fn emit(rows: &[Row], format: Format, dir: Option<&Path>, sink: &mut dyn Write) -> Result<()> {
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    for (i, (metric, rows)) in tables(rows).into_iter().enumerate() {
        let bytes = encode(&rows, format)?;
        match dir {
            Some(dir) => {
                let path = dir.join(format!("{metric}.{ext}"));
                fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            }
            None => {
                if i > 0 {
                    sink.write_all(b"\n")?;
                }
                sink.write_all(&bytes)?;
            }
        }
    }
    Ok(())
}
