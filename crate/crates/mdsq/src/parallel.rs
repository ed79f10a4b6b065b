use std::env;
use std::sync::Arc;

use mdsq_core::simulator::{aggregate, ReplicationPlan, Replicator};
use mdsq_core::{run, MetricsReport, SystemConfig};
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "MDSQ_THREADS";

/// Runs replications on a rayon pool. Aggregation sorts by seed, so the
/// result does not depend on scheduling.
#[derive(Clone)]
pub struct ParallelReplicator {
    pool: Arc<ThreadPool>,
}

impl ParallelReplicator {
    pub fn new(threads: Option<usize>) -> anyhow::Result<Self> {
        let mut builder = ThreadPoolBuilder::new();
        if let Some(t) = threads {
            builder = builder.num_threads(t.max(1));
        }
        Ok(ParallelReplicator {
            pool: Arc::new(builder.build()?),
        })
    }

    /// Pool sized by `MDSQ_THREADS`, or rayon's default when unset.
    pub fn from_env() -> anyhow::Result<Self> {
        let threads = match env::var(THREADS_VAR) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| anyhow::anyhow!("{THREADS_VAR}={v}: {e}"))?,
            ),
            Err(_) => None,
        };
        Self::new(threads)
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl Replicator for ParallelReplicator {
    fn replicate(
        &self,
        cfg: &SystemConfig,
        plan: &ReplicationPlan,
    ) -> mdsq_core::Result<MetricsReport> {
        let reports = self.pool.install(|| {
            (0..plan.count)
                .into_par_iter()
                .map(|r| run(cfg, &plan.run_plan(r)))
                .collect::<mdsq_core::Result<Vec<_>>>()
        })?;
        aggregate(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdsq_core::simulator::Sequential;
    use mdsq_core::Policy;

    #[test]
    fn matches_sequential() {
        let cfg = SystemConfig::new(4, 2, 1.0, 1.0, Policy::Mds).unwrap();
        let plan = ReplicationPlan {
            count: 3,
            base_seed: 5,
            warmup_batches: 100,
            horizon_batches: 2_000,
        };
        let par = ParallelReplicator::new(Some(3)).unwrap();
        assert_eq!(
            par.replicate(&cfg, &plan).unwrap(),
            Sequential.replicate(&cfg, &plan).unwrap()
        );
    }
}
