//! Named parameter sets for the standard figures.

use crate::spec::{ExperimentSpec, Kind, SpecError};

pub const NAMES: [&str; 6] = ["fig1", "fig5", "fig7", "fig8", "fig-waitprob", "fig10"];

const FIG1: &str = "
experiment = sweep
n = 10
k = 5
mu = 1
lambda = 0.1:0.1:1.9, 1.95
policies = resv(1), resv(2), resv(3), mds, mkmn(1), mkmn(0)
replications = 4
warmup = 10000
horizon = 260000
";

const FIG5: &str = "
experiment = throughput
k = 2
mu = 1
n_values = 3:1:20
policies = resv(1), resv(2)
";

const FIG7: &str = "
experiment = simulate
n = 10
k = 5
mu = 1
lambda = 0.25:0.25:1.75, 1.9
policies = resv(1), resv(2), resv(3), mds, mkmn(1), mkmn(0)
replications = 4
warmup = 10000
horizon = 260000
";

const FIG8: &str = "
experiment = sweep
n = 10
k = 5
mu = 1
lambda = 1.5
policies = resv(1), resv(2), resv(3), mds, mkmn(1), mkmn(0)
x_max = 60
replications = 4
warmup = 10000
horizon = 260000
";

const FIG_WAITPROB: &str = "
experiment = sweep
n = 10
k = 5
mu = 1
lambda = 0.1:0.1:1.9
policies = resv(1), resv(2), resv(3), mds, mkmn(1), mkmn(0)
replications = 4
warmup = 10000
horizon = 260000
";

const FIG10: &str = "
experiment = degraded-reads
n = 6
k = 2
d = 3
mu = 1
lambda = 0.25:0.25:2.25
replications = 4
warmup = 10000
horizon = 260000
";

/// The spec text of a preset.
pub fn text(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig1" => FIG1,
        "fig5" => FIG5,
        "fig7" => FIG7,
        "fig8" => FIG8,
        "fig-waitprob" => FIG_WAITPROB,
        "fig10" => FIG10,
        _ => return None,
    })
}

pub fn load(name: &str) -> Result<ExperimentSpec, SpecError> {
    let text = text(name).ok_or_else(|| SpecError::UnknownPreset(name.to_string()))?;
    let mut spec = ExperimentSpec::new(Kind::Sweep);
    spec.apply(text)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in NAMES {
            load(name).unwrap().validate().unwrap();
        }
        assert!(load("fig2").is_err());
    }
}
