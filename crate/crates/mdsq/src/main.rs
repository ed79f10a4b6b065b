use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdsq::{output, presets, run_experiment, ExperimentSpec, Format, Kind, ParallelReplicator};

#[derive(Parser)]
#[command(name = "mdsq", version, about = "MDS queue experiments: chains, solver and simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic latency, waiting probability and occupancy of the bounding chains.
    Solve(Common),
    /// Discrete-event simulation of any policy.
    Simulate(Common),
    /// Maximum throughput and loss against n mu / k.
    Throughput(Common),
    /// Analytic values where a chain exists, simulation for MDS.
    Sweep(Common),
    /// Reconstruction versus repair reads after a server failure.
    DegradedReads(Common),
}

#[derive(Args)]
struct Common {
    /// Spec file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named parameter set, applied before the config file.
    #[arg(long)]
    preset: Option<String>,
    /// Directory for one table per metric; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for plain-text dumps of the generator blocks.
    #[arg(long)]
    dump_blocks: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (Kind, Common) {
        match self {
            Command::Solve(c) => (Kind::Solve, c),
            Command::Simulate(c) => (Kind::Simulate, c),
            Command::Throughput(c) => (Kind::Throughput, c),
            Command::Sweep(c) => (Kind::Sweep, c),
            Command::DegradedReads(c) => (Kind::DegradedReads, c),
        }
    }
}

fn load_spec(kind: Kind, args: &Common) -> anyhow::Result<ExperimentSpec> {
    let mut spec = match &args.preset {
        Some(name) => presets::load(name)?,
        None => ExperimentSpec::new(kind),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        spec.apply(&text)?;
    }
    spec.kind = kind;
    if let Some(f) = args.format {
        spec.format = f;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if args.out.is_some() {
        spec.out.clone_from(&args.out);
    }
    if args.dump_blocks.is_some() {
        spec.dump_blocks.clone_from(&args.dump_blocks);
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    let spec = match load_spec(kind, &args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("mdsq: invalid spec: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = ParallelReplicator::from_env().and_then(|pool| {
        let rows = run_experiment(&spec, &pool)?;
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        output::emit(&rows, spec.format, spec.out.as_deref(), &mut lock)?;
        lock.flush()?;
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // A closed pipe (`mdsq ... | head`) is not a failure.
        Err(e)
            if e
                .downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mdsq: {e:#}");
            ExitCode::FAILURE
        }
    }
}
