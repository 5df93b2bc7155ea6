use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mechlearn::parametric::identify;
use mechlearn::scenario::{self, DynamicsRecord, RunStatus, ScenarioConfig};
use mechlearn::{Error, EstimatedQuadraticModel, PlayMode};

#[derive(Parser)]
#[command(name = "mechlearn", version, about = "Simulate, identify and compare price-based coordination mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the polling protocol over the configured horizon.
    Simulate(RunArgs),
    /// Fit quadratic utilities to a logged run.
    Identify(IdentifyArgs),
    /// Run every play mode and the oracle on one instance.
    Compare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the play mode in the config.
    #[arg(long)]
    mode: Option<PlayMode>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Observation CSV written by `simulate`.
    #[arg(long)]
    log: PathBuf,
    /// Per-agent dynamics JSON written by `simulate`.
    #[arg(long)]
    dynamics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    quiet: bool,
}

const EXIT_OSCILLATION: u8 = 2;
const EXIT_RANK: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Identify(args) => cmd_identify(&args),
        Command::Compare(args) => cmd_compare(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(args: &RunArgs) -> Result<ScenarioConfig> {
    let mut config =
        scenario::load_config(&args.config).with_context(|| format!("reading config {}", args.config.display()))?;
    if let Some(mode) = args.mode {
        config.polling.mode = mode;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    Ok(config)
}

fn cmd_simulate(args: &RunArgs) -> Result<ExitCode> {
    let config = load(args)?;
    let run = scenario::simulate(&config)?;
    let out = &args.out;
    scenario::write_trace_csv(&run.trace, config.d, BufWriter::new(File::create(out.join("trace.csv"))?))?;
    scenario::save_log(&run.log, &out.join("observations.csv"))?;
    let dynamics: Vec<DynamicsRecord> = run.scenario.agents.iter().map(DynamicsRecord::from).collect();
    scenario::write_json(&dynamics, &out.join("dynamics.json"))?;
    scenario::write_json(&run.scenario.agents, &out.join("instance.json"))?;
    let report_path = out.join("report.json");
    scenario::write_json(&run.report, &report_path)?;
    if !args.quiet {
        eprintln!(
            "{:?} after {} rounds; final welfare {:.6e}, gap {}",
            run.report.status,
            run.report.iterations,
            run.report.final_welfare,
            run.report.gap.map_or_else(|| "n/a".to_string(), |g| format!("{g:.3e}")),
        );
    }
    println!("{}", report_path.display());
    Ok(match run.report.status {
        RunStatus::Converged => ExitCode::SUCCESS,
        RunStatus::Oscillation => ExitCode::from(EXIT_OSCILLATION),
        RunStatus::Divergence | RunStatus::RoundLimit => ExitCode::FAILURE,
    })
}

fn read_dynamics(path: &Path) -> Result<Vec<DynamicsRecord>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_identify(args: &IdentifyArgs) -> Result<ExitCode> {
    let log = scenario::load_log(&args.log).with_context(|| format!("reading log {}", args.log.display()))?;
    let records = read_dynamics(&args.dynamics)?;
    fs::create_dir_all(&args.out)?;
    let mut models: Vec<EstimatedQuadraticModel> = Vec::new();
    let mut deficient = Vec::new();
    for agent in log.agents() {
        let record = records
            .get(agent)
            .with_context(|| format!("log mentions agent {agent} but dynamics has {} entries", records.len()))?;
        let dynamics = record.dynamics()?;
        match identify(&log, agent, &dynamics, &record.x0) {
            Ok(m) => models.push(m),
            Err(Error::RankDeficient { rank, required, .. }) => deficient.push((agent, rank, required)),
            Err(e) => return Err(e.into()),
        }
    }
    if !deficient.is_empty() {
        for (agent, rank, required) in &deficient {
            eprintln!("agent {agent}: rank {rank} of {required} required");
        }
        return Ok(ExitCode::from(EXIT_RANK));
    }
    for m in &models {
        scenario::write_json(m, &args.out.join(format!("model_{}.json", m.agent)))?;
    }
    let path = args.out.join("models.json");
    scenario::write_json(&models, &path)?;
    if !args.quiet {
        for m in &models {
            eprintln!("agent {}: rank {}, residual {:.3e}, {} samples", m.agent, m.rank, m.residual, m.samples);
        }
    }
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: &RunArgs) -> Result<ExitCode> {
    let config = load(args)?;
    let report = scenario::compare(&config)?;
    let path = args.out.join("compare.json");
    scenario::write_json(&report, &path)?;
    if !args.quiet {
        eprintln!("{:<14} {:>12} {:>10} {:>22} {:>12}", "mode", "status", "rounds", "final welfare", "gap");
        for row in &report.modes {
            eprintln!(
                "{:<14} {:>12} {:>10} {:>22.12e} {:>12.3e}",
                row.mode.as_str(),
                format!("{:?}", row.status),
                row.iterations,
                row.final_welfare,
                row.gap
            );
        }
    }
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}
