use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dlsched::config::{apply_env, parse_document};
use dlsched::engine::{run_with_observer, DecisionLog, RunReport};
use dlsched::region::{trace_boundary, write_boundary_csv, RegionSweep};
use dlsched::sweep::{write_sweep_csv, SweepSpec};
use dlsched::{Error, SystemConfig};

mod selftest;

const EXIT_CONSTRAINT: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Downlink RT/NRT scheduling simulator.
///
/// Config files are JSON or flat `key = value` text with dotted keys.
/// Any key can be overridden through `DLSCHED_<KEY>` environment
/// variables, with `__` in place of `.` (e.g. `DLSCHED_CHANNEL__KIND`).
#[derive(Parser, Debug)]
#[command(name = "dlsched", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,

    /// Config, sweep spec or region spec, depending on the verb.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output path: a directory for `run`, a CSV file for `sweep`/`region`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps and region tracing (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Override the seed (for `sweep`, replaces the seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Exit with status 1 when a run violates its constraints.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one config and write report.json and metrics.csv.
    Run {
        /// Also write a per-slot decision log to this CSV.
        #[arg(long)]
        decisions: Option<PathBuf>,
    },
    /// Run a parameter sweep and write one CSV row per cell.
    Sweep,
    /// Trace capacity-region boundary points along rays.
    Region,
    /// Quick numerical self-check.
    Selftest,
}

enum Failure {
    Usage(String),
    Constraint(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Constraint(msg)) => {
            eprintln!("constraint check failed: {msg}");
            ExitCode::from(EXIT_CONSTRAINT)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn need_config(cli: &Cli) -> Result<&Path, Failure> {
    cli.config
        .as_deref()
        .ok_or_else(|| Failure::Usage("--config is required for this verb".into()))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Command::Run { decisions } => cmd_run(cli, decisions.as_deref()),
        Command::Sweep => cmd_sweep(cli),
        Command::Region => cmd_region(cli),
        Command::Selftest => {
            if selftest::run_all() {
                Ok(())
            } else {
                Err(Failure::Constraint("selftest".into()))
            }
        }
    }
}

fn cmd_run(cli: &Cli, decisions: Option<&Path>) -> Result<(), Failure> {
    let mut cfg = SystemConfig::load(need_config(cli)?)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let report: RunReport = match decisions {
        Some(p) => {
            let mut log = DecisionLog::new(BufWriter::new(File::create(p)?))?;
            let r = run_with_observer(&cfg, &mut log)?;
            log.into_inner().flush()?;
            r
        }
        None => dlsched::run(&cfg)?,
    };
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut json = BufWriter::new(File::create(dir.join("report.json"))?);
            report.write_json(&mut json)?;
            json.flush()?;
            let mut csv = BufWriter::new(File::create(dir.join("metrics.csv"))?);
            report.write_metrics_csv(&mut csv)?;
            csv.flush()?;
        }
        None => {
            let mut out = io::stdout().lock();
            report.write_json(&mut out)?;
            writeln!(out)?;
        }
    }
    log::info!(
        "sum throughput {:.4}, avg power {:.4}, min delivery {:.4}",
        report.sum_throughput,
        report.avg_power,
        report.min_delivery_ratio
    );
    if cli.strict && !report.constraints_ok() {
        return Err(Failure::Constraint(format!(
            "power_ok={} qos_ok={} stability_ok={}",
            report.power_ok, report.qos_ok, report.stability_ok
        )));
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> Result<(), Failure> {
    let mut spec = SweepSpec::load(need_config(cli)?)?;
    if let Some(s) = cli.seed {
        spec.seeds = vec![s];
    }
    let path = cli
        .out
        .clone()
        .or_else(|| spec.output.as_ref().map(PathBuf::from));
    let mut w = output(path.as_deref())?;
    let n = write_sweep_csv(&spec, cli.jobs, &mut w)?;
    w.flush()?;
    log::info!("{n} sweep rows written");
    Ok(())
}

fn load_region(path: &Path) -> Result<RegionSweep, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut doc = parse_document(&text)?;
    apply_env(&mut doc.value, std::env::vars())?;
    doc.deserialize()
}

fn cmd_region(cli: &Cli) -> Result<(), Failure> {
    let sweep = load_region(need_config(cli)?)?;
    let pool = dlsched_pool(cli.jobs)?;
    let points = pool.install(|| trace_boundary(&sweep))?;
    let mut w = output(cli.out.as_deref())?;
    write_boundary_csv(&points, &mut w)?;
    w.flush()?;
    Ok(())
}

fn dlsched_pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))
}
