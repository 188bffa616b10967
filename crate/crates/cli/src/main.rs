mod config;
mod error;
mod experiments;
mod record;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use csl_core::acceptance::{self, AcceptanceOptions};
use csl_core::models::constants::CONSTANTS_VERSION;

use config::{ExperimentConfig, Kind};
use error::{exit, CliError};
use record::{OutputSet, RunRecord, RECORD_FILE, RESOLVED_CONFIG_FILE};

#[derive(Parser)]
#[command(name = "csl-lab", version, about = "Collapse-model simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `output_dir`
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `tolerance_scale`
    #[arg(long)]
    tolerance_scale: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Collapse ensemble and Born-rule statistics
    Collapse(Common),
    /// Density matrix by closed form, master equation and Monte Carlo
    Density(Common),
    /// Energy distributions and the energy balance
    Energy(Common),
    /// Moments of the field time operator
    Timeop(Common),
    /// Thermal spin-block sampling
    Spins(Common),
    /// Field-mode mapping and commutator checks
    Fields(Common),
    /// Order-of-magnitude audit of the spin-bath parameters
    Audit(Common),
    /// Run the full acceptance suite
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "verify-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
    /// Emit a plot-ready CSV for one output of a finished run
    Plot {
        /// Run directory or its record.json
        #[arg(long)]
        record: PathBuf,
        /// Output id from the record's manifest
        #[arg(long)]
        output: String,
        /// Destination file; defaults to plot_<id>.csv next to the record
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Collapse(c) => experiment(Kind::Collapse, &c),
        Command::Density(c) => experiment(Kind::Density, &c),
        Command::Energy(c) => experiment(Kind::Energy, &c),
        Command::Timeop(c) => experiment(Kind::Timeop, &c),
        Command::Spins(c) => experiment(Kind::Spins, &c),
        Command::Fields(c) => experiment(Kind::Fields, &c),
        Command::Audit(c) => experiment(Kind::Audit, &c),
        Command::Verify {
            seed,
            threads,
            out,
            tolerance_scale,
        } => verify(seed, threads, &out, tolerance_scale),
        Command::Plot { record, output, out } => plot(&record, &output, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("csl-lab: {e}");
            e.exit_code()
        }
    }
}

fn init_threads(threads: Option<usize>) -> Result<usize, CliError> {
    let n = match threads {
        Some(0) => return Err(CliError::Config("`--threads` must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(rayon::current_num_threads())
}

fn experiment(kind: Kind, args: &Common) -> Result<ExitCode, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if cfg.kind != kind {
        return Err(CliError::Config(format!(
            "`kind`: config is for `{}` but the subcommand is `{}`",
            cfg.kind.name(),
            kind.name()
        )));
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(x) = args.tolerance_scale {
        cfg.tolerance_scale = x;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    let cfg = cfg.resolved();
    let threads = init_threads(args.threads)?;

    let start = Instant::now();
    let mut out = OutputSet::create(&cfg.output_dir)?;
    let outcome = experiments::run(&cfg, &mut out)?;
    out.put(
        "resolved_config",
        RESOLVED_CONFIG_FILE,
        cfg.to_toml().as_bytes(),
    )?;
    let passed = outcome.checks.list.iter().all(|c| c.passed);
    for c in &outcome.checks.list {
        println!("{} {}: {:e} (limit {:e})", if c.passed { "ok  " } else { "FAIL" }, c.label, c.value, c.limit);
    }
    let dir = out.dir().to_path_buf();
    let record = RunRecord {
        artifact: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        constants_version: CONSTANTS_VERSION.into(),
        config: cfg,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        threads,
        checks: outcome.checks.list,
        passed,
        outputs: out.entries,
        summary: outcome.summary,
    };
    record::write_record(&dir, &record)?;
    println!("{}: {} ({})", kind.name(), if passed { "PASS" } else { "FAIL" }, dir.join(RECORD_FILE).display());
    Ok(ExitCode::from(if passed { exit::PASS } else { exit::CHECK }))
}

fn verify(seed: Option<u64>, threads: Option<usize>, out: &Path, tolerance_scale: f64) -> Result<ExitCode, CliError> {
    if !(tolerance_scale > 0.0) || !tolerance_scale.is_finite() {
        return Err(CliError::Config("`--tolerance-scale` must be positive".into()));
    }
    init_threads(threads)?;
    let defaults = AcceptanceOptions::default();
    let opts = AcceptanceOptions {
        master_seed: seed.unwrap_or(defaults.master_seed),
        tolerance_scale,
    };
    let start = Instant::now();
    let outcomes = acceptance::CRITERIA
        .iter()
        .map(|c| {
            let o = acceptance::run_criterion(&opts, c);
            println!("{}", o.summary_line());
            o
        })
        .collect::<Vec<_>>();
    let passed = outcomes.iter().all(|o| o.passed());
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let path = out.join("verify.json");
    let report = serde_json::json!({
        "artifact": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "options": opts,
        "wall_clock_seconds": start.elapsed().as_secs_f64(),
        "passed": passed,
        "criteria": outcomes,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("serializable"))
        .map_err(|e| CliError::io(&path, e))?;
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    Ok(ExitCode::from(if passed { exit::PASS } else { exit::CHECK }))
}

fn plot(record_path: &Path, id: &str, out: Option<&Path>) -> Result<ExitCode, CliError> {
    let (dir, file) = if record_path.is_dir() {
        (record_path.to_path_buf(), record_path.join(RECORD_FILE))
    } else {
        (record_path.parent().unwrap_or(Path::new(".")).to_path_buf(), record_path.to_path_buf())
    };
    let record = RunRecord::load(&file)?;
    let table = record::plot_table(&record, &dir, id)?;
    let dest = out.map_or_else(|| dir.join(format!("plot_{id}.csv")), Path::to_path_buf);
    std::fs::write(&dest, table).map_err(|e| CliError::io(&dest, e))?;
    println!("{}", dest.display());
    Ok(ExitCode::SUCCESS)
}
