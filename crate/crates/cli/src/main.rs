//! `lfc`: run, compare and sweep microgrid secondary-control scenarios.
//!
//! Exit codes: 0 on success, 2 for invalid input (bad scenario, override,
//! or flag), 3 when the network solve diverges mid-run, 1 for I/O failures.
//! Errors are printed to stderr as one JSON object.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use lfc_core::consensus::ControlMode;
use lfc_core::metrics::{CONVERGENCE_BAND, CONVERGENCE_HOLD_S};
use lfc_core::output::{self, CompareTable, RunSummary};
use lfc_core::scenario::{library_case, resolve_scenario, sweep_point, Scenario, Simulation, SweepRow, CASE_NAMES};
use lfc_core::Error;

#[derive(Parser)]
#[command(name = "lfc", version, about = "Leader-follower consensus microgrid simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run(RunArgs),
    /// Run every library case.
    Library(LibraryArgs),
    /// Convergence time against number of communication links.
    Sweep(SweepArgs),
    /// Check a scenario without running it.
    Validate(ScenarioArgs),
    /// Run several cases on the same event script and tabulate them.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Library case name, scenario file, or run manifest.
    #[arg(value_name = "SCENARIO", required_unless_present = "scenario_flag")]
    scenario: Option<String>,
    #[arg(long = "scenario", value_name = "SCENARIO", conflicts_with = "scenario")]
    scenario_flag: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ControlMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value`, where key is a dotted scenario path such as `gains.alpha`.
    #[arg(long = "override", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

#[derive(Args)]
struct OutArgs {
    /// Output root; defaults to $LFC_OUT, then `lfc-out`.
    #[arg(long, env = "LFC_OUT", default_value = "lfc-out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct LibraryArgs {
    #[command(flatten)]
    out: OutArgs,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Base scenario; its topology is replaced by random graphs.
    #[arg(long, default_value = "topology_sweep")]
    scenario: String,
    #[arg(long, default_value_t = 8)]
    min_links: usize,
    #[arg(long, default_value_t = 36)]
    max_links: usize,
    /// Random topologies per link count.
    #[arg(long, default_value_t = 5)]
    samples: u64,
    /// Seed of the first sample; later samples use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "override", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Cases to compare; defaults to the four control strategies.
    cases: Vec<String>,
    #[arg(long = "override", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Also write compare.txt and compare.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_mode(s: &str) -> Result<ControlMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected KEY=VALUE, got '{s}'")),
    }
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::Config(_) => (2, "config"),
            Error::Parse { .. } => (2, "parse"),
            Error::Divergence { .. } => (3, "divergence"),
            Error::Io(_) => (1, "io"),
        };
        Failure { code, kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn pool(workers: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::config("--workers must be at least 1").into());
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Failure { code: 1, kind: "io", message: e.to_string() })
}

fn load(args: &ScenarioArgs) -> CliResult<Scenario> {
    let reference = args.scenario.as_deref().or(args.scenario_flag.as_deref()).expect("clap requires a scenario");
    let (sc, _) = resolve_scenario(reference)?;
    let mut overrides = args.overrides.clone();
    if let Some(mode) = args.mode {
        overrides.push(("mode".into(), format!("\"{}\"", mode.name())));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    let sc = sc.with_overrides(&overrides)?;
    sc.validate()?;
    Ok(sc)
}

/// Runs and writes artifacts; a diverged run still writes its partial
/// time series before failing.
fn run_into(sc: &Scenario, dir: &Path) -> CliResult<RunSummary> {
    let sim = Simulation::new(sc)?;
    match sim.run() {
        Ok(record) => {
            output::write_run(dir, sc, &record)?;
            Ok(RunSummary::new(sc, &record))
        }
        Err(aborted) => {
            std::fs::create_dir_all(dir)?;
            output::write_timeseries(&aborted.record, std::fs::File::create(dir.join(output::TIMESERIES_FILE))?)?;
            let mut f: Failure = aborted.error.into();
            f.message = format!("at t = {} s: {}", aborted.t, f.message);
            Err(f)
        }
    }
}

fn cmd_run(args: RunArgs) -> CliResult {
    let sc = load(&args.scenario)?;
    let dir = args.out.out.join(&sc.name);
    let summary = run_into(&sc, &dir)?;
    print!("{}", summary.to_table());
    println!("artifacts: {}", dir.display());
    Ok(())
}

fn cmd_validate(args: ScenarioArgs) -> CliResult {
    let sc = load(&args)?;
    println!("{}: ok ({} events, mode {})", sc.name, sc.events.len(), sc.mode.name());
    Ok(())
}

fn cmd_library(args: LibraryArgs) -> CliResult {
    let pool = pool(args.workers)?;
    let root = args.out.out;
    let results: Vec<CliResult<RunSummary>> = pool.install(|| {
        CASE_NAMES
            .par_iter()
            .map(|name| {
                let sc = library_case(name).expect("listed case exists");
                run_into(&sc, &root.join(name))
            })
            .collect()
    });
    let mut text = String::new();
    for r in results {
        text.push_str(&r?.to_table());
        text.push('\n');
    }
    std::fs::write(root.join("library.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    let (base, _) = resolve_scenario(&args.scenario)?;
    let base = base.with_overrides(&args.overrides)?;
    let n = base.network.resolve()?.inverters.len();
    let (lo, hi) = (n.saturating_sub(1), n * n.saturating_sub(1) / 2);
    if args.min_links > args.max_links || args.min_links < lo || args.max_links > hi {
        return Err(Error::config(format!(
            "link range {}..={} outside [{lo}, {hi}] for {n} inverters",
            args.min_links, args.max_links
        ))
        .into());
    }
    if args.samples == 0 {
        return Err(Error::config("--samples must be at least 1").into());
    }
    base.validate()?;
    let jobs: Vec<(usize, u64)> = (args.min_links..=args.max_links)
        .flat_map(|l| (0..args.samples).map(move |k| (l, args.seed + k)))
        .collect();
    let pool = pool(args.workers)?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        jobs.par_iter()
            .map(|&(l, s)| sweep_point(&base, l, s, CONVERGENCE_BAND, CONVERGENCE_HOLD_S))
            .collect::<Result<_, _>>()
    })?;
    rows.sort_by_key(|r| (r.links, r.seed));
    std::fs::create_dir_all(&args.out.out)?;
    let path = args.out.out.join("sweep.csv");
    output::write_sweep(&rows, std::fs::File::create(&path)?)?;
    output::write_sweep(&rows, std::io::stdout().lock())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CliResult {
    let names: Vec<String> = if args.cases.is_empty() {
        CASE_NAMES[..4].iter().map(|s| s.to_string()).collect()
    } else {
        args.cases
    };
    let scenarios: Vec<Scenario> = names
        .iter()
        .map(|n| -> CliResult<Scenario> {
            let sc = resolve_scenario(n)?.0.with_overrides(&args.overrides)?;
            sc.validate()?;
            Ok(sc)
        })
        .collect::<CliResult<_>>()?;
    // Reject mismatched scripts before spending time on the runs.
    let placeholder = |sc: &Scenario| RunSummary {
        scenario: sc.name.clone(),
        mode: sc.mode.name().to_string(),
        steady_window_s: sc.steady_window_s,
        convergence_band: CONVERGENCE_BAND,
        convergence_hold_s: CONVERGENCE_HOLD_S,
        windows: Vec::new(),
    };
    CompareTable::new(&scenarios.iter().map(|s| (s.clone(), placeholder(s))).collect::<Vec<_>>())?;
    let pool = pool(args.workers)?;
    let runs: Vec<(Scenario, RunSummary)> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|sc| lfc_core::scenario::run(sc).map(|r| (sc.clone(), RunSummary::new(sc, &r))))
            .collect::<Result<_, _>>()
    })?;
    let table = CompareTable::new(&runs)?;
    let text = table.to_table();
    if let Some(dir) = args.out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("compare.txt"), &text)?;
        std::fs::write(dir.join("compare.json"), table.to_json()? + "\n")?;
    }
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Library(a) => cmd_library(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Compare(a) => cmd_compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let err = serde_json::json!({ "error": { "kind": f.kind, "code": f.code, "message": f.message } });
            eprintln!("{err}");
            ExitCode::from(f.code)
        }
    }
}
