use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use riccilab::report::ScenarioSummary;
use riccilab::scenario::{bundled, CheckSpec};
use riccilab::{run_scenario, Family, LabError, ScenarioConfig, Status, Summary};

const DEFAULT_OUT: &str = "riccilab-out";

#[derive(Parser)]
#[command(name = "riccilab", version, about = "Ricci flow numerical checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario config and write its CSV and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's `output`, then $RICCILAB_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Run one check family across every bundled scenario that has it.
    Check {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Print the bundled scenario names.
    ListScenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Default output root.
fn env_root() -> Option<PathBuf> {
    std::env::var_os("RICCILAB_OUT").filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("riccilab: {msg}");
    ExitCode::from(Status::UsageError.code() as u8)
}

fn is_usage(e: &LabError) -> bool {
    matches!(
        e,
        LabError::Config(_)
            | LabError::Cfl { .. }
            | LabError::UnderResolved { .. }
            | LabError::Json(_)
            | LabError::Io(_)
    )
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, String> {
    if threads == Some(0) {
        return Err("--threads must be at least 1".into());
    }
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| e.to_string())
}

fn run_one(cfg: &ScenarioConfig, family: Option<Family>, dir: &Path) -> Result<ScenarioSummary, LabError> {
    let mut outcome = run_scenario(cfg, family)?;
    outcome.write(dir)?;
    Ok(ScenarioSummary::from_manifest(&outcome.manifest, dir))
}

fn finish(summary: &Summary, dir: &Path, format: Format) -> ExitCode {
    let json = serde_json::to_vec_pretty(summary).expect("summary serializes");
    if let Err(e) = std::fs::write(dir.join("summary.json"), &json) {
        return usage(format!("cannot write summary: {e}"));
    }
    let body = match format {
        Format::Json => json,
        Format::Csv => summary.to_csv().expect("summary csv"),
    };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(&body);
    if matches!(format, Format::Json) {
        let _ = out.write_all(b"\n");
    }
    ExitCode::from(summary.exit_code as u8)
}

fn numerical_failure(cfg: &ScenarioConfig, e: &LabError) -> ScenarioSummary {
    eprintln!("riccilab: {}: {e}", cfg.name);
    ScenarioSummary {
        scenario: cfg.name.clone(),
        passed: false,
        guard: Some(riccilab::GuardEvent { step: 0, time: 0.0, reason: e.to_string() }),
        artifacts: vec![],
        checks: vec![],
    }
}

fn cmd_run(config: &Path, out: Option<PathBuf>, threads: Option<usize>, format: Format) -> ExitCode {
    let cfg = match ScenarioConfig::load(config) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    let dir = out.or_else(|| cfg.output.clone()).or_else(env_root).unwrap_or_else(|| DEFAULT_OUT.into());
    let pool = match pool(threads.or(cfg.threads)) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return usage(format!("{}: {e}", dir.display()));
    }
    let scen = match pool.install(|| run_one(&cfg, None, &dir)) {
        Ok(s) => s,
        Err(e) if is_usage(&e) => return usage(e),
        Err(e) => numerical_failure(&cfg, &e),
    };
    finish(&Summary::new("run", vec![scen]), &dir, format)
}

fn cmd_check(suite: &str, out: Option<PathBuf>, threads: Option<usize>, format: Format) -> ExitCode {
    let Some(family) = Family::parse(suite) else {
        let names: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
        return usage(format!("unknown suite '{suite}' (expected one of {})", names.join(", ")));
    };
    let dir = out.or_else(env_root).unwrap_or_else(|| DEFAULT_OUT.into()).join(family.name());
    let pool = match pool(threads) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return usage(format!("{}: {e}", dir.display()));
    }
    let configs = bundled().expect("bundled scenarios are valid");
    let mut scenarios = Vec::new();
    for cfg in configs.iter().filter(|c| c.checks.iter().any(|s: &CheckSpec| s.kind().family() == family)) {
        match pool.install(|| run_one(cfg, Some(family), &dir)) {
            Ok(s) => scenarios.push(s),
            Err(e) if is_usage(&e) => return usage(e),
            Err(e) => scenarios.push(numerical_failure(cfg, &e)),
        }
    }
    finish(&Summary::new(&format!("check {}", family.name()), scenarios), &dir, format)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { config, out, threads, format } => cmd_run(&config, out, threads, format),
        Command::Check { suite, out, threads, format } => cmd_check(&suite, out, threads, format),
        Command::ListScenarios => {
            for cfg in bundled().expect("bundled scenarios are valid") {
                let checks: Vec<_> = cfg.checks.iter().map(|c| c.kind().name()).collect();
                println!("{}\t{}", cfg.name, checks.join(","));
            }
            ExitCode::SUCCESS
        }
    }
}
