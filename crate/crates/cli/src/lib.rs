//! `codeteam` subcommands. Machine output goes to stdout or files,
//! diagnostics to stderr. Exit codes: 0 success, 1 validation or
//! verification failure (including unreadable inputs), 2 usage error.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use codeteam_core::analytics::{
    build_report, LoopWindows, DEFAULT_ACK_WINDOW_MS, DEFAULT_REPORT_WINDOW_MS,
};
use codeteam_core::bots::{simulate, BotScript, SimOptions};
use codeteam_core::logstore::{state_at, verify_determinism, Replayer, SessionLog};
use codeteam_core::model::SimTime;
use codeteam_core::scenario::{
    has_errors, load_scenario, validate_scenario, IssueSeverity, ScenarioDef,
};
use codeteam_core::session::SessionConfig;

pub const LOG_DIR_ENV: &str = "CODETEAM_LOG_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "codeteam",
    version,
    about = "Cardiac-arrest team simulation: live sessions, headless runs and debriefing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a live session over WebSocket until interrupted.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: SocketAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to $CODETEAM_LOG_DIR, then the working directory.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// End the session `Completed` after this much simulated time.
        #[arg(long)]
        duration_ms: Option<u64>,
    },
    /// Run a scripted session headless and write its log.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        bots: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Defaults to `<scenario-id>-<seed>.cts` in $CODETEAM_LOG_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct state from a log, or verify it re-simulates exactly.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Print the state after every event at or before this time (ms).
        #[arg(long, conflicts_with = "verify")]
        at: Option<u64>,
        #[arg(long)]
        verify: bool,
        /// Scenario to use instead of the one embedded in the log.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Build the team report for a finished log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        /// Defaults to the scenario embedded in the log.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Report JSON path; without it the JSON goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Acknowledgement window (ms).
        #[arg(long, default_value_t = DEFAULT_ACK_WINDOW_MS)]
        w1: u64,
        /// Report-back window (ms).
        #[arg(long, default_value_t = DEFAULT_REPORT_WINDOW_MS)]
        w2: u64,
    },
    /// Check a scenario document.
    ValidateScenario { file: PathBuf },
}

/// A runtime, validation or verification failure (exit 1). An empty
/// message means the diagnostics were already written.
#[derive(Debug)]
struct Failure(String);

fn failed(e: impl std::fmt::Display) -> Failure {
    Failure(e.to_string())
}

type Outcome = Result<(), Failure>;

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{text}");
                0
            } else {
                let _ = write!(err, "{text}");
                2
            };
        }
    };
    let result = match cli.command {
        Command::Serve {
            scenario,
            bind,
            seed,
            log_dir,
            duration_ms,
        } => serve(&scenario, bind, seed, log_dir, duration_ms, out, err),
        Command::Simulate {
            scenario,
            bots,
            seed,
            out: path,
        } => simulate_cmd(&scenario, &bots, seed, path, out),
        Command::Replay {
            log,
            at,
            verify,
            scenario,
        } => replay(&log, at, verify, scenario.as_deref(), out),
        Command::Analyze {
            log,
            scenario,
            out: path,
            w1,
            w2,
        } => analyze(
            &log,
            scenario.as_deref(),
            path.as_deref(),
            LoopWindows {
                ack_ms: w1,
                report_ms: w2,
            },
            out,
        ),
        Command::ValidateScenario { file } => validate(&file, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(Failure(m)) => {
            if !m.is_empty() {
                let _ = writeln!(err, "error: {m}");
            }
            1
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn read_scenario(path: &Path) -> Result<ScenarioDef, Failure> {
    load_scenario(&read(path)?).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn read_log(path: &Path) -> Result<SessionLog, Failure> {
    SessionLog::read(path).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn default_log_dir() -> PathBuf {
    std::env::var_os(LOG_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn simulate_cmd(
    scenario: &Path,
    bots: &Path,
    seed: u64,
    path: Option<PathBuf>,
    out: &mut dyn Write,
) -> Outcome {
    let sc = read_scenario(scenario)?;
    let script =
        BotScript::parse(&read(bots)?).map_err(|e| failed(format!("{}: {e}", bots.display())))?;
    let log = simulate(&sc, &script, seed, SimOptions::default()).map_err(failed)?;
    let path = path.unwrap_or_else(|| default_log_dir().join(format!("{}-{seed}.cts", sc.id)));
    log.write(&path)
        .map_err(|e| failed(format!("{}: {e}", path.display())))?;
    writeln!(out, "{}", path.display()).map_err(failed)
}

fn replay(
    log_path: &Path,
    at: Option<u64>,
    verify: bool,
    scenario: Option<&Path>,
    out: &mut dyn Write,
) -> Outcome {
    let log = read_log(log_path)?;
    let scenario = scenario.map(read_scenario).transpose()?;
    if verify {
        let verdict = verify_determinism(&log, scenario.as_ref()).map_err(failed)?;
        return match verdict.divergent_seq {
            None => {
                writeln!(out, "ok: {} events re-simulate exactly", log.events.len()).map_err(failed)
            }
            Some(seq) => {
                writeln!(out, "divergent seq {seq}").map_err(failed)?;
                Err(Failure(verdict.detail.unwrap_or_default()))
            }
        };
    }
    let state = match at {
        Some(t) => state_at(&log, SimTime(t), scenario.as_ref()).map_err(failed)?,
        None => {
            let mut r = Replayer::new(&log, scenario.as_ref()).map_err(failed)?;
            r.finish().map_err(failed)?;
            r.state()
        }
    };
    let json = serde_json::to_string_pretty(&state).map_err(failed)?;
    writeln!(out, "{json}").map_err(failed)
}

fn analyze(
    log_path: &Path,
    scenario: Option<&Path>,
    path: Option<&Path>,
    windows: LoopWindows,
    out: &mut dyn Write,
) -> Outcome {
    let log = read_log(log_path)?;
    let sc = match scenario {
        Some(p) => read_scenario(p)?,
        None => log.header.scenario.clone(),
    };
    let report = build_report(&log, &sc, windows).map_err(failed)?;
    let json = report.to_json_pretty();
    match path {
        Some(p) => {
            std::fs::write(p, json + "\n").map_err(|e| failed(format!("{}: {e}", p.display())))?;
            write!(out, "{}", report.to_text()).map_err(failed)
        }
        None => writeln!(out, "{json}").map_err(failed),
    }
}

fn validate(file: &Path, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let sc = read_scenario(file)?;
    let issues = validate_scenario(&sc);
    for i in &issues {
        let _ = writeln!(err, "{i}");
    }
    let errors = issues
        .iter()
        .filter(|i| i.severity == IssueSeverity::Error)
        .count();
    writeln!(
        out,
        "{}: {errors} error(s), {} warning(s)",
        sc.id,
        issues.len() - errors
    )
    .map_err(failed)?;
    if has_errors(&issues) {
        return Err(Failure(String::new()));
    }
    Ok(())
}

fn serve(
    scenario: &Path,
    bind: SocketAddr,
    seed: u64,
    log_dir: Option<PathBuf>,
    duration_ms: Option<u64>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Outcome {
    use codeteam_server::{serve, ServerConfig};

    let sc = read_scenario(scenario)?;
    let issues = validate_scenario(&sc);
    if has_errors(&issues) {
        for i in &issues {
            let _ = writeln!(err, "{i}");
        }
        return Err(failed(format!("{}: invalid scenario", scenario.display())));
    }
    let mut cfg = ServerConfig::new(SessionConfig::new(sc, seed));
    let dir = log_dir.unwrap_or_else(default_log_dir);
    std::fs::create_dir_all(&dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
    cfg.log_dir = Some(dir);
    cfg.max_duration = duration_ms.map(SimTime);

    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .try_init();
    let rt = tokio::runtime::Runtime::new().map_err(failed)?;
    let summary = rt.block_on(async {
        let handle = serve(cfg, bind).await.map_err(failed)?;
        let _ = writeln!(
            err,
            "listening on ws://{}/ws (session {})",
            handle.local_addr(),
            handle.session_id()
        );
        tokio::signal::ctrl_c().await.map_err(failed)?;
        handle.shutdown().await.map_err(failed)
    })?;
    if let Some(e) = &summary.log_error {
        return Err(failed(format!("log write failed: {e}")));
    }
    match &summary.log_path {
        Some(p) => writeln!(out, "{}", p.display()).map_err(failed),
        None => Ok(()),
    }
}
