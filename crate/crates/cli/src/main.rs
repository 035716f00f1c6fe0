use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cyberlog_cli::commands::{
    cmd_audit, cmd_check, cmd_fmt, cmd_parse, cmd_query, cmd_run_scenario, cmd_serve_db, cmd_serve_monitor, cmd_verify_log,
    load_config, DbConfig, Mode, MonitorServeConfig, StoreArgs,
};

#[derive(Parser)]
#[command(name = "cyberlog", version, about = "Cyberlog monitors, claim database and audit tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Store {
    /// Claim database: `http://host:port` or a log file path.
    #[arg(long)]
    db: String,
    /// Trust store; defaults to `trust.json` next to a log file.
    #[arg(long)]
    trust: Option<PathBuf>,
    /// Log operator key; defaults to `operator.key` next to a log file.
    #[arg(long)]
    operator_key: Option<PathBuf>,
}

impl From<Store> for StoreArgs {
    fn from(s: Store) -> Self {
        StoreArgs {
            db: s.db,
            trust: s.trust,
            operator_key: s.operator_key,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a rulesheet and print its syntax tree as JSON.
    Parse {
        path: PathBuf,
        /// Principal running the rulesheet.
        #[arg(long = "self")]
        self_id: Option<String>,
    },
    /// Parse and validate a rulesheet.
    Check {
        path: PathBuf,
        #[arg(long = "self")]
        self_id: Option<String>,
    },
    /// Print a rulesheet in canonical form.
    Fmt {
        path: PathBuf,
        #[arg(long = "self")]
        self_id: Option<String>,
        /// Rewrite the file in place.
        #[arg(long)]
        write: bool,
    },
    /// Serve the claim database over HTTP.
    ServeDb {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
        /// Log file; in-memory if absent.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        trust: Option<PathBuf>,
        #[arg(long)]
        operator_key: Option<PathBuf>,
        /// Stamp tree heads from `POST /clock` instead of the wall clock.
        #[arg(long)]
        virtual_clock: bool,
    },
    /// Serve a monitor over HTTP.
    ServeMonitor {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        rulesheet: Option<PathBuf>,
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long)]
        trust: Option<PathBuf>,
        /// Claim database URL.
        #[arg(long)]
        db: Option<String>,
        #[arg(long)]
        listen: Option<String>,
        /// Owners whose head revisions are included.
        #[arg(long, value_delimiter = ',')]
        watch: Option<Vec<String>>,
        #[arg(long)]
        commit_interval_ms: Option<i64>,
        #[arg(long)]
        poll_interval_ms: Option<i64>,
        #[arg(long)]
        authorize: Option<String>,
    },
    /// Replay a scenario file and check its expectations.
    RunScenario {
        path: PathBuf,
        #[arg(long, value_enum, default_value = "local")]
        mode: Mode,
        /// Keep the log, keys, trust store and tree head in this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Query a running monitor.
    Query {
        /// Monitor URL.
        #[arg(long)]
        monitor: String,
        pattern: String,
    },
    /// Recheck the evidence of a claim in an owner's head revision.
    Audit {
        #[command(flatten)]
        store: Store,
        /// Audit every claim of every head revision (or of OWNER's).
        #[arg(long, conflicts_with = "atom")]
        all: bool,
        owner: Option<String>,
        atom: Option<String>,
    },
    /// Check the log against cached tree heads.
    VerifyLog {
        #[command(flatten)]
        store: Store,
        /// Cached tree heads; the current head is appended on success.
        #[arg(long)]
        heads: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, String> {
    let mut out = std::io::stdout();
    match cli.command {
        Command::Parse { path, self_id } => cmd_parse(&path, self_id.as_deref(), &mut out),
        Command::Check { path, self_id } => cmd_check(&path, self_id.as_deref(), &mut out),
        Command::Fmt { path, self_id, write } => cmd_fmt(&path, self_id.as_deref(), write, &mut out),
        Command::ServeDb {
            config,
            listen,
            log,
            trust,
            operator_key,
            virtual_clock,
        } => {
            let flags = DbConfig {
                listen,
                log,
                trust,
                operator_key,
                virtual_clock: virtual_clock.then_some(true),
            };
            cmd_serve_db(flags.or(load_config(config.as_deref())?))
        }
        Command::ServeMonitor {
            config,
            name,
            rulesheet,
            key,
            trust,
            db,
            listen,
            watch,
            commit_interval_ms,
            poll_interval_ms,
            authorize,
        } => {
            let flags = MonitorServeConfig {
                name,
                rulesheet,
                key,
                trust,
                db,
                listen,
                watch,
                commit_interval_ms,
                poll_interval_ms,
                authorize,
            };
            cmd_serve_monitor(flags.or(load_config(config.as_deref())?))
        }
        Command::RunScenario { path, mode, out_dir, json } => cmd_run_scenario(&path, mode, out_dir.as_deref(), json, &mut out),
        Command::Query { monitor, pattern } => cmd_query(&monitor, &pattern, &mut out),
        Command::Audit { store, all, owner, atom } => {
            if !all && atom.is_none() {
                return Err("give OWNER ATOM, or --all".into());
            }
            cmd_audit(&store.into(), owner.as_deref(), atom.as_deref(), &mut out)
        }
        Command::VerifyLog { store, heads } => cmd_verify_log(&store.into(), &heads, &mut out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
