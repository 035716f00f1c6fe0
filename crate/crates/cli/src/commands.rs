//! Subcommand implementations. Each returns the process exit code; `Err`
//! is a usage error (exit 2).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use cyberlog::audit::{audit_atom, audit_heads, verify_log, AuditError};
use cyberlog::claimdb::{ClaimDb, ClaimStore};
use cyberlog::claimlog::{SignedTreeHead, LOG_OPERATOR};
use cyberlog::engine::GroundAtom;
use cyberlog::harness::{LocalDeployment, MonitorDriver, Runner, Scenario, ScenarioReport};
use cyberlog::identity::{generate_identity, Identity, TrustStore};
use cyberlog::lang::{format_rulesheet, parse_atom, parse_rulesheet, validate_rulesheet, Atom, DiagnosticKind, Rulesheet};
use cyberlog::monitor::{Monitor, MonitorConfig};

use crate::client::{HttpClaimStore, HttpMonitor};
use crate::server::{db_router, monitor_router, serve_forever, spawn, Background};

pub const OK: i32 = 0;
pub const FAILED: i32 = 1;

pub type CmdResult = Result<i32, String>;

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn line(out: &mut dyn Write, text: impl AsRef<str>) {
    let _ = writeln!(out, "{}", text.as_ref());
}

/// The principal a rulesheet file runs as: `self_id` if given, else its
/// first identity declaration, else the file stem.
pub fn rulesheet_owner(text: &str, path: &Path, self_id: Option<&str>) -> String {
    if let Some(s) = self_id {
        return s.to_string();
    }
    let declared = text
        .lines()
        .map(str::trim_start)
        .find(|l| l.starts_with('\'') && l.contains("':"))
        .and_then(|l| l[1..].split('\'').next())
        .map(str::to_string);
    declared.unwrap_or_else(|| path.file_stem().map_or("self".into(), |s| s.to_string_lossy().into_owned()))
}

fn load_rulesheet(path: &Path, self_id: Option<&str>) -> Result<(String, Result<Rulesheet, String>), String> {
    let text = read(path)?;
    let owner = rulesheet_owner(&text, path, self_id);
    let rs = parse_rulesheet(&text, &owner).map_err(|e| format!("{}: {e}", path.display()));
    Ok((text, rs))
}

pub fn cmd_parse(path: &Path, self_id: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let (_, rs) = load_rulesheet(path, self_id)?;
    match rs {
        Ok(rs) => {
            line(out, serde_json::to_string_pretty(&rs).expect("rulesheets serialize"));
            Ok(OK)
        }
        Err(e) => {
            line(out, e);
            Ok(FAILED)
        }
    }
}

pub fn cmd_check(path: &Path, self_id: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let (_, rs) = load_rulesheet(path, self_id)?;
    let rs = match rs {
        Ok(rs) => rs,
        Err(e) => {
            line(out, format!("error: {e}"));
            return Ok(FAILED);
        }
    };
    let diags = validate_rulesheet(&rs);
    let mut errors = 0;
    for d in &diags {
        let warning = matches!(
            d.kind,
            DiagnosticKind::UndeclaredPrincipal | DiagnosticKind::MissingSelfIdentity | DiagnosticKind::DuplicateIdentity
        );
        if !warning {
            errors += 1;
        }
        line(out, format!("{}: {}: {d}", path.display(), if warning { "warning" } else { "error" }));
    }
    line(
        out,
        format!(
            "{}: {} rules ({} next), {} diagnostics",
            rs.self_id,
            rs.rules.len(),
            rs.next_rules().count(),
            diags.len()
        ),
    );
    Ok(if errors == 0 { OK } else { FAILED })
}

pub fn cmd_fmt(path: &Path, self_id: Option<&str>, write: bool, out: &mut dyn Write) -> CmdResult {
    let (_, rs) = load_rulesheet(path, self_id)?;
    let rs = match rs {
        Ok(rs) => rs,
        Err(e) => {
            line(out, e);
            return Ok(FAILED);
        }
    };
    let text = format_rulesheet(&rs);
    if write {
        std::fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
    } else {
        let _ = write!(out, "{text}");
    }
    Ok(OK)
}

pub fn read_key(path: &Path) -> Result<[u8; 32], String> {
    let text = read(path)?;
    let bytes = hex::decode(text.trim()).map_err(|e| format!("{}: {e}", path.display()))?;
    bytes
        .try_into()
        .map_err(|_| format!("{}: expected 32 key bytes", path.display()))
}

pub fn write_key(path: &Path, seed: &[u8; 32]) -> Result<(), String> {
    std::fs::write(path, format!("{}\n", hex::encode(seed))).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_trust(path: &Path) -> Result<TrustStore, String> {
    TrustStore::load(path).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn operator_identity(key: &Path) -> Result<Identity, String> {
    Ok(generate_identity(LOG_OPERATOR, "CN=claim-log", "CN=claim-log", Some(read_key(key)?)))
}

/// Where a command finds the claim database and the files around it.
#[derive(Debug, Clone, Default)]
pub struct StoreArgs {
    /// `http://...` URL or path to a log file.
    pub db: String,
    pub trust: Option<PathBuf>,
    pub operator_key: Option<PathBuf>,
}

impl StoreArgs {
    fn is_remote(&self) -> bool {
        self.db.starts_with("http://") || self.db.starts_with("https://")
    }

    fn sibling(&self, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf, String> {
        match explicit {
            Some(p) => Ok(p.clone()),
            None if !self.is_remote() => Ok(Path::new(&self.db).parent().unwrap_or(Path::new(".")).join(name)),
            None => Err(format!("--{} is required with a remote claim database", name.replace(['.', '_'], "-"))),
        }
    }

    pub fn trust(&self) -> Result<TrustStore, String> {
        load_trust(&self.sibling(&self.trust, "trust.json")?)
    }

    /// Opens the store. A local log that cannot be read is reported as a
    /// verification failure rather than a usage error.
    pub fn open(&self, trust: &TrustStore) -> Result<Result<Box<dyn ClaimStore>, String>, String> {
        if self.is_remote() {
            return Ok(Ok(Box::new(HttpClaimStore::new(&self.db))));
        }
        let path = Path::new(&self.db);
        if !path.exists() {
            return Err(format!("{}: no such log file", path.display()));
        }
        let op = operator_identity(&self.sibling(&self.operator_key, "operator.key")?)?;
        Ok(ClaimDb::open(path, op, trust.clone())
            .map(|db| Box::new(db) as Box<dyn ClaimStore>)
            .map_err(|e| format!("log {} is unreadable: {e}", path.display())))
    }
}

fn parse_ground(text: &str, owner: &str) -> Result<GroundAtom, String> {
    match parse_atom(text, owner).map_err(|e| e.to_string())? {
        Atom::Relational(r) => GroundAtom::from_rel(&r).ok_or_else(|| format!("`{text}` is not ground")),
        _ => Err(format!("`{text}` is not a relational atom")),
    }
}

/// Audits one atom of `owner`'s head revision, or with `atom == None` every
/// claim of every head revision.
pub fn cmd_audit(args: &StoreArgs, owner: Option<&str>, atom: Option<&str>, out: &mut dyn Write) -> CmdResult {
    let trust = args.trust()?;
    let store = match args.open(&trust)? {
        Ok(s) => s,
        Err(e) => {
            line(out, format!("FAIL: {e}"));
            return Ok(FAILED);
        }
    };
    match (owner, atom) {
        (Some(owner), Some(atom)) => {
            let atom = parse_ground(atom, owner)?;
            match audit_atom(store.as_ref(), &trust, owner, &atom) {
                Ok(report) => {
                    if let Some(tree) = &report.tree {
                        let _ = write!(out, "{}", tree.render());
                    }
                    for f in &report.log_failures {
                        line(out, format!("log: {f}"));
                    }
                    let ok = report.ok();
                    line(
                        out,
                        if ok {
                            format!("verified against log of size {}", report.log_size)
                        } else {
                            format!("FAIL: {} failures", report.failures().len())
                        },
                    );
                    Ok(if ok { OK } else { FAILED })
                }
                Err(e @ AuditError::NotInHead { .. }) => {
                    line(out, format!("not found: {e}"));
                    Ok(FAILED)
                }
                Err(e) => {
                    line(out, format!("FAIL: {e}"));
                    Ok(FAILED)
                }
            }
        }
        (owner, None) => {
            let owners: Vec<String> = match owner {
                Some(o) => vec![o.to_string()],
                None => trust.principals.iter().map(|e| e.name.clone()).filter(|n| n != LOG_OPERATOR).collect(),
            };
            match audit_heads(store.as_ref(), &trust, &owners) {
                Ok((checked, failures)) => {
                    for f in &failures {
                        line(out, format!("FAIL: {f}"));
                    }
                    line(out, format!("audited {checked} claims in the heads of {}: {} failures", owners.join(", "), failures.len()));
                    Ok(if failures.is_empty() { OK } else { FAILED })
                }
                Err(e) => {
                    line(out, format!("FAIL: {e}"));
                    Ok(FAILED)
                }
            }
        }
        (None, Some(_)) => Err("auditing an atom requires its owner".into()),
    }
}

fn load_heads(path: &Path) -> Result<Vec<SignedTreeHead>, String> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    serde_json::from_str(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn save_heads(path: &Path, heads: &[SignedTreeHead]) -> Result<(), String> {
    let text = serde_json::to_string_pretty(heads).expect("tree heads serialize");
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Checks the current log against the cached tree heads and appends the
/// current head to the cache when consistent.
pub fn cmd_verify_log(args: &StoreArgs, heads_path: &Path, out: &mut dyn Write) -> CmdResult {
    let trust = args.trust()?;
    let mut cached = load_heads(heads_path)?;
    if cached.is_empty() {
        return Err(format!("{}: at least one cached tree head is required", heads_path.display()));
    }
    let store = match args.open(&trust)? {
        Ok(s) => s,
        Err(e) => {
            line(out, format!("split-view/tamper suspected: {e}"));
            return Ok(FAILED);
        }
    };
    let verdict = match verify_log(store.as_ref(), &trust, &cached) {
        Ok(v) => v,
        Err(e) => {
            line(out, format!("FAIL: {e}"));
            return Ok(FAILED);
        }
    };
    for m in &verdict.messages {
        line(out, m);
    }
    if verdict.ok {
        line(
            out,
            format!(
                "consistent: {} cached heads extend to size {} ({})",
                cached.len(),
                verdict.current.tree_size,
                verdict.current.root_hash.short()
            ),
        );
        if cached.last() != Some(&verdict.current) {
            cached.push(verdict.current);
            save_heads(heads_path, &cached)?;
        }
        Ok(OK)
    } else {
        Ok(FAILED)
    }
}

pub fn cmd_query(monitor_url: &str, pattern: &str, out: &mut dyn Write) -> CmdResult {
    let m = HttpMonitor::new("", monitor_url);
    match m.query(pattern) {
        Ok(resp) => {
            for a in &resp.answers {
                let binds: Vec<String> = a.bindings.iter().map(|(k, v)| format!("{k} = {v}")).collect();
                let mark = if a.evidence_complete { "" } else { "  (evidence incomplete)" };
                line(out, format!("{{{}}}{mark}", binds.join(", ")));
            }
            line(out, format!("{} answers", resp.answers.len()));
            Ok(OK)
        }
        Err(e) => {
            line(out, format!("query failed: {e}"));
            Ok(FAILED)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    /// All monitors in-process, deterministic.
    Local,
    /// Claim database and monitors as HTTP services on loopback.
    Http,
}

/// Writes everything an auditor needs next to the log file.
fn write_artifacts(dir: &Path, scn: &Scenario, trust: &TrustStore, head: &SignedTreeHead, report: &ScenarioReport) -> Result<(), String> {
    let keys = dir.join("keys");
    std::fs::create_dir_all(&keys).map_err(|e| e.to_string())?;
    trust.save(dir.join("trust.json")).map_err(|e| e.to_string())?;
    write_key(&dir.join("operator.key"), &cyberlog::harness::seed_bytes(LOG_OPERATOR, scn.header.operator_seed))?;
    for m in &scn.header.monitors {
        write_key(&keys.join(format!("{}.key", m.name)), &cyberlog::harness::seed_bytes(&m.name, m.seed))?;
    }
    save_heads(&dir.join("heads.json"), std::slice::from_ref(head))?;
    let json = serde_json::to_string_pretty(report).expect("reports serialize");
    std::fs::write(dir.join("report.json"), json).map_err(|e| e.to_string())
}

/// Runs a scenario. With `out_dir`, the log is file-backed at
/// `out_dir/claims.log` and keys, trust store and tree head are written
/// alongside for later `audit` and `verify-log` runs.
pub fn run_scenario(path: &Path, mode: Mode, out_dir: Option<&Path>) -> Result<(ScenarioReport, SignedTreeHead, TrustStore), String> {
    let scn = Scenario::load(path).map_err(|e| e.to_string())?;
    let log_path = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| format!("{}: {e}", d.display()))?;
            let p = d.join("claims.log");
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            }
            Some(p)
        }
        None => None,
    };
    let (report, head, trust) = match mode {
        Mode::Local => {
            let mut dep = LocalDeployment::new(scn.clone(), log_path).map_err(|e| e.to_string())?;
            let report = dep.run();
            let head = dep.db.log_root().map_err(|e| e.to_string())?;
            (report, head, dep.trust)
        }
        Mode::Http => run_http(&scn, log_path)?,
    };
    if let Some(d) = out_dir {
        write_artifacts(d, &scn, &trust, &head, &report)?;
    }
    Ok((report, head, trust))
}

/// Loopback deployment: one claim database server and one server per
/// monitor, driven over HTTP.
pub struct HttpDeployment {
    pub db: Background,
    pub monitors: Vec<Background>,
    pub runner: Runner<HttpMonitor>,
    pub trust: TrustStore,
}

impl HttpDeployment {
    pub fn new(scn: &Scenario, log_path: Option<PathBuf>) -> Result<Self, String> {
        let trust = scn.trust_store().map_err(|e| e.to_string())?;
        let op = scn.operator();
        let db = match &log_path {
            Some(p) => ClaimDb::open(p, op, trust.clone()).map_err(|e| e.to_string())?,
            None => ClaimDb::in_memory(op, trust.clone()),
        };
        let db_srv = spawn(db_router(Arc::new(db), true), "127.0.0.1:0").map_err(|e| e.to_string())?;
        let ids = scn.identities().map_err(|e| e.to_string())?;
        let mut servers = Vec::new();
        let mut drivers = Vec::new();
        for (spec, id) in scn.header.monitors.iter().zip(ids) {
            let rs = scn.rulesheet(&spec.name).map_err(|e| e.to_string())?;
            let store = Arc::new(HttpClaimStore::new(&db_srv.url()));
            let m = Monitor::new(id, rs, trust.clone(), store, spec.config()).map_err(|e| e.to_string())?;
            let srv = spawn(monitor_router(Arc::new(Mutex::new(m))), "127.0.0.1:0").map_err(|e| e.to_string())?;
            drivers.push(HttpMonitor::new(&spec.name, &srv.url()));
            servers.push(srv);
        }
        let clock = HttpClaimStore::new(&db_srv.url());
        let runner = Runner::new(
            scn.clone(),
            drivers,
            Box::new(move |t| {
                if let Err(e) = clock.set_time(t) {
                    log::warn!("setting the claim database clock failed: {e}");
                }
            }),
        );
        Ok(HttpDeployment {
            db: db_srv,
            monitors: servers,
            runner,
            trust,
        })
    }

    pub fn store(&self) -> HttpClaimStore {
        HttpClaimStore::new(&self.db.url())
    }
}

fn run_http(scn: &Scenario, log_path: Option<PathBuf>) -> Result<(ScenarioReport, SignedTreeHead, TrustStore), String> {
    let mut dep = HttpDeployment::new(scn, log_path)?;
    let report = dep.runner.run();
    let head = dep.store().log_root().map_err(|e| e.to_string())?;
    Ok((report, head, dep.trust.clone()))
}

pub fn cmd_run_scenario(path: &Path, mode: Mode, out_dir: Option<&Path>, json: bool, out: &mut dyn Write) -> CmdResult {
    let (report, head, _) = run_scenario(path, mode, out_dir)?;
    if json {
        line(out, serde_json::to_string_pretty(&report).expect("reports serialize"));
    } else {
        let _ = write!(out, "{}", report.render());
        line(out, format!("\nlog size {} root {}", head.tree_size, head.root_hash));
    }
    Ok(if report.ok() { OK } else { FAILED })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbConfig {
    pub listen: Option<String>,
    pub log: Option<PathBuf>,
    pub trust: Option<PathBuf>,
    pub operator_key: Option<PathBuf>,
    pub virtual_clock: Option<bool>,
}

impl DbConfig {
    /// Fields set in `self` win over those in `other`.
    pub fn or(self, other: DbConfig) -> DbConfig {
        DbConfig {
            listen: self.listen.or(other.listen),
            log: self.log.or(other.log),
            trust: self.trust.or(other.trust),
            operator_key: self.operator_key.or(other.operator_key),
            virtual_clock: self.virtual_clock.or(other.virtual_clock),
        }
    }
}

pub fn load_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T, String> {
    match path {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| format!("{}: {e}", p.display())),
        None => Ok(T::default()),
    }
}

pub fn cmd_serve_db(cfg: DbConfig) -> CmdResult {
    let trust = load_trust(cfg.trust.as_deref().ok_or("a trust store is required (--trust)")?)?;
    let op = operator_identity(cfg.operator_key.as_deref().ok_or("an operator key is required (--operator-key)")?)?;
    let mut db = match &cfg.log {
        Some(p) => ClaimDb::open(p, op, trust).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ClaimDb::in_memory(op, trust),
    };
    let virtual_clock = cfg.virtual_clock.unwrap_or(false);
    if !virtual_clock {
        db = db.with_wall_clock();
    }
    let listen = cfg.listen.unwrap_or_else(|| "127.0.0.1:7000".into());
    serve_forever(db_router(Arc::new(db), virtual_clock), &listen).map_err(|e| format!("{listen}: {e}"))?;
    Ok(OK)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorServeConfig {
    pub name: Option<String>,
    pub rulesheet: Option<PathBuf>,
    pub key: Option<PathBuf>,
    pub trust: Option<PathBuf>,
    pub db: Option<String>,
    pub listen: Option<String>,
    pub watch: Option<Vec<String>>,
    pub commit_interval_ms: Option<i64>,
    pub poll_interval_ms: Option<i64>,
    pub authorize: Option<String>,
}

impl MonitorServeConfig {
    pub fn or(self, o: MonitorServeConfig) -> MonitorServeConfig {
        MonitorServeConfig {
            name: self.name.or(o.name),
            rulesheet: self.rulesheet.or(o.rulesheet),
            key: self.key.or(o.key),
            trust: self.trust.or(o.trust),
            db: self.db.or(o.db),
            listen: self.listen.or(o.listen),
            watch: self.watch.or(o.watch),
            commit_interval_ms: self.commit_interval_ms.or(o.commit_interval_ms),
            poll_interval_ms: self.poll_interval_ms.or(o.poll_interval_ms),
            authorize: self.authorize.or(o.authorize),
        }
    }
}

fn wall_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

pub fn cmd_serve_monitor(cfg: MonitorServeConfig) -> CmdResult {
    let rs_path = cfg.rulesheet.ok_or("a rulesheet is required (--rulesheet)")?;
    let (_, rs) = load_rulesheet(&rs_path, cfg.name.as_deref())?;
    let rs = rs?;
    let seed = read_key(cfg.key.as_deref().ok_or("a key file is required (--key)")?)?;
    let decl = rs.identity(&rs.self_id);
    let id = generate_identity(
        &rs.self_id,
        decl.map_or("", |d| d.subject.as_str()),
        decl.map_or("", |d| d.issuer.as_str()),
        Some(seed),
    );
    let trust = load_trust(cfg.trust.as_deref().ok_or("a trust store is required (--trust)")?)?;
    if trust.key(&id.name) != Some(id.public_key()) {
        return Err(format!("the key does not match the trust store entry for '{}'", id.name));
    }
    let db = cfg.db.ok_or("a claim database URL is required (--db)")?;
    let config = MonitorConfig {
        commit_interval_ms: cfg.commit_interval_ms.unwrap_or(1000),
        poll_interval_ms: cfg.poll_interval_ms.unwrap_or(500),
        watched_owners: cfg.watch.unwrap_or_default(),
        authorize_predicate: cfg.authorize,
    };
    let (commit_every, poll_every) = (config.commit_interval_ms, config.poll_interval_ms);
    let m = Monitor::new(id, rs, trust, Arc::new(HttpClaimStore::new(&db)), config).map_err(|e| e.to_string())?;
    let shared = Arc::new(Mutex::new(m));
    let ticker = shared.clone();
    std::thread::spawn(move || {
        let start = Instant::now();
        let (mut next_commit, mut next_poll) = (commit_every, poll_every);
        loop {
            std::thread::sleep(Duration::from_millis(25));
            let elapsed = start.elapsed().as_millis() as i64;
            let Ok(mut m) = ticker.lock() else { return };
            if elapsed >= next_poll {
                m.poll_and_include();
                next_poll += poll_every;
            }
            if elapsed >= next_commit {
                if let Err(e) = m.commit(wall_ms()) {
                    log::warn!("commit failed: {e}");
                }
                next_commit += commit_every;
            }
        }
    });
    let listen = cfg.listen.unwrap_or_else(|| "127.0.0.1:7100".into());
    serve_forever(monitor_router(shared), &listen).map_err(|e| format!("{listen}: {e}"))?;
    Ok(OK)
}

/// Drives a local deployment step by step; used by callers that need to
/// observe monitors mid-run.
pub fn local_deployment(path: &Path, log_path: Option<PathBuf>) -> Result<LocalDeployment, String> {
    let scn = Scenario::load(path).map_err(|e| e.to_string())?;
    LocalDeployment::new(scn, log_path).map_err(|e| e.to_string())
}

/// Head revision claim count per monitor, as reported by the monitors.
pub fn head_claims<D: MonitorDriver>(runner: &mut Runner<D>, name: &str) -> Option<usize> {
    runner.driver_mut(name)?.metrics().ok().map(|m| m.head_claims)
}
