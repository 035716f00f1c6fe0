//! Scenario replay in virtual time.
//!
//! A scenario file holds a header object on its first line followed by one
//! event object per line:
//!
//! ```text
//! {"scenario":"demo","settle_ms":3000,"monitors":[{"name":"SB","seed":1,"rulesheet":"rulesheets/sb.cyberlog"}],"expect":[{"monitor":"SB","query":"request(R, D, T)","count":1}]}
//! {"at":0,"target":"SB","method":"POST","path":"/servicerequest","body":"{\"request_id\":7}"}
//! ```
//!
//! At every tick the runner first delivers the events due, then commits the
//! monitors whose interval elapsed, then lets them poll, all in header order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize};

use crate::claimdb::{ClaimDb, ClaimStore};
use crate::claimlog::LOG_OPERATOR;
use crate::identity::{generate_identity, Identity, TrustStore};
use crate::lang::{parse_rulesheet, Rulesheet};
use crate::monitor::{Decision, EventEnvelope, Method, MetricsReport, Monitor, MonitorConfig};
use crate::Digest;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Load { path: String, message: String },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("monitor '{0}': {1}")]
    Setup(String, String),
}

fn default_method() -> Method {
    Method::Post
}

fn default_commit() -> i64 {
    1000
}

fn default_poll() -> i64 {
    500
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorSpec {
    pub name: String,
    pub seed: u64,
    pub rulesheet: String,
    #[serde(default)]
    pub watch: Vec<String>,
    #[serde(default = "default_commit")]
    pub commit_interval_ms: i64,
    #[serde(default = "default_poll")]
    pub poll_interval_ms: i64,
    #[serde(default)]
    pub authorize: Option<String>,
}

impl MonitorSpec {
    pub fn config(&self) -> MonitorConfig {
        MonitorConfig {
            commit_interval_ms: self.commit_interval_ms,
            poll_interval_ms: self.poll_interval_ms,
            watched_owners: self.watch.clone(),
            authorize_predicate: self.authorize.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub monitor: String,
    pub query: String,
    pub count: usize,
    /// Virtual time to check at; end of run if absent.
    #[serde(default)]
    pub at: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioHeader {
    pub scenario: String,
    #[serde(default)]
    pub settle_ms: i64,
    #[serde(default)]
    pub operator_seed: u64,
    pub monitors: Vec<MonitorSpec>,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

fn body_text<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    Ok(match serde_json::Value::deserialize(d)? {
        serde_json::Value::String(s) => s,
        serde_json::Value::Null => String::new(),
        other => other.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at: i64,
    pub target: String,
    #[serde(default = "default_method")]
    pub method: Method,
    pub path: String,
    #[serde(default, deserialize_with = "body_text")]
    pub body: String,
    /// Envelope timestamp; defaults to `at`.
    #[serde(default)]
    pub timestamp: Option<i64>,
}

impl ScenarioEvent {
    pub fn envelope(&self) -> EventEnvelope {
        EventEnvelope {
            method: self.method,
            path: self.path.clone(),
            body: self.body.clone(),
            timestamp: self.timestamp.unwrap_or(self.at),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub header: ScenarioHeader,
    pub events: Vec<ScenarioEvent>,
    /// Rulesheet source per monitor name.
    pub rulesheets: BTreeMap<String, String>,
}

impl Scenario {
    /// Parses scenario text; rulesheet paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(HarnessError::Format {
            line: 1,
            message: "empty scenario".into(),
        })?;
        let header: ScenarioHeader = serde_json::from_str(first).map_err(|e| HarnessError::Format {
            line: 1,
            message: format!("header: {e}"),
        })?;
        let mut events = Vec::new();
        for (i, line) in lines {
            let ev: ScenarioEvent = serde_json::from_str(line).map_err(|e| HarnessError::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(ev);
        }
        let mut rulesheets = BTreeMap::new();
        for m in &header.monitors {
            let path = base_dir.join(&m.rulesheet);
            let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Load {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            rulesheets.insert(m.name.clone(), text);
        }
        let scn = Scenario {
            header,
            events,
            rulesheets,
        };
        scn.validate()?;
        Ok(scn)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Load {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let known = |n: &str| self.header.monitors.iter().any(|m| m.name == n);
        let mut last = i64::MIN;
        for (i, ev) in self.events.iter().enumerate() {
            let line = i + 2;
            if !known(&ev.target) {
                return Err(HarnessError::Format {
                    line,
                    message: format!("unknown target '{}'", ev.target),
                });
            }
            if ev.at < last {
                return Err(HarnessError::Format {
                    line,
                    message: "event offsets must be nondecreasing".into(),
                });
            }
            last = ev.at;
        }
        for m in &self.header.monitors {
            if m.commit_interval_ms <= 0 || m.poll_interval_ms <= 0 {
                return Err(HarnessError::Setup(m.name.clone(), "intervals must be positive".into()));
            }
            if let Some(w) = m.watch.iter().find(|w| !known(w)) {
                return Err(HarnessError::Setup(m.name.clone(), format!("watches unknown monitor '{w}'")));
            }
        }
        if let Some(e) = self.header.expect.iter().find(|e| !known(&e.monitor)) {
            return Err(HarnessError::Setup(e.monitor.clone(), "expectation names an unknown monitor".into()));
        }
        Ok(())
    }

    pub fn rulesheet(&self, name: &str) -> Result<Rulesheet, HarnessError> {
        let text = self
            .rulesheets
            .get(name)
            .ok_or_else(|| HarnessError::Setup(name.to_string(), "no rulesheet".into()))?;
        parse_rulesheet(text, name).map_err(|e| HarnessError::Setup(name.to_string(), e.to_string()))
    }

    pub fn identities(&self) -> Result<Vec<Identity>, HarnessError> {
        self.header
            .monitors
            .iter()
            .map(|m| {
                let rs = self.rulesheet(&m.name)?;
                let decl = rs.identity(&m.name);
                Ok(generate_identity(
                    &m.name,
                    decl.map_or("", |d| d.subject.as_str()),
                    decl.map_or("", |d| d.issuer.as_str()),
                    Some(seed_bytes(&m.name, m.seed)),
                ))
            })
            .collect()
    }

    pub fn operator(&self) -> Identity {
        generate_identity(LOG_OPERATOR, "CN=claim-log", "CN=claim-log", Some(seed_bytes(LOG_OPERATOR, self.header.operator_seed)))
    }

    pub fn trust_store(&self) -> Result<TrustStore, HarnessError> {
        let ids = self.identities()?;
        let op = self.operator();
        Ok(TrustStore::from_identities(ids.iter().chain([&op])))
    }

    /// Time of the last tick.
    pub fn end_time(&self) -> i64 {
        let last_event = self.events.last().map_or(0, |e| e.at);
        let last_expect = self.header.expect.iter().filter_map(|e| e.at).max().unwrap_or(0);
        (last_event + self.header.settle_ms).max(last_expect)
    }
}

/// Deterministic key seed for a named principal.
pub fn seed_bytes(name: &str, seed: u64) -> [u8; 32] {
    Digest::of(format!("{name}:{seed}").as_bytes()).0
}

/// What the runner needs from a monitor, local or remote.
pub trait MonitorDriver {
    fn name(&self) -> &str;
    fn ingest(&mut self, ev: &EventEnvelope) -> Result<Decision, String>;
    fn commit(&mut self, now: i64) -> Result<(), String>;
    fn poll(&mut self) -> Result<(), String>;
    fn count(&mut self, pattern: &str) -> Result<usize, String>;
    fn metrics(&mut self) -> Result<MetricsReport, String>;
}

impl MonitorDriver for Monitor {
    fn name(&self) -> &str {
        Monitor::name(self)
    }

    fn ingest(&mut self, ev: &EventEnvelope) -> Result<Decision, String> {
        self.ingest_event(ev).map_err(|e| e.to_string())
    }

    fn commit(&mut self, now: i64) -> Result<(), String> {
        Monitor::commit(self, now).map(|_| ()).map_err(|e| e.to_string())
    }

    fn poll(&mut self) -> Result<(), String> {
        let errors: Vec<String> = self
            .poll_and_include()
            .into_iter()
            .filter_map(|(owner, r)| r.err().map(|e| format!("{owner}: {e}")))
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors.join("; "))
        }
    }

    fn count(&mut self, pattern: &str) -> Result<usize, String> {
        self.handle_query(pattern).map(|a| a.len()).map_err(|e| e.to_string())
    }

    fn metrics(&mut self) -> Result<MetricsReport, String> {
        Ok(Monitor::metrics(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationResult {
    pub monitor: String,
    pub query: String,
    pub at: i64,
    pub expected: usize,
    pub actual: Option<usize>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub end_time: i64,
    pub monitors: Vec<MetricsReport>,
    pub expectations: Vec<ExpectationResult>,
    pub errors: Vec<String>,
}

impl ScenarioReport {
    pub fn ok(&self) -> bool {
        self.expectations.iter().all(|e| e.pass)
    }

    pub fn render(&self) -> String {
        let mut out = format!("scenario {} (virtual end {} ms)\n\n", self.scenario, self.end_time);
        out.push_str(&format!(
            "{:<8} {:>6} {:>9} {:>9} {:>9} {:>8} {:>10} {:>8} {:>11}\n",
            "monitor", "events", "min ms", "avg ms", "max ms", "kb", "added avg", "commits", "head claims"
        ));
        for m in &self.monitors {
            out.push_str(&format!(
                "{:<8} {:>6} {:>9.3} {:>9.3} {:>9.3} {:>8} {:>10.2} {:>8} {:>11}\n",
                m.monitor, m.events, m.delay_min_ms, m.delay_avg_ms, m.delay_max_ms, m.kb_facts, m.facts_added_avg, m.commits, m.head_claims
            ));
        }
        if !self.expectations.is_empty() {
            out.push('\n');
        }
        for e in &self.expectations {
            let actual = e.actual.map_or("error".to_string(), |a| a.to_string());
            out.push_str(&format!(
                "{} {} @{} `{}`: expected {}, got {}\n",
                if e.pass { "PASS" } else { "FAIL" },
                e.monitor,
                e.at,
                e.query,
                e.expected,
                actual
            ));
        }
        for err in &self.errors {
            out.push_str(&format!("error: {err}\n"));
        }
        out
    }
}

/// Replays a scenario against a set of drivers.
pub struct Runner<D: MonitorDriver> {
    scenario: Scenario,
    drivers: Vec<D>,
    set_time: Box<dyn FnMut(i64)>,
    next_event: usize,
    next_commit: Vec<i64>,
    next_poll: Vec<Option<i64>>,
    now: Option<i64>,
    end: i64,
    pending: Vec<Expectation>,
    results: Vec<ExpectationResult>,
    errors: Vec<String>,
}

impl<D: MonitorDriver> Runner<D> {
    /// `drivers` must be in header order; `set_time` moves the claim
    /// database's clock before each tick.
    pub fn new(scenario: Scenario, drivers: Vec<D>, set_time: Box<dyn FnMut(i64)>) -> Self {
        let specs = &scenario.header.monitors;
        let next_commit = specs.iter().map(|m| m.commit_interval_ms).collect();
        let next_poll = specs
            .iter()
            .map(|m| (!m.watch.is_empty()).then_some(m.poll_interval_ms))
            .collect();
        let end = scenario.end_time();
        let mut pending = scenario.header.expect.clone();
        pending.sort_by_key(|e| e.at.unwrap_or(end));
        Runner {
            drivers,
            set_time,
            next_event: 0,
            next_commit,
            next_poll,
            now: None,
            end,
            pending,
            results: Vec::new(),
            errors: Vec::new(),
            scenario,
        }
    }

    pub fn now(&self) -> Option<i64> {
        self.now
    }

    pub fn end_time(&self) -> i64 {
        self.end
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn drivers(&self) -> &[D] {
        &self.drivers
    }

    pub fn driver_mut(&mut self, name: &str) -> Option<&mut D> {
        self.drivers.iter_mut().find(|d| d.name() == name)
    }

    fn next_tick(&self) -> Option<i64> {
        let ev = self.scenario.events.get(self.next_event).map(|e| e.at);
        let t = ev
            .into_iter()
            .chain(self.next_commit.iter().copied())
            .chain(self.next_poll.iter().flatten().copied())
            .chain(self.pending.first().map(|e| e.at.unwrap_or(self.end)))
            .min()?;
        let t = match self.now {
            None => t.min(0),
            Some(_) => t,
        };
        (t <= self.end).then_some(t)
    }

    /// Processes one tick; returns its time, or `None` once past the end.
    pub fn step(&mut self) -> Option<i64> {
        let t = self.next_tick()?;
        (self.set_time)(t);
        while let Some(ev) = self.scenario.events.get(self.next_event).filter(|e| e.at == t) {
            let env = ev.envelope();
            let target = ev.target.clone();
            self.next_event += 1;
            if let Some(d) = self.drivers.iter_mut().find(|d| d.name() == target) {
                if let Err(e) = d.ingest(&env) {
                    self.errors.push(format!("@{t} {target} ingest: {e}"));
                }
            }
        }
        for i in 0..self.drivers.len() {
            if self.next_commit[i] == t {
                if let Err(e) = self.drivers[i].commit(t) {
                    self.errors.push(format!("@{t} {} commit: {e}", self.drivers[i].name()));
                }
                self.next_commit[i] += self.scenario.header.monitors[i].commit_interval_ms;
            }
        }
        for i in 0..self.drivers.len() {
            if self.next_poll[i] == Some(t) {
                if let Err(e) = self.drivers[i].poll() {
                    self.errors.push(format!("@{t} {} poll: {e}", self.drivers[i].name()));
                }
                self.next_poll[i] = Some(t + self.scenario.header.monitors[i].poll_interval_ms);
            }
        }
        while self.pending.first().is_some_and(|e| e.at.unwrap_or(self.end) <= t) {
            let e = self.pending.remove(0);
            let actual = match self.drivers.iter_mut().find(|d| d.name() == e.monitor) {
                Some(d) => d.count(&e.query).map_err(|err| self.errors.push(format!("@{t} query `{}`: {err}", e.query))).ok(),
                None => None,
            };
            self.results.push(ExpectationResult {
                monitor: e.monitor,
                query: e.query,
                at: t,
                expected: e.count,
                actual,
                pass: actual == Some(e.count),
            });
        }
        self.now = Some(t);
        Some(t)
    }

    /// Runs every tick up to and including `t`.
    pub fn run_until(&mut self, t: i64) {
        while self.next_tick().is_some_and(|n| n <= t) {
            self.step();
        }
    }

    pub fn run(&mut self) -> ScenarioReport {
        while self.step().is_some() {}
        self.report()
    }

    pub fn report(&mut self) -> ScenarioReport {
        let monitors = self
            .drivers
            .iter_mut()
            .filter_map(|d| d.metrics().ok())
            .collect();
        ScenarioReport {
            scenario: self.scenario.header.scenario.clone(),
            end_time: self.end,
            monitors,
            expectations: self.results.clone(),
            errors: self.errors.clone(),
        }
    }
}

/// An in-process deployment: one claim database and all monitors.
pub struct LocalDeployment {
    pub db: Arc<ClaimDb>,
    pub trust: TrustStore,
    pub runner: Runner<Monitor>,
}

impl LocalDeployment {
    /// Sets up the scenario over an in-memory log, or a file-backed one at
    /// `log_path`.
    pub fn new(scenario: Scenario, log_path: Option<PathBuf>) -> Result<Self, HarnessError> {
        let trust = scenario.trust_store()?;
        let op = scenario.operator();
        let db = match &log_path {
            Some(p) => ClaimDb::open(p, op, trust.clone()).map_err(|e| HarnessError::Load {
                path: p.display().to_string(),
                message: e.to_string(),
            })?,
            None => ClaimDb::in_memory(op, trust.clone()),
        };
        let db = Arc::new(db);
        let store: Arc<dyn ClaimStore> = db.clone();
        let ids = scenario.identities()?;
        let mut monitors = Vec::new();
        for (spec, id) in scenario.header.monitors.iter().zip(ids) {
            let rs = scenario.rulesheet(&spec.name)?;
            let m = Monitor::new(id, rs, trust.clone(), store.clone(), spec.config())
                .map_err(|e| HarnessError::Setup(spec.name.clone(), e.to_string()))?;
            monitors.push(m);
        }
        let clock = db.clone();
        let runner = Runner::new(scenario, monitors, Box::new(move |t| clock.set_time(t)));
        Ok(LocalDeployment { db, trust, runner })
    }

    pub fn run(&mut self) -> ScenarioReport {
        self.runner.run()
    }
}

/// Loads and runs a scenario in-process.
pub fn run_scenario(path: impl AsRef<Path>, log_path: Option<PathBuf>) -> Result<(ScenarioReport, LocalDeployment), HarnessError> {
    let scenario = Scenario::load(path)?;
    let mut dep = LocalDeployment::new(scenario, log_path)?;
    let report = dep.run();
    Ok((report, dep))
}
