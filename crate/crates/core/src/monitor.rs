//! The security monitor runtime: event ingestion, continuous saturation,
//! periodic commit, polling of watched owners, and the query interface.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::claimdb::{ClaimStore, StoreError};
use crate::engine::{instantiate_pattern, Claim, GroundAtom, Substitution, Value};
use crate::identity::{Identity, TrustStore};
use crate::lang::{parse_atom, Atom, LangError, Rulesheet};
use crate::revision::{Replica, RevisionError, RevisionRecord, SyncOutcome};

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("rejected event: {0}")]
    Rejected(String),
    #[error(transparent)]
    Pattern(#[from] LangError),
    #[error(transparent)]
    Revision(#[from] RevisionError),
}

impl From<crate::engine::EngineError> for MonitorError {
    fn from(e: crate::engine::EngineError) -> Self {
        MonitorError::Revision(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Put,
    Delete,
}

impl Method {
    /// Predicate of the fact an intercepted request of this method produces.
    pub fn predicate(self) -> &'static str {
        match self {
            Method::Get => "getRequest",
            Method::Post => "postRequest",
            Method::Put => "putRequest",
            Method::Delete => "deleteRequest",
        }
    }
}

/// An intercepted request as forwarded by the proxy. The timestamp comes
/// from the envelope, not the monitor's clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub method: Method,
    pub path: String,
    #[serde(default)]
    pub body: String,
    pub timestamp: i64,
}

impl EventEnvelope {
    pub fn post(path: &str, body: &str, timestamp: i64) -> Self {
        EventEnvelope {
            method: Method::Post,
            path: path.to_string(),
            body: body.to_string(),
            timestamp,
        }
    }

    fn validate(&self) -> Result<(), MonitorError> {
        if self.timestamp < 0 {
            return Err(MonitorError::Rejected(format!("negative timestamp {}", self.timestamp)));
        }
        if !self.path.starts_with('/') {
            return Err(MonitorError::Rejected(format!("path {:?} does not start with '/'", self.path)));
        }
        Ok(())
    }

    /// `self attests <method>Request(path, timestamp, body)`.
    pub fn to_atom(&self, owner: &str) -> GroundAtom {
        GroundAtom::new(
            owner,
            self.method.predicate(),
            vec![
                Value::Str(self.path.clone()),
                Value::Int(self.timestamp),
                Value::Str(self.body.clone()),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub commit_interval_ms: i64,
    pub poll_interval_ms: i64,
    pub watched_owners: Vec<String>,
    /// When set, events are allowed only while some `self attests <pred>(..)`
    /// is derivable; otherwise every event is allowed.
    pub authorize_predicate: Option<String>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            commit_interval_ms: 1000,
            poll_interval_ms: 500,
            watched_owners: Vec::new(),
            authorize_predicate: None,
        }
    }
}

/// Reply to the proxy callout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub allow: bool,
    pub asserted: String,
    /// Claims added by this event, including the event fact itself.
    pub facts_added: usize,
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub bindings: Substitution,
    /// Whether the matched claim's evidence re-checks down to its leaves.
    pub evidence_complete: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub monitor: String,
    pub events: usize,
    pub delay_min_ms: f64,
    pub delay_avg_ms: f64,
    pub delay_max_ms: f64,
    pub kb_facts: usize,
    pub facts_added_avg: f64,
    pub facts_added_max: usize,
    pub commits: u64,
    pub polls: u64,
    pub poll_errors: u64,
    pub head_revision: Option<String>,
    pub head_claims: usize,
}

#[derive(Debug, Clone, Default)]
struct Metrics {
    delays_ms: Vec<f64>,
    facts_added: Vec<usize>,
    polls: u64,
    poll_errors: u64,
    head: Option<(String, usize)>,
}

pub struct Monitor {
    replica: Replica,
    config: MonitorConfig,
    metrics: Metrics,
}

impl Monitor {
    pub fn new(
        identity: Identity,
        rulesheet: Rulesheet,
        trust: TrustStore,
        store: Arc<dyn ClaimStore>,
        config: MonitorConfig,
    ) -> Result<Self, MonitorError> {
        Ok(Monitor {
            replica: Replica::new(identity, rulesheet, trust, store)?,
            config,
            metrics: Metrics::default(),
        })
    }

    pub fn name(&self) -> &str {
        self.replica.name()
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn replica(&self) -> &Replica {
        &self.replica
    }

    pub fn replica_mut(&mut self) -> &mut Replica {
        &mut self.replica
    }

    /// Asserts the event fact, saturates, and answers the callout.
    pub fn ingest_event(&mut self, ev: &EventEnvelope) -> Result<Decision, MonitorError> {
        ev.validate()?;
        let start = Instant::now();
        let before = self.replica.kb().len();
        let atom = ev.to_atom(self.name());
        let claim = Claim::asserted(self.replica.identity(), atom.clone())?;
        self.replica.assert_claim(claim)?;
        self.replica.saturate()?;
        let facts_added = self.replica.kb().len() - before;
        let allow = self.authorized();
        let delay_ms = start.elapsed().as_secs_f64() * 1000.0;
        self.metrics.delays_ms.push(delay_ms);
        self.metrics.facts_added.push(facts_added);
        Ok(Decision {
            allow,
            asserted: atom.to_string(),
            facts_added,
            delay_ms,
        })
    }

    fn authorized(&self) -> bool {
        let Some(pred) = &self.config.authorize_predicate else {
            return true;
        };
        self.replica
            .kb()
            .claims()
            .any(|c| c.atom.principal == self.name() && c.atom.predicate == *pred)
    }

    /// Accepts a claim handed to the monitor directly.
    pub fn assert_claim(&mut self, claim: Claim) -> Result<bool, MonitorError> {
        let added = self.replica.assert_claim(claim)?;
        self.replica.saturate()?;
        Ok(added)
    }

    pub fn query(&self, pattern: &Atom) -> Result<Vec<Answer>, MonitorError> {
        let kb = self.replica.kb();
        let Atom::Relational(rel) = pattern else {
            return Err(crate::engine::EngineError::BuiltinQuery.into());
        };
        Ok(kb
            .query(pattern)?
            .into_iter()
            .map(|bindings| {
                let evidence_complete = instantiate_pattern(rel, &bindings)
                    .and_then(|a| kb.explain(&a).ok())
                    .is_some_and(|t| t.all_verified());
                Answer {
                    bindings,
                    evidence_complete,
                }
            })
            .collect())
    }

    /// Parses `pattern` (bare atoms belong to this monitor) and queries.
    pub fn handle_query(&self, pattern: &str) -> Result<Vec<Answer>, MonitorError> {
        let atom = parse_atom(pattern, self.name())?;
        self.query(&atom)
    }

    /// Brings every watched owner up to date. An unreachable claim database
    /// skips the cycle; a verification failure skips that owner.
    pub fn poll_and_include(&mut self) -> Vec<(String, Result<SyncOutcome, String>)> {
        self.metrics.polls += 1;
        let mut out = Vec::new();
        for owner in self.config.watched_owners.clone() {
            let res = self.replica.sync_owner(&owner);
            if let Err(e) = &res {
                self.metrics.poll_errors += 1;
                log::warn!("{}: syncing '{owner}' failed: {e}", self.name());
                if matches!(e, RevisionError::Store(StoreError::Unavailable(_))) {
                    out.push((owner, res.map_err(|e| e.to_string())));
                    break;
                }
            }
            out.push((owner, res.map_err(|e| e.to_string())));
        }
        out
    }

    pub fn commit(&mut self, now: i64) -> Result<RevisionRecord, MonitorError> {
        let rec = self.replica.commit(now)?;
        self.metrics.head = Some((rec.id.to_hex(), rec.body.claims.len()));
        Ok(rec)
    }

    pub fn metrics(&self) -> MetricsReport {
        let d = &self.metrics.delays_ms;
        let n = d.len();
        let (min, max, avg) = if n == 0 {
            (0.0, 0.0, 0.0)
        } else {
            (
                d.iter().cloned().fold(f64::INFINITY, f64::min),
                d.iter().cloned().fold(0.0, f64::max),
                d.iter().sum::<f64>() / n as f64,
            )
        };
        let fa = &self.metrics.facts_added;
        MetricsReport {
            monitor: self.name().to_string(),
            events: n,
            delay_min_ms: min,
            delay_avg_ms: avg,
            delay_max_ms: max,
            kb_facts: self.replica.kb().len(),
            facts_added_avg: if fa.is_empty() { 0.0 } else { fa.iter().sum::<usize>() as f64 / fa.len() as f64 },
            facts_added_max: fa.iter().copied().max().unwrap_or(0),
            commits: self.replica.commits(),
            polls: self.metrics.polls,
            poll_errors: self.metrics.poll_errors,
            head_revision: self.metrics.head.as_ref().map(|h| h.0.clone()),
            head_claims: self.metrics.head.as_ref().map_or(0, |h| h.1),
        }
    }
}
