//! Blocking HTTP clients for the claim database and monitor services.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use cyberlog::claimdb::{ClaimStore, HeadInfo, RevisionFetch, StoreError, SubmitReceipt};
use cyberlog::claimlog::{ConsistencyProof, InclusionProof, SignedTreeHead};
use cyberlog::harness::MonitorDriver;
use cyberlog::monitor::{Decision, EventEnvelope, MetricsReport};
use cyberlog::revision::{RevisionRecord, RulesheetEntry};
use cyberlog::Digest;

use crate::server::{Clock, CommitRequest, CommitResponse, LeafIndex, PollResult, QueryRequest, QueryResponse};

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

#[derive(Clone)]
struct Http {
    base: String,
    agent: ureq::Agent,
}

impl Http {
    fn new(base: &str) -> Self {
        Http {
            base: base.trim_end_matches('/').to_string(),
            agent: agent(),
        }
    }

    fn finish<T: DeserializeOwned>(&self, res: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<T, StoreError> {
        let mut resp = res.map_err(|e| StoreError::Unavailable(format!("{}: {e}", self.base)))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| StoreError::Unavailable(e.to_string()))?;
        if status.is_success() {
            serde_json::from_slice(&body).map_err(|e| StoreError::Unavailable(format!("malformed response: {e}")))
        } else {
            Err(serde_json::from_slice::<StoreError>(&body)
                .unwrap_or_else(|_| StoreError::Unavailable(format!("HTTP {status}: {}", String::from_utf8_lossy(&body)))))
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, StoreError> {
        self.finish(self.agent.get(&format!("{}{path}", self.base)).call())
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, StoreError> {
        self.finish(self.agent.post(&format!("{}{path}", self.base)).send_json(body))
    }

    fn bytes(&self, path: &str) -> Result<Vec<u8>, StoreError> {
        let mut resp = self
            .agent
            .get(&format!("{}{path}", self.base))
            .call()
            .map_err(|e| StoreError::Unavailable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| StoreError::Unavailable(e.to_string()))?;
        if status.is_success() {
            Ok(body)
        } else {
            Err(serde_json::from_slice(&body).unwrap_or_else(|_| StoreError::Unavailable(format!("HTTP {status}"))))
        }
    }
}

/// [`ClaimStore`] backed by a remote claim database.
#[derive(Clone)]
pub struct HttpClaimStore {
    http: Http,
}

impl HttpClaimStore {
    pub fn new(base: &str) -> Self {
        HttpClaimStore { http: Http::new(base) }
    }

    /// Moves the server's virtual clock; only served in virtual-time mode.
    pub fn set_time(&self, ms: i64) -> Result<(), StoreError> {
        self.http.post::<_, Clock>("/clock", &Clock { ms }).map(|_| ())
    }

    pub fn health(&self) -> bool {
        self.http
            .agent
            .get(&format!("{}/health", self.http.base))
            .call()
            .is_ok_and(|r| r.status().is_success())
    }
}

impl ClaimStore for HttpClaimStore {
    fn submit_revision(&self, record: &RevisionRecord) -> Result<SubmitReceipt, StoreError> {
        self.http.post("/revisions", record)
    }

    fn get_revision(&self, id: &Digest) -> Result<RevisionFetch, StoreError> {
        self.http.get(&format!("/revisions/{id}"))
    }

    fn get_head(&self, owner: &str) -> Result<HeadInfo, StoreError> {
        self.http.get(&format!("/heads/{owner}"))
    }

    fn log_root(&self) -> Result<SignedTreeHead, StoreError> {
        self.http.get("/log/root")
    }

    fn consistency(&self, old_size: u64, new_size: u64) -> Result<ConsistencyProof, StoreError> {
        self.http.get(&format!("/log/consistency?old={old_size}&new={new_size}"))
    }

    fn inclusion(&self, index: u64, size: u64) -> Result<InclusionProof, StoreError> {
        self.http.get(&format!("/log/inclusion?index={index}&size={size}"))
    }

    fn entry(&self, index: u64) -> Result<Vec<u8>, StoreError> {
        self.http.bytes(&format!("/log/entries/{index}"))
    }

    fn submit_rulesheet(&self, entry: &RulesheetEntry) -> Result<u64, StoreError> {
        self.http.post::<_, LeafIndex>("/rulesheets", entry).map(|l| l.leaf_index)
    }

    fn get_rulesheet(&self, owner: &str, hash: &Digest) -> Result<RulesheetEntry, StoreError> {
        self.http.get(&format!("/rulesheets/{owner}/{hash}"))
    }
}

/// Drives a remote monitor service.
pub struct HttpMonitor {
    name: String,
    http: Http,
}

impl HttpMonitor {
    pub fn new(name: &str, base: &str) -> Self {
        HttpMonitor {
            name: name.to_string(),
            http: Http::new(base),
        }
    }

    pub fn query(&self, pattern: &str) -> Result<QueryResponse, StoreError> {
        self.http.post(
            "/query",
            &QueryRequest {
                pattern: pattern.to_string(),
            },
        )
    }
}

impl MonitorDriver for HttpMonitor {
    fn name(&self) -> &str {
        &self.name
    }

    fn ingest(&mut self, ev: &EventEnvelope) -> Result<Decision, String> {
        self.http.post("/event", ev).map_err(|e| e.to_string())
    }

    fn commit(&mut self, now: i64) -> Result<(), String> {
        self.http
            .post::<_, CommitResponse>("/commit", &CommitRequest { now })
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    fn poll(&mut self) -> Result<(), String> {
        let res: Vec<PollResult> = self.http.post("/poll", &()).map_err(|e| e.to_string())?;
        let errors: Vec<String> = res
            .into_iter()
            .filter(|r| !r.ok)
            .map(|r| format!("{}: {}", r.owner, r.detail))
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors.join("; "))
        }
    }

    fn count(&mut self, pattern: &str) -> Result<usize, String> {
        self.query(pattern).map(|r| r.answers.len()).map_err(|e| e.to_string())
    }

    fn metrics(&mut self) -> Result<MetricsReport, String> {
        self.http.get("/metrics").map_err(|e| e.to_string())
    }
}
