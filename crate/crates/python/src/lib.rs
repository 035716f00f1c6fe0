//! Python module `cyberlog`: rulesheets, knowledge bases, scenario
//! deployments, audits and Merkle proofs.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use cyberlog::audit::{audit_atom, audit_heads};
use cyberlog::claimdb::ClaimStore;
use cyberlog::claimlog::{leaf_hash, verify_consistency, verify_inclusion, ConsistencyProof, InclusionProof, MerkleLog};
use cyberlog::engine::{Claim, Evidence, GroundAtom, KnowledgeBase as Kb};
use cyberlog::harness::{LocalDeployment, MonitorDriver, Scenario};
use cyberlog::lang::{format_rulesheet, parse_atom, parse_rulesheet, validate_rulesheet, Atom, Rulesheet};
use cyberlog::Digest;

fn err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn ground(text: &str, self_id: &str) -> PyResult<GroundAtom> {
    match parse_atom(text, self_id).map_err(err)? {
        Atom::Relational(r) => GroundAtom::from_rel(&r).ok_or_else(|| err(format!("`{text}` is not ground"))),
        _ => Err(err(format!("`{text}` is not a relational atom"))),
    }
}

fn digest(hex: &str) -> PyResult<Digest> {
    hex.parse().map_err(|_| err(format!("'{hex}' is not a 64-digit hex digest")))
}

/// Parses a rulesheet and returns its syntax tree as plain Python data.
#[pyfunction]
fn parse<'py>(py: Python<'py>, text: &str, self_id: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &parse_rulesheet(text, self_id).map_err(err)?)
}

/// Canonical text of a rulesheet.
#[pyfunction]
fn format(text: &str, self_id: &str) -> PyResult<String> {
    Ok(format_rulesheet(&parse_rulesheet(text, self_id).map_err(err)?))
}

/// Validation diagnostics as strings; empty when clean.
#[pyfunction]
fn check(text: &str, self_id: &str) -> PyResult<Vec<String>> {
    let rs = parse_rulesheet(text, self_id).map_err(err)?;
    Ok(validate_rulesheet(&rs).iter().map(|d| d.to_string()).collect())
}

/// A rulesheet with its own knowledge base. Facts added here are trusted
/// without signatures.
#[pyclass(unsendable)]
struct KnowledgeBase {
    rs: Rulesheet,
    kb: Kb,
}

#[pymethods]
impl KnowledgeBase {
    #[new]
    fn new(rulesheet: &str, self_id: &str) -> PyResult<Self> {
        Ok(KnowledgeBase {
            rs: parse_rulesheet(rulesheet, self_id).map_err(err)?,
            kb: Kb::new(),
        })
    }

    /// Adds a ground fact such as `p(1, 'a')` or `'B' attests q(2)`.
    fn add_fact(&mut self, atom: &str) -> PyResult<bool> {
        let atom = ground(atom, &self.rs.self_id)?;
        let signer = atom.principal.clone();
        Ok(self.kb.insert_trusted(Claim::new(
            atom,
            Evidence::DirectAssertion {
                signer,
                signature: Vec::new(),
            },
        )))
    }

    /// Runs the rules to a fixpoint; returns the number of derived facts.
    fn saturate(&mut self) -> PyResult<usize> {
        self.kb.saturate(&self.rs).map(|s| s.derived).map_err(err)
    }

    /// Variable bindings for every match of `pattern`.
    fn query<'py>(&self, py: Python<'py>, pattern: &str) -> PyResult<Bound<'py, PyAny>> {
        let atom = parse_atom(pattern, &self.rs.self_id).map_err(err)?;
        to_py(py, &self.kb.query(&atom).map_err(err)?)
    }

    fn facts(&self) -> Vec<String> {
        let mut v: Vec<String> = self.kb.claims().map(|c| c.atom.to_string()).collect();
        v.sort();
        v
    }

    /// Rendered evidence tree of a fact.
    fn explain(&self, atom: &str) -> PyResult<String> {
        let atom = ground(atom, &self.rs.self_id)?;
        self.kb.explain(&atom).map(|t| t.render()).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.kb.len()
    }
}

/// An in-process deployment of a scenario: claim database plus monitors,
/// driven in virtual time.
#[pyclass(unsendable)]
struct Deployment {
    dep: LocalDeployment,
}

#[pymethods]
impl Deployment {
    #[new]
    #[pyo3(signature = (path, log_path=None))]
    fn new(path: PathBuf, log_path: Option<PathBuf>) -> PyResult<Self> {
        let scn = Scenario::load(&path).map_err(err)?;
        Ok(Deployment {
            dep: LocalDeployment::new(scn, log_path).map_err(err)?,
        })
    }

    /// Current virtual time in ms, or None before the first tick.
    fn now(&self) -> Option<i64> {
        self.dep.runner.now()
    }

    fn run_until(&mut self, t: i64) {
        self.dep.runner.run_until(t);
    }

    /// Runs to the end and returns the report.
    fn run<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = self.dep.run();
        to_py(py, &report)
    }

    fn count(&mut self, monitor: &str, pattern: &str) -> PyResult<usize> {
        let m = self
            .dep
            .runner
            .driver_mut(monitor)
            .ok_or_else(|| PyKeyError::new_err(monitor.to_string()))?;
        m.count(pattern).map_err(err)
    }

    fn metrics<'py>(&mut self, py: Python<'py>, monitor: &str) -> PyResult<Bound<'py, PyAny>> {
        let m = self
            .dep
            .runner
            .driver_mut(monitor)
            .ok_or_else(|| PyKeyError::new_err(monitor.to_string()))?;
        to_py(py, &MonitorDriver::metrics(m).map_err(err)?)
    }

    /// Signed tree head of the claim log.
    fn log_root<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.dep.db.log_root().map_err(err)?)
    }

    /// Audits one atom of `owner`'s head revision.
    fn audit<'py>(&self, py: Python<'py>, owner: &str, atom: &str) -> PyResult<Bound<'py, PyAny>> {
        let atom = ground(atom, owner)?;
        let report = audit_atom(self.dep.db.as_ref(), &self.dep.trust, owner, &atom).map_err(err)?;
        let out = to_py(py, &report)?;
        out.set_item("ok", report.ok())?;
        out.set_item("rendered", report.tree.as_ref().map(|t| t.render()))?;
        Ok(out)
    }

    /// Audits every claim of every head revision; returns (checked, failures).
    fn audit_all(&self) -> PyResult<(usize, Vec<String>)> {
        let owners: Vec<String> = self.dep.runner.scenario().header.monitors.iter().map(|m| m.name.clone()).collect();
        audit_heads(self.dep.db.as_ref(), &self.dep.trust, &owners).map_err(err)
    }
}

/// RFC 6962 tree hash of `leaves`, as hex.
#[pyfunction]
fn merkle_root(leaves: Vec<Vec<u8>>) -> PyResult<String> {
    let mut log = MerkleLog::in_memory();
    for l in &leaves {
        log.append(l).map_err(err)?;
    }
    Ok(log.current_root().to_string())
}

/// Audit path for leaf `index` in the tree over `leaves`, as hex digests.
#[pyfunction]
fn inclusion_proof(leaves: Vec<Vec<u8>>, index: u64) -> PyResult<Vec<String>> {
    let mut log = MerkleLog::in_memory();
    for l in &leaves {
        log.append(l).map_err(err)?;
    }
    let p = log.prove_inclusion(index, leaves.len() as u64).map_err(err)?;
    Ok(p.path.iter().map(|d| d.to_string()).collect())
}

/// Consistency proof between the first `old_size` leaves and all of them.
#[pyfunction]
fn consistency_proof(leaves: Vec<Vec<u8>>, old_size: u64) -> PyResult<Vec<String>> {
    let mut log = MerkleLog::in_memory();
    for l in &leaves {
        log.append(l).map_err(err)?;
    }
    let p = log.prove_consistency(old_size, leaves.len() as u64).map_err(err)?;
    Ok(p.path.iter().map(|d| d.to_string()).collect())
}

#[pyfunction(name = "verify_inclusion")]
fn py_verify_inclusion(root: &str, leaf: &Bound<'_, PyBytes>, index: u64, size: u64, path: Vec<String>) -> PyResult<bool> {
    let proof = InclusionProof {
        leaf_index: index,
        tree_size: size,
        path: path.iter().map(|h| digest(h)).collect::<PyResult<_>>()?,
    };
    Ok(verify_inclusion(&digest(root)?, &leaf_hash(leaf.as_bytes()), &proof))
}

#[pyfunction(name = "verify_consistency")]
fn py_verify_consistency(old_root: &str, new_root: &str, old_size: u64, new_size: u64, path: Vec<String>) -> PyResult<bool> {
    let proof = ConsistencyProof {
        old_size,
        new_size,
        path: path.iter().map(|h| digest(h)).collect::<PyResult<_>>()?,
    };
    Ok(verify_consistency(&digest(old_root)?, &digest(new_root)?, &proof))
}

/// Runs a scenario to completion and returns its report.
#[pyfunction]
fn run_scenario<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let (report, _) = cyberlog::harness::run_scenario(&path, None).map_err(err)?;
    to_py(py, &report)
}

/// SHA-256 of `data`, as hex.
#[pyfunction]
fn sha256(data: &[u8]) -> String {
    hex::encode(Digest::of(data).0)
}

#[pymodule]
#[pyo3(name = "cyberlog")]
pub fn cyberlog_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<KnowledgeBase>()?;
    m.add_class::<Deployment>()?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(format, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(merkle_root, m)?)?;
    m.add_function(wrap_pyfunction!(inclusion_proof, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_proof, m)?)?;
    m.add_function(wrap_pyfunction!(py_verify_inclusion, m)?)?;
    m.add_function(wrap_pyfunction!(py_verify_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(sha256, m)?)?;
    Ok(())
}
