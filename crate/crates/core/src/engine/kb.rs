use std::collections::HashMap;
use std::ops::Range;

use serde::Serialize;

use super::eval::{eval_builtin_atom, eval_comparison, format_substitution, instantiate, match_atom, Overflow};
use super::{Claim, EngineError, Evidence, GroundAtom, Substitution};
use crate::claimlog::{verify_inclusion, LOG_OPERATOR};
use crate::identity::TrustStore;
use crate::lang::{Atom, Rule, RuleKind, Rulesheet};
use crate::Digest;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaturateStats {
    pub rounds: usize,
    pub derived: usize,
}

/// Claims keyed by atom, indexed by `(principal, predicate)`.
///
/// Facts are kept in insertion order so that semi-naive rounds can address
/// "old" and "delta" facts as index ranges.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    facts: Vec<Claim>,
    by_atom: HashMap<GroundAtom, usize>,
    by_id: HashMap<Digest, usize>,
    index: HashMap<(String, String), Vec<usize>>,
    saturated_len: usize,
    saturated_with: Option<Digest>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_claims(claims: impl IntoIterator<Item = Claim>) -> Self {
        let mut kb = Self::new();
        for c in claims {
            kb.insert_trusted(c);
        }
        kb
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Claims in insertion order.
    pub fn claims(&self) -> impl Iterator<Item = &Claim> {
        self.facts.iter()
    }

    pub fn get(&self, atom: &GroundAtom) -> Option<&Claim> {
        self.by_atom.get(atom).map(|&i| &self.facts[i])
    }

    pub fn get_by_id(&self, id: &Digest) -> Option<&Claim> {
        self.by_id.get(id).map(|&i| &self.facts[i])
    }

    pub fn contains(&self, atom: &GroundAtom) -> bool {
        self.by_atom.contains_key(atom)
    }

    /// True when no standard rule of `rs` can derive a new atom.
    pub fn is_saturated(&self, rs: &Rulesheet) -> bool {
        self.saturated_with == Some(rs.source_hash) && self.saturated_len == self.facts.len()
    }

    /// Inserts a claim whose evidence the caller has already checked.
    /// Returns false if the atom was already present.
    pub fn insert_trusted(&mut self, claim: Claim) -> bool {
        if self.by_atom.contains_key(&claim.atom) {
            return false;
        }
        let i = self.facts.len();
        self.by_atom.insert(claim.atom.clone(), i);
        self.by_id.insert(claim.claim_id(), i);
        self.index
            .entry((claim.atom.principal.clone(), claim.atom.predicate.clone()))
            .or_default()
            .push(i);
        self.facts.push(claim);
        true
    }

    /// Checks the claim's evidence and stores it. Returns false if the atom
    /// was already present (the stored evidence is kept).
    pub fn assert_claim(&mut self, claim: Claim, trust: &TrustStore) -> Result<bool, EngineError> {
        if self.contains(&claim.atom) {
            return Ok(false);
        }
        self.check_evidence(&claim, trust).map_err(EngineError::InvalidEvidence)?;
        Ok(self.insert_trusted(claim))
    }

    pub fn check_evidence(&self, claim: &Claim, trust: &TrustStore) -> Result<(), String> {
        let atom = &claim.atom;
        match &claim.evidence {
            Evidence::DirectAssertion { signer, signature } => {
                if *signer != atom.principal {
                    return Err(format!("'{signer}' cannot directly assert for '{}'", atom.principal));
                }
                if trust.key(signer).is_none() {
                    return Err(format!("unknown signer '{signer}'"));
                }
                if !trust.verify(signer, atom.canonical().as_bytes(), signature) {
                    return Err(format!("bad signature by '{signer}' on {atom}"));
                }
                Ok(())
            }
            Evidence::DerivedByRule { rule, substitution, premises } => {
                if rule.kind != RuleKind::Standard {
                    return Err("derived claim names a next-rule".into());
                }
                let atoms = premises
                    .iter()
                    .map(|id| {
                        self.get_by_id(id)
                            .map(|c| &c.atom)
                            .ok_or_else(|| format!("premise {} of {atom} is not in the knowledge base", id.short()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                check_rule_instance(rule, substitution, atom, &atoms)
            }
            Evidence::LogInclusion { leaf_hash, proof, tree_head, .. } => {
                let key = trust
                    .key(LOG_OPERATOR)
                    .ok_or_else(|| format!("no key for log operator '{LOG_OPERATOR}'"))?;
                if !tree_head.verify(&key) {
                    return Err("tree head signature does not verify".into());
                }
                if proof.tree_size != tree_head.tree_size {
                    return Err("inclusion proof is for a different tree size".into());
                }
                if !verify_inclusion(&tree_head.root_hash, leaf_hash, proof) {
                    return Err(format!("inclusion proof for {atom} does not verify"));
                }
                Ok(())
            }
            Evidence::CarriedByNextRule { rule, substitution, .. } => {
                if rule.kind != RuleKind::Next {
                    return Err("carried claim names a standard rule".into());
                }
                match instantiate(&rule.head, substitution) {
                    Some(h) if h == *atom => Ok(()),
                    _ => Err(format!("next-rule head does not instantiate to {atom}")),
                }
            }
        }
    }

    /// Substitutions θ with θ(pattern) in the KB, ordered by the canonical
    /// form of the matched atom.
    pub fn query(&self, pattern: &Atom) -> Result<Vec<Substitution>, EngineError> {
        let Atom::Relational(p) = pattern else {
            return Err(EngineError::BuiltinQuery);
        };
        let mut hits: Vec<(String, Substitution)> = self
            .candidates(&p.principal, &p.predicate, 0..self.facts.len())
            .filter_map(|i| {
                let fact = &self.facts[i].atom;
                match_atom(p, fact, &Substitution::new()).map(|s| (fact.canonical(), s))
            })
            .collect();
        hits.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(hits.into_iter().map(|(_, s)| s).collect())
    }

    /// Evidence tree for `atom`, re-checking every rule instance.
    pub fn explain(&self, atom: &GroundAtom) -> Result<EvidenceTree, EngineError> {
        let claim = self.get(atom).ok_or_else(|| EngineError::Absent(atom.to_string()))?;
        Ok(self.explain_claim(claim))
    }

    fn explain_claim(&self, claim: &Claim) -> EvidenceTree {
        let mut premises = Vec::new();
        let mut error = None;
        if let Evidence::DerivedByRule { rule, substitution, premises: ids } = &claim.evidence {
            let mut atoms = Vec::new();
            for id in ids {
                match self.get_by_id(id) {
                    Some(c) => {
                        atoms.push(&c.atom);
                        premises.push(self.explain_claim(c));
                    }
                    None => error = Some(format!("missing premise {}", id.short())),
                }
            }
            if error.is_none() {
                error = check_rule_instance(rule, substitution, &claim.atom, &atoms).err();
            }
        }
        EvidenceTree {
            claim: claim.clone(),
            error,
            premises,
        }
    }

    /// Drops every claim matching `remove` together with all claims derived
    /// from it. The next saturation re-evaluates from scratch.
    pub fn remove_with_dependents(&mut self, mut remove: impl FnMut(&Claim) -> bool) -> Vec<Claim> {
        let mut dropped_ids = std::collections::HashSet::new();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for c in std::mem::take(&mut self.facts) {
            let depends = matches!(&c.evidence, Evidence::DerivedByRule { premises, .. }
                if premises.iter().any(|p| dropped_ids.contains(p)));
            if depends || remove(&c) {
                dropped_ids.insert(c.claim_id());
                dropped.push(c);
            } else {
                kept.push(c);
            }
        }
        *self = Self::from_claims(kept);
        dropped
    }

    fn candidates(&self, principal: &str, predicate: &str, range: Range<usize>) -> impl Iterator<Item = usize> + '_ {
        let ids = self
            .index
            .get(&(principal.to_string(), predicate.to_string()))
            .map_or(&[][..], Vec::as_slice);
        let lo = ids.partition_point(|&i| i < range.start);
        let hi = ids.partition_point(|&i| i < range.end);
        ids[lo..hi].iter().copied()
    }

    /// Least fixpoint of the standard rules of `rs`, semi-naive.
    ///
    /// If the KB was last saturated under the same rulesheet only facts added
    /// since then form the first delta; otherwise every fact does.
    pub fn saturate(&mut self, rs: &Rulesheet) -> Result<SaturateStats, EngineError> {
        let mut stats = SaturateStats::default();
        let full = self.saturated_with != Some(rs.source_hash);
        self.saturated_with = None;
        let (flat, joined): (Vec<&Rule>, Vec<&Rule>) =
            rs.standard_rules().partition(|r| r.relational_body().next().is_none());

        let mut d0 = if full { 0 } else { self.saturated_len.min(self.facts.len()) };
        let mut batch = Vec::new();
        for rule in &flat {
            self.fire(rule, &[], &mut batch)?;
        }
        stats.derived += self.insert_batch(batch);
        let mut d1 = self.facts.len();

        while d0 < d1 {
            stats.rounds += 1;
            let mut batch = Vec::new();
            for rule in &joined {
                let n = rule.relational_body().count();
                for i in 0..n {
                    let ranges: Vec<Range<usize>> = (0..n)
                        .map(|j| match j.cmp(&i) {
                            std::cmp::Ordering::Less => 0..d0,
                            std::cmp::Ordering::Equal => d0..d1,
                            std::cmp::Ordering::Greater => 0..d1,
                        })
                        .collect();
                    self.fire(rule, &ranges, &mut batch)?;
                }
            }
            stats.derived += self.insert_batch(batch);
            d0 = d1;
            d1 = self.facts.len();
        }
        self.saturated_len = self.facts.len();
        self.saturated_with = Some(rs.source_hash);
        Ok(stats)
    }

    /// Every head instance of `rule` over the current facts, with its
    /// substitution, in evaluation order. Used for next-rules.
    pub fn instances(&self, rule: &Rule) -> Result<Vec<(GroundAtom, Substitution)>, EngineError> {
        let mut hits = Vec::new();
        self.join(rule, &[], 0, 0, Substitution::new(), &mut Vec::new(), &mut hits)
            .map_err(|(Overflow, s)| EngineError::Overflow {
                rule: rule.to_string(),
                substitution: format_substitution(&s),
            })?;
        Ok(hits
            .into_iter()
            .filter_map(|(s, _)| instantiate(&rule.head, &s).map(|h| (h, s)))
            .collect())
    }

    fn insert_batch(&mut self, batch: Vec<Claim>) -> usize {
        batch.into_iter().filter(|c| self.insert_trusted(c.clone())).count()
    }

    fn fire(&self, rule: &Rule, ranges: &[Range<usize>], out: &mut Vec<Claim>) -> Result<(), EngineError> {
        let mut hits = Vec::new();
        let mut premises = Vec::new();
        self.join(rule, ranges, 0, 0, Substitution::new(), &mut premises, &mut hits)
            .map_err(|(Overflow, s)| EngineError::Overflow {
                rule: rule.to_string(),
                substitution: format_substitution(&s),
            })?;
        for (s, prem) in hits {
            let Some(head) = instantiate(&rule.head, &s) else {
                continue;
            };
            if self.contains(&head) {
                continue;
            }
            let premises = prem.iter().map(|&i| self.facts[i].claim_id()).collect();
            out.push(Claim::new(
                head,
                Evidence::DerivedByRule {
                    rule: rule.clone(),
                    substitution: s,
                    premises,
                },
            ));
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn join(
        &self,
        rule: &Rule,
        ranges: &[Range<usize>],
        bi: usize,
        ri: usize,
        s: Substitution,
        premises: &mut Vec<usize>,
        out: &mut Vec<(Substitution, Vec<usize>)>,
    ) -> Result<(), (Overflow, Substitution)> {
        let Some(atom) = rule.body.get(bi) else {
            out.push((s, premises.clone()));
            return Ok(());
        };
        match atom {
            Atom::Relational(p) => {
                let range = ranges.get(ri).cloned().unwrap_or(0..self.facts.len());
                for i in self.candidates(&p.principal, &p.predicate, range) {
                    if let Some(s2) = match_atom(p, &self.facts[i].atom, &s) {
                        premises.push(i);
                        self.join(rule, ranges, bi + 1, ri + 1, s2, premises, out)?;
                        premises.pop();
                    }
                }
            }
            Atom::Builtin { builtin, args } => {
                for s2 in eval_builtin_atom(*builtin, args, &s).map_err(|o| (o, s.clone()))? {
                    self.join(rule, ranges, bi + 1, ri, s2, premises, out)?;
                }
            }
            Atom::Comparison { op, left, right } => {
                if let Some(s2) = eval_comparison(*op, left, right, &s).map_err(|o| (o, s.clone()))? {
                    self.join(rule, ranges, bi + 1, ri, s2, premises, out)?;
                }
            }
        }
        Ok(())
    }
}

/// Re-instantiates `rule` under `s` and checks that it yields `head` and,
/// in body order, exactly the `premises`, with every builtin and comparison
/// holding.
pub fn check_rule_instance(rule: &Rule, s: &Substitution, head: &GroundAtom, premises: &[&GroundAtom]) -> Result<(), String> {
    match instantiate(&rule.head, s) {
        Some(h) if h == *head => {}
        _ => return Err(format!("rule head does not instantiate to {head}")),
    }
    let mut k = 0;
    for atom in &rule.body {
        let holds = match atom {
            Atom::Relational(p) => {
                let inst = instantiate(p, s).ok_or_else(|| format!("body atom of {head} is not ground"))?;
                let ok = premises.get(k).is_some_and(|&q| *q == inst);
                k += 1;
                ok
            }
            Atom::Builtin { builtin, args } => eval_builtin_atom(*builtin, args, s).is_ok_and(|v| v.contains(s)),
            Atom::Comparison { op, left, right } => eval_comparison(*op, left, right, s).is_ok_and(|v| v.as_ref() == Some(s)),
        };
        if !holds {
            return Err(format!("body atom `{}` does not hold in the instance for {head}", crate::lang::format_atom(atom, None)));
        }
    }
    if k != premises.len() {
        return Err(format!("{head} lists {} premises, rule has {k}", premises.len()));
    }
    Ok(())
}

/// A claim with the evidence trees of its premises.
#[derive(Debug, Clone, Serialize)]
pub struct EvidenceTree {
    pub claim: Claim,
    /// Why the rule instance at this node failed to re-check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub premises: Vec<EvidenceTree>,
}

impl EvidenceTree {
    pub fn all_verified(&self) -> bool {
        self.error.is_none() && self.premises.iter().all(EvidenceTree::all_verified)
    }

    pub fn depth(&self) -> usize {
        1 + self.premises.iter().map(EvidenceTree::depth).max().unwrap_or(0)
    }

    /// Indented one-line-per-node rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(0, &mut out);
        out
    }

    fn render_into(&self, depth: usize, out: &mut String) {
        let mark = if self.error.is_some() { "  [FAILED]" } else { "" };
        out.push_str(&format!("{}{}  <{}>{mark}\n", "  ".repeat(depth), self.claim.atom, self.claim.evidence.kind_name()));
        if let Some(e) = &self.error {
            out.push_str(&format!("{}  {e}\n", "  ".repeat(depth)));
        }
        for p in &self.premises {
            p.render_into(depth + 1, out);
        }
    }
}
