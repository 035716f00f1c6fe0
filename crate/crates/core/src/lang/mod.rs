//! The Cyberlog rule language: parsing, validation and canonical formatting.
//!
//! ```text
//! 'SB': Subject: 'C=DE, O=ZAL, CN=SB'
//!   Issuer: 'C=DE, O=Lets Encrypt, CN=R3'
//!
//! request(RequestId, Data, Time) :-
//!   postRequest('/servicerequest', Time, Data),
//!   get_param_int(Data, 'request_id', RequestId).
//! ```
//!
//! Bare atoms are sugar for `self attests ...`; the parser resolves `self`
//! to the rulesheet owner so every relational atom in the AST names its
//! principal explicitly.

mod ast;
mod format;
mod lexer;
mod parser;

use std::collections::BTreeSet;
use std::fmt;

pub use ast::*;
pub use format::{format_atom, format_rel, format_rule, format_rulesheet, format_term};
pub use parser::is_valid_principal;

use crate::Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LangError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("unknown builtin `{name}` at {line}:{col}")]
    UnknownBuiltin { name: String, line: usize, col: usize },
    #[error("rule {rule_index}: non-self head: rules may only attest for '{self_id}', not '{principal}'")]
    NonSelfHead {
        rule_index: usize,
        principal: String,
        self_id: String,
    },
    #[error("rule {rule_index}: unsafe variable `{variable}`: {reason}")]
    Unsafe {
        rule_index: usize,
        variable: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    NonSelfHead,
    Unsafe,
    UndeclaredPrincipal,
    DuplicateIdentity,
    MissingSelfIdentity,
    ArithInRelational,
    BuiltinArity,
    NonGroundFact,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// `None` for rulesheet-level findings (identity table).
    pub rule_index: Option<usize>,
    pub kind: DiagnosticKind,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule_index {
            Some(i) => write!(f, "rule {i}: {}", self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

/// Parses a rulesheet executed by `self_id`.
///
/// Fails on syntax errors, unknown builtins, heads attesting for another
/// principal, and unsafe rules. Undeclared principals are reported by
/// [`validate_rulesheet`] instead.
pub fn parse_rulesheet(text: &str, self_id: &str) -> Result<Rulesheet, LangError> {
    let parsed = parser::Parser::new(text, self_id)?.rulesheet()?;
    for (i, rule) in parsed.rules.iter().enumerate() {
        check_rule(i, rule, self_id)?;
    }
    Ok(Rulesheet::new(self_id, parsed.identities, parsed.rules))
}

/// Parses a single atom (e.g. a query pattern); bare atoms belong to `self_id`.
pub fn parse_atom(text: &str, self_id: &str) -> Result<Atom, LangError> {
    let mut p = parser::Parser::new(text, self_id)?;
    let atom = p.literal()?;
    p.finish()?;
    Ok(atom)
}

/// Parses a single rule, applying the same checks as [`parse_rulesheet`].
pub fn parse_rule(text: &str, self_id: &str) -> Result<Rule, LangError> {
    let rs = parse_rulesheet(text, self_id)?;
    match <[Rule; 1]>::try_from(rs.rules) {
        Ok([rule]) => Ok(rule),
        Err(rules) => Err(LangError::Syntax {
            line: 1,
            col: 1,
            message: format!("expected exactly one rule, found {}", rules.len()),
        }),
    }
}

fn check_rule(index: usize, rule: &Rule, self_id: &str) -> Result<(), LangError> {
    if rule.head.principal != self_id {
        return Err(LangError::NonSelfHead {
            rule_index: index,
            principal: rule.head.principal.clone(),
            self_id: self_id.to_string(),
        });
    }
    if let Some((variable, reason)) = safety_violation(rule) {
        return Err(LangError::Unsafe {
            rule_index: index,
            variable,
            reason,
        });
    }
    Ok(())
}

/// Left-to-right binding analysis. Returns the first unsafe variable.
pub fn safety_violation(rule: &Rule) -> Option<(String, String)> {
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    let unbound_in = |t: &Term, bound: &BTreeSet<&str>| -> Option<String> {
        t.vars().into_iter().find(|v| !bound.contains(v)).map(str::to_string)
    };
    for atom in &rule.body {
        match atom {
            Atom::Relational(r) => {
                for t in &r.args {
                    t.collect_vars(&mut bound);
                }
            }
            Atom::Builtin { builtin, args } => {
                for &pos in builtin.input_positions() {
                    if let Some(v) = args.get(pos).and_then(|t| unbound_in(t, &bound)) {
                        return Some((v, format!("input of `{}` is not bound", builtin.name())));
                    }
                }
                for (pos, t) in args.iter().enumerate() {
                    if builtin.input_positions().contains(&pos) {
                        continue;
                    }
                    match t {
                        Term::Var(v) => {
                            bound.insert(v);
                        }
                        other => {
                            if let Some(v) = unbound_in(other, &bound) {
                                return Some((v, format!("output of `{}` must be a variable or bound", builtin.name())));
                            }
                        }
                    }
                }
            }
            Atom::Comparison { op, left, right } => {
                let lu = unbound_in(left, &bound);
                let ru = unbound_in(right, &bound);
                match (lu, ru, left, right) {
                    (None, None, ..) => {}
                    (Some(_), None, Term::Var(v), _) | (None, Some(_), _, Term::Var(v)) if *op == CmpOp::Eq => {
                        bound.insert(v.as_str());
                    }
                    (Some(v), ..) | (None, Some(v), ..) => {
                        let reason = if *op == CmpOp::Eq {
                            "`==` needs one side fully bound and the other a single variable"
                        } else {
                            "comparison operands must be bound"
                        };
                        return Some((v, reason.to_string()));
                    }
                }
            }
        }
    }
    rule.head
        .args
        .iter()
        .find_map(|t| unbound_in(t, &bound))
        .map(|v| (v, "head variable is not bound by the body".to_string()))
}

/// Checks every rulesheet invariant and returns one diagnostic per violation.
pub fn validate_rulesheet(rs: &Rulesheet) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for d in &rs.identities {
        if !seen.insert(d.name.as_str()) {
            out.push(Diagnostic {
                rule_index: None,
                kind: DiagnosticKind::DuplicateIdentity,
                reason: format!("identity '{}' declared twice", d.name),
            });
        }
    }
    if !seen.contains(rs.self_id.as_str()) {
        out.push(Diagnostic {
            rule_index: None,
            kind: DiagnosticKind::MissingSelfIdentity,
            reason: format!("self identity '{}' is not declared", rs.self_id),
        });
    }
    for (i, rule) in rs.rules.iter().enumerate() {
        let mut push = |kind, reason: String| {
            out.push(Diagnostic {
                rule_index: Some(i),
                kind,
                reason,
            })
        };
        if rule.head.principal != rs.self_id {
            push(
                DiagnosticKind::NonSelfHead,
                format!("non-self head: attests for '{}'", rule.head.principal),
            );
        }
        if let Some((v, reason)) = safety_violation(rule) {
            push(DiagnosticKind::Unsafe, format!("unsafe variable `{v}`: {reason}"));
        }
        if rule.body.is_empty() && rule.head.args.iter().any(|t| !t.vars().is_empty()) {
            push(DiagnosticKind::NonGroundFact, "fact is not ground".into());
        }
        let relational = std::iter::once(&rule.head).chain(rule.relational_body());
        for atom in relational {
            if atom.args.iter().any(Term::is_arith) {
                push(
                    DiagnosticKind::ArithInRelational,
                    format!("arithmetic inside relational atom `{}`", atom.predicate),
                );
            }
            if !seen.contains(atom.principal.as_str()) {
                push(
                    DiagnosticKind::UndeclaredPrincipal,
                    format!("undeclared principal '{}'", atom.principal),
                );
            }
        }
        for atom in &rule.body {
            if let Atom::Builtin { builtin, args } = atom {
                if args.len() != builtin.arity() {
                    push(
                        DiagnosticKind::BuiltinArity,
                        format!("`{}` takes {} arguments", builtin.name(), builtin.arity()),
                    );
                }
            }
        }
    }
    out
}

/// Structural equality ignoring the cached hash.
pub fn same_program(a: &Rulesheet, b: &Rulesheet) -> bool {
    a.self_id == b.self_id && a.identities == b.identities && a.rules == b.rules
}

impl Rulesheet {
    pub fn canonical_text(&self) -> String {
        format_rulesheet(self)
    }

    pub fn recompute_hash(&self) -> Digest {
        Digest::of(self.canonical_text().as_bytes())
    }
}
