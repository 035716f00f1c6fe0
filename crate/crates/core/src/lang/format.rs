use std::fmt::Write;

use super::{Atom, RelAtom, Rule, RuleKind, Rulesheet, Term};

pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\'' => out.push_str("\\'"),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

pub fn format_term(t: &Term) -> String {
    match t {
        Term::Var(v) => v.clone(),
        Term::Int(i) => i.to_string(),
        Term::Str(s) => quote(s),
        Term::Arith(op, l, r) => {
            let side = |t: &Term| {
                if t.is_arith() {
                    format!("({})", format_term(t))
                } else {
                    format_term(t)
                }
            };
            format!("{} {} {}", side(l), op.symbol(), side(r))
        }
    }
}

fn format_args(args: &[Term]) -> String {
    args.iter().map(format_term).collect::<Vec<_>>().join(", ")
}

/// Renders a relational atom; the principal is omitted when it equals `owner`.
pub fn format_rel(a: &RelAtom, owner: Option<&str>) -> String {
    let call = format!("{}({})", a.predicate, format_args(&a.args));
    if owner == Some(a.principal.as_str()) {
        call
    } else {
        format!("{} attests {}", quote(&a.principal), call)
    }
}

pub fn format_atom(a: &Atom, owner: Option<&str>) -> String {
    match a {
        Atom::Relational(r) => format_rel(r, owner),
        Atom::Builtin { builtin, args } => format!("{}({})", builtin.name(), format_args(args)),
        Atom::Comparison { op, left, right } => {
            format!("{} {} {}", format_term(left), op.symbol(), format_term(right))
        }
    }
}

pub fn format_rule(rule: &Rule, owner: Option<&str>) -> String {
    let mut out = String::new();
    if rule.kind == RuleKind::Next {
        out.push_str("next ");
    }
    out.push_str(&format_rel(&rule.head, owner));
    if !rule.body.is_empty() {
        out.push_str(" :-");
        let lits: Vec<String> = rule.body.iter().map(|a| format_atom(a, owner)).collect();
        for (i, lit) in lits.iter().enumerate() {
            let sep = if i + 1 == lits.len() { "" } else { "," };
            let _ = write!(out, "\n  {lit}{sep}");
        }
    }
    out.push('.');
    out
}

/// Canonical text: identity block, blank line, then one blank-line separated
/// group per rule.
pub fn format_rulesheet(rs: &Rulesheet) -> String {
    let mut out = String::new();
    for d in &rs.identities {
        if d.subject.is_empty() && d.issuer.is_empty() {
            let _ = writeln!(out, "{}: ...", quote(&d.name));
        } else {
            let _ = writeln!(out, "{}: Subject: {}", quote(&d.name), quote(&d.subject));
            let _ = writeln!(out, "  Issuer: {}", quote(&d.issuer));
        }
    }
    for rule in &rs.rules {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&format_rule(rule, Some(&rs.self_id)));
        out.push('\n');
    }
    out
}
