//! Term evaluation, builtins and comparisons under a substitution.

use super::{EngineError, GroundAtom, Substitution, Value};
use crate::lang::{ArithOp, Builtin, CmpOp, RelAtom, Term};

/// Arithmetic overflowed; the caller attaches rule and substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Overflow;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Eval {
    Val(Value),
    Unbound,
    /// Arithmetic over a string.
    Mismatch,
}

pub(crate) fn eval_term(t: &Term, s: &Substitution) -> Result<Eval, Overflow> {
    Ok(match t {
        Term::Var(v) => s.get(v).cloned().map_or(Eval::Unbound, Eval::Val),
        Term::Int(i) => Eval::Val(Value::Int(*i)),
        Term::Str(x) => Eval::Val(Value::Str(x.clone())),
        Term::Arith(op, l, r) => {
            let (l, r) = (eval_term(l, s)?, eval_term(r, s)?);
            match (l, r) {
                (Eval::Val(Value::Int(a)), Eval::Val(Value::Int(b))) => {
                    let v = match op {
                        ArithOp::Add => a.checked_add(b),
                        ArithOp::Sub => a.checked_sub(b),
                        ArithOp::Mul => a.checked_mul(b),
                    };
                    Eval::Val(Value::Int(v.ok_or(Overflow)?))
                }
                (Eval::Unbound, _) | (_, Eval::Unbound) => Eval::Unbound,
                _ => Eval::Mismatch,
            }
        }
    })
}

/// Binds or tests `left op right`. `None` means the comparison fails.
pub(crate) fn eval_comparison(op: CmpOp, left: &Term, right: &Term, s: &Substitution) -> Result<Option<Substitution>, Overflow> {
    let (l, r) = (eval_term(left, s)?, eval_term(right, s)?);
    if op == CmpOp::Eq {
        match (&l, &r, left, right) {
            (Eval::Unbound, Eval::Val(v), Term::Var(name), _) | (Eval::Val(v), Eval::Unbound, _, Term::Var(name)) => {
                let mut out = s.clone();
                out.insert(name.clone(), v.clone());
                return Ok(Some(out));
            }
            _ => {}
        }
    }
    let (Eval::Val(l), Eval::Val(r)) = (l, r) else {
        return Ok(None);
    };
    let holds = match (op, &l, &r) {
        (CmpOp::Eq, _, _) => l == r,
        (CmpOp::Ne, _, _) => l != r,
        (_, Value::Int(a), Value::Int(b)) => match op {
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
            CmpOp::Le => a <= b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq | CmpOp::Ne => unreachable!(),
        },
        _ => false,
    };
    Ok(holds.then(|| s.clone()))
}

fn lookup<'a>(data: &'a serde_json::Value, path: &str) -> Option<&'a serde_json::Value> {
    path.split('.').try_fold(data, |v, seg| match v {
        serde_json::Value::Object(m) => m.get(seg),
        serde_json::Value::Array(a) => a.get(seg.parse::<usize>().ok()?),
        _ => None,
    })
}

pub(crate) fn eval_builtin_atom(b: Builtin, args: &[Term], s: &Substitution) -> Result<Vec<Substitution>, Overflow> {
    let (Eval::Val(Value::Str(data)), Eval::Val(Value::Str(path))) = (eval_term(&args[0], s)?, eval_term(&args[1], s)?) else {
        return Ok(vec![]);
    };
    let Ok(doc) = serde_json::from_str::<serde_json::Value>(&data) else {
        return Ok(vec![]);
    };
    let found = lookup(&doc, &path).and_then(|v| match b {
        Builtin::GetParamInt => v.as_i64().map(Value::Int),
        Builtin::GetParamStr => v.as_str().map(|x| Value::Str(x.to_string())),
    });
    let Some(found) = found else {
        return Ok(vec![]);
    };
    match (&args[2], eval_term(&args[2], s)?) {
        (Term::Var(name), Eval::Unbound) => {
            let mut out = s.clone();
            out.insert(name.clone(), found);
            Ok(vec![out])
        }
        (_, Eval::Val(v)) if v == found => Ok(vec![s.clone()]),
        _ => Ok(vec![]),
    }
}

/// Evaluates a builtin by name, e.g. `get_param_int`.
///
/// Malformed documents, missing paths and wrong value types produce no
/// bindings.
pub fn eval_builtin(name: &str, args: &[Term], bindings: &Substitution) -> Result<Vec<Substitution>, EngineError> {
    let b = Builtin::from_name(name).ok_or_else(|| EngineError::UnknownBuiltin(name.to_string()))?;
    if args.len() != b.arity() {
        return Err(EngineError::UnknownBuiltin(format!("{name}/{}", args.len())));
    }
    eval_builtin_atom(b, args, bindings).map_err(|_| EngineError::Overflow {
        rule: format!("{name}(..)"),
        substitution: format_substitution(bindings),
    })
}

/// Extends `s` so that `pattern` matches `fact`.
pub(crate) fn match_atom(pattern: &RelAtom, fact: &GroundAtom, s: &Substitution) -> Option<Substitution> {
    if pattern.principal != fact.principal || pattern.predicate != fact.predicate || pattern.args.len() != fact.args.len() {
        return None;
    }
    let mut out: Option<Substitution> = None;
    for (t, v) in pattern.args.iter().zip(&fact.args) {
        let cur = out.as_ref().unwrap_or(s);
        match t {
            Term::Var(name) => match cur.get(name) {
                Some(bound) if bound == v => {}
                Some(_) => return None,
                None => {
                    out.get_or_insert_with(|| s.clone()).insert(name.clone(), v.clone());
                }
            },
            Term::Int(i) if *v == Value::Int(*i) => {}
            Term::Str(x) if matches!(v, Value::Str(y) if y == x) => {}
            _ => return None,
        }
    }
    Some(out.unwrap_or_else(|| s.clone()))
}

/// Applies `s` to a relational atom; `None` if a variable is unbound.
pub fn instantiate(a: &RelAtom, s: &Substitution) -> Option<GroundAtom> {
    let args = a
        .args
        .iter()
        .map(|t| match eval_term(t, s) {
            Ok(Eval::Val(v)) => Some(v),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()?;
    Some(GroundAtom {
        principal: a.principal.clone(),
        predicate: a.predicate.clone(),
        args,
    })
}

pub fn format_substitution(s: &Substitution) -> String {
    let parts: Vec<String> = s.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    format!("{{{}}}", parts.join(", "))
}
