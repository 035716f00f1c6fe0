use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::Digest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Int(i64),
    Str(String),
    Arith(ArithOp, Box<Term>, Box<Term>),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_string())
    }

    pub fn str(value: &str) -> Self {
        Term::Str(value.to_string())
    }

    pub fn collect_vars<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Term::Var(v) => {
                out.insert(v);
            }
            Term::Int(_) | Term::Str(_) => {}
            Term::Arith(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    pub fn vars(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    pub fn is_arith(&self) -> bool {
        matches!(self, Term::Arith(..))
    }
}

/// Builtin predicates. All builtins take `(data, path, out)` where `data` and
/// `path` are inputs and `out` is bound or tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Builtin {
    GetParamInt,
    GetParamStr,
}

/// Name prefix reserved for builtins; unknown names under it are rejected.
pub const BUILTIN_PREFIX: &str = "get_param_";

impl Builtin {
    pub const ALL: [Builtin; 2] = [Builtin::GetParamInt, Builtin::GetParamStr];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::GetParamInt => "get_param_int",
            Builtin::GetParamStr => "get_param_str",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn arity(self) -> usize {
        3
    }

    /// Argument positions that must be bound before evaluation.
    pub fn input_positions(self) -> &'static [usize] {
        &[0, 1]
    }
}

/// `principal attests predicate(args...)`. After parsing the principal is
/// always explicit: implicit `self` is replaced by the rulesheet's owner.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelAtom {
    pub principal: String,
    pub predicate: String,
    pub args: Vec<Term>,
}

impl RelAtom {
    pub fn new(principal: &str, predicate: &str, args: Vec<Term>) -> Self {
        RelAtom {
            principal: principal.to_string(),
            predicate: predicate.to_string(),
            args,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    Relational(RelAtom),
    Builtin {
        builtin: Builtin,
        args: Vec<Term>,
    },
    Comparison {
        op: CmpOp,
        left: Term,
        right: Term,
    },
}

impl Atom {
    pub fn vars(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        match self {
            Atom::Relational(a) => a.args.iter().for_each(|t| t.collect_vars(&mut out)),
            Atom::Builtin { args, .. } => args.iter().for_each(|t| t.collect_vars(&mut out)),
            Atom::Comparison { left, right, .. } => {
                left.collect_vars(&mut out);
                right.collect_vars(&mut out);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    Standard,
    Next,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub kind: RuleKind,
    pub head: RelAtom,
    pub body: Vec<Atom>,
}

impl Rule {
    pub fn relational_body(&self) -> impl Iterator<Item = &RelAtom> {
        self.body.iter().filter_map(|a| match a {
            Atom::Relational(r) => Some(r),
            _ => None,
        })
    }
}

impl fmt::Display for Rule {
    /// Explicit-principal rendering, independent of any rulesheet owner.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::format::format_rule(self, None).replace("\n  ", " "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IdentityDecl {
    pub name: String,
    /// Empty subject and issuer mean the declaration was elided (`'X': ...`).
    pub subject: String,
    pub issuer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rulesheet {
    pub self_id: String,
    pub identities: Vec<IdentityDecl>,
    pub rules: Vec<Rule>,
    pub source_hash: Digest,
}

impl Rulesheet {
    /// Builds a rulesheet from parts, computing its canonical hash.
    pub fn new(self_id: &str, identities: Vec<IdentityDecl>, rules: Vec<Rule>) -> Self {
        let mut rs = Rulesheet {
            self_id: self_id.to_string(),
            identities,
            rules,
            source_hash: Digest::default(),
        };
        rs.source_hash = Digest::of(super::format_rulesheet(&rs).as_bytes());
        rs
    }

    pub fn standard_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.kind == RuleKind::Standard)
    }

    pub fn next_rules(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.kind == RuleKind::Next)
    }

    pub fn identity(&self, name: &str) -> Option<&IdentityDecl> {
        self.identities.iter().find(|d| d.name == name)
    }
}
