use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EngineError;
use crate::lang::{format_rel, is_valid_principal, RelAtom, Term};
use crate::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(String),
}

impl Value {
    pub fn to_term(&self) -> Term {
        match self {
            Value::Int(i) => Term::Int(*i),
            Value::Str(s) => Term::Str(s.clone()),
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            Value::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            Value::Int(_) => None,
        }
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            Value::Int(i) => out.push_str(&i.to_string()),
            Value::Str(s) => {
                out.push('"');
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        out.push('\\');
                    }
                    out.push(c);
                }
                out.push('"');
            }
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::lang::format_term(&self.to_term()))
    }
}

/// A fully ground attestation `principal attests predicate(args)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundAtom {
    pub principal: String,
    pub predicate: String,
    pub args: Vec<Value>,
}

impl GroundAtom {
    pub fn new(principal: &str, predicate: &str, args: Vec<Value>) -> Self {
        GroundAtom {
            principal: principal.to_string(),
            predicate: predicate.to_string(),
            args,
        }
    }

    /// `principal|predicate(a1,a2,...)` with double-quoted strings, no
    /// whitespace. Used for claim ids, signatures and log entries.
    pub fn canonical(&self) -> String {
        let mut out = String::with_capacity(32);
        out.push_str(&self.principal);
        out.push('|');
        out.push_str(&self.predicate);
        out.push('(');
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            a.write_canonical(&mut out);
        }
        out.push(')');
        out
    }

    pub fn claim_id(&self) -> Digest {
        Digest::of(self.canonical().as_bytes())
    }

    pub fn to_rel(&self) -> RelAtom {
        RelAtom {
            principal: self.principal.clone(),
            predicate: self.predicate.clone(),
            args: self.args.iter().map(Value::to_term).collect(),
        }
    }

    /// Converts a relational atom whose arguments are all constants.
    pub fn from_rel(rel: &RelAtom) -> Option<Self> {
        let args = rel
            .args
            .iter()
            .map(|t| match t {
                Term::Int(i) => Some(Value::Int(*i)),
                Term::Str(s) => Some(Value::Str(s.clone())),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(GroundAtom {
            principal: rel.principal.clone(),
            predicate: rel.predicate.clone(),
            args,
        })
    }

    pub fn parse_canonical(text: &str) -> Result<Self, EngineError> {
        let bad = |why: &str| EngineError::Parse(format!("{why} in canonical atom {text:?}"));
        let (principal, rest) = text.split_once('|').ok_or_else(|| bad("missing `|`"))?;
        if !is_valid_principal(principal) {
            return Err(bad("invalid principal"));
        }
        let open = rest.find('(').ok_or_else(|| bad("missing `(`"))?;
        let predicate = &rest[..open];
        if predicate.is_empty() || !predicate.starts_with(|c: char| c.is_ascii_lowercase()) {
            return Err(bad("invalid predicate"));
        }
        let mut chars = rest[open + 1..].chars().peekable();
        let mut args = Vec::new();
        loop {
            match chars.peek() {
                Some(')') if args.is_empty() => {
                    chars.next();
                    break;
                }
                Some('"') => {
                    chars.next();
                    let mut s = String::new();
                    loop {
                        match chars.next() {
                            Some('\\') => s.push(chars.next().ok_or_else(|| bad("dangling escape"))?),
                            Some('"') => break,
                            Some(c) => s.push(c),
                            None => return Err(bad("unterminated string")),
                        }
                    }
                    args.push(Value::Str(s));
                }
                Some(_) => {
                    let mut num = String::new();
                    while let Some(&c) = chars.peek() {
                        if c == ',' || c == ')' {
                            break;
                        }
                        num.push(c);
                        chars.next();
                    }
                    args.push(Value::Int(num.parse().map_err(|_| bad("invalid integer"))?));
                }
                None => return Err(bad("unterminated argument list")),
            }
            match chars.next() {
                Some(',') => continue,
                Some(')') => break,
                _ => return Err(bad("expected `,` or `)`")),
            }
        }
        if chars.next().is_some() {
            return Err(bad("trailing characters"));
        }
        Ok(GroundAtom::new(principal, predicate, args))
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rel(&self.to_rel(), None))
    }
}

impl Serialize for GroundAtom {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for GroundAtom {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        GroundAtom::parse_canonical(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_form() {
        let a = GroundAtom::new("SB", "postRequest", vec!["/servicerequest".into(), 5.into(), r#"{"request_id":7}"#.into()]);
        assert_eq!(a.canonical(), r#"SB|postRequest("/servicerequest",5,"{\"request_id\":7}")"#);
        assert_eq!(GroundAtom::new("OM", "p", vec![(-3).into()]).canonical(), "OM|p(-3)");
        assert_eq!(GroundAtom::new("OM", "p", vec![]).canonical(), "OM|p()");
        assert_eq!(a.to_string(), r#"'SB' attests postRequest('/servicerequest', 5, '{"request_id":7}')"#);
    }

    #[test]
    fn malformed_canonical_rejected() {
        for bad in ["", "SB", "SB|", "SB|p", "SB|p(", "SB|p(1", "SB|p(x)", "SB|p(\"a)", "S B|p()", "SB|p()x", "SB|P()"] {
            assert!(GroundAtom::parse_canonical(bad).is_err(), "{bad}");
        }
    }

    fn arb_atom() -> impl Strategy<Value = GroundAtom> {
        (
            "[A-Z]{1,3}",
            "[a-z][a-zA-Z0-9_]{0,5}",
            prop::collection::vec(prop_oneof![any::<i64>().prop_map(Value::Int), ".{0,6}".prop_map(Value::Str)], 0..4),
        )
            .prop_map(|(p, q, args)| GroundAtom::new(&p, &q, args))
    }

    proptest! {
        #[test]
        fn canonical_parse_round_trip(a in arb_atom()) {
            prop_assert_eq!(GroundAtom::parse_canonical(&a.canonical()).unwrap(), a);
        }

        #[test]
        fn canonical_is_injective(a in arb_atom(), b in arb_atom()) {
            prop_assert_eq!(a == b, a.canonical() == b.canonical());
            prop_assert_eq!(a == b, a.claim_id() == b.claim_id());
        }
    }
}
