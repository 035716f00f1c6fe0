use super::lexer::{lex, Spanned, Tok};
use super::{ArithOp, Atom, Builtin, IdentityDecl, LangError, RelAtom, Rule, RuleKind, Term, BUILTIN_PREFIX};

pub(crate) struct Parsed {
    pub identities: Vec<IdentityDecl>,
    pub rules: Vec<Rule>,
}

pub(crate) struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    self_id: &'a str,
}

/// Principal names are restricted so that the canonical atom encoding
/// `principal|predicate(...)` stays unambiguous.
pub fn is_valid_principal(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl<'a> Parser<'a> {
    pub fn new(src: &str, self_id: &'a str) -> Result<Self, LangError> {
        Ok(Parser {
            toks: lex(src)?,
            pos: 0,
            self_id,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let idx = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    fn here(&self) -> (usize, usize) {
        let s = &self.toks[self.pos];
        (s.line, s.col)
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, LangError> {
        let (line, col) = self.here();
        Err(LangError::Syntax {
            line,
            col,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok) -> Result<(), LangError> {
        if *self.peek() == want {
            self.advance();
            Ok(())
        } else {
            self.error(format!("expected {}, found {}", want.describe(), self.peek().describe()))
        }
    }

    pub fn rulesheet(&mut self) -> Result<Parsed, LangError> {
        let mut identities = Vec::new();
        let mut rules = Vec::new();
        while *self.peek() != Tok::Eof {
            if matches!(self.peek(), Tok::Str(_)) && *self.peek_at(1) == Tok::Colon {
                identities.push(self.identity()?);
            } else {
                rules.push(self.rule()?);
            }
        }
        Ok(Parsed { identities, rules })
    }

    fn principal_name(&mut self) -> Result<String, LangError> {
        let (line, col) = self.here();
        match self.advance() {
            Tok::Str(name) if is_valid_principal(&name) => Ok(name),
            Tok::Str(name) => Err(LangError::Syntax {
                line,
                col,
                message: format!("invalid principal name '{name}'"),
            }),
            Tok::Ident(w) if w == "self" => Ok(self.self_id.to_string()),
            other => Err(LangError::Syntax {
                line,
                col,
                message: format!("expected principal, found {}", other.describe()),
            }),
        }
    }

    fn identity(&mut self) -> Result<IdentityDecl, LangError> {
        let name = self.principal_name()?;
        self.expect(Tok::Colon)?;
        if *self.peek() == Tok::Ellipsis {
            self.advance();
            return Ok(IdentityDecl {
                name,
                subject: String::new(),
                issuer: String::new(),
            });
        }
        let subject = self.labelled_string("Subject")?;
        let issuer = self.labelled_string("Issuer")?;
        Ok(IdentityDecl {
            name,
            subject,
            issuer,
        })
    }

    fn labelled_string(&mut self, label: &str) -> Result<String, LangError> {
        match self.peek() {
            Tok::Var(w) if w == label => {
                self.advance();
            }
            other => return self.error(format!("expected `{label}:`, found {}", other.describe())),
        }
        self.expect(Tok::Colon)?;
        match self.advance() {
            Tok::Str(s) => Ok(s),
            other => self.error(format!("expected string after `{label}:`, found {}", other.describe())),
        }
    }

    fn rule(&mut self) -> Result<Rule, LangError> {
        let kind = match (self.peek(), self.peek_at(1)) {
            (Tok::Ident(w), next) if w == "next" && !matches!(next, Tok::LParen | Tok::Dot | Tok::ColonDash) => {
                self.advance();
                RuleKind::Next
            }
            _ => RuleKind::Standard,
        };
        let head = match self.literal()? {
            Atom::Relational(r) => r,
            _ => return self.error("rule head must be a relational atom"),
        };
        let mut body = Vec::new();
        if *self.peek() == Tok::ColonDash {
            self.advance();
            loop {
                body.push(self.literal()?);
                if *self.peek() == Tok::Comma {
                    self.advance();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::Dot)?;
        Ok(Rule { kind, head, body })
    }

    /// Parses one body literal; also used for heads and query patterns.
    pub fn literal(&mut self) -> Result<Atom, LangError> {
        let attested = match (self.peek(), self.peek_at(1)) {
            (Tok::Str(_), Tok::Attests) => true,
            (Tok::Ident(w), Tok::Attests) if w == "self" => true,
            _ => false,
        };
        if attested {
            let principal = self.principal_name()?;
            self.expect(Tok::Attests)?;
            let (predicate, args) = self.predicate_call()?;
            if predicate.starts_with(BUILTIN_PREFIX) {
                return self.error(format!("builtin `{predicate}` cannot be attested"));
            }
            return Ok(Atom::Relational(RelAtom {
                principal,
                predicate,
                args,
            }));
        }
        if let Tok::Ident(name) = self.peek().clone() {
            let (line, col) = self.here();
            let (predicate, args) = self.predicate_call()?;
            if let Some(builtin) = Builtin::from_name(&name) {
                if args.len() != builtin.arity() {
                    return Err(LangError::Syntax {
                        line,
                        col,
                        message: format!("builtin `{name}` takes {} arguments, got {}", builtin.arity(), args.len()),
                    });
                }
                return Ok(Atom::Builtin { builtin, args });
            }
            if name.starts_with(BUILTIN_PREFIX) {
                return Err(LangError::UnknownBuiltin { name, line, col });
            }
            return Ok(Atom::Relational(RelAtom {
                principal: self.self_id.to_string(),
                predicate,
                args,
            }));
        }
        let left = self.expr()?;
        let op = match self.advance() {
            Tok::Cmp(op) => op,
            other => return self.error(format!("expected comparison operator, found {}", other.describe())),
        };
        let right = self.expr()?;
        Ok(Atom::Comparison { op, left, right })
    }

    /// `name` or `name(t1, ..., tn)`; arguments of relational atoms are
    /// plain terms, builtin arguments may be expressions.
    fn predicate_call(&mut self) -> Result<(String, Vec<Term>), LangError> {
        let name = match self.advance() {
            Tok::Ident(n) => n,
            other => return self.error(format!("expected predicate name, found {}", other.describe())),
        };
        let is_builtin = name.starts_with(BUILTIN_PREFIX);
        let mut args = Vec::new();
        if *self.peek() != Tok::LParen {
            return Ok((name, args));
        }
        self.advance();
        if *self.peek() == Tok::RParen {
            self.advance();
            return Ok((name, args));
        }
        loop {
            let (line, col) = self.here();
            let term = self.expr()?;
            if term.is_arith() && !is_builtin {
                return Err(LangError::Syntax {
                    line,
                    col,
                    message: "arithmetic is only allowed in comparisons and builtins".into(),
                });
            }
            args.push(term);
            match self.advance() {
                Tok::Comma => continue,
                Tok::RParen => break,
                other => return self.error(format!("expected `,` or `)`, found {}", other.describe())),
            }
        }
        Ok((name, args))
    }

    fn expr(&mut self) -> Result<Term, LangError> {
        let mut left = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => ArithOp::Add,
                Tok::Minus => ArithOp::Sub,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.product()?;
            left = Term::Arith(op, Box::new(left), Box::new(right));
        }
    }

    fn product(&mut self) -> Result<Term, LangError> {
        let mut left = self.primary()?;
        while *self.peek() == Tok::Star {
            self.advance();
            let right = self.primary()?;
            left = Term::Arith(ArithOp::Mul, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn primary(&mut self) -> Result<Term, LangError> {
        match self.advance() {
            Tok::Var(v) => Ok(Term::Var(v)),
            Tok::Int(u) => match i64::try_from(u) {
                Ok(i) => Ok(Term::Int(i)),
                Err(_) => self.error(format!("integer literal `{u}` out of range")),
            },
            Tok::Str(s) => Ok(Term::Str(s)),
            Tok::Minus => match self.advance() {
                Tok::Int(u) => match i64::try_from(-(u as i128)) {
                    Ok(i) => Ok(Term::Int(i)),
                    Err(_) => self.error(format!("integer literal `-{u}` out of range")),
                },
                other => self.error(format!("expected integer after `-`, found {}", other.describe())),
            },
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            other => self.error(format!("expected term, found {}", other.describe())),
        }
    }

    pub fn finish(&mut self) -> Result<(), LangError> {
        if *self.peek() == Tok::Dot {
            self.advance();
        }
        self.expect(Tok::Eof)
    }
}
