use super::LangError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Var(String),
    Int(u64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Ellipsis,
    Colon,
    ColonDash,
    Attests,
    Cmp(super::CmpOp),
    Plus,
    Minus,
    Star,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Var(s) => format!("variable `{s}`"),
            Tok::Int(i) => format!("integer `{i}`"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Ellipsis => "`...`".into(),
            Tok::Colon => "`:`".into(),
            Tok::ColonDash => "`:-`".into(),
            Tok::Attests => "`attests`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn lex(src: &str) -> Result<Vec<Spanned>, LangError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let err = |msg: String| LangError::Syntax {
            line: tl,
            col: tc,
            message: msg,
        };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump!();
            }
            let word: String = chars[start..i].iter().collect();
            if word == "attests" {
                Tok::Attests
            } else if word.starts_with(|ch: char| ch.is_ascii_uppercase()) {
                Tok::Var(word)
            } else if word.starts_with('_') {
                return Err(err(format!("identifier `{word}` may not start with `_`")));
            } else {
                Tok::Ident(word)
            }
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!();
            }
            let digits: String = chars[start..i].iter().collect();
            let value = digits
                .parse::<u64>()
                .map_err(|_| err(format!("integer literal `{digits}` out of range")))?;
            Tok::Int(value)
        } else if c == '\'' {
            bump!();
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => return Err(err("unterminated string literal".into())),
                    Some('\'') => {
                        bump!();
                        break;
                    }
                    Some('\\') => {
                        bump!();
                        let esc = match chars.get(i) {
                            Some('\\') => '\\',
                            Some('\'') => '\'',
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('r') => '\r',
                            Some(other) => {
                                return Err(err(format!("unknown escape `\\{other}`")));
                            }
                            None => return Err(err("unterminated string literal".into())),
                        };
                        s.push(esc);
                        bump!();
                    }
                    Some(&ch) => {
                        s.push(ch);
                        bump!();
                    }
                }
            }
            Tok::Str(s)
        } else {
            let next = chars.get(i + 1).copied();
            let (tok, width) = match (c, next) {
                (':', Some('-')) => (Tok::ColonDash, 2),
                (':', _) => (Tok::Colon, 1),
                ('=', Some('=')) => (Tok::Cmp(super::CmpOp::Eq), 2),
                ('!', Some('=')) => (Tok::Cmp(super::CmpOp::Ne), 2),
                ('<', Some('=')) => (Tok::Cmp(super::CmpOp::Le), 2),
                ('>', Some('=')) => (Tok::Cmp(super::CmpOp::Ge), 2),
                ('<', _) => (Tok::Cmp(super::CmpOp::Lt), 1),
                ('>', _) => (Tok::Cmp(super::CmpOp::Gt), 1),
                ('.', Some('.')) if chars.get(i + 2) == Some(&'.') => (Tok::Ellipsis, 3),
                ('.', _) => (Tok::Dot, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                (',', _) => (Tok::Comma, 1),
                ('+', _) => (Tok::Plus, 1),
                ('-', _) => (Tok::Minus, 1),
                ('*', _) => (Tok::Star, 1),
                _ => return Err(err(format!("unexpected character `{c}`"))),
            };
            for _ in 0..width {
                bump!();
            }
            tok
        };
        out.push(Spanned {
            tok,
            line: tl,
            col: tc,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexes_workflow_fragment() {
        let toks = lex("'OM' attests x(A, 'b\\'c', 12) :- D == T - S.").unwrap();
        let kinds: Vec<Tok> = toks.into_iter().map(|s| s.tok).collect();
        assert_eq!(kinds[0], Tok::Str("OM".into()));
        assert_eq!(kinds[1], Tok::Attests);
        assert_eq!(kinds[6], Tok::Str("b'c".into()));
        assert_eq!(kinds[8], Tok::Int(12));
        assert!(kinds.contains(&Tok::ColonDash));
        assert!(kinds.contains(&Tok::Cmp(super::super::CmpOp::Eq)));
        assert_eq!(kinds.last(), Some(&Tok::Eof));
    }

    #[test]
    fn reports_position_of_bad_char() {
        match lex("p(X).\n  q(#).") {
            Err(LangError::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comments_are_skipped() {
        let toks = lex("// hello\np(). // trailing").unwrap();
        assert_eq!(toks.len(), 5);
    }
}
