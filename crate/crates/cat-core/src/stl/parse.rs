//! Recursive-descent parser.
//!
//! ```text
//! implies := or ("=>" implies)?
//! or      := and ("or" and)*
//! and     := until ("and" until)*
//! until   := unary (("U" | "R") "[" int "," int "]" unary)*
//! unary   := "not" unary | ("G" | "F") "[" int "," int "]" unary | primary
//! primary := "true" | "(" implies ")" | atom
//! atom    := ident cmp number
//!          | "ball" "(" ident ("," ident)* ";" number ("," number)* ";" number ")"
//! cmp     := ">=" | "<=" | ">" | "<"
//! ```
//!
//! Strict comparisons are read as their non-strict counterparts.

use super::{Formula, Interval, Predicate};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Semi,
    Ge,
    Le,
    Gt,
    Lt,
    Arrow,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let num_start = c.is_ascii_digit()
            || c == b'.'
            || ((c == b'-' || c == b'+') && i + 1 < b.len() && (b[i + 1].is_ascii_digit() || b[i + 1] == b'.'));
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else if num_start {
            i += 1;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                i += 1;
                if i < b.len() && (b[i] == b'-' || b[i] == b'+') {
                    i += 1;
                }
                while i < b.len() && b[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let s = &text[start..i];
            let v = s.parse::<f64>().map_err(|_| Error::Syntax { pos: start, msg: format!("malformed number `{s}`") })?;
            out.push((start, Tok::Num(v)));
        } else {
            let two = if i + 1 < b.len() { &text[i..i + 2] } else { "" };
            let (tok, len) = match (c, two) {
                (_, ">=") => (Tok::Ge, 2),
                (_, "<=") => (Tok::Le, 2),
                (_, "=>") => (Tok::Arrow, 2),
                (b'>', _) => (Tok::Gt, 1),
                (b'<', _) => (Tok::Lt, 1),
                (b'(', _) => (Tok::LParen, 1),
                (b')', _) => (Tok::RParen, 1),
                (b'[', _) => (Tok::LBrack, 1),
                (b']', _) => (Tok::RBrack, 1),
                (b',', _) => (Tok::Comma, 1),
                (b';', _) => (Tok::Semi, 1),
                _ => {
                    let ch = text[i..].chars().next().unwrap_or('?');
                    return Err(Error::Syntax { pos: i, msg: format!("unexpected character `{ch}`") });
                }
            };
            i += len;
            out.push((start, tok));
        }
    }
    Ok(out)
}

struct Parser<'a, S> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    signals: &'a [S],
}

/// Parse `text` into a formula whose identifiers bind to state components by
/// their position in `signals`.
pub fn parse_formula<S: AsRef<str>>(text: &str, signals: &[S]) -> Result<Formula> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len(), signals };
    let f = p.implies()?;
    if p.pos < p.toks.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(f)
}

impl<S: AsRef<str>> Parser<'_, S> {
    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn err(&self, msg: &str) -> Error {
        let found = match self.toks.get(self.pos) {
            Some((_, t)) => format!("{t:?}"),
            None => "end of input".to_string(),
        };
        Error::Syntax { pos: self.offset(), msg: format!("{msg} (found {found})") }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn peek_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected {what}")))
        }
    }

    fn implies(&mut self) -> Result<Formula> {
        let lhs = self.or()?;
        if self.peek() == Some(&Tok::Arrow) {
            self.pos += 1;
            let rhs = self.implies()?;
            return Ok(Formula::implies(lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Formula> {
        let mut lhs = self.and()?;
        while self.peek_kw("or") {
            self.pos += 1;
            lhs = Formula::or(lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Formula> {
        let mut lhs = self.until()?;
        while self.peek_kw("and") {
            self.pos += 1;
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    fn until(&mut self) -> Result<Formula> {
        let mut lhs = self.unary()?;
        loop {
            let release = if self.peek_kw("U") {
                false
            } else if self.peek_kw("R") {
                true
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let i = self.interval()?;
            let rhs = self.unary()?;
            lhs = if release {
                Formula::Release(i, Box::new(lhs), Box::new(rhs))
            } else {
                Formula::Until(i, Box::new(lhs), Box::new(rhs))
            };
        }
    }

    fn unary(&mut self) -> Result<Formula> {
        if self.peek_kw("not") {
            self.pos += 1;
            return Ok(Formula::not(self.unary()?));
        }
        if self.peek_kw("G") || self.peek_kw("F") {
            let always = self.peek_kw("G");
            self.pos += 1;
            let i = self.interval()?;
            let body = Box::new(self.unary()?);
            return Ok(if always { Formula::Always(i, body) } else { Formula::Eventually(i, body) });
        }
        self.primary()
    }

    fn interval(&mut self) -> Result<Interval> {
        self.expect(Tok::LBrack, "`[`")?;
        let at = self.offset();
        let a = self.int()?;
        self.expect(Tok::Comma, "`,`")?;
        let b = self.int()?;
        self.expect(Tok::RBrack, "`]`")?;
        Interval::new(a, b).map_err(|e| Error::Syntax { pos: at, msg: e.to_string() })
    }

    fn int(&mut self) -> Result<usize> {
        match self.peek() {
            Some(Tok::Num(v)) if *v >= 0.0 && v.fract() == 0.0 && *v < 1e15 => {
                let v = *v as usize;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err("expected a nonnegative integer time bound")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err("expected a number")),
        }
    }

    fn primary(&mut self) -> Result<Formula> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let f = self.implies()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Some(Tok::Ident(s)) if s == "true" => {
                self.pos += 1;
                Ok(Formula::True)
            }
            Some(Tok::Ident(s)) if s == "ball" => self.ball(),
            Some(Tok::Ident(_)) => self.comparison(),
            _ => Err(self.err("expected a formula")),
        }
    }

    fn signal(&mut self) -> Result<(usize, String)> {
        match self.peek() {
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                let idx = self
                    .signals
                    .iter()
                    .position(|s| s.as_ref() == name)
                    .ok_or_else(|| Error::UnknownSignal(name.clone()))?;
                self.pos += 1;
                Ok((idx, name))
            }
            _ => Err(self.err("expected a signal name")),
        }
    }

    fn comparison(&mut self) -> Result<Formula> {
        let (idx, name) = self.signal()?;
        let ge = match self.peek() {
            Some(Tok::Ge | Tok::Gt) => true,
            Some(Tok::Le | Tok::Lt) => false,
            _ => return Err(self.err("expected `>=` or `<=`")),
        };
        self.pos += 1;
        let c = self.number()?;
        let mut a = vec![0.0; self.signals.len()];
        let (label, b) = if ge {
            a[idx] = 1.0;
            (format!("{name} >= {c}"), -c)
        } else {
            a[idx] = -1.0;
            (format!("{name} <= {c}"), c)
        };
        Ok(Formula::Atom(Predicate::affine(label, a, b)))
    }

    fn ball(&mut self) -> Result<Formula> {
        let at = self.offset();
        self.pos += 1;
        self.expect(Tok::LParen, "`(`")?;
        let mut sel = Vec::new();
        let mut names = Vec::new();
        loop {
            let (i, n) = self.signal()?;
            sel.push(i);
            names.push(n);
            if self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect(Tok::Semi, "`;`")?;
        let mut center = Vec::new();
        loop {
            center.push(self.number()?);
            if self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.expect(Tok::Semi, "`;`")?;
        let radius = self.number()?;
        self.expect(Tok::RParen, "`)`")?;
        let cs: Vec<String> = center.iter().map(|c| c.to_string()).collect();
        let label = format!("ball({}; {}; {radius})", names.join(", "), cs.join(", "));
        Predicate::ball(label, sel, center, radius)
            .map(Formula::Atom)
            .map_err(|e| Error::Syntax { pos: at, msg: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aircraft_spec() {
        let f = parse_formula("G[0,150](alt >= 100 and (alt <= 300 => spd <= 650))", &["alt", "spd"]).unwrap();
        match f {
            Formula::Always(i, body) => {
                assert_eq!((i.a, i.b), (0, 150));
                match *body {
                    Formula::And(l, r) => {
                        assert!(matches!(*l, Formula::Atom(_)));
                        assert!(matches!(*r, Formula::Implies(ref a, ref b) if matches!(**a, Formula::Atom(_)) && matches!(**b, Formula::Atom(_))));
                    }
                    other => panic!("{other:?}"),
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn true_and_until() {
        assert_eq!(parse_formula("true", &["x"]).unwrap(), Formula::True);
        let f = parse_formula("(x >= 0) U[0,2] (x >= 2)", &["x"]).unwrap();
        assert!(matches!(f, Formula::Until(i, _, _) if i.a == 0 && i.b == 2));
        let again = parse_formula(&f.to_string(), &["x"]).unwrap();
        assert_eq!(f, again);
    }

    #[test]
    fn precedence() {
        let s = ["a", "b", "c"];
        let f = parse_formula("not a >= 0 and b >= 0 or c >= 0 => a >= 1", &s).unwrap();
        let Formula::Implies(l, _) = f else { panic!() };
        let Formula::Or(l, _) = *l else { panic!() };
        let Formula::And(l, _) = *l else { panic!() };
        assert!(matches!(*l, Formula::Not(_)));
    }

    #[test]
    fn errors() {
        assert!(matches!(parse_formula("G[3,1](x >= 0)", &["x"]), Err(Error::Syntax { .. })));
        assert!(matches!(parse_formula("y >= 0", &["x"]), Err(Error::UnknownSignal(_))));
        let e = parse_formula("x >= ", &["x"]).unwrap_err();
        assert!(matches!(e, Error::Syntax { pos: 5, .. }), "{e}");
        assert!(parse_formula("x >= 1 )", &["x"]).is_err());
    }

    #[test]
    fn ball_atom() {
        let f = parse_formula("ball(x, y; 1, -2.5; 0.5)", &["x", "y"]).unwrap();
        let Formula::Atom(p) = &f else { panic!() };
        assert!((p.h(&[1.0, -2.5]) - 0.5).abs() < 1e-15);
        assert_eq!(parse_formula(&f.to_string(), &["x", "y"]).unwrap(), f);
    }
}
