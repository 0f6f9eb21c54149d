//! Boolean expressions over named pins.
//!
//! Cell libraries describe combinational behavior with a small expression
//! language: pin names, the constants `0` and `1`, and the operators `~`
//! (not), `&` (and), `^` (xor), `|` (or), with parentheses. Precedence from
//! loosest to tightest is `|`, `^`, `&`, `~`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

/// A parsed boolean expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Const(bool),
    Var(String),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Xor(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprError {
    #[error("expression syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{0}` in expression")]
    UnknownVar(String),
}

impl Expr {
    /// Parse an expression from text.
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut parser = Parser {
            chars: text.char_indices().peekable(),
            text,
        };
        let expr = parser.parse_or()?;
        parser.skip_ws();
        if let Some(&(offset, c)) = parser.chars.peek() {
            return Err(ExprError::Syntax {
                offset,
                message: format!("unexpected character `{c}`"),
            });
        }
        Ok(expr)
    }

    /// All variable names referenced by the expression.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut vars = BTreeSet::new();
        self.collect_vars(&mut vars);
        vars
    }

    fn collect_vars(&self, vars: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                vars.insert(name.clone());
            }
            Expr::Not(a) => a.collect_vars(vars),
            Expr::And(a, b) | Expr::Or(a, b) | Expr::Xor(a, b) => {
                a.collect_vars(vars);
                b.collect_vars(vars);
            }
        }
    }

    /// Evaluate with a variable lookup.
    pub fn eval(&self, lookup: &impl Fn(&str) -> Option<bool>) -> Result<bool, ExprError> {
        Ok(match self {
            Expr::Const(b) => *b,
            Expr::Var(name) => lookup(name).ok_or_else(|| ExprError::UnknownVar(name.clone()))?,
            Expr::Not(a) => !a.eval(lookup)?,
            Expr::And(a, b) => a.eval(lookup)? & b.eval(lookup)?,
            Expr::Or(a, b) => a.eval(lookup)? | b.eval(lookup)?,
            Expr::Xor(a, b) => a.eval(lookup)? ^ b.eval(lookup)?,
        })
    }

    /// Compile to an index-based form for fast repeated evaluation.
    /// `order` gives the slot index for each variable name.
    pub fn compile(&self, order: &impl Fn(&str) -> Option<usize>) -> Result<CompiledExpr, ExprError> {
        Ok(match self {
            Expr::Const(b) => CompiledExpr::Const(*b),
            Expr::Var(name) => {
                CompiledExpr::Var(order(name).ok_or_else(|| ExprError::UnknownVar(name.clone()))?)
            }
            Expr::Not(a) => CompiledExpr::Not(Box::new(a.compile(order)?)),
            Expr::And(a, b) => {
                CompiledExpr::And(Box::new(a.compile(order)?), Box::new(b.compile(order)?))
            }
            Expr::Or(a, b) => {
                CompiledExpr::Or(Box::new(a.compile(order)?), Box::new(b.compile(order)?))
            }
            Expr::Xor(a, b) => {
                CompiledExpr::Xor(Box::new(a.compile(order)?), Box::new(b.compile(order)?))
            }
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(b) => write!(f, "{}", if *b { 1 } else { 0 }),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Not(a) => write!(f, "~({a})"),
            Expr::And(a, b) => write!(f, "({a} & {b})"),
            Expr::Or(a, b) => write!(f, "({a} | {b})"),
            Expr::Xor(a, b) => write!(f, "({a} ^ {b})"),
        }
    }
}

/// Expression with variables resolved to dense slot indices.
#[derive(Debug, Clone)]
pub enum CompiledExpr {
    Const(bool),
    Var(usize),
    Not(Box<CompiledExpr>),
    And(Box<CompiledExpr>, Box<CompiledExpr>),
    Or(Box<CompiledExpr>, Box<CompiledExpr>),
    Xor(Box<CompiledExpr>, Box<CompiledExpr>),
}

impl CompiledExpr {
    pub fn eval(&self, slots: &[bool]) -> bool {
        match self {
            CompiledExpr::Const(b) => *b,
            CompiledExpr::Var(i) => slots[*i],
            CompiledExpr::Not(a) => !a.eval(slots),
            CompiledExpr::And(a, b) => a.eval(slots) & b.eval(slots),
            CompiledExpr::Or(a, b) => a.eval(slots) | b.eval(slots),
            CompiledExpr::Xor(a, b) => a.eval(slots) ^ b.eval(slots),
        }
    }
}

struct Parser<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    text: &'a str,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some(&(_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn parse_or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_xor()?;
        loop {
            self.skip_ws();
            if matches!(self.chars.peek(), Some(&(_, '|'))) {
                self.chars.next();
                let rhs = self.parse_xor()?;
                lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_xor(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_and()?;
        loop {
            self.skip_ws();
            if matches!(self.chars.peek(), Some(&(_, '^'))) {
                self.chars.next();
                let rhs = self.parse_and()?;
                lhs = Expr::Xor(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            self.skip_ws();
            if matches!(self.chars.peek(), Some(&(_, '&'))) {
                self.chars.next();
                let rhs = self.parse_unary()?;
                lhs = Expr::And(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        if matches!(self.chars.peek(), Some(&(_, '~')) | Some(&(_, '!'))) {
            self.chars.next();
            let inner = self.parse_unary()?;
            return Ok(Expr::Not(Box::new(inner)));
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        match self.chars.peek().copied() {
            Some((_, '(')) => {
                self.chars.next();
                let inner = self.parse_or()?;
                self.skip_ws();
                match self.chars.next() {
                    Some((_, ')')) => Ok(inner),
                    Some((offset, c)) => Err(ExprError::Syntax {
                        offset,
                        message: format!("expected `)`, found `{c}`"),
                    }),
                    None => Err(ExprError::Syntax {
                        offset: self.text.len(),
                        message: "expected `)`, found end of input".into(),
                    }),
                }
            }
            Some((start, c)) if c == '0' || c == '1' => {
                // A bare 0/1 is a constant; identifiers may still contain digits.
                if self.ident_continues_after(start) {
                    self.parse_ident(start)
                } else {
                    self.chars.next();
                    Ok(Expr::Const(c == '1'))
                }
            }
            Some((start, c)) if is_ident_char(c) => self.parse_ident(start),
            Some((offset, c)) => Err(ExprError::Syntax {
                offset,
                message: format!("unexpected character `{c}`"),
            }),
            None => Err(ExprError::Syntax {
                offset: self.text.len(),
                message: "unexpected end of input".into(),
            }),
        }
    }

    fn ident_continues_after(&self, start: usize) -> bool {
        self.text[start..]
            .chars()
            .nth(1)
            .map(is_ident_char)
            .unwrap_or(false)
    }

    fn parse_ident(&mut self, start: usize) -> Result<Expr, ExprError> {
        let mut end = start;
        while let Some(&(i, c)) = self.chars.peek() {
            if is_ident_char(c) {
                end = i + c.len_utf8();
                self.chars.next();
            } else {
                break;
            }
        }
        Ok(Expr::Var(self.text[start..end].to_string()))
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$' || c == '[' || c == ']'
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(text: &str, vars: &[(&str, bool)]) -> bool {
        let expr = Expr::parse(text).unwrap();
        expr.eval(&|name| vars.iter().find(|(n, _)| *n == name).map(|(_, v)| *v))
            .unwrap()
    }

    #[test]
    fn precedence() {
        // `|` binds loosest: a | b & c == a | (b & c)
        assert!(eval("A | B & C", &[("A", false), ("B", true), ("C", true)]));
        assert!(!eval("A | B & C", &[("A", false), ("B", true), ("C", false)]));
        // `^` between `|` and `&`
        assert!(eval("A ^ B & C", &[("A", true), ("B", true), ("C", false)]));
    }

    #[test]
    fn mux_function() {
        let mux = "(S & B) | (~S & A)";
        assert!(eval(mux, &[("S", true), ("A", false), ("B", true)]));
        assert!(!eval(mux, &[("S", false), ("A", false), ("B", true)]));
    }

    #[test]
    fn constants_and_parens() {
        assert!(eval("1", &[]));
        assert!(!eval("0 & A", &[("A", true)]));
        assert!(eval("~(A ^ A)", &[("A", true)]));
    }

    #[test]
    fn variables_collected() {
        let expr = Expr::parse("(S & B) | (~S & A)").unwrap();
        let vars: Vec<String> = expr.variables().into_iter().collect();
        assert_eq!(vars, vec!["A", "B", "S"]);
    }

    #[test]
    fn syntax_errors() {
        assert!(Expr::parse("A &").is_err());
        assert!(Expr::parse("(A").is_err());
        assert!(Expr::parse("A ? B").is_err());
    }

    #[test]
    fn compile_matches_eval() {
        let expr = Expr::parse("A ^ (B | ~C)").unwrap();
        let names = ["A", "B", "C"];
        let compiled = expr
            .compile(&|n| names.iter().position(|x| *x == n))
            .unwrap();
        for bits in 0..8u8 {
            let slots = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
            let direct = expr
                .eval(&|n| names.iter().position(|x| *x == n).map(|i| slots[i]))
                .unwrap();
            assert_eq!(compiled.eval(&slots), direct);
        }
    }
}
