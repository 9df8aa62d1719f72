//! Textual expression grammar: infix `+ - * / ^`, function application
//! `f(x)`, rational literals `a/b`, and coordinate identifiers resolved
//! through a [`SymbolResolver`]. `^` takes an integer exponent only.
//! Whitespace is insignificant. `print` emits the same grammar, and
//! `parse(print(e))` reproduces `e` for normalized expressions.

use std::fmt::Write as _;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};
use thiserror::Error;

use super::{Elementary, Expr, Symbol};

/// Maps identifier tokens to chart symbols. Charts implement this so the
/// parser rejects coordinates that do not exist on the chart at hand.
pub trait SymbolResolver {
    fn resolve(&self, name: &str) -> Option<Symbol>;
}

/// Resolver that accepts any identifier as an auxiliary symbol; handy in
/// tests and for parameter expressions.
pub struct AnySymbol;

impl SymbolResolver for AnySymbol {
    fn resolve(&self, name: &str) -> Option<Symbol> {
        Some(Symbol::auxiliary(name))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

fn err<T>(position: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        position,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Int(BigInt),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(input: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((i, Token::Plus));
                i += 1;
            }
            '-' => {
                out.push((i, Token::Minus));
                i += 1;
            }
            '*' => {
                out.push((i, Token::Star));
                i += 1;
            }
            '/' => {
                out.push((i, Token::Slash));
                i += 1;
            }
            '^' => {
                out.push((i, Token::Caret));
                i += 1;
            }
            '(' => {
                out.push((i, Token::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Token::RParen));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let digits = &input[start..i];
                out.push((start, Token::Int(digits.parse::<BigInt>().unwrap())));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((start, Token::Ident(input[start..i].to_string())));
            }
            other => return err(i, format!("unexpected character `{other}`")),
        }
    }
    Ok(out)
}

struct Parser<'a, R: SymbolResolver + ?Sized> {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
    resolver: &'a R,
}

impl<'a, R: SymbolResolver + ?Sized> Parser<'a, R> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, t: Token, what: &str) -> Result<(), ParseError> {
        let p = self.here();
        match self.bump() {
            Some(tok) if tok == t => Ok(()),
            _ => err(p, format!("expected {what}")),
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut parts = vec![self.term()?];
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.bump();
                    parts.push(self.term()?);
                }
                Some(Token::Minus) => {
                    self.bump();
                    let t = self.term()?;
                    parts.push(Expr::Prod(vec![Expr::int(-1), t]));
                }
                _ => break,
            }
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Expr::Sum(parts)
        })
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.bump();
                    let rhs = self.unary()?;
                    acc = Expr::Prod(vec![acc, rhs]);
                }
                Some(Token::Slash) => {
                    self.bump();
                    let p = self.here();
                    let rhs = self.unary()?;
                    // Division by an exact rational stays exact.
                    acc = match rhs {
                        Expr::Rat(r) => {
                            if r.is_zero() {
                                return err(p, "division by zero");
                            }
                            Expr::Prod(vec![acc, Expr::Rat(r.recip())])
                        }
                        other => Expr::Prod(vec![acc, Expr::Pow(Box::new(other), -1)]),
                    };
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Prod(vec![Expr::int(-1), inner]));
        }
        self.power()
    }

    // power := atom ('^' exponent)?   (right-associative via recursion)
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(Token::Caret)) {
            self.bump();
            let k = self.exponent()?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    // exponent := '-'? integer | '(' '-'? integer ')'
    fn exponent(&mut self) -> Result<i32, ParseError> {
        let p = self.here();
        let parenthesized = matches!(self.peek(), Some(Token::LParen));
        if parenthesized {
            self.bump();
        }
        let mut negative = false;
        if matches!(self.peek(), Some(Token::Minus)) {
            self.bump();
            negative = true;
        }
        let k = match self.bump() {
            Some(Token::Int(n)) => {
                use num::ToPrimitive;
                match n.to_i32() {
                    Some(k) => k,
                    None => return err(p, "exponent out of range"),
                }
            }
            _ => return err(p, "expected integer exponent after `^`"),
        };
        if parenthesized {
            self.expect(Token::RParen, "`)` after exponent")?;
        }
        Ok(if negative { -k } else { k })
    }

    // atom := integer | ident | ident '(' expr ')' | '(' expr ')'
    fn atom(&mut self) -> Result<Expr, ParseError> {
        let p = self.here();
        match self.bump() {
            Some(Token::Int(n)) => Ok(Expr::Rat(BigRational::from_integer(n))),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen, "closing `)`")?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if matches!(self.peek(), Some(Token::LParen)) {
                    let f = Elementary::from_name(&name)
                        .ok_or(())
                        .or_else(|_| err(p, format!("unknown function `{name}`")))?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect(Token::RParen, "closing `)` after function argument")?;
                    Ok(Expr::Func(f, Box::new(arg)))
                } else {
                    match self.resolver.resolve(&name) {
                        Some(s) => Ok(Expr::Sym(s)),
                        None => err(p, format!("unknown symbol `{name}`")),
                    }
                }
            }
            Some(_) => err(p, "expected a number, symbol or `(`"),
            None => err(p, "unexpected end of input"),
        }
    }
}

/// Parse an expression; identifiers are resolved through `resolver`.
/// The result is returned in normal form.
pub fn parse<R: SymbolResolver + ?Sized>(input: &str, resolver: &R) -> Result<Expr, ParseError> {
    let tokens = tokenize(input)?;
    if tokens.is_empty() {
        return err(0, "empty expression");
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: input.len(),
        resolver,
    };
    let e = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return err(parser.here(), "trailing input");
    }
    Ok(e.normalized())
}

/// Render an expression in the input grammar.
pub fn print(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, Prec::Sum);
    out
}

#[derive(PartialEq, PartialOrd, Clone, Copy)]
enum Prec {
    Sum,
    Prod,
    Power,
    Atom,
}

fn write_rat(out: &mut String, r: &BigRational, ctx: Prec) {
    let negative = r.is_negative();
    let needs_parens = (negative && ctx > Prec::Sum)
        || (!r.denom().is_one() && ctx >= Prec::Power);
    if needs_parens {
        out.push('(');
    }
    if r.denom().is_one() {
        let _ = write!(out, "{}", r.numer());
    } else {
        let _ = write!(out, "{}/{}", r.numer(), r.denom());
    }
    if needs_parens {
        out.push(')');
    }
}

fn write_expr(out: &mut String, e: &Expr, ctx: Prec) {
    match e {
        Expr::Rat(r) => write_rat(out, r, ctx),
        Expr::Float(f) => {
            let needs_parens = *f < 0.0 && ctx > Prec::Sum;
            if needs_parens {
                out.push('(');
            }
            let _ = write!(out, "{f}");
            if needs_parens {
                out.push(')');
            }
        }
        Expr::Sym(s) => out.push_str(s.name()),
        Expr::Func(f, arg) => {
            out.push_str(f.name());
            out.push('(');
            write_expr(out, arg, Prec::Sum);
            out.push(')');
        }
        Expr::Pow(base, k) => {
            write_expr(out, base, Prec::Atom);
            out.push('^');
            if *k < 0 {
                let _ = write!(out, "({k})");
            } else {
                let _ = write!(out, "{k}");
            }
        }
        Expr::Prod(parts) => {
            if ctx > Prec::Prod {
                out.push('(');
            }
            for (i, p) in parts.iter().enumerate() {
                if i > 0 {
                    out.push('*');
                }
                write_expr(out, p, Prec::Power);
            }
            if ctx > Prec::Prod {
                out.push(')');
            }
        }
        Expr::Sum(parts) => {
            if ctx > Prec::Sum {
                out.push('(');
            }
            for (i, p) in parts.iter().enumerate() {
                if i > 0 {
                    out.push('+');
                }
                write_expr(out, p, Prec::Prod);
            }
            if ctx > Prec::Sum {
                out.push(')');
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s, &AnySymbol).unwrap()
    }

    #[test]
    fn literals_and_precedence() {
        assert_eq!(p("1/2"), Expr::rational(1, 2));
        assert_eq!(p("2+3*4"), Expr::int(14));
        assert_eq!(p("(2+3)*4"), Expr::int(20));
        assert_eq!(p("2^3"), Expr::int(8));
        assert_eq!(p("-2^2"), Expr::int(-4));
        assert_eq!(p("1 - 1/2"), Expr::rational(1, 2));
    }

    #[test]
    fn whitespace_is_insignificant() {
        assert_eq!(p("1/2 * x ^ 2"), p("1/2*x^2"));
    }

    #[test]
    fn functions_parse() {
        let x = Expr::sym(&Symbol::auxiliary("x"));
        assert_eq!(p("sin(x)"), Expr::func(Elementary::Sin, &x));
        assert_eq!(
            p("cos(x)^2"),
            Expr::func(Elementary::Cos, &x).pow(2)
        );
    }

    #[test]
    fn unknown_function_rejected() {
        let e = parse("tan(x)", &AnySymbol).unwrap_err();
        assert!(e.message.contains("unknown function"));
    }

    #[test]
    fn fractional_exponent_rejected() {
        assert!(parse("x^(1/2)", &AnySymbol).is_err());
        assert!(parse("x^y", &AnySymbol).is_err());
    }

    #[test]
    fn negative_exponent_accepted() {
        let x = Expr::sym(&Symbol::auxiliary("x"));
        assert_eq!(p("x^(-2)"), x.pow(-2));
        assert_eq!(p("x^-2"), x.pow(-2));
    }

    #[test]
    fn division_by_zero_literal_rejected() {
        assert!(parse("x/0", &AnySymbol).is_err());
    }

    #[test]
    fn position_reported() {
        let e = parse("x + )", &AnySymbol).unwrap_err();
        assert_eq!(e.position, 4);
    }

    #[test]
    fn roundtrip_on_normal_forms() {
        for src in [
            "1/4*((v_1_2-v_2_1)^2-(v_2_0-v_0_2)^2-(v_1_0-v_0_1)^2)",
            "1/2*x^2 - sin(x)*cos(x) + 3",
            "x^(-1) + y^3*z",
            "exp(x)*log(y) - sinh(z) + cosh(w)",
            "-x - 1/3",
        ] {
            let e = p(src);
            let printed = print(&e);
            let reparsed = p(&printed);
            assert_eq!(e, reparsed, "roundtrip failed for `{src}` -> `{printed}`");
        }
    }
}
