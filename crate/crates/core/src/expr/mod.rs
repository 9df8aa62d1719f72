//! Symbolic scalar-expression kernel.
//!
//! Expressions are trees over exact rational constants, float constants,
//! chart symbols, sums, products, integer powers and a fixed set of
//! elementary functions. Polynomial expressions over the rationals have a
//! canonical normal form: recursively expanded, monomials sorted by a
//! graded-lexicographic order on symbol names, coefficients collected,
//! zero terms dropped. Equality of normal forms is therefore decidable
//! equality of polynomials, which is what all the identity checks in the
//! rest of the crate rely on.

mod parse;

pub use parse::{parse, print, AnySymbol, ParseError, SymbolResolver};

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// What a coordinate symbol stands for in its chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SymbolRole {
    /// Base coordinate x_nu.
    Base,
    /// Field coordinate y_A.
    Field,
    /// Jet velocity v_A_nu.
    Velocity,
    /// Multimomentum p_A_nu (p^nu_A in index notation).
    Momentum,
    /// The single extended momentum `pe` on the extended bundle.
    ExtendedMomentum,
    /// Generalized momentum q_eta_nu (p^nu_eta).
    GeneralizedMomentum,
    /// Anything else (connection parameters, test symbols, ...).
    Auxiliary,
}

/// A named coordinate or parameter. Names are bijective with
/// (role, indices), so identity and ordering go through the name alone.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Symbol {
    name: Arc<str>,
    role: SymbolRole,
    /// First index: A for fields/velocities/momenta, nu for base, eta for
    /// generalized momenta.
    i: Option<u16>,
    /// Second index: nu where applicable.
    j: Option<u16>,
}

impl Symbol {
    pub fn base(nu: u16) -> Symbol {
        Symbol {
            name: format!("x_{nu}").into(),
            role: SymbolRole::Base,
            i: Some(nu),
            j: None,
        }
    }

    pub fn field(a: u16) -> Symbol {
        Symbol {
            name: format!("y_{a}").into(),
            role: SymbolRole::Field,
            i: Some(a),
            j: None,
        }
    }

    pub fn velocity(a: u16, nu: u16) -> Symbol {
        Symbol {
            name: format!("v_{a}_{nu}").into(),
            role: SymbolRole::Velocity,
            i: Some(a),
            j: Some(nu),
        }
    }

    pub fn momentum(a: u16, nu: u16) -> Symbol {
        Symbol {
            name: format!("p_{a}_{nu}").into(),
            role: SymbolRole::Momentum,
            i: Some(a),
            j: Some(nu),
        }
    }

    pub fn extended_momentum() -> Symbol {
        Symbol {
            name: "pe".into(),
            role: SymbolRole::ExtendedMomentum,
            i: None,
            j: None,
        }
    }

    pub fn generalized_momentum(eta: u16, nu: u16) -> Symbol {
        Symbol {
            name: format!("q_{eta}_{nu}").into(),
            role: SymbolRole::GeneralizedMomentum,
            i: Some(eta),
            j: Some(nu),
        }
    }

    pub fn auxiliary(name: &str) -> Symbol {
        Symbol {
            name: name.into(),
            role: SymbolRole::Auxiliary,
            i: None,
            j: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> SymbolRole {
        self.role
    }

    /// First index (A for field-like symbols, nu for base, eta for
    /// generalized momenta).
    pub fn index_a(&self) -> Option<u16> {
        self.i
    }

    /// Second index (nu), where applicable.
    pub fn index_nu(&self) -> Option<u16> {
        self.j
    }
}

impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> Ordering {
        self.name.as_ref().cmp(other.name.as_ref())
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// The fixed elementary function set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Elementary {
    Sin,
    Cos,
    Exp,
    Log,
    Sinh,
    Cosh,
}

impl Elementary {
    pub fn name(self) -> &'static str {
        match self {
            Elementary::Sin => "sin",
            Elementary::Cos => "cos",
            Elementary::Exp => "exp",
            Elementary::Log => "log",
            Elementary::Sinh => "sinh",
            Elementary::Cosh => "cosh",
        }
    }

    pub fn from_name(name: &str) -> Option<Elementary> {
        Some(match name {
            "sin" => Elementary::Sin,
            "cos" => Elementary::Cos,
            "exp" => Elementary::Exp,
            "log" => Elementary::Log,
            "sinh" => Elementary::Sinh,
            "cosh" => Elementary::Cosh,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Elementary::Sin => x.sin(),
            Elementary::Cos => x.cos(),
            Elementary::Exp => x.exp(),
            Elementary::Log => {
                if x <= 0.0 {
                    return Err(EvalError::Domain(format!("log({x})")));
                }
                x.ln()
            }
            Elementary::Sinh => x.sinh(),
            Elementary::Cosh => x.cosh(),
        })
    }
}

/// Symbolic scalar expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Rat(BigRational),
    Float(f64),
    Sym(Symbol),
    Sum(Vec<Expr>),
    Prod(Vec<Expr>),
    /// Integer power.
    Pow(Box<Expr>, i32),
    Func(Elementary, Box<Expr>),
}

impl Eq for Expr {}

impl PartialOrd for Expr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Expr {
    fn cmp(&self, other: &Self) -> Ordering {
        fn rank(e: &Expr) -> u8 {
            match e {
                Expr::Rat(_) => 0,
                Expr::Float(_) => 1,
                Expr::Sym(_) => 2,
                Expr::Func(_, _) => 3,
                Expr::Pow(_, _) => 4,
                Expr::Prod(_) => 5,
                Expr::Sum(_) => 6,
            }
        }
        match (self, other) {
            (Expr::Rat(a), Expr::Rat(b)) => a.cmp(b),
            (Expr::Float(a), Expr::Float(b)) => a.total_cmp(b),
            (Expr::Sym(a), Expr::Sym(b)) => a.cmp(b),
            (Expr::Func(fa, a), Expr::Func(fb, b)) => fa.cmp(fb).then_with(|| a.cmp(b)),
            (Expr::Pow(a, ka), Expr::Pow(b, kb)) => a.cmp(b).then_with(|| ka.cmp(kb)),
            (Expr::Prod(a), Expr::Prod(b)) | (Expr::Sum(a), Expr::Sum(b)) => a.cmp(b),
            _ => rank(self).cmp(&rank(other)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print(self))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("unassigned free symbol `{0}`")]
    Unassigned(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Verdict of [`Expr::is_zero`].
#[derive(Debug, Clone, PartialEq)]
pub enum ZeroCheck {
    /// The polynomial normal form is the zero polynomial.
    ProvenZero,
    /// The polynomial normal form is a nonzero polynomial, or a sampled
    /// value exceeded the nonzero threshold.
    ProvenNonzero,
    /// Non-polynomial expression; sampling could not separate it from
    /// zero. `max_abs` is the largest |value| seen over `samples` points.
    Undecided { samples: usize, max_abs: f64 },
}

impl ZeroCheck {
    pub fn is_proven_zero(&self) -> bool {
        matches!(self, ZeroCheck::ProvenZero)
    }

    /// Proven zero, or undecided with all samples below the zero
    /// threshold. Used where the spec accepts a sampling verdict.
    pub fn is_zero_or_likely(&self) -> bool {
        match self {
            ZeroCheck::ProvenZero => true,
            ZeroCheck::Undecided { max_abs, .. } => *max_abs < 1e-10,
            ZeroCheck::ProvenNonzero => false,
        }
    }
}

// ---------------------------------------------------------------------------
// Coefficients: exact rationals that degrade to f64 on contact with floats.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Coeff {
    Rat(BigRational),
    F(f64),
}

impl Coeff {
    fn one() -> Coeff {
        Coeff::Rat(BigRational::one())
    }

    fn is_zero(&self) -> bool {
        match self {
            Coeff::Rat(r) => r.is_zero(),
            Coeff::F(f) => *f == 0.0,
        }
    }

    fn add(&self, other: &Coeff) -> Coeff {
        match (self, other) {
            (Coeff::Rat(a), Coeff::Rat(b)) => Coeff::Rat(a + b),
            _ => Coeff::F(self.to_f64() + other.to_f64()),
        }
    }

    fn mul(&self, other: &Coeff) -> Coeff {
        match (self, other) {
            (Coeff::Rat(a), Coeff::Rat(b)) => Coeff::Rat(a * b),
            _ => Coeff::F(self.to_f64() * other.to_f64()),
        }
    }

    fn neg(&self) -> Coeff {
        match self {
            Coeff::Rat(a) => Coeff::Rat(-a),
            Coeff::F(f) => Coeff::F(-f),
        }
    }

    fn powi(&self, k: i32) -> Coeff {
        match self {
            Coeff::Rat(a) => {
                if k >= 0 {
                    Coeff::Rat(num::pow::pow(a.clone(), k as usize))
                } else {
                    Coeff::Rat(num::pow::pow(a.clone(), (-k) as usize).recip())
                }
            }
            Coeff::F(f) => Coeff::F(f.powi(k)),
        }
    }

    fn to_f64(&self) -> f64 {
        match self {
            Coeff::Rat(r) => rational_to_f64(r),
            Coeff::F(f) => *f,
        }
    }

    fn to_expr(&self) -> Expr {
        match self {
            Coeff::Rat(r) => Expr::Rat(r.clone()),
            Coeff::F(f) => Expr::Float(*f),
        }
    }
}

fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        // Fall back through a reduced quotient for extreme magnitudes.
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

// ---------------------------------------------------------------------------
// Polynomial normal form over "atoms" (symbols and opaque subtrees).
// ---------------------------------------------------------------------------

/// Exponent map over atoms; the atoms are normalized `Sym`, `Func` or,
/// for non-expandable negative powers, whole normalized sums.
type Monomial = BTreeMap<Expr, i32>;

#[derive(Debug, Clone, PartialEq)]
struct Poly {
    terms: BTreeMap<Monomial, Coeff>,
}

impl Poly {
    fn zero() -> Poly {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    fn constant(c: Coeff) -> Poly {
        let mut p = Poly::zero();
        if !c.is_zero() {
            p.terms.insert(Monomial::new(), c);
        }
        p
    }

    fn atom(a: Expr, exp: i32) -> Poly {
        if exp == 0 {
            return Poly::constant(Coeff::one());
        }
        let mut m = Monomial::new();
        m.insert(a, exp);
        let mut p = Poly::zero();
        p.terms.insert(m, Coeff::one());
        p
    }

    fn add_term(&mut self, m: Monomial, c: Coeff) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(existing) => {
                let s = existing.add(&c);
                if s.is_zero() {
                    self.terms.remove(&m);
                } else {
                    *existing = s;
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut m = ma.clone();
                for (atom, e) in mb {
                    let entry = m.entry(atom.clone()).or_insert(0);
                    *entry += e;
                    if *entry == 0 {
                        m.remove(atom);
                    }
                }
                out.add_term(m, ca.mul(cb));
            }
        }
        out
    }

    fn pow(&self, k: u32) -> Poly {
        let mut out = Poly::constant(Coeff::one());
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                out = out.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        out
    }

    /// Single-term polynomials can be inverted exactly.
    fn try_recip_pow(&self, k: i32) -> Option<Poly> {
        debug_assert!(k < 0);
        if self.terms.len() != 1 {
            return None;
        }
        let (m, c) = self.terms.iter().next().unwrap();
        let mut out_m = Monomial::new();
        for (atom, e) in m {
            out_m.insert(atom.clone(), e * k);
        }
        let mut p = Poly::zero();
        p.add_term(out_m, c.powi(k));
        Some(p)
    }

    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when every atom is a plain symbol (Laurent polynomial in
    /// independent variables), so zero/nonzero is decidable.
    fn is_symbol_poly(&self) -> bool {
        self.terms
            .keys()
            .all(|m| m.keys().all(|a| matches!(a, Expr::Sym(_))))
    }
}

fn to_poly(e: &Expr) -> Poly {
    match e {
        Expr::Rat(r) => Poly::constant(Coeff::Rat(r.clone())),
        Expr::Float(f) => Poly::constant(Coeff::F(*f)),
        Expr::Sym(s) => Poly::atom(Expr::Sym(s.clone()), 1),
        Expr::Sum(parts) => {
            let mut out = Poly::zero();
            for p in parts {
                out = out.add(&to_poly(p));
            }
            out
        }
        Expr::Prod(parts) => {
            let mut out = Poly::constant(Coeff::one());
            for p in parts {
                out = out.mul(&to_poly(p));
            }
            out
        }
        Expr::Pow(base, k) => {
            let bp = to_poly(base);
            if *k == 0 {
                Poly::constant(Coeff::one())
            } else if *k > 0 {
                bp.pow(*k as u32)
            } else if let Some(p) = bp.try_recip_pow(*k) {
                p
            } else if bp.is_zero() {
                // 1/0: keep it symbolic; evaluation reports the error.
                Poly::atom(Expr::Pow(Box::new(from_poly(&bp)), *k), 1)
            } else {
                Poly::atom(from_poly(&bp), *k)
            }
        }
        Expr::Func(f, arg) => Poly::atom(Expr::Func(*f, Box::new(arg.normalized())), 1),
    }
}

fn monomial_order(a: &Monomial, b: &Monomial) -> Ordering {
    let deg = |m: &Monomial| -> i64 { m.values().map(|e| *e as i64).sum() };
    deg(a).cmp(&deg(b)).then_with(|| a.cmp(b))
}

fn from_poly(p: &Poly) -> Expr {
    if p.terms.is_empty() {
        return Expr::Rat(BigRational::zero());
    }
    let mut terms: Vec<(&Monomial, &Coeff)> = p.terms.iter().collect();
    terms.sort_by(|(ma, _), (mb, _)| monomial_order(ma, mb).reverse());
    let mut summands = Vec::with_capacity(terms.len());
    for (m, c) in terms {
        let mut factors: Vec<Expr> = Vec::new();
        let one = Coeff::one();
        let minus_one = one.neg();
        if m.is_empty() || (*c != one && *c != minus_one) {
            factors.push(c.to_expr());
        } else if *c == minus_one {
            factors.push(Expr::Rat(-BigRational::one()));
        }
        for (atom, e) in m {
            if *e == 1 {
                factors.push(atom.clone());
            } else {
                factors.push(Expr::Pow(Box::new(atom.clone()), *e));
            }
        }
        summands.push(match factors.len() {
            0 => c.to_expr(),
            1 => factors.pop().unwrap(),
            _ => Expr::Prod(factors),
        });
    }
    if summands.len() == 1 {
        summands.pop().unwrap()
    } else {
        Expr::Sum(summands)
    }
}

// ---------------------------------------------------------------------------
// Public expression API.
// ---------------------------------------------------------------------------

impl Expr {
    pub fn zero() -> Expr {
        Expr::Rat(BigRational::zero())
    }

    pub fn one() -> Expr {
        Expr::Rat(BigRational::one())
    }

    pub fn int(n: i64) -> Expr {
        Expr::Rat(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn rational(num: i64, den: i64) -> Expr {
        Expr::Rat(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn sym(s: &Symbol) -> Expr {
        Expr::Sym(s.clone())
    }

    pub fn add(&self, other: &Expr) -> Expr {
        Expr::Sum(vec![self.clone(), other.clone()]).normalized()
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        Expr::Sum(vec![self.clone(), other.neg_raw()]).normalized()
    }

    pub fn mul(&self, other: &Expr) -> Expr {
        Expr::Prod(vec![self.clone(), other.clone()]).normalized()
    }

    pub fn neg(&self) -> Expr {
        self.neg_raw().normalized()
    }

    fn neg_raw(&self) -> Expr {
        Expr::Prod(vec![Expr::int(-1), self.clone()])
    }

    pub fn pow(&self, k: i32) -> Expr {
        Expr::Pow(Box::new(self.clone()), k).normalized()
    }

    pub fn func(f: Elementary, arg: &Expr) -> Expr {
        Expr::Func(f, Box::new(arg.clone())).normalized()
    }

    pub fn sum(parts: Vec<Expr>) -> Expr {
        Expr::Sum(parts).normalized()
    }

    pub fn prod(parts: Vec<Expr>) -> Expr {
        Expr::Prod(parts).normalized()
    }

    /// Canonical normal form: expanded, collected, monomials sorted.
    pub fn normalized(&self) -> Expr {
        from_poly(&to_poly(self))
    }

    pub fn is_zero_expr(&self) -> bool {
        matches!(self, Expr::Rat(r) if r.is_zero())
    }

    /// Free symbols, sorted by name.
    pub fn free_symbols(&self) -> Vec<Symbol> {
        let mut out = BTreeMap::new();
        self.collect_symbols(&mut out);
        out.into_values().collect()
    }

    fn collect_symbols(&self, out: &mut BTreeMap<String, Symbol>) {
        match self {
            Expr::Rat(_) | Expr::Float(_) => {}
            Expr::Sym(s) => {
                out.entry(s.name().to_string()).or_insert_with(|| s.clone());
            }
            Expr::Sum(v) | Expr::Prod(v) => {
                for e in v {
                    e.collect_symbols(out);
                }
            }
            Expr::Pow(b, _) => b.collect_symbols(out),
            Expr::Func(_, a) => a.collect_symbols(out),
        }
    }

    pub fn contains_symbol(&self, s: &Symbol) -> bool {
        match self {
            Expr::Rat(_) | Expr::Float(_) => false,
            Expr::Sym(t) => t == s,
            Expr::Sum(v) | Expr::Prod(v) => v.iter().any(|e| e.contains_symbol(s)),
            Expr::Pow(b, _) => b.contains_symbol(s),
            Expr::Func(_, a) => a.contains_symbol(s),
        }
    }

    pub fn contains_role(&self, role: SymbolRole) -> bool {
        match self {
            Expr::Rat(_) | Expr::Float(_) => false,
            Expr::Sym(t) => t.role() == role,
            Expr::Sum(v) | Expr::Prod(v) => v.iter().any(|e| e.contains_role(role)),
            Expr::Pow(b, _) => b.contains_role(role),
            Expr::Func(_, a) => a.contains_role(role),
        }
    }

    /// Exact partial derivative with respect to `s`; every other symbol
    /// is treated as independent. The result is normalized.
    pub fn differentiate(&self, s: &Symbol) -> Expr {
        self.diff_raw(s).normalized()
    }

    fn diff_raw(&self, s: &Symbol) -> Expr {
        match self {
            Expr::Rat(_) | Expr::Float(_) => Expr::zero(),
            Expr::Sym(t) => {
                if t == s {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Sum(parts) => Expr::Sum(parts.iter().map(|p| p.diff_raw(s)).collect()),
            Expr::Prod(parts) => {
                let mut terms = Vec::with_capacity(parts.len());
                for (i, p) in parts.iter().enumerate() {
                    let mut factors: Vec<Expr> = parts.to_vec();
                    factors[i] = p.diff_raw(s);
                    terms.push(Expr::Prod(factors));
                }
                Expr::Sum(terms)
            }
            Expr::Pow(base, k) => {
                if *k == 0 {
                    Expr::zero()
                } else {
                    Expr::Prod(vec![
                        Expr::int(*k as i64),
                        Expr::Pow(base.clone(), k - 1),
                        base.diff_raw(s),
                    ])
                }
            }
            Expr::Func(f, arg) => {
                let outer = match f {
                    Elementary::Sin => Expr::Func(Elementary::Cos, arg.clone()),
                    Elementary::Cos => {
                        Expr::Prod(vec![Expr::int(-1), Expr::Func(Elementary::Sin, arg.clone())])
                    }
                    Elementary::Exp => Expr::Func(Elementary::Exp, arg.clone()),
                    Elementary::Log => Expr::Pow(arg.clone(), -1),
                    Elementary::Sinh => Expr::Func(Elementary::Cosh, arg.clone()),
                    Elementary::Cosh => Expr::Func(Elementary::Sinh, arg.clone()),
                };
                Expr::Prod(vec![outer, arg.diff_raw(s)])
            }
        }
    }

    /// Simultaneous substitution; unassigned symbols pass through.
    pub fn substitute(&self, assignment: &HashMap<Symbol, Expr>) -> Expr {
        self.subst_raw(assignment).normalized()
    }

    fn subst_raw(&self, assignment: &HashMap<Symbol, Expr>) -> Expr {
        match self {
            Expr::Rat(_) | Expr::Float(_) => self.clone(),
            Expr::Sym(s) => assignment.get(s).cloned().unwrap_or_else(|| self.clone()),
            Expr::Sum(v) => Expr::Sum(v.iter().map(|e| e.subst_raw(assignment)).collect()),
            Expr::Prod(v) => Expr::Prod(v.iter().map(|e| e.subst_raw(assignment)).collect()),
            Expr::Pow(b, k) => Expr::Pow(Box::new(b.subst_raw(assignment)), *k),
            Expr::Func(f, a) => Expr::Func(*f, Box::new(a.subst_raw(assignment))),
        }
    }

    /// IEEE double evaluation. Exact-rational subtrees are computed in
    /// exact arithmetic and converted once at the boundary.
    pub fn evaluate(&self, point: &HashMap<Symbol, f64>) -> Result<f64, EvalError> {
        Ok(match self.eval_inner(point)? {
            Val::R(r) => rational_to_f64(&r),
            Val::F(f) => f,
        })
    }

    fn eval_inner(&self, point: &HashMap<Symbol, f64>) -> Result<Val, EvalError> {
        match self {
            Expr::Rat(r) => Ok(Val::R(r.clone())),
            Expr::Float(f) => Ok(Val::F(*f)),
            Expr::Sym(s) => point
                .get(s)
                .map(|v| Val::F(*v))
                .ok_or_else(|| EvalError::Unassigned(s.name().to_string())),
            Expr::Sum(parts) => {
                let mut acc = Val::R(BigRational::zero());
                for p in parts {
                    acc = acc.add(p.eval_inner(point)?);
                }
                Ok(acc)
            }
            Expr::Prod(parts) => {
                let mut acc = Val::R(BigRational::one());
                for p in parts {
                    acc = acc.mul(p.eval_inner(point)?);
                }
                Ok(acc)
            }
            Expr::Pow(base, k) => base.eval_inner(point)?.powi(*k),
            Expr::Func(f, arg) => {
                let x = match arg.eval_inner(point)? {
                    Val::R(r) => rational_to_f64(&r),
                    Val::F(v) => v,
                };
                Ok(Val::F(f.apply(x)?))
            }
        }
    }

    /// Tri-state zero test. Polynomial normal forms are decided exactly;
    /// everything else is sampled at `samples` (>= 64) random points in
    /// [-2, 2]^dim.
    pub fn is_zero(&self) -> ZeroCheck {
        self.is_zero_sampled(64)
    }

    pub fn is_zero_sampled(&self, samples: usize) -> ZeroCheck {
        let p = to_poly(self);
        if p.is_zero() {
            return ZeroCheck::ProvenZero;
        }
        if p.is_symbol_poly() {
            return ZeroCheck::ProvenNonzero;
        }
        let samples = samples.max(64);
        let syms = self.free_symbols();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1ab1e);
        let mut max_abs: f64 = 0.0;
        let mut taken = 0usize;
        let mut attempts = 0usize;
        while taken < samples && attempts < samples * 10 {
            attempts += 1;
            let point: HashMap<Symbol, f64> = syms
                .iter()
                .map(|s| (s.clone(), rng.gen_range(-2.0..2.0)))
                .collect();
            match self.evaluate(&point) {
                Ok(v) => {
                    taken += 1;
                    max_abs = max_abs.max(v.abs());
                    if v.abs() > 1e-6 {
                        return ZeroCheck::ProvenNonzero;
                    }
                }
                Err(EvalError::Domain(_)) => continue,
                Err(e @ EvalError::Unassigned(_)) => {
                    // Cannot happen: we assign every free symbol.
                    unreachable!("{e}")
                }
            }
        }
        ZeroCheck::Undecided {
            samples: taken,
            max_abs,
        }
    }

    /// Exact rational value of a constant expression, if it is one.
    pub fn as_rational(&self) -> Option<BigRational> {
        let p = to_poly(self);
        if p.is_zero() {
            return Some(BigRational::zero());
        }
        if p.terms.len() == 1 {
            let (m, c) = p.terms.iter().next().unwrap();
            if m.is_empty() {
                if let Coeff::Rat(r) = c {
                    return Some(r.clone());
                }
            }
        }
        None
    }

    /// Degree in the given symbols, treating the expression as a
    /// polynomial in them; `None` if it is not polynomial in them
    /// (negative powers or occurrences inside elementary functions).
    pub fn poly_degree_in(&self, syms: &[Symbol]) -> Option<i64> {
        let p = to_poly(self);
        let mut deg: i64 = 0;
        for m in p.terms.keys() {
            let mut d = 0i64;
            for (atom, e) in m {
                match atom {
                    Expr::Sym(s) if syms.contains(s) => {
                        if *e < 0 {
                            return None;
                        }
                        d += *e as i64;
                    }
                    _ => {
                        // A symbol hiding inside a non-symbol atom makes
                        // the expression non-polynomial in it.
                        if syms.iter().any(|s| atom.contains_symbol(s)) {
                            return None;
                        }
                    }
                }
            }
            deg = deg.max(d);
        }
        Some(deg)
    }
}

enum Val {
    R(BigRational),
    F(f64),
}

impl Val {
    fn add(self, other: Val) -> Val {
        match (self, other) {
            (Val::R(a), Val::R(b)) => Val::R(a + b),
            (a, b) => Val::F(a.to_f64() + b.to_f64()),
        }
    }

    fn mul(self, other: Val) -> Val {
        match (self, other) {
            (Val::R(a), Val::R(b)) => Val::R(a * b),
            (a, b) => Val::F(a.to_f64() * b.to_f64()),
        }
    }

    fn powi(self, k: i32) -> Result<Val, EvalError> {
        match self {
            Val::R(r) => {
                if k >= 0 {
                    Ok(Val::R(num::pow::pow(r, k as usize)))
                } else if r.is_zero() {
                    Err(EvalError::Domain("0 raised to a negative power".into()))
                } else {
                    Ok(Val::R(num::pow::pow(r, (-k) as usize).recip()))
                }
            }
            Val::F(f) => {
                if f == 0.0 && k < 0 {
                    Err(EvalError::Domain("0 raised to a negative power".into()))
                } else {
                    Ok(Val::F(f.powi(k)))
                }
            }
        }
    }

    fn to_f64(&self) -> f64 {
        match self {
            Val::R(r) => rational_to_f64(r),
            Val::F(f) => *f,
        }
    }
}

/// Normal-form equality: `a - b` normalizes to the zero polynomial.
pub fn equal_modulo_normalization(a: &Expr, b: &Expr) -> bool {
    a.sub(b).is_zero_expr()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aux(name: &str) -> Symbol {
        Symbol::auxiliary(name)
    }

    #[test]
    fn polynomial_normal_form_is_canonical() {
        let a = Expr::sym(&aux("a"));
        let b = Expr::sym(&aux("b"));
        // (a+b)^2 == a^2 + 2ab + b^2
        let lhs = a.add(&b).pow(2);
        let rhs = Expr::sum(vec![
            a.pow(2),
            Expr::int(2).mul(&a).mul(&b),
            b.pow(2),
        ]);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn binomial_difference_proven_zero() {
        let a = Expr::sym(&aux("a"));
        let b = Expr::sym(&aux("b"));
        let e = a
            .add(&b)
            .pow(2)
            .sub(&a.pow(2))
            .sub(&Expr::int(2).mul(&a).mul(&b))
            .sub(&b.pow(2));
        assert_eq!(e.is_zero(), ZeroCheck::ProvenZero);
    }

    #[test]
    fn nonzero_polynomial_detected() {
        let a = Expr::sym(&aux("a"));
        assert_eq!(a.add(&Expr::one()).is_zero(), ZeroCheck::ProvenNonzero);
    }

    #[test]
    fn pythagorean_identity_is_undecided() {
        let x = Expr::sym(&aux("x"));
        let e = Expr::func(Elementary::Sin, &x)
            .pow(2)
            .add(&Expr::func(Elementary::Cos, &x).pow(2))
            .sub(&Expr::one());
        match e.is_zero() {
            ZeroCheck::Undecided { samples, max_abs } => {
                assert!(samples >= 64);
                assert!(max_abs < 1e-10);
            }
            other => panic!("expected undecided, got {other:?}"),
        }
    }

    #[test]
    fn differentiate_basics() {
        let v = Symbol::velocity(0, 0);
        let half_v2 = Expr::rational(1, 2).mul(&Expr::sym(&v).pow(2));
        assert_eq!(half_v2.differentiate(&v), Expr::sym(&v));

        let x = Symbol::base(0);
        let e = Expr::func(Elementary::Sin, &Expr::sym(&x));
        assert_eq!(
            e.differentiate(&x),
            Expr::func(Elementary::Cos, &Expr::sym(&x))
        );
    }

    #[test]
    fn simultaneous_substitution_swaps() {
        let a = aux("a");
        let b = aux("b");
        // a + 2b under {a -> b, b -> a} must give b + 2a.
        let e = Expr::sym(&a).add(&Expr::int(2).mul(&Expr::sym(&b)));
        let mut map = HashMap::new();
        map.insert(a.clone(), Expr::sym(&b));
        map.insert(b.clone(), Expr::sym(&a));
        let swapped = e.substitute(&map);
        let expected = Expr::sym(&b).add(&Expr::int(2).mul(&Expr::sym(&a)));
        assert_eq!(swapped, expected);
    }

    #[test]
    fn evaluate_exact_then_float() {
        let v = aux("v");
        let e = Expr::rational(1, 2).mul(&Expr::sym(&v).pow(2));
        let mut pt = HashMap::new();
        pt.insert(v.clone(), 2.0);
        assert_eq!(e.evaluate(&pt).unwrap(), 2.0);

        let s = Expr::func(Elementary::Sinh, &Expr::sym(&v));
        pt.insert(v.clone(), 1.0);
        assert!((s.evaluate(&pt).unwrap() - 1.1752011936438014).abs() < 1e-12);
    }

    #[test]
    fn evaluate_domain_error() {
        let x = aux("x");
        let e = Expr::func(Elementary::Log, &Expr::sym(&x));
        let mut pt = HashMap::new();
        pt.insert(x.clone(), -1.0);
        assert!(matches!(e.evaluate(&pt), Err(EvalError::Domain(_))));
    }

    #[test]
    fn evaluate_unassigned_symbol() {
        let e = Expr::sym(&aux("zz"));
        assert!(matches!(
            e.evaluate(&HashMap::new()),
            Err(EvalError::Unassigned(_))
        ));
    }

    #[test]
    fn substitute_then_evaluate_commutes() {
        let v = aux("v");
        let p = aux("p");
        let e = Expr::rational(1, 2).mul(&Expr::sym(&v).pow(2));
        let mut map = HashMap::new();
        map.insert(v.clone(), Expr::sym(&p));
        let subbed = e.substitute(&map);
        let expected = Expr::rational(1, 2).mul(&Expr::sym(&p).pow(2));
        assert_eq!(subbed, expected);

        let mut pt = HashMap::new();
        pt.insert(p.clone(), 3.0);
        let via_sub = subbed.evaluate(&pt).unwrap();
        let mut pt2 = HashMap::new();
        pt2.insert(v.clone(), 3.0);
        let direct = e.evaluate(&pt2).unwrap();
        assert_eq!(via_sub, direct);
    }

    #[test]
    fn negative_powers_fold_for_monomials() {
        let x = Expr::sym(&aux("x"));
        // x * x^-1 == 1
        let e = x.mul(&x.pow(-1));
        assert_eq!(e, Expr::one());
    }
}
