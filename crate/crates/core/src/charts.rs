//! Adapted coordinate charts for a trivial bundle pi: E -> M and the
//! derived spaces built from it: the first jet bundle J1E and the four
//! multimomentum bundles (generalized J1E*, reduced Pi, extended MPi,
//! restricted J1PiStar), together with the natural projections between
//! them, the canonical multimomentum forms, and connections.
//!
//! Coordinate conventions (0-based indices throughout):
//! base `x_nu`, fields `y_A`, jet velocities `v_A_nu`, momenta `p_A_nu`
//! (the index notation p^nu_A), extended momentum `pe`, generalized
//! momenta `q_eta_nu` (p^nu_eta). Velocities and momenta are flattened
//! in the order nu*N + A (nu outer); generalized momenta eta*m + nu
//! (eta outer).

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{Expr, Symbol, SymbolResolver};
use crate::forms::DiffForm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChartKind {
    E,
    J1E,
    J1Estar,
    Pi,
    MPi,
    J1PiStar,
}

impl ChartKind {
    pub fn name(self) -> &'static str {
        match self {
            ChartKind::E => "E",
            ChartKind::J1E => "J1E",
            ChartKind::J1Estar => "J1Estar",
            ChartKind::Pi => "Pi",
            ChartKind::MPi => "MPi",
            ChartKind::J1PiStar => "J1PiStar",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChartError {
    #[error("bundle dimensions must be positive (got m={m}, n={n})")]
    NonPositiveDimension { m: i64, n: i64 },
    #[error("no canonical form on chart {0}")]
    UnsupportedChart(&'static str),
    #[error("connection component ({a},{nu}) contains the fiber symbol `{symbol}`")]
    FiberSymbolInConnection { a: u16, nu: u16, symbol: String },
    #[error("expected {expected} connection components, got {got}")]
    ConnectionComponentCount { expected: usize, got: usize },
}

/// Base and fiber dimensions of the bundle pi: E -> M, with the volume
/// convention omega = d^m x fixed by the chart ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleSpec {
    pub m: u16,
    pub n: u16,
}

/// One adapted chart: an ordered coordinate list. Base coordinates come
/// first in every chart, so indices 0..m always address x^nu.
#[derive(Debug, Clone)]
pub struct Chart {
    kind: ChartKind,
    spec: BundleSpec,
    symbols: Arc<Vec<Symbol>>,
    by_name: Arc<HashMap<String, usize>>,
}

impl PartialEq for Chart {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.spec == other.spec
    }
}

impl Eq for Chart {}

impl Chart {
    fn new(kind: ChartKind, spec: BundleSpec, symbols: Vec<Symbol>) -> Chart {
        let by_name = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name().to_string(), i))
            .collect();
        Chart {
            kind,
            spec,
            symbols: Arc::new(symbols),
            by_name: Arc::new(by_name),
        }
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    pub fn spec(&self) -> BundleSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[Symbol] {
        &self.symbols
    }

    pub fn symbol(&self, i: usize) -> &Symbol {
        &self.symbols[i]
    }

    pub fn index_of(&self, s: &Symbol) -> Option<usize> {
        self.by_name.get(s.name()).copied()
    }

    /// Base dimension m.
    pub fn m(&self) -> u16 {
        self.spec.m
    }

    /// Fiber dimension N.
    pub fn n(&self) -> u16 {
        self.spec.n
    }
}

impl SymbolResolver for Chart {
    fn resolve(&self, name: &str) -> Option<Symbol> {
        self.by_name.get(name).map(|&i| self.symbols[i].clone())
    }
}

/// A map between charts, one image expression per target coordinate.
/// Base coordinates map identically for every map in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    pub source: Chart,
    pub target: Chart,
    pub images: Vec<Expr>,
}

impl CoordinateMap {
    pub fn new(source: Chart, target: Chart, images: Vec<Expr>) -> CoordinateMap {
        assert_eq!(
            images.len(),
            target.dim(),
            "image count must equal target dimension"
        );
        CoordinateMap {
            source,
            target,
            images,
        }
    }

    pub fn identity(chart: &Chart) -> CoordinateMap {
        CoordinateMap {
            source: chart.clone(),
            target: chart.clone(),
            images: chart.symbols().iter().map(Expr::sym).collect(),
        }
    }

    /// The image of one target coordinate.
    pub fn image(&self, target_index: usize) -> &Expr {
        &self.images[target_index]
    }

    pub fn image_of(&self, target_symbol: &Symbol) -> Option<&Expr> {
        self.target.index_of(target_symbol).map(|i| &self.images[i])
    }

    /// Substitution table target symbol -> image expression.
    pub fn substitution(&self) -> HashMap<Symbol, Expr> {
        self.target
            .symbols()
            .iter()
            .cloned()
            .zip(self.images.iter().cloned())
            .collect()
    }

    /// Composition `after` o `self` (apply self first), by eager
    /// substitution with normalization.
    pub fn then(&self, after: &CoordinateMap) -> CoordinateMap {
        assert_eq!(
            self.target, after.source,
            "composition requires matching intermediate chart"
        );
        let table = self.substitution();
        CoordinateMap {
            source: self.source.clone(),
            target: after.target.clone(),
            images: after.images.iter().map(|e| e.substitute(&table)).collect(),
        }
    }

    /// Pull a scalar on the target chart back to the source chart.
    pub fn pull_scalar(&self, e: &Expr) -> Expr {
        e.substitute(&self.substitution())
    }
}

/// Natural maps between the multimomentum charts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// J1Estar -> Pi, dropping the generalized momenta.
    Delta,
    /// MPi -> J1PiStar, dropping the extended momentum.
    Mu,
    /// J1Estar -> MPi, contracting pe := sum_nu q_nu_nu.
    Iota0,
    /// J1PiStar -> Pi, the coordinate identity of Theorem 2.
    Psi,
}

/// The bundle together with all six charts.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub spec: BundleSpec,
    e: Chart,
    j1e: Chart,
    j1estar: Chart,
    pi: Chart,
    mpi: Chart,
    j1pistar: Chart,
}

pub fn make_bundle(m: i64, n: i64) -> Result<Bundle, ChartError> {
    if m < 1 || n < 1 || m > u16::MAX as i64 || n > u16::MAX as i64 {
        return Err(ChartError::NonPositiveDimension { m, n });
    }
    let spec = BundleSpec {
        m: m as u16,
        n: n as u16,
    };
    let (m, n) = (spec.m, spec.n);

    let base: Vec<Symbol> = (0..m).map(Symbol::base).collect();
    let fields: Vec<Symbol> = (0..n).map(Symbol::field).collect();
    // Flattened order nu*N + A for velocities and momenta.
    let velocities: Vec<Symbol> = (0..m)
        .flat_map(|nu| (0..n).map(move |a| Symbol::velocity(a, nu)))
        .collect();
    let momenta: Vec<Symbol> = (0..m)
        .flat_map(|nu| (0..n).map(move |a| Symbol::momentum(a, nu)))
        .collect();
    // Row-major eta*m + nu for the generalized momenta.
    let generalized: Vec<Symbol> = (0..m)
        .flat_map(|eta| (0..m).map(move |nu| Symbol::generalized_momentum(eta, nu)))
        .collect();

    let cat = |parts: &[&[Symbol]]| -> Vec<Symbol> { parts.concat() };

    Ok(Bundle {
        spec,
        e: Chart::new(ChartKind::E, spec, cat(&[&base, &fields])),
        j1e: Chart::new(ChartKind::J1E, spec, cat(&[&base, &fields, &velocities])),
        j1estar: Chart::new(
            ChartKind::J1Estar,
            spec,
            cat(&[&base, &fields, &generalized, &momenta]),
        ),
        pi: Chart::new(ChartKind::Pi, spec, cat(&[&base, &fields, &momenta])),
        mpi: Chart::new(
            ChartKind::MPi,
            spec,
            cat(&[&base, &fields, &[Symbol::extended_momentum()], &momenta]),
        ),
        j1pistar: Chart::new(ChartKind::J1PiStar, spec, cat(&[&base, &fields, &momenta])),
    })
}

impl Bundle {
    pub fn chart(&self, kind: ChartKind) -> &Chart {
        match kind {
            ChartKind::E => &self.e,
            ChartKind::J1E => &self.j1e,
            ChartKind::J1Estar => &self.j1estar,
            ChartKind::Pi => &self.pi,
            ChartKind::MPi => &self.mpi,
            ChartKind::J1PiStar => &self.j1pistar,
        }
    }

    /// Canonical multimomentum form: Theta-hat on J1Estar, Theta on MPi.
    pub fn canonical_form(&self, kind: ChartKind) -> Result<DiffForm, ChartError> {
        let (m, n) = (self.spec.m, self.spec.n);
        let chart = self.chart(kind);
        let scalar = match kind {
            // p^eta_eta d^m x term: trace of the generalized momenta.
            ChartKind::J1Estar => Expr::sum(
                (0..m)
                    .map(|nu| Expr::sym(&Symbol::generalized_momentum(nu, nu)))
                    .collect(),
            ),
            ChartKind::MPi => Expr::sym(&Symbol::extended_momentum()),
            other => return Err(ChartError::UnsupportedChart(other.name())),
        };
        let mut theta = DiffForm::volume(chart).scale(&scalar);
        for nu in 0..m {
            for a in 0..n {
                let dy = DiffForm::differential(chart, &Symbol::field(a));
                let term = dy
                    .wedge(&DiffForm::base_volume_contracted(chart, nu))
                    .expect("same chart")
                    .scale(&Expr::sym(&Symbol::momentum(a, nu)));
                theta = theta.add(&term).expect("same chart");
            }
        }
        Ok(theta)
    }

    pub fn projection(&self, p: Projection) -> CoordinateMap {
        let (m, _n) = (self.spec.m, self.spec.n);
        let sym = |s: Symbol| Expr::Sym(s);
        match p {
            Projection::Delta => {
                let images = self.pi.symbols().iter().map(Expr::sym).collect();
                CoordinateMap::new(self.j1estar.clone(), self.pi.clone(), images)
            }
            Projection::Mu => {
                let images = self.j1pistar.symbols().iter().map(Expr::sym).collect();
                CoordinateMap::new(self.mpi.clone(), self.j1pistar.clone(), images)
            }
            Projection::Iota0 => {
                let images = self
                    .mpi
                    .symbols()
                    .iter()
                    .map(|s| {
                        if *s == Symbol::extended_momentum() {
                            Expr::sum(
                                (0..m)
                                    .map(|nu| sym(Symbol::generalized_momentum(nu, nu)))
                                    .collect(),
                            )
                        } else {
                            Expr::sym(s)
                        }
                    })
                    .collect();
                CoordinateMap::new(self.j1estar.clone(), self.mpi.clone(), images)
            }
            Projection::Psi => {
                let images = self.pi.symbols().iter().map(Expr::sym).collect();
                CoordinateMap::new(self.j1pistar.clone(), self.pi.clone(), images)
            }
        }
    }
}

/// An Ehresmann connection on pi, given by its component functions
/// Gamma^A_nu in (x, y) only.
#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    spec: BundleSpec,
    /// Flattened A*m + nu.
    gamma: Vec<Expr>,
}

impl Connection {
    pub fn trivial(spec: BundleSpec) -> Connection {
        Connection {
            spec,
            gamma: vec![Expr::zero(); spec.m as usize * spec.n as usize],
        }
    }

    pub fn component(&self, a: u16, nu: u16) -> &Expr {
        &self.gamma[a as usize * self.spec.m as usize + nu as usize]
    }

    pub fn spec(&self) -> BundleSpec {
        self.spec
    }

    pub fn is_trivial(&self) -> bool {
        self.gamma.iter().all(Expr::is_zero_expr)
    }
}

/// Validate connection components: one expression per (A, nu), flattened
/// A*m + nu, with no velocity or momentum symbols.
pub fn make_connection(spec: BundleSpec, gamma: Vec<Expr>) -> Result<Connection, ChartError> {
    let expected = spec.m as usize * spec.n as usize;
    if gamma.len() != expected {
        return Err(ChartError::ConnectionComponentCount {
            expected,
            got: gamma.len(),
        });
    }
    use crate::expr::SymbolRole;
    for (flat, g) in gamma.iter().enumerate() {
        for s in g.free_symbols() {
            if !matches!(s.role(), SymbolRole::Base | SymbolRole::Field) {
                return Err(ChartError::FiberSymbolInConnection {
                    a: (flat / spec.m as usize) as u16,
                    nu: (flat % spec.m as usize) as u16,
                    symbol: s.name().to_string(),
                });
            }
        }
    }
    Ok(Connection { spec, gamma })
}
