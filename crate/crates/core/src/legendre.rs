//! The four Legendre maps as coordinate maps, inversion of the reduced
//! map for regular theories, primary (image) constraint extraction for
//! Lagrangians of degree at most 2 in the velocities, and the
//! commutativity checks across the multimomentum diagram.

use std::collections::HashMap;

use num::rational::BigRational;
use num::Zero;
use thiserror::Error;

use crate::charts::{ChartKind, CoordinateMap, Projection};
use crate::expr::{Expr, Symbol, SymbolRole};
use crate::lagrangian::{flat_index, unflatten, LagrangianSystem};
use crate::linalg::RatMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LegendreKind {
    /// J1E -> J1Estar, with all generalized momenta.
    Generalized,
    /// J1E -> Pi.
    Reduced,
    /// J1E -> MPi with pe := -v dL/dv.
    ExtendedHat,
    /// J1E -> MPi with pe := L - v dL/dv.
    ExtendedTilde,
    /// J1E -> J1PiStar; coordinate-identical to the reduced map.
    Restricted,
}

impl LegendreKind {
    pub fn name(self) -> &'static str {
        match self {
            LegendreKind::Generalized => "generalized",
            LegendreKind::Reduced => "reduced",
            LegendreKind::ExtendedHat => "extended_hat",
            LegendreKind::ExtendedTilde => "extended_tilde",
            LegendreKind::Restricted => "restricted",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LegendreError {
    #[error("Lagrangian is not polynomial of degree <= 2 in the velocities")]
    NotAffineMomenta,
    #[error("momentum coefficient matrix depends on (x, y); constraint extraction needs a constant matrix")]
    NonConstantCoefficients,
    #[error("symbolic inversion requires a constant invertible Hessian")]
    NotSymbolicallyInvertible,
    #[error("Newton iteration did not converge within {0} steps (residual {1:.3e})")]
    NewtonDiverged(usize, f64),
    #[error("singular Hessian at Newton iterate")]
    SingularIterate,
    #[error("evaluation failed during inversion: {0}")]
    Eval(#[from] crate::expr::EvalError),
}

/// Primary constraints cutting out the image of a Legendre map.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub chart_kind: ChartKind,
    pub kind: LegendreKind,
    pub constraints: Vec<Expr>,
    /// Rows of coefficients over the flattened momenta, for the linear
    /// constraints (in the same order as `constraints`' leading block).
    pub linear_part: RatMatrix,
}

/// The Legendre map of the requested kind. Base and field coordinates
/// map identically; momenta p^nu_A map to dL/dv^A_nu; the extended and
/// generalized kinds add their energy-type momenta.
pub fn legendre_map(sys: &LagrangianSystem, kind: LegendreKind) -> CoordinateMap {
    let spec = sys.spec();
    let source = sys.bundle.chart(ChartKind::J1E).clone();
    let target_kind = match kind {
        LegendreKind::Generalized => ChartKind::J1Estar,
        LegendreKind::Reduced => ChartKind::Pi,
        LegendreKind::ExtendedHat | LegendreKind::ExtendedTilde => ChartKind::MPi,
        LegendreKind::Restricted => ChartKind::J1PiStar,
    };
    let target = sys.bundle.chart(target_kind).clone();
    let images = target
        .symbols()
        .iter()
        .map(|s| match s.role() {
            SymbolRole::Base | SymbolRole::Field => Expr::sym(s),
            SymbolRole::Momentum => {
                sys.momentum(s.index_a().unwrap(), s.index_nu().unwrap())
            }
            SymbolRole::GeneralizedMomentum => {
                // p^nu_eta := -sum_A v^A_eta dL/dv^A_nu.
                let eta = s.index_a().unwrap();
                let nu = s.index_nu().unwrap();
                Expr::sum(
                    (0..spec.n)
                        .map(|a| {
                            Expr::sym(&Symbol::velocity(a, eta))
                                .mul(&sys.momentum(a, nu))
                                .neg()
                        })
                        .collect(),
                )
            }
            SymbolRole::ExtendedMomentum => {
                let minus_v_dl = Expr::sum(
                    (0..spec.n)
                        .flat_map(|a| {
                            (0..spec.m).map(move |nu| {
                                Expr::sym(&Symbol::velocity(a, nu))
                                    .mul(&sys.momentum(a, nu))
                                    .neg()
                            })
                        })
                        .collect(),
                );
                match kind {
                    LegendreKind::ExtendedHat => minus_v_dl,
                    LegendreKind::ExtendedTilde => sys.lagrangian.add(&minus_v_dl),
                    _ => unreachable!(),
                }
            }
            SymbolRole::Velocity | SymbolRole::Auxiliary => unreachable!(),
        })
        .collect();
    CoordinateMap::new(source, target, images)
}

/// The affine decomposition p = M v + b of the momenta: constant
/// rational M (the Hessian) and b in (x, y). Errors when L is not
/// quadratic in v or M is not constant.
pub struct AffineMomenta {
    pub matrix: RatMatrix,
    pub offset: Vec<Expr>,
}

pub fn affine_momenta(sys: &LagrangianSystem) -> Result<AffineMomenta, LegendreError> {
    if !sys.is_quadratic_in_velocities() {
        return Err(LegendreError::NotAffineMomenta);
    }
    let matrix = sys
        .constant_hessian()
        .ok_or(LegendreError::NonConstantCoefficients)?;
    let spec = sys.spec();
    let zero_v: HashMap<Symbol, Expr> = (0..spec.n)
        .flat_map(|a| (0..spec.m).map(move |nu| (Symbol::velocity(a, nu), Expr::zero())))
        .collect();
    let offset = sys
        .momenta()
        .iter()
        .map(|p| p.substitute(&zero_v))
        .collect();
    Ok(AffineMomenta { matrix, offset })
}

impl AffineMomenta {
    /// A right inverse on the image: v*(p) with M v* = p - b, free
    /// directions set to zero. One expression per flattened velocity.
    pub fn pseudo_solve(&self, momentum_symbols: &[Symbol]) -> Vec<Expr> {
        let k = self.matrix.cols;
        let mut images = vec![Expr::zero(); k];
        // Row-reduce the augmented system [M | I]; each pivot row then
        // expresses one pivot velocity as a rational combination of the
        // right-hand sides (p - b), with the free velocities at zero.
        let mut aug = RatMatrix::zeros(self.matrix.rows, k + self.matrix.rows);
        for i in 0..self.matrix.rows {
            for j in 0..k {
                aug[(i, j)] = self.matrix[(i, j)].clone();
            }
            aug[(i, k + i)] = num::One::one();
        }
        let (r, pivots) = aug.rref();
        for (row, &pc) in pivots.iter().enumerate() {
            if pc >= k {
                break;
            }
            // v_pc = sum_i r[(row, k+i)] * (p_i - b_i)
            //        - sum over non-pivot columns (set to zero).
            let mut terms = Vec::new();
            for i in 0..self.matrix.rows {
                let c = r[(row, k + i)].clone();
                if c.is_zero() {
                    continue;
                }
                let p_minus_b =
                    Expr::sym(&momentum_symbols[i]).sub(&self.offset[i]);
                terms.push(Expr::Rat(c).mul(&p_minus_b));
            }
            images[pc] = Expr::sum(terms);
        }
        images
    }
}

/// Symbolic inversion of the reduced Legendre map for quadratic L with
/// constant invertible Hessian: velocities as expressions in (x, y, p).
pub fn invert_reduced_symbolic(sys: &LagrangianSystem) -> Result<Vec<Expr>, LegendreError> {
    let aff = affine_momenta(sys)?;
    let k = aff.matrix.rows;
    let inv = aff
        .matrix
        .inverse()
        .ok_or(LegendreError::NotSymbolicallyInvertible)?;
    let spec = sys.spec();
    let momentum_symbols: Vec<Symbol> = (0..k)
        .map(|flat| {
            let (a, nu) = unflatten(spec, flat);
            Symbol::momentum(a, nu)
        })
        .collect();
    Ok((0..k)
        .map(|i| {
            Expr::sum(
                (0..k)
                    .map(|j| {
                        let c = inv[(i, j)].clone();
                        Expr::Rat(c)
                            .mul(&Expr::sym(&momentum_symbols[j]).sub(&aff.offset[j]))
                    })
                    .collect(),
            )
        })
        .collect())
}

/// Damped Newton inversion of the reduced map at a point: find v with
/// momenta(v) = p_target, holding the given (x, y) values fixed.
pub fn invert_reduced_numeric(
    sys: &LagrangianSystem,
    base_point: &HashMap<Symbol, f64>,
    p_target: &[f64],
) -> Result<Vec<f64>, LegendreError> {
    let spec = sys.spec();
    let k = spec.m as usize * spec.n as usize;
    assert_eq!(p_target.len(), k);
    let momenta = sys.momenta();
    let hessian = sys.hessian();
    let vel_symbols: Vec<Symbol> = (0..k)
        .map(|flat| {
            let (a, nu) = unflatten(spec, flat);
            Symbol::velocity(a, nu)
        })
        .collect();

    let mut v = vec![0.0f64; k];
    let eval_residual = |v: &[f64]| -> Result<Vec<f64>, LegendreError> {
        let mut pt = base_point.clone();
        for (s, &val) in vel_symbols.iter().zip(v) {
            pt.insert(s.clone(), val);
        }
        momenta
            .iter()
            .zip(p_target)
            .map(|(p, &t)| Ok(p.evaluate(&pt)? - t))
            .collect()
    };
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut res = eval_residual(&v)?;
    for iter in 0..50 {
        let rn = norm(&res);
        if rn < 1e-10 {
            return Ok(v);
        }
        let mut pt = base_point.clone();
        for (s, &val) in vel_symbols.iter().zip(&v) {
            pt.insert(s.clone(), val);
        }
        let mut jac = nalgebra::DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                jac[(i, j)] = hessian[i][j].evaluate(&pt)?;
            }
        }
        let rhs = nalgebra::DVector::from_column_slice(&res);
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or(LegendreError::SingularIterate)?;
        // Damping: halve the step while the residual grows.
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = v
                .iter()
                .zip(step.iter())
                .map(|(vi, si)| vi - lambda * si)
                .collect();
            let trial_res = eval_residual(&trial)?;
            if norm(&trial_res) < rn || lambda < 1e-8 {
                v = trial;
                res = trial_res;
                break;
            }
            lambda *= 0.5;
        }
        if iter == 49 {
            break;
        }
    }
    let rn = norm(&res);
    if rn < 1e-10 {
        Ok(v)
    } else {
        Err(LegendreError::NewtonDiverged(50, rn))
    }
}

/// Everything the affine elimination yields for a degree-<=2 theory:
/// the linear image constraints, the right inverse v*(p) of the
/// momentum map, and the canonical reduction modulo the linear
/// constraints (pivot momenta rewritten in the free ones).
pub struct Elimination {
    pub linear_constraints: Vec<Expr>,
    pub linear_part: RatMatrix,
    /// v^A_nu -> expression in (x, y, p) solving the momentum map on
    /// its image, kernel directions at zero.
    pub velocity_table: HashMap<Symbol, Expr>,
    /// Pivot momentum -> expression in free momenta (and x, y).
    pub reduce_table: HashMap<Symbol, Expr>,
}

pub fn eliminate(sys: &LagrangianSystem) -> Result<Elimination, LegendreError> {
    let aff = affine_momenta(sys)?;
    let spec = sys.spec();
    let k = aff.matrix.rows;
    let momentum_symbols: Vec<Symbol> = (0..k)
        .map(|flat| {
            let (a, nu) = unflatten(spec, flat);
            Symbol::momentum(a, nu)
        })
        .collect();

    // Linear constraints from the left null space of M.
    let null_rows = aff.matrix.left_null_space();
    let mut linear_constraints = Vec::new();
    for w in &null_rows {
        let c = Expr::sum(
            w.iter()
                .zip(&momentum_symbols)
                .zip(&aff.offset)
                .filter(|((wi, _), _)| !wi.is_zero())
                .map(|((wi, p), b)| {
                    Expr::Rat(wi.clone()).mul(&Expr::sym(p).sub(b))
                })
                .collect(),
        );
        linear_constraints.push(c);
    }
    let linear_part = RatMatrix::from_rows(null_rows);

    let reduce_table: HashMap<Symbol, Expr> = {
        let (r, pivots) = linear_part.rref();
        let mut table = HashMap::new();
        for (row, &pc) in pivots.iter().enumerate() {
            // (p_pc - b_pc) = -sum_{j != pc} r[row][j] (p_j - b_j).
            let mut terms = vec![aff.offset[pc].clone()];
            for j in 0..k {
                if j == pc || r[(row, j)].is_zero() {
                    continue;
                }
                terms.push(
                    Expr::Rat(-r[(row, j)].clone())
                        .mul(&Expr::sym(&momentum_symbols[j]).sub(&aff.offset[j])),
                );
            }
            table.insert(momentum_symbols[pc].clone(), Expr::sum(terms));
        }
        table
    };

    let v_star = aff.pseudo_solve(&momentum_symbols);
    Ok(Elimination {
        linear_constraints,
        linear_part,
        velocity_table: velocity_table(spec, &v_star),
        reduce_table,
    })
}

/// Primary constraints of the image of the given Legendre map, for
/// momenta affine in v with constant coefficient matrix.
pub fn image_constraints(
    sys: &LagrangianSystem,
    kind: LegendreKind,
) -> Result<ConstraintSet, LegendreError> {
    let spec = sys.spec();
    let elim = eliminate(sys)?;
    let mut constraints = elim.linear_constraints.clone();
    let linear_part = elim.linear_part.clone();
    let table = &elim.velocity_table;
    let reduce_table = &elim.reduce_table;

    // Scalar constraint fixing the energy-type momentum for the
    // extended kinds: eliminate v from the pe-image on the solvable
    // directions and require pe to equal the result. The generalized
    // kind gets the trace analogue when it provably vanishes on the
    // image.
    let map = legendre_map(sys, kind);
    match kind {
        LegendreKind::ExtendedHat | LegendreKind::ExtendedTilde => {
            let pe_sym = Symbol::extended_momentum();
            let pe_image = map.image_of(&pe_sym).unwrap();
            let chi = Expr::sym(&pe_sym)
                .sub(&pe_image.substitute(table))
                .substitute(reduce_table);
            debug_assert!(constraint_vanishes_on_image(&map, &chi));
            constraints.push(chi);
        }
        LegendreKind::Generalized => {
            let trace = Expr::sum(
                (0..spec.m)
                    .map(|nu| {
                        Expr::sym(&Symbol::generalized_momentum(nu, nu))
                    })
                    .collect(),
            );
            let trace_image = Expr::sum(
                (0..spec.m)
                    .map(|nu| {
                        map.image_of(&Symbol::generalized_momentum(nu, nu))
                            .unwrap()
                            .clone()
                    })
                    .collect(),
            );
            let chi = trace
                .sub(&trace_image.substitute(table))
                .substitute(reduce_table);
            // Only sound when the kernel directions drop out; keep it
            // only if substituting the images gives a proven zero.
            if constraint_vanishes_on_image(&map, &chi) {
                constraints.push(chi);
            }
        }
        LegendreKind::Reduced | LegendreKind::Restricted => {}
    }

    Ok(ConstraintSet {
        chart_kind: map.target.kind(),
        kind,
        constraints,
        linear_part,
    })
}

fn velocity_table(spec: crate::charts::BundleSpec, v_star: &[Expr]) -> HashMap<Symbol, Expr> {
    (0..spec.m as usize * spec.n as usize)
        .map(|flat| {
            let (a, nu) = unflatten(spec, flat);
            (Symbol::velocity(a, nu), v_star[flat].clone())
        })
        .collect()
}

/// True when substituting the Legendre images turns the constraint into
/// the zero polynomial.
pub fn constraint_vanishes_on_image(map: &CoordinateMap, constraint: &Expr) -> bool {
    constraint.substitute(&map.substitution()).is_zero_expr()
}

/// One commutativity identity of the multimomentum diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatIdentity {
    pub name: &'static str,
    pub passed: bool,
    /// Name of the first differing target coordinate on failure.
    pub first_difference: Option<String>,
}

/// Verify the projection compatibilities of Prop. 1 / Def. 6 and the
/// Psi-equivalence at the level of coordinate maps.
pub fn check_projection_compat(sys: &LagrangianSystem) -> Vec<CompatIdentity> {
    let generalized = legendre_map(sys, LegendreKind::Generalized);
    let reduced = legendre_map(sys, LegendreKind::Reduced);
    let hat = legendre_map(sys, LegendreKind::ExtendedHat);
    let tilde = legendre_map(sys, LegendreKind::ExtendedTilde);
    let restricted = legendre_map(sys, LegendreKind::Restricted);
    let b = &sys.bundle;

    let mut out = Vec::new();
    let mut check = |name: &'static str, lhs: &CoordinateMap, rhs: &CoordinateMap| {
        let diff = map_difference(lhs, rhs);
        out.push(CompatIdentity {
            name,
            passed: diff.is_none(),
            first_difference: diff,
        });
    };

    check(
        "delta o generalized = reduced",
        &generalized.then(&b.projection(Projection::Delta)),
        &reduced,
    );
    check(
        "iota0 o generalized = extended_hat",
        &generalized.then(&b.projection(Projection::Iota0)),
        &hat,
    );
    check(
        "mu o extended_tilde = restricted",
        &tilde.then(&b.projection(Projection::Mu)),
        &restricted,
    );
    check(
        "mu o extended_hat = restricted",
        &hat.then(&b.projection(Projection::Mu)),
        &restricted,
    );
    check(
        "psi o restricted = reduced",
        &restricted.then(&b.projection(Projection::Psi)),
        &reduced,
    );

    // pe-images differ by the Lagrangian: tilde = hat + L.
    let pe = Symbol::extended_momentum();
    let diff = tilde
        .image_of(&pe)
        .unwrap()
        .sub(hat.image_of(&pe).unwrap())
        .sub(&sys.lagrangian);
    out.push(CompatIdentity {
        name: "extended_tilde pe = extended_hat pe + L",
        passed: diff.is_zero_expr(),
        first_difference: (!diff.is_zero_expr()).then(|| pe.name().to_string()),
    });

    out
}

/// First target coordinate where two parallel maps differ, if any.
pub fn map_difference(a: &CoordinateMap, b: &CoordinateMap) -> Option<String> {
    debug_assert_eq!(a.source, b.source);
    debug_assert_eq!(a.target, b.target);
    for (i, s) in a.target.symbols().iter().enumerate() {
        if !a.image(i).sub(b.image(i)).is_zero_expr() {
            return Some(s.name().to_string());
        }
    }
    None
}

/// Convenience accessor used by tests and reports: rational row vector
/// of a linear momentum constraint over the flattened momenta.
pub fn linear_row(set: &ConstraintSet, i: usize) -> Vec<BigRational> {
    set.linear_part.row(i).to_vec()
}

#[allow(unused)]
fn momentum_symbol_for(spec: crate::charts::BundleSpec, flat: usize) -> Symbol {
    let (a, nu) = unflatten(spec, flat);
    Symbol::momentum(a, nu)
}

#[allow(unused)]
pub(crate) fn flat_momentum_index(spec: crate::charts::BundleSpec, a: u16, nu: u16) -> usize {
    flat_index(spec, a, nu)
}
