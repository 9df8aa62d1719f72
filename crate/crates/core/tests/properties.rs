//! Randomized property suites for the symbolic core: exterior
//! calculus, pullbacks, Hessians, differentiation and Legendre
//! inversion.

use std::collections::HashMap;

use proptest::prelude::*;

use multisym::charts::{make_bundle, Chart, ChartKind, CoordinateMap};
use multisym::expr::{Expr, Symbol};
use multisym::forms::DiffForm;
use multisym::lagrangian::LagrangianSystem;
use multisym::legendre::invert_reduced_numeric;

fn chart_e21() -> Chart {
    make_bundle(2, 1).unwrap().chart(ChartKind::E).clone()
}

/// Random polynomial in the given symbols, degree <= 3, small integer
/// coefficients.
fn poly_strategy(symbols: Vec<Symbol>) -> impl Strategy<Value = Expr> {
    let coeffs = prop::collection::vec((-4i64..5, prop::collection::vec(0u32..3, symbols.len())), 1..5);
    coeffs.prop_map(move |terms| {
        Expr::sum(
            terms
                .into_iter()
                .map(|(c, exps)| {
                    let mut factors = vec![Expr::int(c)];
                    for (s, e) in symbols.iter().zip(exps) {
                        if e > 0 {
                            factors.push(Expr::sym(s).pow(e as i32));
                        }
                    }
                    Expr::prod(factors)
                })
                .collect(),
        )
    })
}

fn e21_symbols() -> Vec<Symbol> {
    chart_e21().symbols().to_vec()
}

/// Random multilinear polynomial (degree <= 1 in each symbol).
fn multilinear_strategy() -> impl Strategy<Value = Expr> {
    let symbols = e21_symbols();
    prop::collection::vec(
        (-3i64..4, prop::collection::vec(0u32..2, symbols.len())),
        1..4,
    )
    .prop_map(move |terms| {
        Expr::sum(
            terms
                .into_iter()
                .map(|(c, exps)| {
                    let mut factors = vec![Expr::int(c)];
                    for (s, e) in symbols.iter().zip(exps) {
                        if e > 0 {
                            factors.push(Expr::sym(s));
                        }
                    }
                    Expr::prod(factors)
                })
                .collect(),
        )
    })
}

fn form_from_coeffs(chart: &Chart, coeffs: Vec<Expr>) -> DiffForm {
    let mut form = DiffForm::zero(chart, 1);
    for (i, c) in coeffs.into_iter().enumerate() {
        let s = chart.symbols()[i].clone();
        form = form
            .add(&DiffForm::differential(chart, &s).scale(&c))
            .unwrap();
    }
    form
}

/// Random 1-form on E with polynomial coefficients.
fn one_form_strategy() -> impl Strategy<Value = DiffForm> {
    let chart = chart_e21();
    let dim = chart.dim();
    prop::collection::vec(poly_strategy(e21_symbols()), dim)
        .prop_map(move |coeffs| form_from_coeffs(&chart, coeffs))
}

/// Random 1-form with multilinear coefficients (cheap under pullback).
fn light_one_form_strategy() -> impl Strategy<Value = DiffForm> {
    let chart = chart_e21();
    let dim = chart.dim();
    prop::collection::vec(multilinear_strategy(), dim)
        .prop_map(move |coeffs| form_from_coeffs(&chart, coeffs))
}

/// Random polynomial self-map of the chart E (base coordinates map to
/// themselves plus polynomial fiber mixing, fields to polynomials).
fn self_map_strategy() -> impl Strategy<Value = CoordinateMap> {
    let chart = chart_e21();
    let dim = chart.dim();
    // Multilinear images keep the degree of composed maps small enough
    // for many repetitions.
    prop::collection::vec(multilinear_strategy(), dim).prop_map(move |images| {
        CoordinateMap::new(chart.clone(), chart.clone(), images)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// d o d = 0 on random scalar functions and 1-forms.
    #[test]
    fn exterior_derivative_squares_to_zero(coeff in poly_strategy(e21_symbols()), omega in one_form_strategy()) {
        let chart = chart_e21();
        let f = DiffForm::scalar(&chart, &coeff);
        prop_assert!(f.exterior_derivative().exterior_derivative().is_zero());
        prop_assert!(omega.exterior_derivative().exterior_derivative().is_zero());
    }

    /// (g o f)* omega = f*(g* omega).
    #[test]
    fn pullback_functorial(f in self_map_strategy(), g in self_map_strategy(), omega in light_one_form_strategy()) {
        let composed = f.then(&g);
        let lhs = omega.pullback(&composed).unwrap();
        let rhs = omega.pullback(&g).unwrap().pullback(&f).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().is_zero());
    }

    /// Pullback is natural with respect to d: f*(d omega) = d(f* omega).
    #[test]
    fn pullback_commutes_with_d(f in self_map_strategy(), coeff in poly_strategy(e21_symbols())) {
        let chart = chart_e21();
        let omega = DiffForm::scalar(&chart, &coeff);
        let lhs = omega.exterior_derivative().pullback(&f).unwrap();
        let rhs = omega.pullback(&f).unwrap().exterior_derivative();
        prop_assert!(lhs.sub(&rhs).unwrap().is_zero());
    }

    /// The velocity Hessian of any Lagrangian is symmetric.
    #[test]
    fn hessian_symmetric(terms in prop::collection::vec((-4i64..5, 0usize..4, 0usize..4), 1..6)) {
        let bundle = make_bundle(2, 2).unwrap();
        let vs: Vec<Symbol> = (0..2u16)
            .flat_map(|nu| (0..2u16).map(move |a| Symbol::velocity(a, nu)))
            .collect();
        let l = Expr::sum(
            terms
                .into_iter()
                .map(|(c, i, j)| Expr::int(c).mul(&Expr::sym(&vs[i]).mul(&Expr::sym(&vs[j]))))
                .collect(),
        );
        let sys = LagrangianSystem::new(bundle, l).unwrap();
        let h = sys.hessian();
        for a in 0..h.len() {
            for b in 0..h.len() {
                prop_assert!(h[a][b].sub(&h[b][a]).is_zero_expr());
            }
        }
    }

    /// Symbolic derivative agrees with a central finite difference.
    #[test]
    fn derivative_matches_finite_difference(
        e in poly_strategy(e21_symbols()),
        point in prop::collection::vec(-2.0f64..2.0, 3),
        which in 0usize..3,
    ) {
        let chart = chart_e21();
        let symbols = chart.symbols();
        let target = &symbols[which];
        let deriv = e.differentiate(target);

        let h = 1e-5;
        let mut assignment: HashMap<Symbol, f64> = symbols
            .iter()
            .cloned()
            .zip(point.iter().copied())
            .collect();
        let exact = deriv.evaluate(&assignment).unwrap();
        let x = assignment[target];
        assignment.insert(target.clone(), x + h);
        let plus = e.evaluate(&assignment).unwrap();
        assignment.insert(target.clone(), x - h);
        let minus = e.evaluate(&assignment).unwrap();
        let approx = (plus - minus) / (2.0 * h);
        prop_assert!(
            (exact - approx).abs() <= 1e-6 * (1.0 + exact.abs()),
            "exact {exact}, approximate {approx}"
        );
    }

    /// Newton inversion of a regular Legendre map round-trips.
    #[test]
    fn newton_inversion_round_trip(
        diag in prop::collection::vec(2i64..6, 2),
        cross in -1i64..2,
        v_star in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        // L = 1/2 sum d_i v_i^2 + c v_0 v_1 with diagonally dominant
        // coefficients, hence an invertible Hessian.
        let bundle = make_bundle(1, 2).unwrap();
        let v0 = Expr::sym(&Symbol::velocity(0, 0));
        let v1 = Expr::sym(&Symbol::velocity(1, 0));
        let l = Expr::rational(diag[0], 2)
            .mul(&v0.pow(2))
            .add(&Expr::rational(diag[1], 2).mul(&v1.pow(2)))
            .add(&Expr::int(cross).mul(&v0.mul(&v1)));
        let sys = LagrangianSystem::new(bundle, l).unwrap();

        let assignment: HashMap<Symbol, f64> = [
            (Symbol::velocity(0, 0), v_star[0]),
            (Symbol::velocity(1, 0), v_star[1]),
        ]
        .into_iter()
        .collect();
        let p: Vec<f64> = (0..2u16)
            .map(|a| sys.momentum(a, 0).evaluate(&assignment).unwrap())
            .collect();
        let base = HashMap::new();
        let recovered = invert_reduced_numeric(&sys, &base, &p).unwrap();
        for (r, v) in recovered.iter().zip(&v_star) {
            prop_assert!((r - v).abs() <= 1e-8, "recovered {r}, expected {v}");
        }
    }
}
