//! Lagrangian-side derivations: momenta, the partial Hessian with
//! respect to the velocities, regularity classification, Poincare-Cartan
//! forms, the energy density and Euler-Lagrange residuals.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::charts::{Bundle, BundleSpec, ChartKind, Connection};
use crate::expr::{Expr, Symbol, SymbolRole};
use crate::forms::DiffForm;
use crate::linalg::RatMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("Lagrangian contains the momentum symbol `{0}`")]
    MomentumSymbol(String),
    #[error("section component {0} contains the non-base symbol `{1}`")]
    FiberSymbolInSection(usize, String),
    #[error("expected {expected} section components, got {got}")]
    SectionComponentCount { expected: usize, got: usize },
}

/// A first-order Lagrangian field theory: the bundle and L on J1E.
#[derive(Debug, Clone)]
pub struct LagrangianSystem {
    pub bundle: Bundle,
    pub lagrangian: Expr,
}

/// Flattened velocity/momentum index: nu*N + A. This fixed order is
/// used for Hessian rows and columns and all matrix serializations.
pub fn flat_index(spec: BundleSpec, a: u16, nu: u16) -> usize {
    nu as usize * spec.n as usize + a as usize
}

/// Inverse of [`flat_index`].
pub fn unflatten(spec: BundleSpec, flat: usize) -> (u16, u16) {
    ((flat % spec.n as usize) as u16, (flat / spec.n as usize) as u16)
}

/// How the Hessian rank behaved over the sampled jet points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Regularity {
    /// Rank mN at every sample.
    Regular,
    /// Constant rank r < mN across samples.
    Singular { rank: usize },
    /// Rank varied between samples.
    Indeterminate { ranks_seen: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub sampled_ranks: Vec<usize>,
    /// Exact rational rank, present when the Hessian is constant.
    pub exact_rank: Option<usize>,
    pub classification: Regularity,
    /// Strongest certifiable global claim: L quadratic in v with a
    /// constant invertible Hessian.
    pub hyperregular_certified: bool,
    pub kernel_dimension: Option<usize>,
}

/// A closed-form section of E -> M: one expression in base symbols per
/// field component.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionExpr {
    pub components: Vec<Expr>,
}

impl SectionExpr {
    pub fn new(spec: BundleSpec, components: Vec<Expr>) -> Result<SectionExpr, LagrangianError> {
        if components.len() != spec.n as usize {
            return Err(LagrangianError::SectionComponentCount {
                expected: spec.n as usize,
                got: components.len(),
            });
        }
        for (i, c) in components.iter().enumerate() {
            for s in c.free_symbols() {
                if s.role() != SymbolRole::Base {
                    return Err(LagrangianError::FiberSymbolInSection(
                        i,
                        s.name().to_string(),
                    ));
                }
            }
        }
        Ok(SectionExpr { components })
    }

    /// Substitution table for the first jet prolongation: y^A -> phi^A,
    /// v^A_nu -> d phi^A / d x^nu.
    pub fn jet_substitution(&self, spec: BundleSpec) -> HashMap<Symbol, Expr> {
        let mut table = HashMap::new();
        for a in 0..spec.n {
            let phi = &self.components[a as usize];
            table.insert(Symbol::field(a), phi.clone());
            for nu in 0..spec.m {
                table.insert(
                    Symbol::velocity(a, nu),
                    phi.differentiate(&Symbol::base(nu)),
                );
            }
        }
        table
    }
}

impl LagrangianSystem {
    pub fn new(bundle: Bundle, lagrangian: Expr) -> Result<LagrangianSystem, LagrangianError> {
        for s in lagrangian.free_symbols() {
            if matches!(
                s.role(),
                SymbolRole::Momentum | SymbolRole::ExtendedMomentum | SymbolRole::GeneralizedMomentum
            ) {
                return Err(LagrangianError::MomentumSymbol(s.name().to_string()));
            }
        }
        Ok(LagrangianSystem {
            bundle,
            lagrangian: lagrangian.normalized(),
        })
    }

    pub fn spec(&self) -> BundleSpec {
        self.bundle.spec
    }

    /// dL/dv^A_nu.
    pub fn momentum(&self, a: u16, nu: u16) -> Expr {
        self.lagrangian.differentiate(&Symbol::velocity(a, nu))
    }

    /// All momenta, flattened in the nu*N + A order.
    pub fn momenta(&self) -> Vec<Expr> {
        let spec = self.spec();
        (0..spec.m as usize * spec.n as usize)
            .map(|flat| {
                let (a, nu) = unflatten(spec, flat);
                self.momentum(a, nu)
            })
            .collect()
    }

    /// Partial Hessian d2L/dv^B_eta dv^A_nu, rows and columns in the
    /// flattened nu*N + A order. Symmetric by construction.
    pub fn hessian(&self) -> Vec<Vec<Expr>> {
        let spec = self.spec();
        let k = spec.m as usize * spec.n as usize;
        let momenta = self.momenta();
        (0..k)
            .map(|row| {
                (0..k)
                    .map(|col| {
                        let (b, eta) = unflatten(spec, col);
                        momenta[row].differentiate(&Symbol::velocity(b, eta))
                    })
                    .collect()
            })
            .collect()
    }

    /// Exact rational Hessian, when every entry is a rational constant.
    pub fn constant_hessian(&self) -> Option<RatMatrix> {
        let h = self.hessian();
        let rows: Option<Vec<Vec<_>>> = h
            .iter()
            .map(|row| row.iter().map(Expr::as_rational).collect())
            .collect();
        rows.map(RatMatrix::from_rows)
    }

    /// True when L is polynomial of degree <= 2 in the velocities.
    pub fn is_quadratic_in_velocities(&self) -> bool {
        let spec = self.spec();
        let vs: Vec<Symbol> = (0..spec.m)
            .flat_map(|nu| (0..spec.n).map(move |a| Symbol::velocity(a, nu)))
            .collect();
        matches!(self.lagrangian.poly_degree_in(&vs), Some(d) if d <= 2)
    }

    /// Sample the numeric Hessian rank at `k` jet points. Singular
    /// values below 1e-9 times the largest are treated as zero. A
    /// constant Hessian is additionally ranked exactly.
    pub fn classify_regularity(&self, k: usize) -> RegularityReport {
        let spec = self.spec();
        let dim = spec.m as usize * spec.n as usize;
        let hessian = self.hessian();
        let exact = self.constant_hessian();
        let exact_rank = exact.as_ref().map(RatMatrix::rank);

        let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b9);
        let chart = self.bundle.chart(ChartKind::J1E);
        let mut sampled_ranks = Vec::with_capacity(k.max(1));
        for _ in 0..k.max(1) {
            let point: HashMap<Symbol, f64> = chart
                .symbols()
                .iter()
                .map(|s| (s.clone(), rng.gen_range(-2.0..2.0)))
                .collect();
            let mut mat = DMatrix::<f64>::zeros(dim, dim);
            for (i, row) in hessian.iter().enumerate() {
                for (j, e) in row.iter().enumerate() {
                    mat[(i, j)] = e.evaluate(&point).unwrap_or(f64::NAN);
                }
            }
            sampled_ranks.push(numeric_rank(&mat));
        }

        let all_equal = sampled_ranks.windows(2).all(|w| w[0] == w[1]);
        let rank0 = exact_rank.unwrap_or(sampled_ranks[0]);
        let classification = if !all_equal {
            Regularity::Indeterminate {
                ranks_seen: {
                    let mut r = sampled_ranks.clone();
                    r.sort_unstable();
                    r.dedup();
                    r
                },
            }
        } else if rank0 == dim {
            Regularity::Regular
        } else {
            Regularity::Singular { rank: rank0 }
        };

        let hyperregular_certified = self.is_quadratic_in_velocities()
            && exact_rank == Some(dim);

        RegularityReport {
            kernel_dimension: match &classification {
                Regularity::Regular => Some(0),
                Regularity::Singular { rank } => Some(dim - rank),
                Regularity::Indeterminate { .. } => None,
            },
            sampled_ranks,
            exact_rank,
            classification,
            hyperregular_certified,
        }
    }

    /// Lagrangian energy density E^nabla_L = sum dL/dv (v - Gamma) - L.
    pub fn energy_density(&self, conn: &Connection) -> Expr {
        let spec = self.spec();
        let mut terms = Vec::new();
        for a in 0..spec.n {
            for nu in 0..spec.m {
                let p = self.momentum(a, nu);
                let dv = Expr::sym(&Symbol::velocity(a, nu)).sub(conn.component(a, nu));
                terms.push(p.mul(&dv));
            }
        }
        terms.push(self.lagrangian.neg());
        Expr::sum(terms)
    }

    /// Poincare-Cartan forms (Theta_L, Omega_L) on J1E:
    /// Theta_L = dL/dv^A_nu dy^A ^ d^{m-1}x_nu - (dL/dv * v - L) d^m x,
    /// Omega_L = -d Theta_L.
    pub fn poincare_cartan(&self) -> (DiffForm, DiffForm) {
        let theta = self.theta_l();
        let omega = theta.exterior_derivative().neg();
        (theta, omega)
    }

    fn theta_l(&self) -> DiffForm {
        let spec = self.spec();
        let chart = self.bundle.chart(ChartKind::J1E);
        let energy = self.energy_density(&Connection::trivial(spec));
        let mut theta = DiffForm::volume(chart).scale(&energy.neg());
        for a in 0..spec.n {
            for nu in 0..spec.m {
                let term = DiffForm::differential(chart, &Symbol::field(a))
                    .wedge(&DiffForm::base_volume_contracted(chart, nu))
                    .expect("same chart")
                    .scale(&self.momentum(a, nu));
                theta = theta.add(&term).expect("same chart");
            }
        }
        theta
    }

    /// theta_L = Theta_L - L d^m x (the form pulled back from J1E* by
    /// the generalized Legendre map).
    pub fn theta_l_lower(&self) -> DiffForm {
        let chart = self.bundle.chart(ChartKind::J1E);
        let l_vol = DiffForm::volume(chart).scale(&self.lagrangian);
        self.theta_l().sub(&l_vol).expect("same chart")
    }

    /// Euler-Lagrange residuals of a closed-form section, one per field:
    /// residual_A = (dL/dy^A - sum_nu d/dx^nu dL/dv^A_nu) on j1 phi.
    pub fn euler_lagrange_residual(&self, phi: &SectionExpr) -> Vec<Expr> {
        let spec = self.spec();
        let jet = phi.jet_substitution(spec);
        (0..spec.n)
            .map(|a| {
                let mut r = self
                    .lagrangian
                    .differentiate(&Symbol::field(a))
                    .substitute(&jet);
                for nu in 0..spec.m {
                    let p_on_jet = self.momentum(a, nu).substitute(&jet);
                    r = r.sub(&p_on_jet.differentiate(&Symbol::base(nu)));
                }
                r
            })
            .collect()
    }
}

fn numeric_rank(mat: &DMatrix<f64>) -> usize {
    if mat.iter().any(|v| !v.is_finite()) {
        return 0;
    }
    let svd = mat.clone().svd(false, false);
    let max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-9 * max)
        .count()
}
