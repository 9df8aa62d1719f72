//! Hamiltonian-side constructions on the reduced and restricted
//! multimomentum bundles: Hamiltonian systems and densities, sections
//! induced by connections, Hamilton-Cartan forms and their splittings,
//! the association to hyper-regular and almost-regular Lagrangians,
//! Hamilton-De Donder-Weyl residual operators and vertical-field lifts.

use std::collections::HashMap;

use thiserror::Error;

use crate::charts::{Bundle, ChartKind, Connection, CoordinateMap};
use crate::expr::{Expr, Symbol, SymbolRole};
use crate::forms::{DiffForm, VectorFieldExpr};
use crate::lagrangian::LagrangianSystem;
use crate::legendre::{self, ConstraintSet, LegendreError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HamiltonianError {
    #[error("Hamiltonian contains the velocity symbol `{0}`")]
    VelocitySymbol(String),
    #[error("splitting inconsistency: H - H_global - sum p*Gamma is nonzero")]
    SplittingInconsistent,
    #[error("covariant residuals need a connection and a global Hamiltonian")]
    MissingConnection,
    #[error("vertical field component contains the non-(x,y) symbol `{0}`")]
    FiberSymbolInField(String),
    #[error("chart kind {0} does not carry a Hamiltonian system")]
    UnsupportedChart(&'static str),
    #[error(transparent)]
    Legendre(#[from] LegendreError),
}

/// A De Donder-Weyl Hamiltonian theory on Pi or J1PiStar: the local
/// Hamiltonian function, and optionally the connection splitting
/// H = H_global + sum p^nu_A Gamma^A_nu and the primary constraints of
/// an almost-regular origin.
#[derive(Debug, Clone)]
pub struct HamiltonianSystem {
    pub bundle: Bundle,
    pub chart_kind: ChartKind,
    pub hamiltonian: Expr,
    pub connection: Option<Connection>,
    pub global_hamiltonian: Option<Expr>,
    pub constraints: Option<ConstraintSet>,
}

/// sum over (A, nu) of p^nu_A Gamma^A_nu.
pub fn momentum_connection_trace(bundle: &Bundle, conn: &Connection) -> Expr {
    let spec = bundle.spec;
    Expr::sum(
        (0..spec.n)
            .flat_map(|a| {
                (0..spec.m).map(move |nu| {
                    Expr::sym(&Symbol::momentum(a, nu)).mul(conn.component(a, nu))
                })
            })
            .collect(),
    )
}

fn reject_velocities(e: &Expr) -> Result<(), HamiltonianError> {
    for s in e.free_symbols() {
        if s.role() == SymbolRole::Velocity {
            return Err(HamiltonianError::VelocitySymbol(s.name().to_string()));
        }
    }
    Ok(())
}

impl HamiltonianSystem {
    pub fn new(
        bundle: Bundle,
        chart_kind: ChartKind,
        hamiltonian: Expr,
    ) -> Result<HamiltonianSystem, HamiltonianError> {
        if !matches!(chart_kind, ChartKind::Pi | ChartKind::J1PiStar) {
            return Err(HamiltonianError::UnsupportedChart(chart_kind.name()));
        }
        reject_velocities(&hamiltonian)?;
        Ok(HamiltonianSystem {
            bundle,
            chart_kind,
            hamiltonian: hamiltonian.normalized(),
            connection: None,
            global_hamiltonian: None,
            constraints: None,
        })
    }

    pub fn chart(&self) -> &crate::charts::Chart {
        self.bundle.chart(self.chart_kind)
    }

    /// Attach a connection and the induced global Hamiltonian
    /// H_global = H - sum p Gamma.
    pub fn with_connection(mut self, conn: Connection) -> HamiltonianSystem {
        let trace = momentum_connection_trace(&self.bundle, &conn);
        self.global_hamiltonian = Some(self.hamiltonian.sub(&trace));
        self.connection = Some(conn);
        self
    }

    /// Hamilton-Cartan forms: Theta_h = p^nu_A dy^A ^ d^{m-1}x_nu
    /// - H d^m x and Omega_h = -d Theta_h.
    pub fn hamilton_cartan(&self) -> (DiffForm, DiffForm) {
        let theta = hamilton_cartan_form(&self.bundle, self.chart_kind, &self.hamiltonian);
        let omega = theta.exterior_derivative().neg();
        (theta, omega)
    }

    /// The canonical Hamiltonian section h_delta: Pi -> J1Estar
    /// represented in coordinates, restoring the generalized momenta as
    /// q^nu_eta := -(H/m) delta^nu_eta. Any section in the equivalence
    /// class gives the same Hamilton-Cartan forms; this is the
    /// trace-symmetric member.
    pub fn section_delta(&self) -> CoordinateMap {
        let spec = self.bundle.spec;
        let pi = self.bundle.chart(ChartKind::Pi).clone();
        let j1estar = self.bundle.chart(ChartKind::J1Estar).clone();
        let share = self
            .hamiltonian
            .mul(&Expr::rational(-1, spec.m as i64));
        let images = j1estar
            .symbols()
            .iter()
            .map(|s| match s.role() {
                SymbolRole::GeneralizedMomentum => {
                    if s.index_a() == s.index_nu() {
                        share.clone()
                    } else {
                        Expr::zero()
                    }
                }
                _ => Expr::sym(s),
            })
            .collect();
        CoordinateMap::new(pi, j1estar, images)
    }

    /// The Hamiltonian section h_mu: J1PiStar -> MPi, restoring the
    /// extended momentum as pe := -H.
    pub fn section_mu(&self) -> CoordinateMap {
        let j1pistar = self.bundle.chart(ChartKind::J1PiStar).clone();
        let mpi = self.bundle.chart(ChartKind::MPi).clone();
        let images = mpi
            .symbols()
            .iter()
            .map(|s| {
                if s.role() == SymbolRole::ExtendedMomentum {
                    self.hamiltonian.neg()
                } else {
                    Expr::sym(s)
                }
            })
            .collect();
        CoordinateMap::new(j1pistar, mpi, images)
    }

    /// Transfer to the other chart kind through the fiber
    /// diffeomorphism Psi, which is the coordinate identity.
    pub fn psi_transfer(&self) -> HamiltonianSystem {
        let chart_kind = match self.chart_kind {
            ChartKind::Pi => ChartKind::J1PiStar,
            ChartKind::J1PiStar => ChartKind::Pi,
            _ => unreachable!(),
        };
        HamiltonianSystem {
            chart_kind,
            ..self.clone()
        }
    }

    /// The HDW residual operator. Local mode (Eq. 20 shape):
    /// R1^{A,nu} = dy^A/dx^nu - dH/dp^nu_A and
    /// R2_A = sum_nu dp^nu_A/dx^nu + dH/dy^A.
    /// Covariant mode uses the global Hamiltonian and the connection.
    pub fn hdw_residual(&self, mode: HdwMode) -> Result<ResidualOperator, HamiltonianError> {
        let spec = self.bundle.spec;
        let (h, conn) = match mode {
            HdwMode::Local => (self.hamiltonian.clone(), None),
            HdwMode::Covariant => {
                let conn = self
                    .connection
                    .as_ref()
                    .ok_or(HamiltonianError::MissingConnection)?;
                let hg = self
                    .global_hamiltonian
                    .as_ref()
                    .ok_or(HamiltonianError::MissingConnection)?;
                (hg.clone(), Some(conn))
            }
        };
        let mut r1 = Vec::new();
        for nu in 0..spec.m {
            for a in 0..spec.n {
                let mut rhs = h.differentiate(&Symbol::momentum(a, nu));
                if let Some(conn) = conn {
                    rhs = rhs.add(conn.component(a, nu));
                }
                r1.push(Expr::sym(&field_derivative(a, nu)).sub(&rhs));
            }
        }
        let mut r2 = Vec::new();
        for a in 0..spec.n {
            let mut terms: Vec<Expr> = (0..spec.m)
                .map(|nu| Expr::sym(&momentum_derivative(a, nu)))
                .collect();
            terms.push(h.differentiate(&Symbol::field(a)));
            if let Some(conn) = conn {
                for b in 0..spec.n {
                    for eta in 0..spec.m {
                        terms.push(
                            Expr::sym(&Symbol::momentum(b, eta)).mul(
                                &conn
                                    .component(b, eta)
                                    .differentiate(&Symbol::field(a)),
                            ),
                        );
                    }
                }
            }
            r2.push(Expr::sum(terms));
        }
        Ok(ResidualOperator {
            chart_kind: self.chart_kind,
            spec,
            r1,
            r2,
        })
    }
}

/// Auxiliary symbol standing for dy^A/dx^nu of a section.
pub fn field_derivative(a: u16, nu: u16) -> Symbol {
    Symbol::auxiliary(&format!("dy_{a}_{nu}"))
}

/// Auxiliary symbol standing for dp^nu_A/dx^nu of a section.
pub fn momentum_derivative(a: u16, nu: u16) -> Symbol {
    Symbol::auxiliary(&format!("dp_{a}_{nu}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdwMode {
    Local,
    Covariant,
}

/// HDW residual expressions over (x, y, p) plus the auxiliary
/// derivative symbols from [`field_derivative`]/[`momentum_derivative`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualOperator {
    pub chart_kind: ChartKind,
    pub spec: crate::charts::BundleSpec,
    /// Flattened nu*N + A.
    pub r1: Vec<Expr>,
    /// One per field index A.
    pub r2: Vec<Expr>,
}

impl ResidualOperator {
    pub fn all(&self) -> impl Iterator<Item = &Expr> {
        self.r1.iter().chain(self.r2.iter())
    }
}

/// Theta_h on the given chart for a local Hamiltonian function.
pub fn hamilton_cartan_form(bundle: &Bundle, chart_kind: ChartKind, h: &Expr) -> DiffForm {
    let spec = bundle.spec;
    let chart = bundle.chart(chart_kind);
    let mut theta = DiffForm::volume(chart).scale(&h.neg());
    for a in 0..spec.n {
        for nu in 0..spec.m {
            let term = DiffForm::differential(chart, &Symbol::field(a))
                .wedge(&DiffForm::base_volume_contracted(chart, nu))
                .expect("same chart")
                .scale(&Expr::sym(&Symbol::momentum(a, nu)));
            theta = theta.add(&term).expect("same chart");
        }
    }
    theta
}

/// Theta of the linear Hamiltonian section induced by a connection:
/// p^nu_A dy^A ^ d^{m-1}x_nu - p^nu_A Gamma^A_nu d^m x.
pub fn connection_section_form(bundle: &Bundle, conn: &Connection) -> DiffForm {
    let trace = momentum_connection_trace(bundle, conn);
    hamilton_cartan_form(bundle, ChartKind::Pi, &trace)
}

/// Build the Hamiltonian system determined by a connection and a global
/// Hamiltonian function: H := H_global + sum p Gamma, so that
/// Theta_h = Theta_{h_nabla} - H_global d^m x.
pub fn compose_density(
    bundle: &Bundle,
    chart_kind: ChartKind,
    conn: &Connection,
    global: &Expr,
) -> Result<HamiltonianSystem, HamiltonianError> {
    reject_velocities(global)?;
    let trace = momentum_connection_trace(bundle, conn);
    let mut sys = HamiltonianSystem::new(bundle.clone(), chart_kind, global.add(&trace))?;
    sys.connection = Some(conn.clone());
    sys.global_hamiltonian = Some(global.normalized());
    debug_assert!(sys
        .hamiltonian
        .sub(sys.global_hamiltonian.as_ref().unwrap())
        .sub(&momentum_connection_trace(bundle, sys.connection.as_ref().unwrap()))
        .is_zero_expr());
    Ok(sys)
}

/// The Hamiltonian system associated to a hyper-regular Lagrangian:
/// H = p^nu_A (FL^-1)* v^A_nu - (FL^-1)* L, with the inverse Legendre
/// map computed symbolically (quadratic L, constant invertible
/// Hessian).
pub fn from_hyperregular(
    sys: &LagrangianSystem,
    conn: Option<&Connection>,
) -> Result<HamiltonianSystem, HamiltonianError> {
    let v_inverse = legendre::invert_reduced_symbolic(sys)?;
    let spec = sys.spec();
    let table: HashMap<Symbol, Expr> = (0..spec.m as usize * spec.n as usize)
        .map(|flat| {
            let (a, nu) = crate::lagrangian::unflatten(spec, flat);
            (Symbol::velocity(a, nu), v_inverse[flat].clone())
        })
        .collect();
    let p_dot_v = Expr::sum(
        (0..spec.n)
            .flat_map(|a| (0..spec.m).map(move |nu| (a, nu)))
            .map(|(a, nu)| {
                Expr::sym(&Symbol::momentum(a, nu))
                    .mul(table.get(&Symbol::velocity(a, nu)).unwrap())
            })
            .collect(),
    );
    let h = p_dot_v.sub(&sys.lagrangian.substitute(&table));
    let mut out = HamiltonianSystem::new(sys.bundle.clone(), ChartKind::Pi, h)?;
    if let Some(conn) = conn {
        out = out.with_connection(conn.clone());
    }
    Ok(out)
}

/// The Hamiltonian system on the primary constraint surface of an
/// almost-regular Lagrangian: the linear image constraints plus the
/// global Hamiltonian H0 obtained by eliminating the velocities from
/// the energy density along the solvable momentum directions, reduced
/// to the canonical representative modulo the linear constraints.
pub fn restrict_almost_regular(
    sys: &LagrangianSystem,
    conn: &Connection,
) -> Result<HamiltonianSystem, HamiltonianError> {
    let elim = legendre::eliminate(sys)?;
    if elim.linear_constraints.is_empty() {
        // Regular case: nothing to restrict to.
        return from_hyperregular(sys, Some(conn));
    }
    let energy = sys.energy_density(conn);
    let h0 = energy
        .substitute(&elim.velocity_table)
        .substitute(&elim.reduce_table);
    let constraints = legendre::image_constraints(sys, crate::legendre::LegendreKind::Reduced)?;
    let mut out = compose_density(&sys.bundle, ChartKind::Pi, conn, &h0)?;
    out.constraints = Some(constraints);
    Ok(out)
}

/// The lift j^{1*}Z of a pi-vertical field Z = beta^A d/dy^A to the
/// reduced multimomentum bundle:
/// beta^A d/dy^A - p^nu_B dbeta^B/dy^A d/dp^nu_A.
pub fn lift_vertical_field(
    bundle: &Bundle,
    beta: &[Expr],
) -> Result<VectorFieldExpr, HamiltonianError> {
    let spec = bundle.spec;
    assert_eq!(beta.len(), spec.n as usize);
    for b in beta {
        for s in b.free_symbols() {
            if !matches!(s.role(), SymbolRole::Base | SymbolRole::Field) {
                return Err(HamiltonianError::FiberSymbolInField(s.name().to_string()));
            }
        }
    }
    let chart = bundle.chart(ChartKind::Pi);
    let components = chart
        .symbols()
        .iter()
        .map(|s| match s.role() {
            SymbolRole::Field => beta[s.index_a().unwrap() as usize].clone(),
            SymbolRole::Momentum => {
                let a = s.index_a().unwrap();
                let nu = s.index_nu().unwrap();
                Expr::sum(
                    (0..spec.n)
                        .map(|b| {
                            Expr::sym(&Symbol::momentum(b, nu))
                                .mul(&beta[b as usize].differentiate(&Symbol::field(a)))
                                .neg()
                        })
                        .collect(),
                )
            }
            _ => Expr::zero(),
        })
        .collect();
    Ok(VectorFieldExpr::new(chart.clone(), components))
}
