//! Desk-scale numerics: grid sections, jet and Legendre prolongations,
//! residual norms for the field equations, method-of-lines evolution
//! (classic Runge-Kutta in x^0, central differences in x^1, periodic
//! boundary) and action integrals.

use std::collections::HashMap;

use thiserror::Error;

use crate::charts::{Chart, ChartKind};
use crate::expr::{EvalError, Expr, Symbol};
use crate::hamiltonian::{
    field_derivative, momentum_derivative, HamiltonianSystem, ResidualOperator,
};
use crate::lagrangian::{unflatten, LagrangianSystem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("grid needs at least 3 points per axis (got {0})")]
    GridTooSmall(usize),
    #[error("section lives on chart {got}, expected {expected}")]
    ChartMismatch { expected: &'static str, got: &'static str },
    #[error("evolution supports base dimension 1 or 2 only (got {0})")]
    UnsupportedBaseDimension(u16),
    #[error("CFL violation: time step {dt:.6} exceeds 0.5 * spatial step {dx:.6}")]
    CflViolation { dt: f64, dx: f64 },
    #[error("momentum recovery Newton iteration failed: {0}")]
    Newton(#[from] crate::legendre::LegendreError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("initial data count mismatch: expected {expected}, got {got}")]
    InitialDataCount { expected: usize, got: usize },
    #[error("evolution in base dimension 2 needs a spatial grid")]
    MissingSpatialGrid,
}

/// A sampled section of one of the bundle charts over a rectangular
/// grid in the base. Fiber values are stored row-major over the grid
/// shape, one array per fiber coordinate (chart coordinates after the
/// first m).
#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub chart: Chart,
    pub bounds: Vec<(f64, f64)>,
    pub shape: Vec<usize>,
    /// Per-axis periodicity: periodic axes cover [a, b) with spacing
    /// (b-a)/n, others cover [a, b] with spacing (b-a)/(n-1).
    pub periodic: Vec<bool>,
    pub values: Vec<Vec<f64>>,
}

impl GridSection {
    pub fn spacing(&self, axis: usize) -> f64 {
        let (a, b) = self.bounds[axis];
        if self.periodic[axis] {
            (b - a) / self.shape[axis] as f64
        } else {
            (b - a) / (self.shape[axis] - 1) as f64
        }
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.bounds[axis].0 + self.spacing(axis) * i as f64
    }

    fn fiber_count(&self) -> usize {
        self.chart.dim() - self.chart.m() as usize
    }

    fn points(&self) -> usize {
        self.shape.iter().product()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    fn multi_index(&self, flat: usize) -> Vec<usize> {
        let strides = self.strides();
        strides
            .iter()
            .zip(&self.shape)
            .map(|(&st, &n)| (flat / st) % n)
            .collect()
    }

    /// Base point values for a flat grid index.
    pub fn base_point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.coordinate(axis, i))
            .collect()
    }
}

/// Sample closed-form fiber expressions (in base symbols only) on a
/// grid to build a section of `chart`.
pub fn sample_section(
    chart: &Chart,
    bounds: &[(f64, f64)],
    shape: &[usize],
    periodic: &[bool],
    fiber_exprs: &[Expr],
) -> Result<GridSection, SolveError> {
    let m = chart.m() as usize;
    assert_eq!(bounds.len(), m);
    assert_eq!(shape.len(), m);
    assert_eq!(periodic.len(), m);
    let expected = chart.dim() - m;
    if fiber_exprs.len() != expected {
        return Err(SolveError::InitialDataCount {
            expected,
            got: fiber_exprs.len(),
        });
    }
    for &n in shape {
        if n < 3 {
            return Err(SolveError::GridTooSmall(n));
        }
    }
    let mut section = GridSection {
        chart: chart.clone(),
        bounds: bounds.to_vec(),
        shape: shape.to_vec(),
        periodic: periodic.to_vec(),
        values: vec![vec![0.0; shape.iter().product()]; expected],
    };
    let points = section.points();
    let mut pt = HashMap::new();
    for flat in 0..points {
        let base = section.base_point(flat);
        for (nu, &x) in base.iter().enumerate() {
            pt.insert(Symbol::base(nu as u16), x);
        }
        for (f, e) in fiber_exprs.iter().enumerate() {
            section.values[f][flat] = e.evaluate(&pt)?;
        }
    }
    Ok(section)
}

/// Second-order finite difference of one stored array along an axis:
/// central in the interior, one-sided second-order at non-periodic
/// boundaries, wraparound on periodic axes.
fn differentiate_axis(section: &GridSection, values: &[f64], axis: usize) -> Vec<f64> {
    let n = section.shape[axis];
    let h = section.spacing(axis);
    let strides = section.strides();
    let stride = strides[axis];
    let mut out = vec![0.0; values.len()];
    for flat in 0..values.len() {
        let i = (flat / stride) % n;
        let at = |j: usize| {
            let base = flat - i * stride;
            values[base + j * stride]
        };
        out[flat] = if section.periodic[axis] {
            (at((i + 1) % n) - at((i + n - 1) % n)) / (2.0 * h)
        } else if i == 0 {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * h)
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        };
    }
    out
}

/// First jet prolongation of a sampled section of E: velocities by
/// second-order differences.
pub fn prolong(sys: &LagrangianSystem, phi: &GridSection) -> Result<GridSection, SolveError> {
    if phi.chart.kind() != ChartKind::E {
        return Err(SolveError::ChartMismatch {
            expected: "E",
            got: phi.chart.kind().name(),
        });
    }
    for &n in &phi.shape {
        if n < 3 {
            return Err(SolveError::GridTooSmall(n));
        }
    }
    let spec = sys.spec();
    let chart = sys.bundle.chart(ChartKind::J1E).clone();
    let mut values = phi.values.clone();
    // Chart fiber order: y_A then v flattened nu*N + A.
    for flat_v in 0..spec.m as usize * spec.n as usize {
        let (a, nu) = unflatten(spec, flat_v);
        values.push(differentiate_axis(phi, &phi.values[a as usize], nu as usize));
    }
    Ok(GridSection {
        chart,
        bounds: phi.bounds.clone(),
        shape: phi.shape.clone(),
        periodic: phi.periodic.clone(),
        values,
    })
}

/// Lagrangian prolongation: the reduced Legendre images applied
/// pointwise to the jet prolongation.
pub fn legendre_prolong(
    sys: &LagrangianSystem,
    phi: &GridSection,
) -> Result<GridSection, SolveError> {
    let jet = prolong(sys, phi)?;
    let spec = sys.spec();
    let pi = sys.bundle.chart(ChartKind::Pi).clone();
    let momenta = sys.momenta();
    let jet_chart = jet.chart.clone();
    let mut values = phi.values.clone();
    let points = jet.points();
    let mut momentum_values = vec![vec![0.0; points]; momenta.len()];
    let mut pt = HashMap::new();
    let m = spec.m as usize;
    for flat in 0..points {
        let base = jet.base_point(flat);
        for (nu, &x) in base.iter().enumerate() {
            pt.insert(Symbol::base(nu as u16), x);
        }
        for (f, s) in jet_chart.symbols().iter().skip(m).enumerate() {
            pt.insert(s.clone(), jet.values[f][flat]);
        }
        for (k, p) in momenta.iter().enumerate() {
            momentum_values[k][flat] = p.evaluate(&pt)?;
        }
    }
    values.extend(momentum_values);
    Ok(GridSection {
        chart: pi,
        bounds: phi.bounds.clone(),
        shape: phi.shape.clone(),
        periodic: phi.periodic.clone(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub max: f64,
    pub rms: f64,
}

/// Evaluate residual expressions over the section: section derivatives
/// enter through the dy/dp auxiliary symbols, computed by finite
/// differences. Norms are taken over interior points (all points along
/// periodic axes).
pub fn residual_norm(
    op: &ResidualOperator,
    section: &GridSection,
) -> Result<Norms, SolveError> {
    if section.chart.kind() != op.chart_kind {
        return Err(SolveError::ChartMismatch {
            expected: op.chart_kind.name(),
            got: section.chart.kind().name(),
        });
    }
    let spec = op.spec;
    let m = spec.m as usize;
    let chart = &section.chart;

    // Derivative arrays: dy_A_nu for every (A, nu), dp_A_nu along the
    // matching axis nu only (that is what the divergence needs).
    let mut derived: Vec<(Symbol, Vec<f64>)> = Vec::new();
    for a in 0..spec.n {
        let fy = chart
            .index_of(&Symbol::field(a))
            .expect("field on chart") - m;
        for nu in 0..spec.m {
            derived.push((
                field_derivative(a, nu),
                differentiate_axis(section, &section.values[fy], nu as usize),
            ));
        }
    }
    for a in 0..spec.n {
        for nu in 0..spec.m {
            let fp = chart
                .index_of(&Symbol::momentum(a, nu))
                .expect("momentum on chart") - m;
            derived.push((
                momentum_derivative(a, nu),
                differentiate_axis(section, &section.values[fp], nu as usize),
            ));
        }
    }

    let points = section.points();
    let mut max: f64 = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut pt = HashMap::new();
    for flat in 0..points {
        let idx = section.multi_index(flat);
        // Keep a two-point margin away from non-periodic boundaries:
        // stored momenta are often themselves finite differences, and
        // the one-sided stencils used in the boundary band would drop
        // the composed accuracy to first order there.
        let interior = idx.iter().enumerate().all(|(axis, &i)| {
            section.periodic[axis] || (i > 1 && i + 2 < section.shape[axis])
        });
        if !interior {
            continue;
        }
        let base = section.base_point(flat);
        for (nu, &x) in base.iter().enumerate() {
            pt.insert(Symbol::base(nu as u16), x);
        }
        for (f, s) in chart.symbols().iter().skip(m).enumerate() {
            pt.insert(s.clone(), section.values[f][flat]);
        }
        for (s, arr) in &derived {
            pt.insert(s.clone(), arr[flat]);
        }
        for r in op.all() {
            let v = r.evaluate(&pt)?;
            max = max.max(v.abs());
            sum_sq += v * v;
            count += 1;
        }
    }
    Ok(Norms {
        max,
        rms: if count == 0 {
            0.0
        } else {
            (sum_sq / count as f64).sqrt()
        },
    })
}

/// Evolution grid: x^0 is the evolution direction; for m = 2 the
/// spatial x^1 axis is periodic.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveConfig {
    pub t_bounds: (f64, f64),
    pub t_steps: usize,
    /// Required for m = 2: spatial bounds and point count.
    pub spatial: Option<((f64, f64), usize)>,
}

fn check_cfl(cfg: &EvolveConfig) -> Result<(), SolveError> {
    if let Some(((a, b), n)) = cfg.spatial {
        let dt = (cfg.t_bounds.1 - cfg.t_bounds.0) / cfg.t_steps as f64;
        let dx = (b - a) / n as f64;
        if dt > 0.5 * dx + 1e-15 {
            return Err(SolveError::CflViolation { dt, dx });
        }
    }
    Ok(())
}

/// Shared RK4 loop over a flat state vector.
fn rk4<F>(state: &mut Vec<f64>, t0: f64, dt: f64, steps: usize, mut rhs: F, mut record: impl FnMut(usize, &[f64]))
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    record(0, state);
    let axpy = |s: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        s.iter().zip(k).map(|(a, b)| a + c * b).collect()
    };
    for step in 0..steps {
        let t = t0 + dt * step as f64;
        let k1 = rhs(t, state);
        let k2 = rhs(t + 0.5 * dt, &axpy(state, &k1, 0.5 * dt));
        let k3 = rhs(t + 0.5 * dt, &axpy(state, &k2, 0.5 * dt));
        let k4 = rhs(t + dt, &axpy(state, &k3, dt));
        for i in 0..state.len() {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        record(step + 1, state);
    }
}

/// Evolve the Hamilton-De Donder-Weyl equations of a Hamiltonian
/// system. Initial data: closed-form expressions for y^A and p^0_A in
/// the spatial coordinate (constants for m = 1). Returns the section
/// on Pi over the full space-time grid, with p^1 recovered from the
/// first HDW equation at every step (m = 2).
pub fn solve_evolution_hamiltonian(
    h: &HamiltonianSystem,
    initial_fields: &[Expr],
    initial_momenta: &[Expr],
    cfg: &EvolveConfig,
) -> Result<GridSection, SolveError> {
    let spec = h.bundle.spec;
    let n = spec.n as usize;
    if initial_fields.len() != n || initial_momenta.len() != n {
        return Err(SolveError::InitialDataCount {
            expected: n,
            got: initial_fields.len().min(initial_momenta.len()),
        });
    }
    match spec.m {
        1 => solve_hdw_ode(h, initial_fields, initial_momenta, cfg),
        2 => solve_hdw_lines(h, initial_fields, initial_momenta, cfg),
        m => Err(SolveError::UnsupportedBaseDimension(m)),
    }
}

fn solve_hdw_ode(
    h: &HamiltonianSystem,
    initial_fields: &[Expr],
    initial_momenta: &[Expr],
    cfg: &EvolveConfig,
) -> Result<GridSection, SolveError> {
    let spec = h.bundle.spec;
    let n = spec.n as usize;
    let chart = h.bundle.chart(ChartKind::Pi).clone();
    let dh_dp: Vec<Expr> = (0..spec.n)
        .map(|a| h.hamiltonian.differentiate(&Symbol::momentum(a, 0)))
        .collect();
    let dh_dy: Vec<Expr> = (0..spec.n)
        .map(|a| h.hamiltonian.differentiate(&Symbol::field(a)))
        .collect();

    let mut pt0 = HashMap::new();
    pt0.insert(Symbol::base(0), cfg.t_bounds.0);
    let mut state = Vec::with_capacity(2 * n);
    for e in initial_fields {
        state.push(e.evaluate(&pt0)?);
    }
    for e in initial_momenta {
        state.push(e.evaluate(&pt0)?);
    }

    let steps = cfg.t_steps;
    let dt = (cfg.t_bounds.1 - cfg.t_bounds.0) / steps as f64;
    let mut values = vec![vec![0.0; steps + 1]; 2 * n];
    let mut eval_err = None;
    {
        let rhs = |t: f64, s: &[f64]| -> Vec<f64> {
            let mut pt = HashMap::new();
            pt.insert(Symbol::base(0), t);
            for a in 0..n {
                pt.insert(Symbol::field(a as u16), s[a]);
                pt.insert(Symbol::momentum(a as u16, 0), s[n + a]);
            }
            let mut out = vec![0.0; 2 * n];
            for a in 0..n {
                match (dh_dp[a].evaluate(&pt), dh_dy[a].evaluate(&pt)) {
                    (Ok(dy), Ok(dp)) => {
                        out[a] = dy;
                        out[n + a] = -dp;
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        eval_err.get_or_insert(e);
                    }
                }
            }
            out
        };
        rk4(&mut state, cfg.t_bounds.0, dt, steps, rhs, |step, s| {
            for (f, v) in s.iter().enumerate() {
                values[f][step] = *v;
            }
        });
    }
    if let Some(e) = eval_err {
        return Err(SolveError::Eval(e));
    }
    Ok(GridSection {
        chart,
        bounds: vec![cfg.t_bounds],
        shape: vec![steps + 1],
        periodic: vec![false],
        values,
    })
}

fn solve_hdw_lines(
    h: &HamiltonianSystem,
    initial_fields: &[Expr],
    initial_momenta: &[Expr],
    cfg: &EvolveConfig,
) -> Result<GridSection, SolveError> {
    check_cfl(cfg)?;
    let ((xa, xb), nx) = cfg.spatial.ok_or(SolveError::MissingSpatialGrid)?;
    if nx < 3 {
        return Err(SolveError::GridTooSmall(nx));
    }
    let spec = h.bundle.spec;
    let n = spec.n as usize;
    let chart = h.bundle.chart(ChartKind::Pi).clone();
    let dx = (xb - xa) / nx as f64;

    // Symbolic pieces. p^1 is recovered pointwise from
    // d y^A/d x^1 = dH/dp^1_A by damped Newton in the p^1 variables.
    let dh_dp0: Vec<Expr> = (0..spec.n)
        .map(|a| h.hamiltonian.differentiate(&Symbol::momentum(a, 0)))
        .collect();
    let dh_dp1: Vec<Expr> = (0..spec.n)
        .map(|a| h.hamiltonian.differentiate(&Symbol::momentum(a, 1)))
        .collect();
    let dh_dy: Vec<Expr> = (0..spec.n)
        .map(|a| h.hamiltonian.differentiate(&Symbol::field(a)))
        .collect();
    let d2h_dp1: Vec<Vec<Expr>> = (0..spec.n)
        .map(|a| {
            (0..spec.n)
                .map(|b| dh_dp1[a as usize].differentiate(&Symbol::momentum(b, 1)))
                .collect()
        })
        .collect();

    let xs: Vec<f64> = (0..nx).map(|i| xa + dx * i as f64).collect();
    // State layout: y (n arrays of nx), then p0.
    let mut state = vec![0.0; 2 * n * nx];
    {
        let mut pt = HashMap::new();
        pt.insert(Symbol::base(0), cfg.t_bounds.0);
        for (i, &x) in xs.iter().enumerate() {
            pt.insert(Symbol::base(1), x);
            for a in 0..n {
                state[a * nx + i] = initial_fields[a].evaluate(&pt)?;
                state[(n + a) * nx + i] = initial_momenta[a].evaluate(&pt)?;
            }
        }
    }

    let spatial_diff = |arr: &[f64]| -> Vec<f64> {
        (0..nx)
            .map(|i| (arr[(i + 1) % nx] - arr[(i + nx - 1) % nx]) / (2.0 * dx))
            .collect()
    };

    // Recover p^1 at one point by Newton on F(q) = dH/dp1(q) - dy1.
    let mut warm = vec![vec![0.0; n]; nx];
    let steps = cfg.t_steps;
    let dt = (cfg.t_bounds.1 - cfg.t_bounds.0) / steps as f64;
    let mut values = vec![vec![0.0; (steps + 1) * nx]; 3 * n];
    let mut solve_err: Option<SolveError> = None;

    {
        let mut rhs = |t: f64, s: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; s.len()];
            // Spatial derivatives of each field.
            let dy1: Vec<Vec<f64>> = (0..n)
                .map(|a| spatial_diff(&s[a * nx..(a + 1) * nx]))
                .collect();
            // Recover p1 everywhere.
            let mut p1 = vec![vec![0.0; nx]; n];
            for i in 0..nx {
                let mut pt = HashMap::new();
                pt.insert(Symbol::base(0), t);
                pt.insert(Symbol::base(1), xs[i]);
                for a in 0..n {
                    pt.insert(Symbol::field(a as u16), s[a * nx + i]);
                    pt.insert(Symbol::momentum(a as u16, 0), s[(n + a) * nx + i]);
                }
                let mut q = warm[i].clone();
                let mut converged = false;
                for _ in 0..50 {
                    for a in 0..n {
                        pt.insert(Symbol::momentum(a as u16, 1), q[a]);
                    }
                    let mut res = vec![0.0; n];
                    let mut rn = 0.0f64;
                    for a in 0..n {
                        match dh_dp1[a].evaluate(&pt) {
                            Ok(v) => {
                                res[a] = v - dy1[a][i];
                                rn = rn.max(res[a].abs());
                            }
                            Err(e) => {
                                solve_err.get_or_insert(SolveError::Eval(e));
                                return out;
                            }
                        }
                    }
                    if rn < 1e-12 {
                        converged = true;
                        break;
                    }
                    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
                    for a in 0..n {
                        for b in 0..n {
                            match d2h_dp1[a][b].evaluate(&pt) {
                                Ok(v) => jac[(a, b)] = v,
                                Err(e) => {
                                    solve_err.get_or_insert(SolveError::Eval(e));
                                    return out;
                                }
                            }
                        }
                    }
                    match jac.lu().solve(&nalgebra::DVector::from_column_slice(&res)) {
                        Some(step) => {
                            for a in 0..n {
                                q[a] -= step[a];
                            }
                        }
                        None => {
                            solve_err.get_or_insert(SolveError::Newton(
                                crate::legendre::LegendreError::SingularIterate,
                            ));
                            return out;
                        }
                    }
                }
                if !converged {
                    solve_err.get_or_insert(SolveError::Newton(
                        crate::legendre::LegendreError::NewtonDiverged(50, f64::NAN),
                    ));
                    return out;
                }
                warm[i] = q.clone();
                for a in 0..n {
                    p1[a][i] = q[a];
                }
            }
            // Divergence equation needs d p1 / d x1.
            let dp1: Vec<Vec<f64>> = (0..n).map(|a| spatial_diff(&p1[a])).collect();
            for i in 0..nx {
                let mut pt = HashMap::new();
                pt.insert(Symbol::base(0), t);
                pt.insert(Symbol::base(1), xs[i]);
                for a in 0..n {
                    pt.insert(Symbol::field(a as u16), s[a * nx + i]);
                    pt.insert(Symbol::momentum(a as u16, 0), s[(n + a) * nx + i]);
                    pt.insert(Symbol::momentum(a as u16, 1), p1[a][i]);
                }
                for a in 0..n {
                    match (dh_dp0[a].evaluate(&pt), dh_dy[a].evaluate(&pt)) {
                        (Ok(v), Ok(w)) => {
                            out[a * nx + i] = v;
                            out[(n + a) * nx + i] = -w - dp1[a][i];
                        }
                        (Err(e), _) | (_, Err(e)) => {
                            solve_err.get_or_insert(SolveError::Eval(e));
                            return out;
                        }
                    }
                }
            }
            out
        };

        // Record y and p0 per step; p1 is recomputed afterwards.
        let mut recorded = vec![vec![0.0; (steps + 1) * nx]; 2 * n];
        let mut state_local = state.clone();
        rk4(&mut state_local, cfg.t_bounds.0, dt, steps, &mut rhs, |step, s| {
            for f in 0..2 * n {
                recorded[f][step * nx..(step + 1) * nx]
                    .copy_from_slice(&s[f * nx..(f + 1) * nx]);
            }
        });
        state = state_local;
        let _ = &state;
        // Chart fiber order on Pi: y_A, then p flattened nu*N+A:
        // p_0_0..p_{N-1}_0 then p_0_1..  values index: a -> y, n + a ->
        // p0, 2n + a -> p1.
        for a in 0..n {
            values[a].copy_from_slice(&recorded[a]);
            values[n + a].copy_from_slice(&recorded[n + a]);
        }
        if let Some(e) = solve_err {
            return Err(e);
        }
        // Recover p1 on every recorded slice for the output section.
        for step in 0..=steps {
            let t = cfg.t_bounds.0 + dt * step as f64;
            let mut slice = vec![0.0; 2 * n * nx];
            for f in 0..2 * n {
                slice[f * nx..(f + 1) * nx]
                    .copy_from_slice(&recorded[f][step * nx..(step + 1) * nx]);
            }
            let dy1: Vec<Vec<f64>> = (0..n)
                .map(|a| spatial_diff(&slice[a * nx..(a + 1) * nx]))
                .collect();
            for i in 0..nx {
                let mut pt = HashMap::new();
                pt.insert(Symbol::base(0), t);
                pt.insert(Symbol::base(1), xs[i]);
                for a in 0..n {
                    pt.insert(Symbol::field(a as u16), slice[a * nx + i]);
                    pt.insert(Symbol::momentum(a as u16, 0), slice[(n + a) * nx + i]);
                }
                let mut q = warm[i].clone();
                for _ in 0..50 {
                    for a in 0..n {
                        pt.insert(Symbol::momentum(a as u16, 1), q[a]);
                    }
                    let mut res = vec![0.0; n];
                    let mut rn = 0.0f64;
                    for a in 0..n {
                        res[a] = dh_dp1[a].evaluate(&pt)? - dy1[a][i];
                        rn = rn.max(res[a].abs());
                    }
                    if rn < 1e-12 {
                        break;
                    }
                    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
                    for a in 0..n {
                        for b in 0..n {
                            jac[(a, b)] = d2h_dp1[a][b].evaluate(&pt)?;
                        }
                    }
                    let step_v = jac
                        .lu()
                        .solve(&nalgebra::DVector::from_column_slice(&res))
                        .ok_or(SolveError::Newton(
                            crate::legendre::LegendreError::SingularIterate,
                        ))?;
                    for a in 0..n {
                        q[a] -= step_v[a];
                    }
                }
                for a in 0..n {
                    values[2 * n + a][step * nx + i] = q[a];
                }
            }
        }
    }

    Ok(GridSection {
        chart,
        bounds: vec![cfg.t_bounds, (xa, xb)],
        shape: vec![steps + 1, nx],
        periodic: vec![false, true],
        values,
    })
}

/// Evolve the Euler-Lagrange equations. Initial data: y^A and the time
/// derivative d y^A/d x^0 as closed-form expressions in the spatial
/// coordinate. Returns the section of E over the space-time grid.
pub fn solve_evolution_lagrangian(
    sys: &LagrangianSystem,
    initial_fields: &[Expr],
    initial_velocities: &[Expr],
    cfg: &EvolveConfig,
) -> Result<GridSection, SolveError> {
    let spec = sys.spec();
    let n = spec.n as usize;
    if initial_fields.len() != n || initial_velocities.len() != n {
        return Err(SolveError::InitialDataCount {
            expected: n,
            got: initial_fields.len().min(initial_velocities.len()),
        });
    }
    match spec.m {
        1 => solve_el_ode(sys, initial_fields, initial_velocities, cfg),
        2 => solve_el_lines(sys, initial_fields, initial_velocities, cfg),
        m => Err(SolveError::UnsupportedBaseDimension(m)),
    }
}

fn solve_el_ode(
    sys: &LagrangianSystem,
    initial_fields: &[Expr],
    initial_velocities: &[Expr],
    cfg: &EvolveConfig,
) -> Result<GridSection, SolveError> {
    let spec = sys.spec();
    let n = spec.n as usize;
    let chart = sys.bundle.chart(ChartKind::E).clone();
    // a_AB dv_B/dt = dL/dy_A - dP_A/dx0 - dP_A/dy_B v_B with P = dL/dv.
    let momenta = sys.momenta();
    let hessian = sys.hessian();
    let dl_dy: Vec<Expr> = (0..spec.n)
        .map(|a| sys.lagrangian.differentiate(&Symbol::field(a)))
        .collect();
    let dp_dx: Vec<Expr> = momenta
        .iter()
        .map(|p| p.differentiate(&Symbol::base(0)))
        .collect();
    let dp_dy: Vec<Vec<Expr>> = momenta
        .iter()
        .map(|p| {
            (0..spec.n)
                .map(|b| p.differentiate(&Symbol::field(b)))
                .collect()
        })
        .collect();

    let mut pt0 = HashMap::new();
    pt0.insert(Symbol::base(0), cfg.t_bounds.0);
    let mut state = Vec::with_capacity(2 * n);
    for e in initial_fields {
        state.push(e.evaluate(&pt0)?);
    }
    for e in initial_velocities {
        state.push(e.evaluate(&pt0)?);
    }

    let steps = cfg.t_steps;
    let dt = (cfg.t_bounds.1 - cfg.t_bounds.0) / steps as f64;
    let mut y_values = vec![vec![0.0; steps + 1]; n];
    let mut err: Option<SolveError> = None;
    {
        let rhs = |t: f64, s: &[f64]| -> Vec<f64> {
            let mut pt = HashMap::new();
            pt.insert(Symbol::base(0), t);
            for a in 0..n {
                pt.insert(Symbol::field(a as u16), s[a]);
                pt.insert(Symbol::velocity(a as u16, 0), s[n + a]);
            }
            let mut out = vec![0.0; 2 * n];
            let mut mat = nalgebra::DMatrix::<f64>::zeros(n, n);
            let mut rhs_v = nalgebra::DVector::<f64>::zeros(n);
            for a in 0..n {
                out[a] = s[n + a];
                let ev = |e: &Expr| e.evaluate(&pt);
                let mut r = match ev(&dl_dy[a]) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(SolveError::Eval(e));
                        return out;
                    }
                };
                r -= match ev(&dp_dx[a]) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(SolveError::Eval(e));
                        return out;
                    }
                };
                for b in 0..n {
                    match (ev(&dp_dy[a][b]), ev(&hessian[a][b])) {
                        (Ok(v), Ok(hv)) => {
                            r -= v * s[n + b];
                            mat[(a, b)] = hv;
                        }
                        (Err(e), _) | (_, Err(e)) => {
                            err.get_or_insert(SolveError::Eval(e));
                            return out;
                        }
                    }
                }
                rhs_v[a] = r;
            }
            match mat.lu().solve(&rhs_v) {
                Some(acc) => {
                    for a in 0..n {
                        out[n + a] = acc[a];
                    }
                }
                None => {
                    err.get_or_insert(SolveError::Newton(
                        crate::legendre::LegendreError::SingularIterate,
                    ));
                }
            }
            out
        };
        rk4(&mut state, cfg.t_bounds.0, dt, steps, rhs, |step, s| {
            for a in 0..n {
                y_values[a][step] = s[a];
            }
        });
    }
    if let Some(e) = err {
        return Err(e);
    }
    Ok(GridSection {
        chart,
        bounds: vec![cfg.t_bounds],
        shape: vec![steps + 1],
        periodic: vec![false],
        values: y_values,
    })
}

fn solve_el_lines(
    sys: &LagrangianSystem,
    initial_fields: &[Expr],
    initial_velocities: &[Expr],
    cfg: &EvolveConfig,
) -> Result<GridSection, SolveError> {
    check_cfl(cfg)?;
    let ((xa, xb), nx) = cfg.spatial.ok_or(SolveError::MissingSpatialGrid)?;
    if nx < 3 {
        return Err(SolveError::GridTooSmall(nx));
    }
    let spec = sys.spec();
    let n = spec.n as usize;
    let chart = sys.bundle.chart(ChartKind::E).clone();
    let dx = (xb - xa) / nx as f64;
    let xs: Vec<f64> = (0..nx).map(|i| xa + dx * i as f64).collect();

    // EL in first-order-in-time form with state (y, w = d0 y):
    // A_AB d0 w_B = dL/dy_A - D0' P_A0 - d1[P_A1], where D0' collects
    // the d0-chain-rule terms of P_A0 except the d0 w one, the spatial
    // divergence d1[P_A1] is taken on the evaluated momentum field and
    // A is the (0,0) velocity Hessian block.
    let p0: Vec<Expr> = (0..spec.n).map(|a| sys.momentum(a, 0)).collect();
    let p1: Vec<Expr> = (0..spec.n).map(|a| sys.momentum(a, 1)).collect();
    let dl_dy: Vec<Expr> = (0..spec.n)
        .map(|a| sys.lagrangian.differentiate(&Symbol::field(a)))
        .collect();
    let dp0_dx0: Vec<Expr> = p0.iter().map(|p| p.differentiate(&Symbol::base(0))).collect();
    let dp0_dy: Vec<Vec<Expr>> = p0
        .iter()
        .map(|p| (0..spec.n).map(|b| p.differentiate(&Symbol::field(b))).collect())
        .collect();
    let dp0_dv1: Vec<Vec<Expr>> = p0
        .iter()
        .map(|p| {
            (0..spec.n)
                .map(|b| p.differentiate(&Symbol::velocity(b, 1)))
                .collect()
        })
        .collect();
    let block00: Vec<Vec<Expr>> = p0
        .iter()
        .map(|p| {
            (0..spec.n)
                .map(|b| p.differentiate(&Symbol::velocity(b, 0)))
                .collect()
        })
        .collect();

    let mut state = vec![0.0; 2 * n * nx];
    {
        let mut pt = HashMap::new();
        pt.insert(Symbol::base(0), cfg.t_bounds.0);
        for (i, &x) in xs.iter().enumerate() {
            pt.insert(Symbol::base(1), x);
            for a in 0..n {
                state[a * nx + i] = initial_fields[a].evaluate(&pt)?;
                state[(n + a) * nx + i] = initial_velocities[a].evaluate(&pt)?;
            }
        }
    }

    let spatial_diff = |arr: &[f64]| -> Vec<f64> {
        (0..nx)
            .map(|i| (arr[(i + 1) % nx] - arr[(i + nx - 1) % nx]) / (2.0 * dx))
            .collect()
    };

    let steps = cfg.t_steps;
    let dt = (cfg.t_bounds.1 - cfg.t_bounds.0) / steps as f64;
    let mut y_values = vec![vec![0.0; (steps + 1) * nx]; n];
    let mut err: Option<SolveError> = None;
    {
        let rhs = |t: f64, s: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; s.len()];
            let dy1: Vec<Vec<f64>> = (0..n)
                .map(|a| spatial_diff(&s[a * nx..(a + 1) * nx]))
                .collect();
            let dw1: Vec<Vec<f64>> = (0..n)
                .map(|a| spatial_diff(&s[(n + a) * nx..(n + a + 1) * nx]))
                .collect();
            // Evaluate P_A1 on the slice, then take its x1 divergence.
            let mut p1_field = vec![vec![0.0; nx]; n];
            let mut points = Vec::with_capacity(nx);
            for i in 0..nx {
                let mut pt = HashMap::new();
                pt.insert(Symbol::base(0), t);
                pt.insert(Symbol::base(1), xs[i]);
                for a in 0..n {
                    pt.insert(Symbol::field(a as u16), s[a * nx + i]);
                    pt.insert(Symbol::velocity(a as u16, 0), s[(n + a) * nx + i]);
                    pt.insert(Symbol::velocity(a as u16, 1), dy1[a][i]);
                }
                for a in 0..n {
                    match p1[a].evaluate(&pt) {
                        Ok(v) => p1_field[a][i] = v,
                        Err(e) => {
                            err.get_or_insert(SolveError::Eval(e));
                            return out;
                        }
                    }
                }
                points.push(pt);
            }
            let div_p1: Vec<Vec<f64>> = (0..n).map(|a| spatial_diff(&p1_field[a])).collect();
            for i in 0..nx {
                let pt = &points[i];
                let mut mat = nalgebra::DMatrix::<f64>::zeros(n, n);
                let mut rhs_v = nalgebra::DVector::<f64>::zeros(n);
                for a in 0..n {
                    out[a * nx + i] = s[(n + a) * nx + i];
                    let ev = |e: &Expr| e.evaluate(pt);
                    let mut r = 0.0;
                    let mut ok = true;
                    for (term, sign) in [(&dl_dy[a], 1.0), (&dp0_dx0[a], -1.0)] {
                        match ev(term) {
                            Ok(v) => r += sign * v,
                            Err(e) => {
                                err.get_or_insert(SolveError::Eval(e));
                                ok = false;
                                break;
                            }
                        }
                    }
                    if !ok {
                        return out;
                    }
                    for b in 0..n {
                        match (ev(&dp0_dy[a][b]), ev(&dp0_dv1[a][b]), ev(&block00[a][b])) {
                            (Ok(vy), Ok(vv), Ok(hv)) => {
                                r -= vy * s[(n + b) * nx + i];
                                r -= vv * dw1[b][i];
                                mat[(a, b)] = hv;
                            }
                            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
                                err.get_or_insert(SolveError::Eval(e));
                                return out;
                            }
                        }
                    }
                    r -= div_p1[a][i];
                    rhs_v[a] = r;
                }
                match mat.lu().solve(&rhs_v) {
                    Some(acc) => {
                        for a in 0..n {
                            out[(n + a) * nx + i] = acc[a];
                        }
                    }
                    None => {
                        err.get_or_insert(SolveError::Newton(
                            crate::legendre::LegendreError::SingularIterate,
                        ));
                        return out;
                    }
                }
            }
            out
        };
        rk4(&mut state, cfg.t_bounds.0, dt, steps, rhs, |step, s| {
            for a in 0..n {
                y_values[a][step * nx..(step + 1) * nx]
                    .copy_from_slice(&s[a * nx..(a + 1) * nx]);
            }
        });
    }
    if let Some(e) = err {
        return Err(e);
    }
    Ok(GridSection {
        chart,
        bounds: vec![cfg.t_bounds, (xa, xb)],
        shape: vec![steps + 1, nx],
        periodic: vec![false, true],
        values: y_values,
    })
}

/// Trapezoidal quadrature weights: 1/2 at non-periodic boundaries.
fn quadrature_weight(section: &GridSection, idx: &[usize]) -> f64 {
    idx.iter()
        .enumerate()
        .map(|(axis, &i)| {
            if section.periodic[axis] || (i > 0 && i + 1 < section.shape[axis]) {
                1.0
            } else {
                0.5
            }
        })
        .product()
}

/// The Lagrangian action of a sampled section of E: trapezoidal
/// quadrature of L on the jet prolongation.
pub fn action_lagrangian(sys: &LagrangianSystem, phi: &GridSection) -> Result<f64, SolveError> {
    let jet = prolong(sys, phi)?;
    let m = sys.spec().m as usize;
    let cell: f64 = (0..m).map(|axis| jet.spacing(axis)).product();
    let mut total = 0.0;
    let mut pt = HashMap::new();
    for flat in 0..jet.points() {
        let base = jet.base_point(flat);
        for (nu, &x) in base.iter().enumerate() {
            pt.insert(Symbol::base(nu as u16), x);
        }
        for (f, s) in jet.chart.symbols().iter().skip(m).enumerate() {
            pt.insert(s.clone(), jet.values[f][flat]);
        }
        let w = quadrature_weight(&jet, &jet.multi_index(flat));
        total += w * sys.lagrangian.evaluate(&pt)?;
    }
    Ok(total * cell)
}

/// The Hamiltonian action of a sampled section of Pi: quadrature of
/// psi*(Theta_h) = (sum p^nu_A d_nu y^A - H) d^m x.
pub fn action_hamiltonian(h: &HamiltonianSystem, psi: &GridSection) -> Result<f64, SolveError> {
    if psi.chart.kind() != ChartKind::Pi && psi.chart.kind() != ChartKind::J1PiStar {
        return Err(SolveError::ChartMismatch {
            expected: "Pi",
            got: psi.chart.kind().name(),
        });
    }
    let spec = h.bundle.spec;
    let m = spec.m as usize;
    let chart = &psi.chart;
    // d_nu y^A arrays.
    let mut dy: Vec<Vec<Vec<f64>>> = Vec::new();
    for a in 0..spec.n {
        let fy = chart.index_of(&Symbol::field(a)).unwrap() - m;
        dy.push(
            (0..m)
                .map(|axis| differentiate_axis(psi, &psi.values[fy], axis))
                .collect(),
        );
    }
    let cell: f64 = (0..m).map(|axis| psi.spacing(axis)).product();
    let mut total = 0.0;
    let mut pt = HashMap::new();
    for flat in 0..psi.points() {
        let base = psi.base_point(flat);
        for (nu, &x) in base.iter().enumerate() {
            pt.insert(Symbol::base(nu as u16), x);
        }
        for (f, s) in chart.symbols().iter().skip(m).enumerate() {
            pt.insert(s.clone(), psi.values[f][flat]);
        }
        let mut integrand = -h.hamiltonian.evaluate(&pt)?;
        for a in 0..spec.n {
            for nu in 0..spec.m {
                let fp = chart.index_of(&Symbol::momentum(a, nu)).unwrap() - m;
                integrand += psi.values[fp][flat] * dy[a as usize][nu as usize][flat];
            }
        }
        total += quadrature_weight(psi, &psi.multi_index(flat)) * integrand;
    }
    Ok(total * cell)
}

/// Grid evaluation of psi* i(Z) Omega_h for a vector field Z on the
/// section's chart: the pullback of the contracted form along the
/// section, measured in max-norm over interior points. Used for the
/// Theorem 4 style criterion.
pub fn contraction_norm(
    h: &HamiltonianSystem,
    z: &crate::forms::VectorFieldExpr,
    psi: &GridSection,
) -> Result<f64, SolveError> {
    let (_, omega) = h.hamilton_cartan();
    let contracted = omega
        .interior_product(z)
        .map_err(|_| SolveError::ChartMismatch {
            expected: h.chart().kind().name(),
            got: z.chart.kind().name(),
        })?;
    // psi* of an m-form on a chart over an m-dimensional base: the
    // single d^m x coefficient after substituting the section and its
    // derivatives. Expand each term: a coefficient times a wedge of
    // coordinate differentials; along the section d(coord c) =
    // sum_nu (d c/d x^nu) dx^nu with the derivative arrays computed by
    // finite differences.
    let spec = h.bundle.spec;
    let m = spec.m as usize;
    let chart = &psi.chart;
    if *chart != *h.chart() {
        return Err(SolveError::ChartMismatch {
            expected: h.chart().kind().name(),
            got: chart.kind().name(),
        });
    }

    // Derivative arrays for every fiber coordinate along every axis.
    let fibers = psi.fiber_count();
    let mut deriv = vec![Vec::new(); fibers];
    for (f, item) in deriv.iter_mut().enumerate() {
        *item = (0..m)
            .map(|axis| differentiate_axis(psi, &psi.values[f], axis))
            .collect::<Vec<Vec<f64>>>();
    }

    let mut max: f64 = 0.0;
    let mut pt = HashMap::new();
    for flat in 0..psi.points() {
        let idx = psi.multi_index(flat);
        let interior = idx.iter().enumerate().all(|(axis, &i)| {
            psi.periodic[axis] || (i > 0 && i + 1 < psi.shape[axis])
        });
        if !interior {
            continue;
        }
        let base = psi.base_point(flat);
        for (nu, &x) in base.iter().enumerate() {
            pt.insert(Symbol::base(nu as u16), x);
        }
        for (f, s) in chart.symbols().iter().skip(m).enumerate() {
            pt.insert(s.clone(), psi.values[f][flat]);
        }
        // Jacobian of the section: row per chart coordinate, column per
        // base axis.
        let jac: Vec<Vec<f64>> = chart
            .symbols()
            .iter()
            .enumerate()
            .map(|(ci, _)| {
                (0..m)
                    .map(|axis| {
                        if ci < m {
                            if ci == axis {
                                1.0
                            } else {
                                0.0
                            }
                        } else {
                            deriv[ci - m][axis][flat]
                        }
                    })
                    .collect()
            })
            .collect();
        let mut value = 0.0;
        for (tuple, coeff) in contracted.terms() {
            // Pullback of dx^{c1} ^ ... ^ dx^{cm} is det of the rows.
            let sub = nalgebra::DMatrix::<f64>::from_fn(m, m, |r, c| jac[tuple[r]][c]);
            let det = sub.determinant();
            if det != 0.0 {
                value += coeff.evaluate(&pt)? * det;
            }
        }
        max = max.max(value.abs());
    }
    Ok(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charts::make_bundle;
    use crate::expr::parse;
    use crate::hamiltonian::HdwMode;

    fn lag(m: i64, n: i64, l: &str) -> LagrangianSystem {
        let bundle = make_bundle(m, n).unwrap();
        let e = parse(l, bundle.chart(ChartKind::J1E)).unwrap();
        LagrangianSystem::new(bundle, e).unwrap()
    }

    fn scalar_field() -> LagrangianSystem {
        lag(2, 1, "1/2*(v_0_0^2 - v_0_1^2)")
    }

    fn sample_e(
        sys: &LagrangianSystem,
        bounds: &[(f64, f64)],
        shape: &[usize],
        periodic: &[bool],
        exprs: &[&str],
    ) -> GridSection {
        let chart = sys.bundle.chart(ChartKind::E);
        let fibers: Vec<Expr> = exprs.iter().map(|s| parse(s, chart).unwrap()).collect();
        sample_section(chart, bounds, shape, periodic, &fibers).unwrap()
    }

    #[test]
    fn prolong_linear_exact() {
        let sys = lag(1, 1, "1/2*v_0_0^2");
        let phi = sample_e(&sys, &[(0.0, 1.0)], &[11], &[false], &["x_0"]);
        let jet = prolong(&sys, &phi).unwrap();
        // v array is fiber index 1 (after y).
        for v in &jet.values[1] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prolong_constant_zero() {
        let sys = lag(1, 1, "1/2*v_0_0^2");
        let phi = sample_e(&sys, &[(0.0, 1.0)], &[11], &[false], &["3"]);
        let jet = prolong(&sys, &phi).unwrap();
        for v in &jet.values[1] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn prolong_sin_second_order() {
        let sys = lag(1, 1, "1/2*v_0_0^2");
        let n = 101;
        let phi = sample_e(&sys, &[(0.0, 1.0)], &[n], &[false], &["sin(x_0)"]);
        let jet = prolong(&sys, &phi).unwrap();
        let h: f64 = 1.0 / (n as f64 - 1.0);
        let bound = h * h * 1.0;
        for (i, v) in jet.values[1].iter().enumerate() {
            let x = i as f64 * h;
            assert!((v - x.cos()).abs() <= bound, "error at {x}");
        }
    }

    #[test]
    fn legendre_prolong_free_particle() {
        let sys = lag(1, 1, "1/2*v_0_0^2");
        let phi = sample_e(&sys, &[(0.0, 1.0)], &[11], &[false], &["x_0"]);
        let pi = legendre_prolong(&sys, &phi).unwrap();
        for p in &pi.values[1] {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hdw_ode_free_particle() {
        let b = make_bundle(1, 1).unwrap();
        let h = parse("1/2*p_0_0^2", b.chart(ChartKind::Pi)).unwrap();
        let hsys = HamiltonianSystem::new(b, ChartKind::Pi, h).unwrap();
        let cfg = EvolveConfig {
            t_bounds: (0.0, 1.0),
            t_steps: 100,
            spatial: None,
        };
        let sol = solve_evolution_hamiltonian(
            &hsys,
            &[Expr::zero()],
            &[Expr::one()],
            &cfg,
        )
        .unwrap();
        let y_final = sol.values[0][100];
        assert!((y_final - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hdw_residual_on_exact_linear_solution() {
        // y = t, p = 1 solves HDW for H = p^2/2; residual ~ 0.
        let b = make_bundle(1, 1).unwrap();
        let h = parse("1/2*p_0_0^2", b.chart(ChartKind::Pi)).unwrap();
        let hsys = HamiltonianSystem::new(b.clone(), ChartKind::Pi, h).unwrap();
        let chart = b.chart(ChartKind::Pi);
        let section = sample_section(
            chart,
            &[(0.0, 1.0)],
            &[21],
            &[false],
            &[parse("x_0", chart).unwrap(), Expr::one()],
        )
        .unwrap();
        let op = hsys.hdw_residual(HdwMode::Local).unwrap();
        let norms = residual_norm(&op, &section).unwrap();
        assert!(norms.max <= 1e-12, "max {}", norms.max);
    }

    #[test]
    fn traveling_wave_hdw_evolution() {
        let sys = scalar_field();
        let hsys = crate::hamiltonian::from_hyperregular(&sys, None).unwrap();
        let e = sys.bundle.chart(ChartKind::E);
        let tau = std::f64::consts::TAU;
        let cfg = EvolveConfig {
            t_bounds: (0.0, 1.0),
            t_steps: 80,
            spatial: Some(((0.0, tau), 200)),
        };
        // Exact solution y = sin(x1 - x0): p0 = d0 y = -cos(x1 - x0).
        let y0 = parse("sin(x_1)", e).unwrap();
        let p0 = parse("-cos(x_1)", e).unwrap();
        let sol = solve_evolution_hamiltonian(&hsys, &[y0], &[p0], &cfg).unwrap();
        let nx = 200;
        let dt = 1.0 / 80.0;
        let dx = tau / nx as f64;
        let mut max_err = 0.0f64;
        for step in 0..=80 {
            let t = step as f64 * dt;
            for i in 0..nx {
                let x = i as f64 * dx;
                let err = (sol.values[0][step * nx + i] - (x - t).sin()).abs();
                max_err = max_err.max(err);
            }
        }
        assert!(max_err <= 5e-3, "max error {max_err}");
    }

    #[test]
    fn traveling_wave_el_evolution_matches_hdw() {
        let sys = scalar_field();
        let e = sys.bundle.chart(ChartKind::E);
        let tau = std::f64::consts::TAU;
        let cfg = EvolveConfig {
            t_bounds: (0.0, 1.0),
            t_steps: 80,
            spatial: Some(((0.0, tau), 200)),
        };
        let y0 = parse("sin(x_1)", e).unwrap();
        let w0 = parse("-cos(x_1)", e).unwrap();
        let el = solve_evolution_lagrangian(&sys, &[y0.clone()], &[w0.clone()], &cfg).unwrap();
        let hsys = crate::hamiltonian::from_hyperregular(&sys, None).unwrap();
        // For this L, p0 = v0 = w.
        let hdw = solve_evolution_hamiltonian(&hsys, &[y0], &[w0], &cfg).unwrap();
        let mut max_diff = 0.0f64;
        for (a, b) in el.values[0].iter().zip(&hdw.values[0]) {
            max_diff = max_diff.max((a - b).abs());
        }
        assert!(max_diff <= 1e-3, "max difference {max_diff}");
    }

    #[test]
    fn cfl_violation_detected() {
        let sys = scalar_field();
        let e = sys.bundle.chart(ChartKind::E);
        let cfg = EvolveConfig {
            t_bounds: (0.0, 1.0),
            t_steps: 10,
            spatial: Some(((0.0, std::f64::consts::TAU), 200)),
        };
        let y0 = parse("sin(x_1)", e).unwrap();
        let w0 = parse("-cos(x_1)", e).unwrap();
        assert!(matches!(
            solve_evolution_lagrangian(&sys, &[y0], &[w0], &cfg),
            Err(SolveError::CflViolation { .. })
        ));
    }

    #[test]
    fn action_free_particle() {
        let sys = lag(1, 1, "1/2*v_0_0^2");
        let phi = sample_e(&sys, &[(0.0, 1.0)], &[101], &[false], &["x_0"]);
        let s = action_lagrangian(&sys, &phi).unwrap();
        assert!((s - 0.5).abs() < 1e-10, "action {s}");
    }

    #[test]
    fn action_hamiltonian_linear_section() {
        // H = p^2/2, psi = (y = t, p = 1): integral of (1 - 1/2) dt.
        let b = make_bundle(1, 1).unwrap();
        let h = parse("1/2*p_0_0^2", b.chart(ChartKind::Pi)).unwrap();
        let hsys = HamiltonianSystem::new(b.clone(), ChartKind::Pi, h).unwrap();
        let chart = b.chart(ChartKind::Pi);
        let psi = sample_section(
            chart,
            &[(0.0, 1.0)],
            &[101],
            &[false],
            &[parse("x_0", chart).unwrap(), Expr::one()],
        )
        .unwrap();
        let s = action_hamiltonian(&hsys, &psi).unwrap();
        assert!((s - 0.5).abs() < 1e-10, "action {s}");
    }

    #[test]
    fn theorem7_actions_agree_free_particle() {
        let sys = lag(1, 1, "1/2*v_0_0^2");
        let phi = sample_e(&sys, &[(0.0, 1.0)], &[201], &[false], &["sin(x_0)"]);
        let sl = action_lagrangian(&sys, &phi).unwrap();
        let hsys = crate::hamiltonian::from_hyperregular(&sys, None).unwrap();
        let psi = legendre_prolong(&sys, &phi).unwrap();
        let sh = action_hamiltonian(&hsys, &psi).unwrap();
        assert!((sl - sh).abs() <= 1e-6, "difference {}", (sl - sh).abs());
    }

    #[test]
    fn residual_convergence_order() {
        // Halving h reduces the HDW residual of the prolonged exact
        // solution by about 4x.
        let sys = scalar_field();
        let hsys = crate::hamiltonian::from_hyperregular(&sys, None).unwrap();
        let op = hsys.hdw_residual(HdwMode::Local).unwrap();
        let tau = std::f64::consts::TAU;
        let mut norms = Vec::new();
        for n in [64usize, 128] {
            let phi = sample_e(
                &sys,
                &[(0.0, 1.0), (0.0, tau)],
                &[n + 1, n],
                &[false, true],
                &["sin(x_1 - x_0)"],
            );
            let psi = legendre_prolong(&sys, &phi).unwrap();
            norms.push(residual_norm(&op, &psi).unwrap().max);
        }
        let ratio = norms[0] / norms[1];
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn perturbed_section_raises_residual() {
        let sys = scalar_field();
        let hsys = crate::hamiltonian::from_hyperregular(&sys, None).unwrap();
        let op = hsys.hdw_residual(HdwMode::Local).unwrap();
        let tau = std::f64::consts::TAU;
        let phi = sample_e(
            &sys,
            &[(0.0, 1.0), (0.0, tau)],
            &[33, 64],
            &[false, true],
            &["sin(x_1 - x_0)"],
        );
        let psi = legendre_prolong(&sys, &phi).unwrap();
        let clean = residual_norm(&op, &psi).unwrap().max;
        let mut noisy = psi.clone();
        for (i, v) in noisy.values[0].iter_mut().enumerate() {
            *v += 0.1 * ((i * 2654435761) % 1000) as f64 / 1000.0;
        }
        let dirty = residual_norm(&op, &noisy).unwrap().max;
        assert!(dirty >= 10.0 * clean, "clean {clean}, dirty {dirty}");
    }

    #[test]
    fn energy_conservation_m1() {
        let b = make_bundle(1, 1).unwrap();
        let h = parse("1/2*p_0_0^2 + 1/2*y_0^2", b.chart(ChartKind::Pi)).unwrap();
        let hsys = HamiltonianSystem::new(b, ChartKind::Pi, h.clone()).unwrap();
        let cfg = EvolveConfig {
            t_bounds: (0.0, 1.0),
            t_steps: 1000,
            spatial: None,
        };
        let sol =
            solve_evolution_hamiltonian(&hsys, &[Expr::one()], &[Expr::zero()], &cfg).unwrap();
        let energy = |step: usize| {
            let y = sol.values[0][step];
            let p = sol.values[1][step];
            0.5 * p * p + 0.5 * y * y
        };
        assert!((energy(1000) - energy(0)).abs() <= 1e-8);
    }
}
