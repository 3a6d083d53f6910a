//! Bipolar drift-diffusion system
//!
//! ∂_t N - div(∇r(N) - N ∇V) = 0,  ∂_t P - div(∇r(P) + P ∇V) = 0,
//! ΔV = N - P - C,
//!
//! with ohmic contacts (Dirichlet) and insulating segments (Neumann). Each
//! step solves the Poisson equation from the time-n densities, then one
//! transport step per carrier with the drift ±DV^n.

use std::time::Instant;

use log::{debug, info};

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::field::{CellField, DiagnosticSeries};
use crate::flux::{FluxKind, FluxModel};
use crate::linalg::{max_abs, DirectSolver, SparseMatrix};
use crate::mesh::{BoundaryTag, Mesh, Point, Rect, Side};
use crate::nonlinearity::PressureLaw;
use crate::scalar_solver::{cell_mean, DirichletValues, StepReport, TransportOperator};

const EQUILIBRIUM_TOLERANCE: f64 = 1e-10;
const EQUILIBRIUM_MAX_ITERATIONS: usize = 100;
const BOUNDARY_EQUILIBRIUM_TOLERANCE: f64 = 1e-10;

/// Cell means C_K of the doping profile.
#[derive(Clone, Debug, PartialEq)]
pub struct DopingProfile {
    pub values: Vec<f64>,
}

impl DopingProfile {
    pub fn from_fn(mesh: &Mesh, c: impl Fn(Point) -> f64) -> Self {
        let (hx, hy) = mesh.cell_extent();
        DopingProfile { values: mesh.cells().iter().map(|k| cell_mean(&c, k.center, hx, hy)).collect() }
    }

    pub fn zero(mesh: &Mesh) -> Self {
        DopingProfile { values: vec![0.0; mesh.n_cells()] }
    }
}

/// Contact values N̄, P̄, V̄ per edge id (meaningful on Dirichlet edges only).
#[derive(Clone, Debug, PartialEq)]
pub struct DdBoundary {
    pub n: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
}

impl DdBoundary {
    /// Evaluates `data(midpoint) = (N̄, P̄, V̄)` on the Dirichlet edges of `mesh`.
    pub fn from_fn(mesh: &Mesh, data: impl Fn(Point) -> (f64, f64, f64)) -> Self {
        let mut b = DdBoundary { n: vec![0.0; mesh.n_edges()], p: vec![0.0; mesh.n_edges()], v: vec![0.0; mesh.n_edges()] };
        for (id, e) in mesh.dirichlet_edges() {
            let (n, p, v) = data(e.midpoints[0]);
            b.n[id] = n;
            b.p[id] = p;
            b.v[id] = v;
        }
        b
    }

    /// Contact data in thermal equilibrium: V̄ = (h(N̄) - h(P̄)) / 2.
    pub fn equilibrium(mesh: &Mesh, law: &PressureLaw, densities: impl Fn(Point) -> (f64, f64)) -> Self {
        Self::from_fn(mesh, |x| {
            let (n, p) = densities(x);
            (n, p, 0.5 * (law.h(n) - law.h(p)))
        })
    }

    /// (α_N, α_P) if h(N̄) - V̄ and h(P̄) + V̄ are constant on the contacts.
    pub fn equilibrium_constants(&self, mesh: &Mesh, law: &PressureLaw) -> Result<(f64, f64)> {
        let mut alphas: Option<(f64, f64)> = None;
        for (id, _) in mesh.dirichlet_edges() {
            let (n, p, v) = (self.n[id], self.p[id], self.v[id]);
            if !(n > 0.0 && p > 0.0) {
                return invalid_config(format!("contact densities must be positive, got N = {n}, P = {p} on edge {id}"));
            }
            let a = (law.h(n) - v, law.h(p) + v);
            match alphas {
                None => alphas = Some(a),
                Some((an, ap)) => {
                    let tol = BOUNDARY_EQUILIBRIUM_TOLERANCE * (1.0 + an.abs().max(ap.abs()));
                    if (a.0 - an).abs() > tol || (a.1 - ap).abs() > tol {
                        return invalid_config(format!(
                            "contact data are not in thermal equilibrium: (α_N, α_P) = ({an}, {ap}) vs ({}, {}) on edge {id}",
                            a.0, a.1
                        ));
                    }
                }
            }
        }
        alphas.ok_or_else(|| Error::InvalidConfiguration("no ohmic contact (Dirichlet edge)".into()))
    }
}

/// Densities and potential at one time level.
#[derive(Clone, Debug, PartialEq)]
pub struct DdState {
    pub n: CellField,
    pub p: CellField,
    pub v: CellField,
}

impl DdState {
    pub fn time(&self) -> f64 {
        self.n.time
    }

    /// Largest relative change over N, P and V.
    pub fn max_relative_change(&self, other: &DdState) -> f64 {
        self.n
            .max_relative_change(&other.n)
            .max(self.p.max_relative_change(&other.p))
            .max(self.v.max_relative_change(&other.v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumState {
    pub n: CellField,
    pub p: CellField,
    pub v: CellField,
    pub alpha_n: f64,
    pub alpha_p: f64,
    /// ‖residual‖_∞ after each Newton iteration.
    pub residual_history: Vec<f64>,
}

impl EquilibriumState {
    pub fn as_state(&self) -> DdState {
        DdState { n: self.n.clone(), p: self.p.clone(), v: self.v.clone() }
    }
}

/// Two-point Laplacian L with (L V)_K = Σ_σ τ_σ (V_K - V_σ) on interior and
/// Dirichlet edges (V_σ = V̄ moved to the right-hand side).
fn assemble_laplacian(mesh: &Mesh, a: &mut SparseMatrix) {
    a.clear();
    for e in mesh.edges() {
        let tau = e.transmissibility;
        let k = e.owner;
        match e.neighbor {
            Some(l) => {
                a.add(k, k, tau);
                a.add(l, l, tau);
                a.add(k, l, -tau);
                a.add(l, k, -tau);
            }
            None if e.is_dirichlet() => a.add(k, k, tau),
            None => {}
        }
    }
}

/// Σ_{σ Dirichlet} τ_σ V̄_σ per cell.
fn dirichlet_source(mesh: &Mesh, v_bar: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.n_cells()];
    for (id, e) in mesh.dirichlet_edges() {
        b[e.owner] += e.transmissibility * v_bar[id];
    }
    b
}

/// Reusable Poisson solver for a fixed mesh.
pub struct PoissonSolver {
    matrix: SparseMatrix,
    solver: DirectSolver,
    source: Vec<f64>,
}

impl PoissonSolver {
    pub fn new(mesh: &Mesh, v_bar: &[f64]) -> Result<Self> {
        if !mesh.has_dirichlet() {
            return invalid_config("the Poisson problem needs at least one Dirichlet edge");
        }
        let mut matrix = SparseMatrix::for_mesh(mesh);
        assemble_laplacian(mesh, &mut matrix);
        let solver = DirectSolver::new(&matrix)?;
        Ok(PoissonSolver { matrix, solver, source: dirichlet_source(mesh, v_bar) })
    }

    /// Solves Σ_σ τ_σ DV_{K,σ} = m(K) rhs_K.
    pub fn solve(&self, mesh: &Mesh, rhs: &[f64]) -> Result<Vec<f64>> {
        let b: Vec<f64> = mesh
            .cells()
            .iter()
            .zip(rhs)
            .zip(&self.source)
            .map(|((c, r), s)| s - c.measure * r)
            .collect();
        self.solver.solve(&self.matrix, &b)
    }
}

/// One-shot Poisson solve with Dirichlet data `v_bar` (per edge id).
pub fn solve_poisson(mesh: &Mesh, v_bar: &[f64], rhs: &CellField) -> Result<CellField> {
    let v = PoissonSolver::new(mesh, v_bar)?.solve(mesh, &rhs.values)?;
    Ok(CellField::new(v, rhs.time))
}

/// DV_{K,σ} seen from owner and neighbour, for every edge (0 on Neumann edges).
pub fn potential_differences(mesh: &Mesh, v: &[f64], v_bar: &[f64]) -> Vec<[f64; 2]> {
    mesh.edges()
        .iter()
        .enumerate()
        .map(|(id, e)| match e.neighbor {
            Some(l) => {
                let d = v[l] - v[e.owner];
                [d, -d]
            }
            None if e.is_dirichlet() => [v_bar[id] - v[e.owner], 0.0],
            None => [0.0, 0.0],
        })
        .collect()
}

/// Discrete thermal equilibrium by damped Newton on
/// Σ_σ τ_σ DV_{K,σ} = m(K) (g(α_N + V_K) - g(α_P - V_K) - C_K).
pub fn thermal_equilibrium(
    mesh: &Mesh,
    boundary: &DdBoundary,
    doping: &DopingProfile,
    law: &PressureLaw,
) -> Result<EquilibriumState> {
    let (alpha_n, alpha_p) = boundary.equilibrium_constants(mesh, law)?;
    let mut lap = SparseMatrix::for_mesh(mesh);
    assemble_laplacian(mesh, &mut lap);
    let source = dirichlet_source(mesh, &boundary.v);
    let solver = DirectSolver::new(&lap)?;
    let residual = |v: &[f64]| -> Vec<f64> {
        let lv = lap.mul_vec(v);
        mesh.cells()
            .iter()
            .enumerate()
            .map(|(k, c)| {
                lv[k] - source[k]
                    + c.measure * (law.g_inverse(alpha_n + v[k]) - law.g_inverse(alpha_p - v[k]) - doping.values[k])
            })
            .collect()
    };
    let v_mean = {
        let vals: Vec<f64> = mesh.dirichlet_edges().map(|(id, _)| boundary.v[id]).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let mut v = vec![v_mean; mesh.n_cells()];
    let mut r = residual(&v);
    let mut norm = max_abs(&r);
    let mut history = vec![norm];
    let mut jac = lap.clone();
    let mut it = 0;
    // Iterate to the tolerance, then keep polishing while Newton still
    // gains at least a factor of two.
    let mut polishing = 0;
    loop {
        if norm <= EQUILIBRIUM_TOLERANCE {
            polishing += 1;
            if polishing > 3 {
                break;
            }
        }
        if it == EQUILIBRIUM_MAX_ITERATIONS {
            if norm <= EQUILIBRIUM_TOLERANCE {
                break;
            }
            return Err(Error::StepFailure { step: 0, iterations: it, residual: norm, history });
        }
        it += 1;
        jac.clone_from(&lap);
        for (k, c) in mesh.cells().iter().enumerate() {
            jac.add(k, k, c.measure * (law.g_derivative(alpha_n + v[k]) + law.g_derivative(alpha_p - v[k])));
        }
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let delta = solver.solve(&jac, &neg)?;
        let mut lambda = 1.0;
        let (v_new, r_new, n_new) = loop {
            let trial: Vec<f64> = v.iter().zip(&delta).map(|(a, d)| a + lambda * d).collect();
            let rt = residual(&trial);
            let nt = max_abs(&rt);
            if nt < norm || lambda < 1e-4 {
                break (trial, rt, nt);
            }
            lambda *= 0.5;
        };
        if norm <= EQUILIBRIUM_TOLERANCE && n_new > 0.5 * norm {
            // No further gain from polishing.
            if n_new < norm {
                v = v_new;
                norm = n_new;
                history.push(norm);
            }
            break;
        }
        v = v_new;
        r = r_new;
        norm = n_new;
        history.push(norm);
        debug!("equilibrium Newton {it}: residual {norm:e} (damping {lambda})");
    }
    info!("thermal equilibrium: {} Newton iterations, residual {:e}", history.len() - 1, norm);
    let n = v.iter().map(|x| law.g_inverse(alpha_n + x)).collect();
    let p = v.iter().map(|x| law.g_inverse(alpha_p - x)).collect();
    Ok(EquilibriumState {
        n: CellField::new(n, 0.0),
        p: CellField::new(p, 0.0),
        v: CellField::new(v, 0.0),
        alpha_n,
        alpha_p,
        residual_history: history,
    })
}

/// Relative energy E^n: convexity gaps of H for N and P plus
/// ½ Σ τ |DV - DV^eq|² over interior and Dirichlet edges.
pub fn discrete_energy(mesh: &Mesh, state: &DdState, eq: &EquilibriumState, law: &PressureLaw) -> f64 {
    let gap = |u: f64, ueq: f64| law.convexity_gap(u, ueq);
    let mut e = 0.0;
    for (k, c) in mesh.cells().iter().enumerate() {
        e += c.measure * (gap(state.n.values[k], eq.n.values[k]) + gap(state.p.values[k], eq.p.values[k]));
    }
    let w: Vec<f64> = state.v.values.iter().zip(&eq.v.values).map(|(a, b)| a - b).collect();
    for e_ in mesh.edges() {
        let d = match e_.neighbor {
            Some(l) => w[l] - w[e_.owner],
            // DV - DV^eq = (V̄ - V_K) - (V̄ - V_K^eq)
            None if e_.is_dirichlet() => -w[e_.owner],
            None => continue,
        };
        e += 0.5 * e_.transmissibility * d * d;
    }
    e
}

/// Σ τ min(U_K, U_σ) [D(h(U) + sign V)]² over interior and Dirichlet edges,
/// with zero contribution from edges where the minimum vanishes.
fn carrier_dissipation(mesh: &Mesh, u: &[f64], u_bar: &[f64], v: &[f64], v_bar: &[f64], sign: f64, law: &PressureLaw) -> f64 {
    let mut total = 0.0;
    for (id, e) in mesh.edges().iter().enumerate() {
        let k = e.owner;
        let (u_nb, v_nb) = match e.neighbor {
            Some(l) => (u[l], v[l]),
            None if e.is_dirichlet() => (u_bar[id], v_bar[id]),
            None => continue,
        };
        let m = u[k].min(u_nb);
        if m <= 0.0 {
            continue;
        }
        let d = (law.h(u_nb) + sign * v_nb) - (law.h(u[k]) + sign * v[k]);
        total += e.transmissibility * m * d * d;
    }
    total
}

/// Dissipation I^n from the densities at n+1 and the potential at n.
pub fn discrete_dissipation(
    mesh: &Mesh,
    n_new: &CellField,
    p_new: &CellField,
    v_old: &CellField,
    boundary: &DdBoundary,
    law: &PressureLaw,
) -> f64 {
    carrier_dissipation(mesh, &n_new.values, &boundary.n, &v_old.values, &boundary.v, -1.0, law)
        + carrier_dissipation(mesh, &p_new.values, &boundary.p, &v_old.values, &boundary.v, 1.0, law)
}

/// A drift-diffusion problem: mesh with contacts tagged, law, doping,
/// contact data and initial densities.
#[derive(Clone, Debug)]
pub struct DdProblem {
    pub mesh: Mesh,
    pub law: PressureLaw,
    pub doping: DopingProfile,
    pub boundary: DdBoundary,
    pub n0: CellField,
    pub p0: CellField,
}

impl DdProblem {
    pub fn thermal_equilibrium(&self) -> Result<EquilibriumState> {
        thermal_equilibrium(&self.mesh, &self.boundary, &self.doping, &self.law)
    }

    /// Initial state with V^0 from the Poisson equation.
    pub fn initial_state(&self) -> Result<DdState> {
        let rhs: Vec<f64> = (0..self.mesh.n_cells())
            .map(|k| self.n0.values[k] - self.p0.values[k] - self.doping.values[k])
            .collect();
        let v = PoissonSolver::new(&self.mesh, &self.boundary.v)?.solve(&self.mesh, &rhs)?;
        Ok(DdState { n: self.n0.clone(), p: self.p0.clone(), v: CellField::new(v, 0.0) })
    }
}

/// PN junction on the unit square: contacts N̄ = 0.1, P̄ = 0.9 on
/// {y = 1, x <= 0.25} and N̄ = 0.9, P̄ = 0.1 on {y = 0}; doping +1 below
/// y = 0.5 and -1 above; initial densities linear in y between the contacts.
pub fn pn_junction_case(nx: usize, ny: usize, gamma: f64) -> Result<DdProblem> {
    let law = PressureLaw::new(gamma)?;
    let mut mesh = Mesh::cartesian(nx, ny, Rect::square(0.0, 1.0))?;
    mesh.tag_boundary(|side, x| match side {
        Side::Bottom => BoundaryTag::Dirichlet,
        Side::Top if x[0] <= 0.25 + 1e-12 => BoundaryTag::Dirichlet,
        _ => BoundaryTag::Neumann,
    });
    let boundary = DdBoundary::equilibrium(&mesh, &law, |x| if x[1] < 0.5 { (0.9, 0.1) } else { (0.1, 0.9) });
    let doping = DopingProfile::from_fn(&mesh, |x| if x[1] < 0.5 { 1.0 } else { -1.0 });
    let n0 = mesh.cells().iter().map(|c| 0.9 - 0.8 * c.center[1]).collect();
    let p0 = mesh.cells().iter().map(|c| 0.1 + 0.8 * c.center[1]).collect();
    Ok(DdProblem { mesh, law, doping, boundary, n0: CellField::new(n0, 0.0), p0: CellField::new(p0, 0.0) })
}

/// 1-D analogue on (0,1): contacts N̄ = 0.9, P̄ = 0.1 at x = 0 and N̄ = 0.1,
/// P̄ = 0.9 at x = 1; doping +1 on x < 0.5 and -1 beyond.
pub fn pn_junction_1d(n_cells: usize, gamma: f64) -> Result<DdProblem> {
    let law = PressureLaw::new(gamma)?;
    let mut mesh = Mesh::interval(n_cells, 0.0, 1.0)?;
    mesh.tag_boundary(|_, _| BoundaryTag::Dirichlet);
    let boundary = DdBoundary::equilibrium(&mesh, &law, |x| if x[0] < 0.5 { (0.9, 0.1) } else { (0.1, 0.9) });
    let doping = DopingProfile::from_fn(&mesh, |x| if x[0] < 0.5 { 1.0 } else { -1.0 });
    let n0 = mesh.cells().iter().map(|c| 0.9 - 0.8 * c.center[0]).collect();
    let p0 = mesh.cells().iter().map(|c| 0.1 + 0.8 * c.center[0]).collect();
    Ok(DdProblem { mesh, law, doping, boundary, n0: CellField::new(n0, 0.0), p0: CellField::new(p0, 0.0) })
}

#[derive(Clone, Debug, Default)]
pub struct DdStepReport {
    pub electrons: StepReport,
    pub holes: StepReport,
    /// I^n of this step.
    pub dissipation: f64,
}

/// Time stepper for a [`DdProblem`] with a given flux and time step.
pub struct DdSolver {
    problem: DdProblem,
    dt: f64,
    electrons: TransportOperator,
    holes: TransportOperator,
    poisson: PoissonSolver,
    bc_n: DirichletValues,
    bc_p: DirichletValues,
    steps_taken: usize,
}

impl DdSolver {
    pub fn new(problem: DdProblem, kind: FluxKind, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid_arg(format!("time step must be positive, got {dt}"));
        }
        problem.boundary.equilibrium_constants(&problem.mesh, &problem.law)?;
        let flux = FluxModel::new(kind, problem.law)?;
        let electrons = TransportOperator::new(&problem.mesh, flux)?;
        let holes = TransportOperator::new(&problem.mesh, flux)?;
        let poisson = PoissonSolver::new(&problem.mesh, &problem.boundary.v)?;
        let bc_n = DirichletValues::steady(problem.boundary.n.clone());
        let bc_p = DirichletValues::steady(problem.boundary.p.clone());
        Ok(DdSolver { problem, dt, electrons, holes, poisson, bc_n, bc_p, steps_taken: 0 })
    }

    pub fn problem(&self) -> &DdProblem {
        &self.problem
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// (N^n, P^n, V^n) -> (N^{n+1}, P^{n+1}, V^{n+1}); `V^n` must solve the
    /// Poisson equation for (N^n, P^n).
    pub fn step(&mut self, state: &DdState) -> Result<(DdState, DdStepReport)> {
        let mesh = &self.problem.mesh;
        let m = state.n.max().max(state.p.max());
        if m * self.dt > 1.0 {
            return invalid_config(format!("M Δt = {} exceeds 1 (M = {m}, Δt = {})", m * self.dt, self.dt));
        }
        let n = self.steps_taken;
        let dv = potential_differences(mesh, &state.v.values, &self.problem.boundary.v);
        let drift_p: Vec<[f64; 2]> = dv.iter().map(|[a, b]| [-a, -b]).collect();
        let (nv, rep_n) = self.electrons.step(mesh, &state.n.values, &dv, &self.bc_n, self.dt, n)?;
        let (pv, rep_p) = self.holes.step(mesh, &state.p.values, &drift_p, &self.bc_p, self.dt, n)?;
        let t = state.time() + self.dt;
        let n_new = CellField::new(nv, t);
        let p_new = CellField::new(pv, t);
        let dissipation = discrete_dissipation(mesh, &n_new, &p_new, &state.v, &self.problem.boundary, &self.problem.law);
        let rhs: Vec<f64> = (0..mesh.n_cells())
            .map(|k| n_new.values[k] - p_new.values[k] - self.problem.doping.values[k])
            .collect();
        let v_new = CellField::new(self.poisson.solve(mesh, &rhs)?, t);
        self.steps_taken += 1;
        Ok((DdState { n: n_new, p: p_new, v: v_new }, DdStepReport { electrons: rep_n, holes: rep_p, dissipation }))
    }

    /// Runs floor(t_end/Δt) steps and records `energy,dissipation` every
    /// `stride` steps (and at the last one). Row n holds E^n and I^n; the
    /// final row's dissipation is NaN since I^N needs step N+1.
    pub fn run(&mut self, state: DdState, eq: &EquilibriumState, t_end: f64, stride: usize) -> Result<(DdState, DiagnosticSeries)> {
        let stride = stride.max(1);
        let n_steps = (t_end / self.dt * (1.0 + 1e-12)).floor() as usize;
        let law = self.problem.law;
        let mut series = DiagnosticSeries::new(["energy", "dissipation"]);
        let mut state = state;
        let start = Instant::now();
        for n in 0..n_steps {
            let energy = discrete_energy(&self.problem.mesh, &state, eq, &law);
            let (next, report) = self.step(&state)?;
            if n % stride == 0 {
                series.push(n, state.time(), vec![energy, report.dissipation]);
            }
            state = next;
        }
        series.push(n_steps, state.time(), vec![discrete_energy(&self.problem.mesh, &state, eq, &law), f64::NAN]);
        info!("drift-diffusion run: {n_steps} steps in {:?}", start.elapsed());
        Ok((state, series))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged_interval(n: usize) -> Mesh {
        let mut m = Mesh::interval(n, 0.0, 1.0).unwrap();
        m.tag_boundary(|_, _| BoundaryTag::Dirichlet);
        m
    }

    #[test]
    fn poisson_constant_and_linear() {
        let m = tagged_interval(10);
        let vbar = DdBoundary::from_fn(&m, |_| (1.0, 1.0, 0.3)).v;
        let v = solve_poisson(&m, &vbar, &CellField::constant(&m, 0.0, 0.0)).unwrap();
        assert!(v.values.iter().all(|x| (x - 0.3).abs() < 1e-13));
        let vbar = DdBoundary::from_fn(&m, |x| (1.0, 1.0, x[0])).v;
        let v = solve_poisson(&m, &vbar, &CellField::constant(&m, 0.0, 0.0)).unwrap();
        for (c, x) in m.cells().iter().zip(&v.values) {
            assert!((x - c.center[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_needs_contact() {
        let m = Mesh::interval(4, 0.0, 1.0).unwrap();
        let r = solve_poisson(&m, &[0.0; 5], &CellField::constant(&m, 0.0, 0.0));
        assert!(matches!(r, Err(Error::InvalidConfiguration(_))));
    }

    #[test]
    fn poisson_second_order() {
        // V = x², ΔV = 2.
        let err = |n: usize| {
            let m = tagged_interval(n);
            let vbar = DdBoundary::from_fn(&m, |x| (1.0, 1.0, x[0] * x[0])).v;
            let v = solve_poisson(&m, &vbar, &CellField::constant(&m, 2.0, 0.0)).unwrap();
            m.cells().iter().zip(&v.values).fold(0.0_f64, |e, (c, x)| e.max((x - c.center[0].powi(2)).abs()))
        };
        let (e1, e2) = (err(20), err(40));
        assert!(e1 < 1e-3);
        assert!((e1 / e2).log2() > 1.8 || e2 < 1e-13, "{e1} {e2}");
    }

    #[test]
    fn equilibrium_neutral() {
        let m = Mesh::cartesian(4, 4, Rect::square(0.0, 1.0)).unwrap();
        let mut m = m;
        m.tag_boundary(|s, _| if s == Side::Bottom { BoundaryTag::Dirichlet } else { BoundaryTag::Neumann });
        let law = PressureLaw::new(5.0 / 3.0).unwrap();
        let b = DdBoundary::from_fn(&m, |_| (0.5, 0.5, 0.0));
        let eq = thermal_equilibrium(&m, &b, &DopingProfile::zero(&m), &law).unwrap();
        assert!(eq.v.values.iter().all(|v| v.abs() < 1e-12));
        assert!(eq.n.values.iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(eq.p.values.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn equilibrium_rejects_unbalanced_contacts() {
        let m = tagged_interval(5);
        let law = PressureLaw::linear();
        let b = DdBoundary::from_fn(&m, |x| if x[0] < 0.5 { (0.9, 0.1, 0.0) } else { (0.1, 0.9, 0.0) });
        assert!(matches!(
            thermal_equilibrium(&m, &b, &DopingProfile::zero(&m), &law),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn pn_equilibrium_relations() {
        let pb = pn_junction_case(12, 12, 5.0 / 3.0).unwrap();
        let law = pb.law;
        let (an, ap) = pb.boundary.equilibrium_constants(&pb.mesh, &law).unwrap();
        let expected = 0.5 * (law.h(0.1) + law.h(0.9));
        assert!((an - expected).abs() < 1e-14 && (ap - expected).abs() < 1e-14);
        let eq = pb.thermal_equilibrium().unwrap();
        assert!(*eq.residual_history.last().unwrap() <= 1e-10);
        for k in 0..pb.mesh.n_cells() {
            let (n, p, v) = (eq.n.values[k], eq.p.values[k], eq.v.values[k]);
            if n > 0.0 {
                assert!((law.h(n) - v - an).abs() < 1e-10);
            }
            if p > 0.0 {
                assert!((law.h(p) + v - ap).abs() < 1e-10);
            }
        }
        let e = discrete_energy(&pb.mesh, &eq.as_state(), &eq, &law);
        assert!(e.abs() < 1e-14);
    }

    #[test]
    fn energy_single_cell() {
        let m = tagged_interval(1);
        let law = PressureLaw::linear();
        let eq = EquilibriumState {
            n: CellField::new(vec![1.0], 0.0),
            p: CellField::new(vec![0.7], 0.0),
            v: CellField::new(vec![0.2], 0.0),
            alpha_n: 0.0,
            alpha_p: 0.0,
            residual_history: vec![],
        };
        let mut st = eq.as_state();
        st.n.values[0] = 2.0;
        let e = discrete_energy(&m, &st, &eq, &law);
        assert!((e - (2.0 * 2f64.ln() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn dissipation_two_cells() {
        let m = Mesh::interval(2, 0.0, 1.0).unwrap();
        // Interior τ = 2 on (0,1); scale to τ = 1 by halving the result.
        let law = PressureLaw::linear();
        let b = DdBoundary::from_fn(&m, |_| (1.0, 1.0, 0.0));
        let n = CellField::new(vec![1.0, 1f64.exp()], 0.0);
        let p = CellField::new(vec![0.4, 0.4], 0.0);
        let v = CellField::new(vec![0.0, 0.0], 0.0);
        let i = discrete_dissipation(&m, &n, &p, &v, &b, &law);
        assert!((i / 2.0 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn equilibrium_is_fixed_point_sg_ext() {
        let pb = pn_junction_case(8, 8, 5.0 / 3.0).unwrap();
        let eq = pb.thermal_equilibrium().unwrap();
        let mut s = DdSolver::new(pb, FluxKind::SgExtLogMean, 0.01).unwrap();
        let s0 = eq.as_state();
        let mut st = s0.clone();
        for _ in 0..5 {
            st = s.step(&st).unwrap().0;
        }
        assert!(st.max_relative_change(&s0) < 1e-10, "{}", st.max_relative_change(&s0));
    }

    #[test]
    fn neutral_state_constant() {
        let mut m = Mesh::cartesian(3, 3, Rect::square(0.0, 1.0)).unwrap();
        m.tag_boundary(|s, _| if s == Side::Left { BoundaryTag::Dirichlet } else { BoundaryTag::Neumann });
        let law = PressureLaw::new(2.0).unwrap();
        let pb = DdProblem {
            boundary: DdBoundary::from_fn(&m, |_| (0.4, 0.4, 0.0)),
            doping: DopingProfile::zero(&m),
            n0: CellField::constant(&m, 0.4, 0.0),
            p0: CellField::constant(&m, 0.4, 0.0),
            mesh: m,
            law,
        };
        let s0 = pb.initial_state().unwrap();
        assert!(s0.v.values.iter().all(|v| v.abs() < 1e-14));
        let mut s = DdSolver::new(pb, FluxKind::ClassicalUpwind, 0.1).unwrap();
        let (s1, _) = s.step(&s0).unwrap();
        assert!(s1.max_relative_change(&s0) < 1e-13);
    }

    #[test]
    fn step_decreases_energy() {
        let pb = pn_junction_case(8, 8, 5.0 / 3.0).unwrap();
        let eq = pb.thermal_equilibrium().unwrap();
        let law = pb.law;
        let mesh = pb.mesh.clone();
        let mut st = eq.as_state();
        for k in 0..mesh.n_cells() {
            st.n.values[k] *= 1.0 + 0.2 * (k as f64).sin();
        }
        let pb2 = DdProblem { n0: st.n.clone(), p0: st.p.clone(), ..pb };
        let st = pb2.initial_state().unwrap();
        let mut s = DdSolver::new(pb2, FluxKind::SgExtLogMean, 0.01).unwrap();
        let e0 = discrete_energy(&mesh, &st, &eq, &law);
        let (s1, rep) = s.step(&st).unwrap();
        let e1 = discrete_energy(&mesh, &s1, &eq, &law);
        assert!(e1 < e0 && rep.dissipation > 0.0, "{e0} {e1}");
    }

    #[test]
    fn time_step_bound_enforced() {
        let pb = pn_junction_1d(10, 1.0).unwrap();
        let st = pb.initial_state().unwrap();
        let mut s = DdSolver::new(pb, FluxKind::SgClassic, 2.0).unwrap();
        assert!(matches!(s.step(&st), Err(Error::InvalidConfiguration(_))));
    }
}
