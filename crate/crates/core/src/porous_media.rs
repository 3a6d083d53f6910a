//! Porous-medium equation in Fokker-Planck form, ∂_t u = div(x u + ∇u^γ),
//! i.e. velocity q(x) = -x and pressure r(s) = s^γ, and its Barenblatt
//! steady state (C₁ - (γ-1)/(2γ) |x|²)₊^{1/(γ-1)}.

use std::io::Write;

use log::warn;

use crate::error::{invalid_arg, Result};
use crate::field::{CellField, DiagnosticSeries};
use crate::flux::{FluxKind, FluxModel};
use crate::mesh::{dot, Mesh, Periodicity, Point, Rect};
use crate::nonlinearity::PressureLaw;
use crate::scalar_solver::{Observer, ProblemSpec, ScalarSolver};

const MASS_TOLERANCE: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarenblattProfile {
    gamma: f64,
    c1: f64,
}

impl BarenblattProfile {
    pub fn new(gamma: f64, c1: f64) -> Result<Self> {
        if !(gamma > 1.0 && gamma.is_finite()) {
            return invalid_arg(format!("the Barenblatt profile needs gamma > 1, got {gamma}"));
        }
        if !(c1 >= 0.0 && c1.is_finite()) {
            return invalid_arg(format!("C1 must be nonnegative, got {c1}"));
        }
        Ok(BarenblattProfile { gamma, c1 })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn eval(&self, x: Point) -> f64 {
        let g = self.gamma;
        let base = self.c1 - (g - 1.0) / (2.0 * g) * dot(x, x);
        if base <= 0.0 {
            0.0
        } else {
            base.powf(1.0 / (g - 1.0))
        }
    }

    /// √(2γ C₁ / (γ-1)).
    pub fn support_radius(&self) -> f64 {
        (2.0 * self.gamma * self.c1 / (self.gamma - 1.0)).sqrt()
    }
}

/// Barenblatt profile evaluated at cell centers.
pub fn barenblatt_cell_values(mesh: &Mesh, gamma: f64, c1: f64) -> Result<CellField> {
    let b = BarenblattProfile::new(gamma, c1)?;
    Ok(CellField::new(mesh.cells().iter().map(|c| b.eval(c.center)).collect(), 0.0))
}

fn profile_mass(mesh: &Mesh, b: &BarenblattProfile) -> f64 {
    mesh.cells().iter().map(|c| c.measure * b.eval(c.center)).sum()
}

/// Distance from the origin to the nearest side of the domain.
fn inner_radius(mesh: &Mesh) -> f64 {
    let d = mesh.domain();
    let mut r = (-d.x0).min(d.x1);
    if mesh.dim() == 2 {
        r = r.min((-d.y0).min(d.y1));
    }
    r
}

/// C̃₁ such that the discrete mass of the projected profile equals
/// `target`, by bisection. Fails when the required support leaves the domain.
pub fn match_mass(mesh: &Mesh, gamma: f64, target: f64) -> Result<f64> {
    if !(target >= 0.0 && target.is_finite()) {
        return invalid_arg(format!("target mass must be nonnegative, got {target}"));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    BarenblattProfile::new(gamma, 0.0)?;
    let radius = inner_radius(mesh);
    if radius <= 0.0 {
        return invalid_arg("the domain must contain the origin");
    }
    let c1_cap = radius * radius * (gamma - 1.0) / (2.0 * gamma);
    let mass = |c1: f64| profile_mass(mesh, &BarenblattProfile { gamma, c1 });
    let (mut lo, mut hi) = (0.0, 1.0_f64.min(c1_cap));
    while mass(hi) < target {
        if hi >= c1_cap {
            return invalid_arg(format!(
                "mass {target} does not fit: the Barenblatt support would leave the domain (C1 cap {c1_cap})"
            ));
        }
        lo = hi;
        hi = (2.0 * hi).min(c1_cap);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mass(mid);
        if ((m - target) / target).abs() <= MASS_TOLERANCE || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two smooth bumps exp(-1/(6 - |x - c|²)) centred at (2,-2) and (-2,2).
pub fn two_bumps(x: Point) -> f64 {
    let bump = |c: Point| {
        let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
        if r2 < 6.0 {
            (-1.0 / (6.0 - r2)).exp()
        } else {
            0.0
        }
    };
    bump([2.0, -2.0]) + bump([-2.0, 2.0])
}

/// Periodic square (-10,10)², q = -x, r(s) = s^γ, two-bump initial datum.
pub fn pm_case(nx: usize, gamma: f64, kind: FluxKind, dt: f64, t_end: f64) -> Result<ProblemSpec> {
    let law = PressureLaw::new(gamma)?;
    let flux = FluxModel::new(kind, law)?;
    let mesh = Mesh::cartesian_periodic(nx, nx, Rect::square(-10.0, 10.0), Periodicity::ALL)?;
    Ok(ProblemSpec::new(mesh, flux, t_end, dt).velocity(|x| [-x[0], -x[1]]).initial(two_bumps))
}

/// Σ m(K) (H(U_K) - H(U_K^eq) + |x_K|²/2 (U_K - U_K^eq)).
pub fn discrete_entropy(u: &CellField, ueq: &CellField, mesh: &Mesh, law: &PressureLaw) -> f64 {
    mesh.cells()
        .iter()
        .zip(u.values.iter().zip(&ueq.values))
        .map(|(c, (a, b))| c.measure * (law.big_h(*a) - law.big_h(*b) + 0.5 * dot(c.center, c.center) * (a - b)))
        .sum()
}

/// Σ τ min(U_K, U_L) |D(h(U) + |x|²/2)|² over coupling edges, with |x|² at
/// cell centers and zero contribution where the minimum vanishes.
pub fn discrete_entropy_dissipation(u: &CellField, mesh: &Mesh, law: &PressureLaw) -> f64 {
    let u = &u.values;
    let mut total = 0.0;
    for e in mesh.edges() {
        let Some(l) = e.neighbor else { continue };
        let k = e.owner;
        let m = u[k].min(u[l]);
        if m <= 0.0 {
            continue;
        }
        let (xk, xl) = (mesh.cell(k).center, mesh.cell(l).center);
        let d = law.h(u[l]) - law.h(u[k]) + 0.5 * (dot(xl, xl) - dot(xk, xk));
        total += e.transmissibility * m * d * d;
    }
    total
}

/// Σ m(K) |U_K - V_K|.
pub fn l1_distance(u: &CellField, v: &CellField, mesh: &Mesh) -> f64 {
    mesh.cells().iter().zip(u.values.iter().zip(&v.values)).map(|(c, (a, b))| c.measure * (a - b).abs()).sum()
}

/// True if a cell touching a periodic edge carries mass.
pub fn support_touches_periodic_edge(u: &CellField, mesh: &Mesh) -> bool {
    mesh.edges()
        .iter()
        .filter(|e| e.kind == crate::mesh::EdgeKind::Periodic)
        .any(|e| u.values[e.owner] > 0.0 || e.neighbor.is_some_and(|l| u.values[l] > 0.0))
}

/// Records `entropy,dissipation,l1_distance,mass` every `stride` steps and
/// keeps snapshots at the requested times.
pub struct PmObserver {
    pub equilibrium: CellField,
    pub stride: usize,
    pub series: DiagnosticSeries,
    pub snapshot_times: Vec<f64>,
    pub snapshots: Vec<CellField>,
    warned: bool,
}

impl PmObserver {
    pub fn new(equilibrium: CellField, stride: usize, snapshot_times: Vec<f64>) -> Self {
        PmObserver {
            equilibrium,
            stride: stride.max(1),
            series: DiagnosticSeries::new(["entropy", "dissipation", "l1_distance", "mass"]),
            snapshot_times,
            snapshots: Vec::new(),
            warned: false,
        }
    }

    pub fn write_snapshots<W: Write>(&self, mesh: &Mesh, mut out: impl FnMut(usize) -> Result<W>) -> Result<()> {
        for (i, s) in self.snapshots.iter().enumerate() {
            s.write_snapshot(mesh, out(i)?)?;
        }
        Ok(())
    }
}

impl Observer for PmObserver {
    fn observe(&mut self, solver: &ScalarSolver, step: usize, state: &CellField) -> Result<()> {
        let mesh = solver.mesh();
        let dt = solver.spec().dt;
        let last = step == solver.n_steps();
        if step % self.stride == 0 || last {
            let law = solver.spec().flux.law();
            self.series.push(
                step,
                state.time,
                vec![
                    discrete_entropy(state, &self.equilibrium, mesh, law),
                    discrete_entropy_dissipation(state, mesh, law),
                    l1_distance(state, &self.equilibrium, mesh),
                    state.mass(mesh),
                ],
            );
            if !self.warned && support_touches_periodic_edge(state, mesh) {
                warn!("density reaches a periodic edge at t = {}; velocities there are not wrapped", state.time);
                self.warned = true;
            }
        }
        if self.snapshot_times.iter().any(|t| (state.time - t).abs() < 0.5 * dt) {
            self.snapshots.push(state.clone());
        }
        Ok(())
    }
}
