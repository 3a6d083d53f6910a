//! Reference problems and the convergence harness.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::drift_diffusion::{pn_junction_1d, DdSolver};
use crate::error::{invalid_arg, Result};
use crate::field::{CellField, DiagnosticSeries};
use crate::flux::{FluxKind, FluxModel};
use crate::mesh::{fmt_f64, Mesh, Point};
use crate::nonlinearity::PressureLaw;
use crate::scalar_solver::{BoundarySpec, ProblemSpec, ScalarSolver};

/// Parameters of the moving-front test: Ω = (0,1), r(s) = s², constant
/// velocity q and front speed v.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrontCase {
    pub q: f64,
    pub v: f64,
    pub t_end: f64,
}

impl Default for FrontCase {
    fn default() -> Self {
        FrontCase { q: 100.0, v: 200.0, t_end: 0.004 }
    }
}

impl FrontCase {
    /// u(x,t) = (v-q)(vt-x)/2 for x < vt, 0 beyond the front.
    pub fn exact(&self, x: f64, t: f64) -> f64 {
        if x < self.v * t {
            0.5 * (self.v - self.q) * (self.v * t - x)
        } else {
            0.0
        }
    }

    /// ū on {0, 1}: the exact solution at the left end; at the right end 0
    /// before the front arrives at t = 1/v.
    pub fn boundary(&self, x: f64, t: f64) -> f64 {
        if x < 0.5 {
            0.5 * (self.v - self.q) * self.v * t
        } else if t < 1.0 / self.v {
            0.0
        } else {
            0.5 * (self.v - self.q) * (self.v * t - 1.0)
        }
    }

    /// Problem on a uniform mesh of `n_cells` cells.
    pub fn spec(&self, kind: FluxKind, n_cells: usize, dt: f64) -> Result<ProblemSpec> {
        let law = PressureLaw::new(2.0)?;
        let flux = FluxModel::new(kind, law)?;
        let mesh = Mesh::interval(n_cells, 0.0, 1.0)?;
        let case = *self;
        let q = self.q;
        Ok(ProblemSpec::new(mesh, flux, self.t_end, dt)
            .velocity(move |_| [q, 0.0])
            .boundary(BoundarySpec::dirichlet(Arc::new(move |x: Point, t| case.boundary(x[0], t)))))
    }
}

/// Mesh size of level j: Δx = 0.1 / 2^{j+2}.
pub fn level_dx(level: usize) -> f64 {
    0.1 / f64::from(1u32 << (level + 2))
}

/// Number of cells of level j on (0,1).
pub fn level_cells(level: usize) -> usize {
    40 << level
}

/// (max_K |U_K - u(x_K)|, sqrt(Σ m(K) (U_K - u(x_K))²)).
pub fn error_norms(u: &CellField, exact: &dyn Fn(Point) -> f64, mesh: &Mesh) -> (f64, f64) {
    let mut e_inf = 0.0_f64;
    let mut e_l2 = 0.0;
    for (c, v) in mesh.cells().iter().zip(&u.values) {
        let d = v - exact(c.center);
        e_inf = e_inf.max(d.abs());
        e_l2 += c.measure * d * d;
    }
    (e_inf, e_l2.sqrt())
}

/// log₂(e_prev / e).
pub fn order(e_prev: f64, e: f64) -> f64 {
    (e_prev / e).log2()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    pub dx: f64,
    pub err_inf: f64,
    pub order_inf: Option<f64>,
    pub err_l2: f64,
    pub order_l2: Option<f64>,
    pub flux: FluxKind,
    pub runtime: Duration,
}

/// Final-time errors of one level.
pub fn run_level(case: &FrontCase, kind: FluxKind, level: usize, dt: f64) -> Result<ConvergenceRow> {
    let start = Instant::now();
    let mut solver = ScalarSolver::new(case.spec(kind, level_cells(level), dt)?)?;
    let out = solver.run(&mut [])?;
    let t = out.state.time;
    let (err_inf, err_l2) = error_norms(&out.state, &|p| case.exact(p[0], t), solver.mesh());
    Ok(ConvergenceRow {
        level,
        dx: level_dx(level),
        err_inf,
        order_inf: None,
        err_l2,
        order_l2: None,
        flux: kind,
        runtime: start.elapsed(),
    })
}

/// Runs levels `0..=max_level` (concurrently) and fills in the orders.
pub fn convergence_study(case: &FrontCase, kind: FluxKind, max_level: usize, dt: f64) -> Result<Vec<ConvergenceRow>> {
    if max_level > 5 {
        return invalid_arg(format!("at most 6 levels are supported, got max level {max_level}"));
    }
    let results: Vec<Result<ConvergenceRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..=max_level).map(|j| s.spawn(move || run_level(case, kind, j, dt))).collect();
        handles.into_iter().map(|h| h.join().expect("level thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }
    fill_orders(&mut rows);
    Ok(rows)
}

pub fn fill_orders(rows: &mut [ConvergenceRow]) {
    for j in 1..rows.len() {
        rows[j].order_inf = Some(order(rows[j - 1].err_inf, rows[j].err_inf));
        rows[j].order_l2 = Some(order(rows[j - 1].err_l2, rows[j].err_l2));
    }
}

/// CSV `j,dx,err_inf,order_inf,err_l2,order_l2`; orders are empty on level 0.
pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["j", "dx", "err_inf", "order_inf", "err_l2", "order_l2"])?;
    let opt = |o: Option<f64>| o.map(fmt_f64).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.level.to_string(),
            fmt_f64(r.dx),
            fmt_f64(r.err_inf),
            opt(r.order_inf),
            fmt_f64(r.err_l2),
            opt(r.order_l2),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Energy/dissipation series of the 1-D PN junction for each flux, all
/// runs starting from the same initial state.
pub fn dd_comparison(
    n_cells: usize,
    gamma: f64,
    dt: f64,
    t_end: f64,
    kinds: &[FluxKind],
) -> Result<Vec<(FluxKind, DiagnosticSeries)>> {
    let problem = pn_junction_1d(n_cells, gamma)?;
    let eq = problem.thermal_equilibrium()?;
    let start = problem.initial_state()?;
    kinds
        .iter()
        .map(|&kind| {
            let mut solver = DdSolver::new(problem.clone(), kind, dt)?;
            let (_, series) = solver.run(start.clone(), &eq, t_end, 1)?;
            Ok((kind, series))
        })
        .collect()
}

/// r(s) = s, Δx = Δt = 1e-2: classical upwind against classical SG.
pub fn linear_case_comparison(t_end: f64) -> Result<Vec<(FluxKind, DiagnosticSeries)>> {
    dd_comparison(100, 1.0, 1e-2, t_end, &[FluxKind::ClassicalUpwind, FluxKind::SgClassic])
}

/// r(s) = s², Δx = 1e-2, Δt = 5e-4: classical upwind, nonlinear upwind and SG-ext.
pub fn nonlinear_case_comparison(t_end: f64) -> Result<Vec<(FluxKind, DiagnosticSeries)>> {
    dd_comparison(
        100,
        2.0,
        5e-4,
        t_end,
        &[FluxKind::ClassicalUpwind, FluxKind::NonlinearUpwind, FluxKind::SgExtLogMean],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_solution_values() {
        let c = FrontCase::default();
        assert!((c.exact(0.5, 0.004) - 15.0).abs() < 1e-12);
        assert_eq!(c.exact(0.8, 0.004), 0.0);
        assert_eq!(c.exact(0.9, 0.004), 0.0);
        assert_eq!(c.boundary(1.0, 0.004), 0.0);
        assert!((c.boundary(0.0, 0.004) - 40.0).abs() < 1e-12);
        assert!((c.boundary(0.0, 0.002) - c.exact(0.0, 0.002)).abs() < 1e-12);
    }

    #[test]
    fn levels() {
        assert!((level_dx(0) - 0.025).abs() < 1e-15);
        assert_eq!(level_cells(3), 320);
        assert!((1.0 / level_cells(2) as f64 - level_dx(2)).abs() < 1e-15);
    }

    #[test]
    fn norms_by_hand() {
        let mesh = Mesh::interval(2, 0.0, 1.0).unwrap();
        let u = CellField::new(vec![1.0, 0.0], 0.0);
        let (ei, e2) = error_norms(&u, &|_| 0.0, &mesh);
        assert_eq!(ei, 1.0);
        assert!((e2 - 0.5_f64.sqrt()).abs() < 1e-15);
        let (ei, e2) = error_norms(&u, &|p| if p[0] < 0.5 { 1.0 } else { 0.0 }, &mesh);
        assert_eq!((ei, e2), (0.0, 0.0));
    }

    #[test]
    fn order_formula() {
        assert_eq!(order(4.0, 1.0), 2.0);
        let mut rows: Vec<ConvergenceRow> = [4.0, 1.0]
            .iter()
            .enumerate()
            .map(|(j, e)| ConvergenceRow {
                level: j,
                dx: level_dx(j),
                err_inf: *e,
                order_inf: None,
                err_l2: *e,
                order_l2: None,
                flux: FluxKind::SgExtLogMean,
                runtime: Duration::ZERO,
            })
            .collect();
        fill_orders(&mut rows);
        assert_eq!(rows[1].order_inf, Some(2.0));
        let mut buf = Vec::new();
        write_convergence_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "j,dx,err_inf,order_inf,err_l2,order_l2");
        assert!(lines[1].contains(",,"));
        assert!(lines[2].starts_with("1,1.25"));
    }

    #[test]
    fn coarse_run_is_close_to_front() {
        // Short horizon with a large step: a smoke test of the whole path.
        let case = FrontCase { t_end: 0.002, ..FrontCase::default() };
        let row = run_level(&case, FluxKind::SgExtLogMean, 0, 1e-5).unwrap();
        assert!(row.err_inf < 2.0, "{row:?}");
    }

    fn energy(series: &DiagnosticSeries) -> Vec<f64> {
        series.column("energy").unwrap().to_vec()
    }

    #[test]
    fn linear_comparison_saturation_versus_decay() {
        let runs = linear_case_comparison(4.0).unwrap();
        let (up, sg) = (energy(&runs[0].1), energy(&runs[1].1));
        assert_eq!(up[0], sg[0]);
        let (up_end, sg_end) = (up[up.len() - 1], sg[sg.len() - 1]);
        eprintln!("linear: E0 {:e} upwind {up_end:e} sg {sg_end:e}", up[0]);
        assert!(sg_end < 1e-6 * sg[0]);
        // Upwind levels off: the last quarter barely moves.
        let q = up[3 * up.len() / 4];
        assert!(up_end > 0.9 * q && up_end > 1e3 * sg_end);
    }

    #[test]
    fn nonlinear_comparison_saturation_versus_decay() {
        let runs = nonlinear_case_comparison(2.0).unwrap();
        let e: Vec<Vec<f64>> = runs.iter().map(|(_, s)| energy(s)).collect();
        let last = |v: &Vec<f64>| v[v.len() - 1];
        eprintln!("nonlinear: E0 {:e} upwind {:e} nl-upwind {:e} sg-ext {:e}", e[0][0], last(&e[0]), last(&e[1]), last(&e[2]));
        assert!(e.iter().all(|v| v[0] == e[0][0]));
        let q = e[0][3 * e[0].len() / 4];
        assert!(last(&e[0]) > 0.9 * q);
        assert!(last(&e[1]) < 1e-3 * last(&e[0]));
        assert!(last(&e[2]) < 1e-3 * last(&e[0]));
    }
}
