//! Fixtures shared by the benchmarks.

use sgflux_core::drift_diffusion::{pn_junction_case, DdSolver, DdState};
use sgflux_core::experiments::{level_cells, FrontCase};
use sgflux_core::porous_media::pm_case;
use sgflux_core::{CellField, FluxKind, ScalarSolver};

/// Porous-media solver on an `nx` × `nx` grid and its initial state.
pub fn pm_fixture(nx: usize, kind: FluxKind) -> (ScalarSolver, CellField) {
    let solver = ScalarSolver::new(pm_case(nx, 3.0, kind, 5e-4, 1.0).expect("valid case")).expect("valid spec");
    let u0 = solver.discretize_initial();
    (solver, u0)
}

/// Moving-front solver at `level` with a state taken after `warmup` steps,
/// so that the front lies inside the domain.
pub fn front_fixture(level: usize, kind: FluxKind, warmup: usize) -> (ScalarSolver, CellField) {
    let case = FrontCase::default();
    let mut solver = ScalarSolver::new(case.spec(kind, level_cells(level), 1e-6).expect("valid case")).expect("valid spec");
    let mut u = solver.discretize_initial();
    for n in 0..warmup {
        u = solver.step(&u, n).expect("warm-up step").0;
    }
    (solver, u)
}

/// Drift-diffusion solver on the PN junction and its initial state.
pub fn dd_fixture(nx: usize, kind: FluxKind) -> (DdSolver, DdState) {
    let problem = pn_junction_case(nx, nx, 5.0 / 3.0).expect("valid case");
    let state = problem.initial_state().expect("initial state");
    (DdSolver::new(problem, kind, 0.01).expect("valid solver"), state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build_and_step() {
        let (mut s, u) = pm_fixture(8, FluxKind::SgExtLogMean);
        assert_eq!(u.len(), 64);
        assert!(s.step(&u, 0).is_ok());
        let (_, u) = front_fixture(0, FluxKind::ClassicalUpwind, 3);
        assert!(u.max() > 0.0);
        let (mut d, st) = dd_fixture(4, FluxKind::SgExtLogMean);
        assert!(d.step(&st).is_ok());
    }
}
