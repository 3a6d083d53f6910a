use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use sgflux_core::drift_diffusion::{pn_junction_1d, pn_junction_case, DdProblem, DdSolver};
use sgflux_core::experiments::{error_norms, fill_orders, level_cells, level_dx, run_level, write_convergence_csv};
use sgflux_core::mesh::fmt_f64;
use sgflux_core::porous_media::{barenblatt_cell_values, match_mass, pm_case, PmObserver};
use sgflux_core::{FluxKind, ScalarSolver};

use crate::config::{DdConfig, RunConfig};
use crate::error::CliError;

/// Output directory with file creation that reports the offending path.
pub struct Output {
    dir: PathBuf,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
        Ok(Output { dir: dir.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        println!("{}", path.display());
        Ok(BufWriter::new(f))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let mut w = self.file(name)?;
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|source| CliError::Io { path: self.dir.join(name).display().to_string(), source })
    }
}

fn write_csv_rows(out: &Output, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out.file(name)?);
    let io = |e: csv::Error| CliError::Core(e.into());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|source| CliError::Io { path: name.to_string(), source })
}

/// Single front-case run at one level: final state, thinned per-step
/// diagnostics and the final-time errors.
pub fn run(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    cfg.front.validate()?;
    let kind = cfg.run.validate()?;
    let case = cfg.front.case();
    let level = cfg.run.level;
    let mut solver = ScalarSolver::new(case.spec(kind, level_cells(level), cfg.run.dt)?)?;
    let outcome = solver.run(&mut [])?;
    let mesh = solver.mesh();
    let t = outcome.state.time;
    let (e_inf, e_l2) = error_norms(&outcome.state, &|p| case.exact(p[0], t), mesh);
    outcome.state.write_snapshot(mesh, out.file(&format!("run_{kind}_state.csv"))?)?;
    outcome.series.thinned(cfg.run.stride).write_csv(out.file(&format!("run_{kind}_diagnostics.csv"))?)?;
    write_csv_rows(
        out,
        &format!("run_{kind}_errors.csv"),
        &["j", "dx", "err_inf", "err_l2"],
        &[vec![level.to_string(), fmt_f64(level_dx(level)), fmt_f64(e_inf), fmt_f64(e_l2)]],
    )?;
    info!("{kind} level {level}: err_inf {e_inf:e}, err_l2 {e_l2:e}");
    Ok(())
}

/// Convergence table per flux. Levels run concurrently; on a failure the
/// rows of the levels before it are still written.
pub fn converge(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    cfg.front.validate()?;
    let kinds = cfg.converge.validate()?;
    let case = cfg.front.case();
    let dt = cfg.converge.dt;
    let levels = cfg.converge.levels;
    for kind in kinds {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..levels).map(|j| s.spawn(move || run_level(&case, kind, j, dt))).collect();
            handles.into_iter().map(|h| h.join().expect("level thread panicked")).collect()
        });
        let mut rows = Vec::new();
        let mut failure = None;
        for r in results {
            match r {
                Ok(row) if failure.is_none() => rows.push(row),
                Ok(_) => {}
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        fill_orders(&mut rows);
        write_convergence_csv(&rows, out.file(&format!("convergence_{kind}.csv"))?)?;
        for r in &rows {
            info!("{kind} j={} err_inf {:e} err_l2 {:e} ({:?})", r.level, r.err_inf, r.err_l2, r.runtime);
        }
        if let Some(e) = failure {
            return Err(e.into());
        }
    }
    Ok(())
}

fn dd_problem(cfg: &DdConfig) -> Result<DdProblem, CliError> {
    cfg.validate_geometry()?;
    Ok(match cfg.geometry.as_str() {
        "pn_1d" => pn_junction_1d(cfg.nx, cfg.gamma)?,
        _ => pn_junction_case(cfg.nx, cfg.ny, cfg.gamma)?,
    })
}

/// Drift-diffusion decay runs: one diagnostics file and final state per flux,
/// all from the same initial state.
pub fn dd(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let kinds = cfg.dd.validate()?;
    let problem = dd_problem(&cfg.dd)?;
    let eq = problem.thermal_equilibrium()?;
    let start = problem.initial_state()?;
    let mut done: Vec<FluxKind> = Vec::new();
    for kind in kinds {
        if done.contains(&kind) {
            continue;
        }
        done.push(kind);
        let mut solver = DdSolver::new(problem.clone(), kind, cfg.dd.dt)?;
        let (state, series) = solver.run(start.clone(), &eq, cfg.dd.t_end, cfg.dd.stride)?;
        let mesh = &problem.mesh;
        series.write_csv(out.file(&format!("dd_{kind}_diagnostics.csv"))?)?;
        state.n.write_snapshot(mesh, out.file(&format!("dd_{kind}_n.csv"))?)?;
        state.p.write_snapshot(mesh, out.file(&format!("dd_{kind}_p.csv"))?)?;
        state.v.write_snapshot(mesh, out.file(&format!("dd_{kind}_v.csv"))?)?;
        if let (Some(e0), Some(en)) = (series.column("energy").and_then(|c| c.first().copied()), series.last("energy")) {
            info!("{kind}: E^0 = {e0:e}, E^N = {en:e}, ratio {:e}", en / e0);
        }
    }
    Ok(())
}

/// Thermal equilibrium of the drift-diffusion geometry.
pub fn equilibrium(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let problem = dd_problem(&cfg.dd)?;
    let eq = problem.thermal_equilibrium()?;
    let mesh = &problem.mesh;
    eq.n.write_snapshot(mesh, out.file("equilibrium_n.csv")?)?;
    eq.p.write_snapshot(mesh, out.file("equilibrium_p.csv")?)?;
    eq.v.write_snapshot(mesh, out.file("equilibrium_v.csv")?)?;
    let residual = eq.residual_history.last().copied().unwrap_or(f64::NAN);
    write_csv_rows(
        out,
        "equilibrium_summary.csv",
        &["alpha_n", "alpha_p", "newton_iterations", "residual"],
        &[vec![
            fmt_f64(eq.alpha_n),
            fmt_f64(eq.alpha_p),
            eq.residual_history.len().saturating_sub(1).to_string(),
            fmt_f64(residual),
        ]],
    )
}

/// Porous-media run towards the Barenblatt equilibrium of equal mass.
pub fn pm(cfg: &RunConfig, out: &Output) -> Result<(), CliError> {
    let kind = cfg.pm.validate()?;
    let gamma = cfg.pm.gamma;
    let mut solver = ScalarSolver::new(pm_case(cfg.pm.nx, gamma, kind, cfg.pm.dt, cfg.pm.t_end)?)?;
    let mass0 = solver.discretize_initial().mass(solver.mesh());
    let c1 = match_mass(solver.mesh(), gamma, mass0)?;
    let ueq = barenblatt_cell_values(solver.mesh(), gamma, c1)?;
    let mut obs = PmObserver::new(ueq, cfg.pm.stride, cfg.pm.snapshot_times.clone());
    solver.run(&mut [&mut obs])?;
    let mesh = solver.mesh();
    obs.series.write_csv(out.file(&format!("pm_{kind}_diagnostics.csv"))?)?;
    obs.equilibrium.write_snapshot(mesh, out.file("pm_equilibrium.csv")?)?;
    for (i, snap) in obs.snapshots.iter().enumerate() {
        snap.write_snapshot(mesh, out.file(&format!("pm_{kind}_snapshot_{i}.csv"))?)?;
    }
    if obs.snapshots.len() < cfg.pm.snapshot_times.len() {
        log::warn!(
            "{} of {} snapshot times fall outside the run or between steps",
            cfg.pm.snapshot_times.len() - obs.snapshots.len(),
            cfg.pm.snapshot_times.len()
        );
    }
    Ok(())
}
