use std::path::Path;
use std::process::{Command, Output};

fn sgflux(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgflux")).args(args).output().expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn converge_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = sgflux(&["converge", "--flux", "sg_ext", "--levels", "2", "--dt", "2e-5", "--out", out]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = read(&dir.path().join("convergence_sg_ext.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "j,dx,err_inf,order_inf,err_l2,order_l2");
    assert_eq!(lines.len(), 3);
    let row1: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row1[0], "0");
    assert_eq!(row1[3], "");
    assert_eq!(row1[1].parse::<f64>().unwrap(), 0.025);
    assert!(lines[2].split(',').nth(3).unwrap().parse::<f64>().unwrap() > 0.0);
}

#[test]
fn converge_is_deterministic_and_config_reproduces_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["converge", "--levels", "2", "--dt", "4e-5", "--override", "converge.fluxes=[\"upwind\"]"];
    let r = sgflux(&[&args[..], &["--out", a.path().to_str().unwrap()]].concat());
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let resolved = a.path().join("resolved_config.toml");
    let r = sgflux(&[
        "converge",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        b.path().to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(0));
    assert_eq!(read(&a.path().join("convergence_upwind.csv")), read(&b.path().join("convergence_upwind.csv")));
}

#[test]
fn pm_reduced_case() {
    let dir = tempfile::tempdir().unwrap();
    let r = sgflux(&[
        "pm",
        "--out",
        dir.path().to_str().unwrap(),
        "--override",
        "pm.nx=16",
        "pm.t_end=0.05",
        "pm.dt=1e-2",
        "pm.stride=1",
        "pm.snapshot_times=[0.0, 0.05]",
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let diag = read(&dir.path().join("pm_sg_ext_diagnostics.csv"));
    assert!(diag.starts_with("step,time,entropy,dissipation,l1_distance,mass\n"));
    assert_eq!(diag.lines().count(), 1 + 6);
    let snap = read(&dir.path().join("pm_sg_ext_snapshot_1.csv"));
    assert!(snap.starts_with("# t="));
    assert_eq!(snap.lines().nth(1), Some("cell_id,x,y,value"));
    assert_eq!(snap.lines().count(), 2 + 256);
    assert!(dir.path().join("pm_equilibrium.csv").exists());
}

#[test]
fn dd_with_comparison_and_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let r = sgflux(&[
        "dd", "--out", out, "--dt", "0.01", "--override", "dd.geometry=pn_1d", "dd.nx=20", "dd.t_end=0.1",
        "dd.compare=[\"upwind\"]",
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for flux in ["sg_ext", "upwind"] {
        let d = read(&dir.path().join(format!("dd_{flux}_diagnostics.csv")));
        assert!(d.starts_with("step,time,energy,dissipation\n"));
        assert_eq!(d.lines().count(), 1 + 11);
        assert!(dir.path().join(format!("dd_{flux}_v.csv")).exists());
    }
    let e0 = |flux: &str| read(&dir.path().join(format!("dd_{flux}_diagnostics.csv"))).lines().nth(1).unwrap().split(',').nth(2).unwrap().to_string();
    assert_eq!(e0("sg_ext"), e0("upwind"));

    let r = sgflux(&["equilibrium", "--out", out, "--override", "dd.nx=6", "dd.ny=6"]);
    assert_eq!(r.status.code(), Some(0));
    let summary = read(&dir.path().join("equilibrium_summary.csv"));
    assert!(summary.starts_with("alpha_n,alpha_p,newton_iterations,residual\n"));
}

#[test]
fn run_writes_state_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let r = sgflux(&["run", "--flux", "upwind", "--dt", "4e-5", "--override", "run.stride=10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let diag = read(&dir.path().join("run_upwind_diagnostics.csv"));
    let steps: Vec<usize> = diag.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, vec![0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]);
    assert_eq!(read(&dir.path().join("run_upwind_state.csv")).lines().count(), 2 + 40);
    assert!(dir.path().join("run_upwind_errors.csv").exists());
}

#[test]
fn configuration_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["--no-such-flag"],
        vec!["converge", "--bogus"],
        vec!["frobnicate"],
        vec!["pm", "--out", out, "--override", "pm.nz=3"],
        vec!["pm", "--out", out, "--override", "pm.nx=many"],
        vec!["pm", "--out", out, "--flux", "central"],
        vec!["dd", "--out", out, "--levels", "3"],
        vec!["converge", "--out", out, "--levels", "9"],
        vec!["equilibrium", "--out", out, "--flux", "sg"],
        vec!["run", "--config", "/definitely/not/here.toml"],
        vec!["dd", "--out", out, "--override", "dd.dt=5", "dd.nx=4", "dd.ny=4"],
    ];
    for args in cases {
        let r = sgflux(&args);
        assert_eq!(r.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
        assert!(!r.stderr.is_empty(), "{args:?}");
    }
    let r = sgflux(&["--no-such-flag"]);
    assert!(String::from_utf8_lossy(&r.stderr).contains("Usage"));
}

#[test]
fn help_exits_0_and_io_failure_exits_2() {
    assert_eq!(sgflux(&["--help"]).status.code(), Some(0));
    assert_eq!(sgflux(&["pm", "--help"]).status.code(), Some(0));
    let file = tempfile::NamedTempFile::new().unwrap();
    let inside_file = file.path().join("sub");
    let r = sgflux(&["equilibrium", "--override", "dd.nx=3", "dd.ny=3", "--out", inside_file.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}
