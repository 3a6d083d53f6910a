//! Run configuration: TOML file, dotted `key=value` overrides, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgflux_core::experiments::FrontCase;
use sgflux_core::FluxKind;
use toml::{Table, Value};

use crate::error::{config_err, CliError};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output: OutputConfig,
    pub front: FrontConfig,
    pub run: ScalarConfig,
    pub converge: ConvergeConfig,
    pub dd: DdConfig,
    pub pm: PmConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

/// Moving-front test case shared by `run` and `converge`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontConfig {
    pub q: f64,
    pub v: f64,
    pub t_end: f64,
}

impl Default for FrontConfig {
    fn default() -> Self {
        let c = FrontCase::default();
        FrontConfig { q: c.q, v: c.v, t_end: c.t_end }
    }
}

impl FrontConfig {
    pub fn case(&self) -> FrontCase {
        FrontCase { q: self.q, v: self.v, t_end: self.t_end }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalarConfig {
    pub flux: String,
    pub level: usize,
    pub dt: f64,
    /// Diagnostics are written every `stride` steps.
    pub stride: usize,
}

impl Default for ScalarConfig {
    fn default() -> Self {
        ScalarConfig { flux: "sg_ext".into(), level: 0, dt: 1e-8, stride: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub fluxes: Vec<String>,
    /// Number of levels; levels 0..levels-1 are run.
    pub levels: usize,
    pub dt: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig { fluxes: vec!["sg_ext".into(), "upwind".into()], levels: 4, dt: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdConfig {
    /// `pn_2d` (unit square) or `pn_1d` (unit interval, `ny` unused).
    pub geometry: String,
    pub gamma: f64,
    pub nx: usize,
    pub ny: usize,
    pub dt: f64,
    pub t_end: f64,
    pub flux: String,
    /// Further fluxes run from the same initial state.
    pub compare: Vec<String>,
    pub stride: usize,
}

impl Default for DdConfig {
    fn default() -> Self {
        DdConfig {
            geometry: "pn_2d".into(),
            gamma: 5.0 / 3.0,
            nx: 30,
            ny: 30,
            dt: 0.01,
            t_end: 10.0,
            flux: "sg_ext".into(),
            compare: Vec::new(),
            stride: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PmConfig {
    pub gamma: f64,
    pub nx: usize,
    pub dt: f64,
    pub t_end: f64,
    pub flux: String,
    pub snapshot_times: Vec<f64>,
    pub stride: usize,
}

impl Default for PmConfig {
    fn default() -> Self {
        PmConfig {
            gamma: 3.0,
            nx: 100,
            dt: 5e-4,
            t_end: 10.0,
            flux: "sg_ext".into(),
            snapshot_times: vec![0.0, 0.4, 4.0],
            stride: 100,
        }
    }
}

/// Reads `path` (or starts from an empty table), applies the overrides in
/// order and deserializes. Unknown keys are rejected.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            text.parse::<Table>()?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Ok(RunConfig::deserialize(Value::Table(table))?)
}

/// `a.b.c=value`; the value is read as a TOML value, or as a bare string
/// if it does not parse as one.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return config_err(format!("override '{assignment}' is not of the form key=value"));
    };
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return config_err(format!("malformed override key '{key}'"));
    }
    let value = parse_value(raw.trim());
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return config_err(format!("override '{key}': '{p}' is not a table")),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn parse_flux(name: &str) -> Result<FluxKind, CliError> {
    name.parse::<FluxKind>().map_err(|e| CliError::Config(e.to_string()))
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        config_err(format!("{name} must be positive and finite, got {x}"))
    }
}

fn at_least_one(name: &str, n: usize) -> Result<(), CliError> {
    if n >= 1 {
        Ok(())
    } else {
        config_err(format!("{name} must be at least 1"))
    }
}

fn gamma_ok(name: &str, g: f64) -> Result<(), CliError> {
    if g >= 1.0 && g.is_finite() {
        Ok(())
    } else {
        config_err(format!("{name} must be >= 1, got {g}"))
    }
}

impl FrontConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        positive("front.t_end", self.t_end)?;
        if !(self.q.is_finite() && self.v.is_finite()) {
            return config_err("front.q and front.v must be finite");
        }
        Ok(())
    }
}

impl ScalarConfig {
    pub fn validate(&self) -> Result<FluxKind, CliError> {
        positive("run.dt", self.dt)?;
        at_least_one("run.stride", self.stride)?;
        if self.level > 5 {
            return config_err(format!("run.level must be <= 5, got {}", self.level));
        }
        parse_flux(&self.flux)
    }
}

impl ConvergeConfig {
    pub fn validate(&self) -> Result<Vec<FluxKind>, CliError> {
        positive("converge.dt", self.dt)?;
        if !(1..=6).contains(&self.levels) {
            return config_err(format!("converge.levels must be in 1..=6, got {}", self.levels));
        }
        if self.fluxes.is_empty() {
            return config_err("converge.fluxes is empty");
        }
        self.fluxes.iter().map(|f| parse_flux(f)).collect()
    }
}

impl DdConfig {
    pub fn validate_geometry(&self) -> Result<(), CliError> {
        gamma_ok("dd.gamma", self.gamma)?;
        at_least_one("dd.nx", self.nx)?;
        match self.geometry.as_str() {
            "pn_2d" => at_least_one("dd.ny", self.ny),
            "pn_1d" => Ok(()),
            g => config_err(format!("unknown dd.geometry '{g}' (expected pn_2d or pn_1d)")),
        }
    }

    /// Main flux first, then the comparison fluxes.
    pub fn validate(&self) -> Result<Vec<FluxKind>, CliError> {
        self.validate_geometry()?;
        positive("dd.dt", self.dt)?;
        positive("dd.t_end", self.t_end)?;
        at_least_one("dd.stride", self.stride)?;
        std::iter::once(&self.flux).chain(&self.compare).map(|f| parse_flux(f)).collect()
    }
}

impl PmConfig {
    pub fn validate(&self) -> Result<FluxKind, CliError> {
        gamma_ok("pm.gamma", self.gamma)?;
        at_least_one("pm.nx", self.nx)?;
        positive("pm.dt", self.dt)?;
        positive("pm.t_end", self.t_end)?;
        at_least_one("pm.stride", self.stride)?;
        if let Some(t) = self.snapshot_times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return config_err(format!("pm.snapshot_times contains invalid time {t}"));
        }
        parse_flux(&self.flux)
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes to TOML")
    }
}
