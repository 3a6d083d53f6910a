//! Cell fields, diagnostic time series and their CSV forms.

use std::io::Write;

use crate::error::{invalid_arg, Result};
use crate::mesh::{fmt_f64, Mesh};

/// One value per cell at a given time.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    pub values: Vec<f64>,
    pub time: f64,
}

impl CellField {
    pub fn new(values: Vec<f64>, time: f64) -> Self {
        CellField { values, time }
    }

    pub fn constant(mesh: &Mesh, value: f64, time: f64) -> Self {
        CellField { values: vec![value; mesh.n_cells()], time }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Σ_K m(K) U_K.
    pub fn mass(&self, mesh: &Mesh) -> f64 {
        mesh.integrate(&self.values)
    }

    /// max_K |U_K - V_K| / max(max_K |V_K|, tiny).
    pub fn max_relative_change(&self, reference: &CellField) -> f64 {
        let scale = reference.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let diff = self
            .values
            .iter()
            .zip(&reference.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        diff / scale
    }

    /// Writes `# t=<time>` then `cell_id,x[,y],value` rows.
    pub fn write_snapshot<W: Write>(&self, mesh: &Mesh, mut out: W) -> Result<()> {
        if self.values.len() != mesh.n_cells() {
            return invalid_arg(format!(
                "field has {} values but the mesh has {} cells",
                self.values.len(),
                mesh.n_cells()
            ));
        }
        writeln!(out, "# t={}", fmt_f64(self.time))?;
        let mut w = csv::Writer::from_writer(out);
        if mesh.dim() == 1 {
            w.write_record(["cell_id", "x", "value"])?;
        } else {
            w.write_record(["cell_id", "x", "y", "value"])?;
        }
        for (k, (cell, v)) in mesh.cells().iter().zip(&self.values).enumerate() {
            let mut rec = vec![k.to_string(), fmt_f64(cell.center[0])];
            if mesh.dim() == 2 {
                rec.push(fmt_f64(cell.center[1]));
            }
            rec.push(fmt_f64(*v));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Named columns sampled at (step, time).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticSeries {
    columns: Vec<String>,
    rows: Vec<(usize, f64, Vec<f64>)>,
}

impl DiagnosticSeries {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        DiagnosticSeries { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn push(&mut self, step: usize, time: f64, values: Vec<f64>) {
        assert_eq!(values.len(), self.columns.len(), "row width does not match the columns");
        self.rows.push((step, time, values));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn steps(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.iter().map(|r| r.0)
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.1).collect()
    }

    /// All samples of a column, or `None` for an unknown name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.2[i]).collect())
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        let i = self.columns.iter().position(|c| c == name)?;
        self.rows.last().map(|r| r.2[i])
    }

    /// Rows whose step is a multiple of `stride`, plus the last row.
    pub fn thinned(&self, stride: usize) -> DiagnosticSeries {
        let stride = stride.max(1);
        let n = self.rows.len();
        let rows = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, r)| r.0 % stride == 0 || i + 1 == n)
            .map(|(_, r)| r.clone())
            .collect();
        DiagnosticSeries { columns: self.columns.clone(), rows }
    }

    /// CSV with header `step,time,<columns>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "time".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (step, time, vals) in &self.rows {
            let mut rec = vec![step.to_string(), fmt_f64(*time)];
            rec.extend(vals.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope of ln(values) against times, over samples with
/// `t in [t0, t1]` and a positive value. `None` if fewer than two samples.
pub fn log_slope(times: &[f64], values: &[f64], t0: f64, t1: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= t0 && **t <= t1 && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
