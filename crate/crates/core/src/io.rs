//! CSV persistence of grids, value functions, scans, simulations and tables.
//!
//! Floats are written in the shortest form that parses back to the same bits.

use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{Provenance, ScatteredGrid};
use crate::hjb::{ScanRow, Simulation};
use crate::pipeline::TableRow;
use crate::points::PointSet;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    csv::Writer::from_path(path).map_err(csv_err)
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::Reader::from_path(path).map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad number {field:?}", path.display())))
}

fn parse_usize(field: &str, path: &Path) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad index {field:?}", path.display())))
}

fn indexed_header(first: &[&str], prefix: &str, n: usize) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|i| format!("{prefix}{i}")))
        .collect()
}

/// Rows `node, x0, ..., x{d-1}`.
pub fn write_grid(path: &Path, grid: &ScatteredGrid) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(indexed_header(&["node"], "x", grid.dim())).map_err(csv_err)?;
    for (j, p) in grid.points().iter().enumerate() {
        let row = std::iter::once(j.to_string()).chain(p.iter().map(|&v| num(v)));
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `node, initial, control, step`.
pub fn write_provenance(path: &Path, grid: &ScatteredGrid) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node", "initial", "control", "step"]).map_err(csv_err)?;
    for (j, p) in grid.provenance().iter().enumerate() {
        w.write_record([j, p.initial, p.control, p.step].map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a grid written by [`write_grid`] and [`write_provenance`].
pub fn read_grid(grid_path: &Path, provenance_path: &Path, dt_bar: f64, t0: f64) -> Result<ScatteredGrid> {
    let mut r = reader(grid_path)?;
    let dim = r.headers().map_err(csv_err)?.len().saturating_sub(1);
    if dim == 0 {
        return Err(Error::Parse(format!("{}: no coordinate columns", grid_path.display())));
    }
    let mut points = PointSet::new(dim);
    let mut row = Vec::with_capacity(dim);
    for (j, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if parse_usize(&rec[0], grid_path)? != j {
            return Err(Error::Parse(format!("{}: nodes out of order at row {j}", grid_path.display())));
        }
        row.clear();
        for f in rec.iter().skip(1) {
            row.push(parse_f64(f, grid_path)?);
        }
        points.push(&row);
    }
    let mut provenance = Vec::with_capacity(points.len());
    for rec in reader(provenance_path)?.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 4 {
            return Err(Error::Parse(format!("{}: expected 4 columns", provenance_path.display())));
        }
        provenance.push(Provenance {
            initial: parse_usize(&rec[1], provenance_path)?,
            control: parse_usize(&rec[2], provenance_path)?,
            step: parse_usize(&rec[3], provenance_path)?,
        });
    }
    ScatteredGrid::from_parts(points, provenance, dt_bar, t0)
}

/// Rows `node, value`.
pub fn write_values(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["node", "value"]).map_err(csv_err)?;
    for (j, &v) in values.iter().enumerate() {
        w.write_record([j.to_string(), num(v)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_values(path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (j, rec) in reader(path)?.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 2 || parse_usize(&rec[0], path)? != j {
            return Err(Error::Parse(format!("{}: malformed row {j}", path.display())));
        }
        out.push(parse_f64(&rec[1], path)?);
    }
    Ok(out)
}

pub fn write_scan(path: &Path, rows: &[ScanRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["theta", "sigma", "residual", "iterations", "final_update", "converged"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            num(r.theta),
            num(r.sigma),
            num(r.residual),
            r.iterations.to_string(),
            num(r.final_update),
            r.converged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `step, t, x0, ...` for the given states (one per time).
pub fn write_trajectory(path: &Path, times: &[f64], states: &[DVector<f64>]) -> Result<()> {
    let dim = states.first().map_or(0, |x| x.len());
    let mut w = writer(path)?;
    w.write_record(indexed_header(&["step", "t"], "x", dim)).map_err(csv_err)?;
    for (k, (t, x)) in times.iter().zip(states).enumerate() {
        let row = [k.to_string(), num(*t)].into_iter().chain(x.iter().map(|&v| num(v)));
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `step, t, u0, ...`.
pub fn write_controls(path: &Path, sim: &Simulation) -> Result<()> {
    let dim = sim.controls.first().map_or(0, |u| u.len());
    let mut w = writer(path)?;
    w.write_record(indexed_header(&["step", "t"], "u", dim)).map_err(csv_err)?;
    for (k, (t, u)) in sim.times.iter().zip(&sim.controls).enumerate() {
        let row = [k.to_string(), num(*t)].into_iter().chain(u.iter().map(|&v| num(v)));
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `step, t, cost` with the accumulated discounted cost.
pub fn write_cost(path: &Path, sim: &Simulation) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["step", "t", "cost"]).map_err(csv_err)?;
    for (k, (t, j)) in sim.times.iter().zip(&sim.cost).enumerate() {
        w.write_record([k.to_string(), num(*t), num(*j)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Convergence table; rate cells of the first row are empty.
pub fn write_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "dt",
        "hjb_vs_optimal",
        "rate",
        "hjb_vs_replay",
        "rate",
        "optimal_vs_replay",
        "rate",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            num(r.dt),
            num(r.hjb_vs_optimal),
            opt(r.hjb_vs_optimal_rate),
            num(r.hjb_vs_replay),
            opt(r.hjb_vs_replay_rate),
            num(r.optimal_vs_replay),
            opt(r.optimal_vs_replay_rate),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
