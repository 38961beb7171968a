//! CSV logs and nodal field export (CSV or legacy ASCII VTK).

use crate::discretization::State;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::solvers::RunRecord;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldFormat {
    Csv,
    VtkLegacy,
}

impl std::str::FromStr for FieldFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<FieldFormat> {
        match s {
            "csv" => Ok(FieldFormat::Csv),
            "vtk-legacy" | "vtk" => Ok(FieldFormat::VtkLegacy),
            _ => Err(Error::InvalidArgument(format!("unknown field format '{s}'"))),
        }
    }
}

pub const STEPS_HEADER: [&str; 9] = [
    "step",
    "time",
    "E_total",
    "E_interface",
    "E_elastic",
    "E_fluid",
    "outer_iters",
    "converged",
    "wall_s",
];

pub const ITERS_HEADER: [&str; 4] = ["step", "iter", "increment_norm_sq", "potential"];

pub const SWEEP_HEADER: [&str; 7] = [
    "parameter",
    "value",
    "scheme",
    "time_disc",
    "total_outer_iterations",
    "total_wall_time_s",
    "all_converged",
];

pub const FIELDS_HEADER: [&str; 8] = ["x", "y", "phi", "mu", "theta", "p", "ux", "uy"];

pub fn write_steps_csv(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STEPS_HEADER)?;
    for r in &record.steps {
        w.write_record([
            r.step.to_string(),
            r.time.to_string(),
            r.energies.total.to_string(),
            r.energies.interface.to_string(),
            r.energies.elastic.to_string(),
            r.energies.fluid.to_string(),
            r.outer_iterations.to_string(),
            r.converged.to_string(),
            r.wall_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_iters_csv(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ITERS_HEADER)?;
    for r in &record.iterations {
        w.write_record([
            r.step.to_string(),
            r.iter.to_string(),
            r.increment_norm_sq.to_string(),
            r.potential.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub scheme: String,
    pub time_disc: String,
    pub total_outer_iterations: usize,
    pub total_wall_time_s: f64,
    pub all_converged: bool,
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.parameter.clone(),
            r.value.to_string(),
            r.scheme.clone(),
            r.time_disc.clone(),
            r.total_outer_iterations.to_string(),
            r.total_wall_time_s.to_string(),
            r.all_converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_fields(mesh: &Mesh, state: &State, path: &Path, format: FieldFormat) -> Result<()> {
    if state.n_vertices() != mesh.n_vertices() {
        return Err(Error::InvalidArgument("state does not match mesh".into()));
    }
    match format {
        FieldFormat::Csv => write_fields_csv(mesh, state, path),
        FieldFormat::VtkLegacy => write_vtk(mesh, state, path),
    }
}

fn write_fields_csv(mesh: &Mesh, state: &State, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(FIELDS_HEADER)?;
    for (i, x) in mesh.vertices.iter().enumerate() {
        // Display prints the shortest string that parses back to the same value
        w.write_record(
            [
                x[0],
                x[1],
                state.phi[i],
                state.mu[i],
                state.theta[i],
                state.p[i],
                state.ux[i],
                state.uy[i],
            ]
            .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field CSV back into vertex coordinates and a state.
pub fn read_fields_csv(path: &Path) -> Result<(Vec<[f64; 2]>, State)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header != FIELDS_HEADER {
        return Err(Error::Io(format!("unexpected header {header:?}")));
    }
    let mut coords = Vec::new();
    let mut s = State::zeros(0);
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Io(e.to_string())))
            .collect::<Result<_>>()?;
        if v.len() != 8 {
            return Err(Error::Io(format!("expected 8 columns, got {}", v.len())));
        }
        coords.push([v[0], v[1]]);
        s.phi.push(v[2]);
        s.mu.push(v[3]);
        s.theta.push(v[4]);
        s.p.push(v[5]);
        s.ux.push(v[6]);
        s.uy.push(v[7]);
    }
    Ok((coords, s))
}

fn write_vtk(mesh: &Mesh, state: &State, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = mesh.n_vertices();
    let t = mesh.n_triangles();
    writeln!(w, "# vtk DataFile Version 2.0")?;
    writeln!(w, "Cahn-Hilliard-Biot fields")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {n} double")?;
    for x in &mesh.vertices {
        writeln!(w, "{} {} 0", x[0], x[1])?;
    }
    writeln!(w, "CELLS {t} {}", 4 * t)?;
    for tri in &mesh.triangles {
        writeln!(w, "3 {} {} {}", tri[0], tri[1], tri[2])?;
    }
    writeln!(w, "CELL_TYPES {t}")?;
    for _ in 0..t {
        writeln!(w, "5")?;
    }
    writeln!(w, "POINT_DATA {n}")?;
    for (name, values) in [
        ("phi", &state.phi),
        ("mu", &state.mu),
        ("theta", &state.theta),
        ("p", &state.p),
    ] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values.iter() {
            writeln!(w, "{v}")?;
        }
    }
    writeln!(w, "VECTORS displacement double")?;
    for i in 0..n {
        writeln!(w, "{} {} 0", state.ux[i], state.uy[i])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::initial_state;

    #[test]
    fn csv_of_smallest_mesh() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::build(1).unwrap();
        let s = initial_state(&mesh);
        let path = dir.path().join("f.csv");
        export_fields(&mesh, &s, &path, FieldFormat::Csv).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap(), "x,y,phi,mu,theta,p,ux,uy");
        let (_, back) = read_fields_csv(&path).unwrap();
        assert!(back.phi.iter().all(|v| *v == -1.0 || *v == 1.0));
    }

    #[test]
    fn csv_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::build(3).unwrap();
        let mut s = initial_state(&mesh);
        for (i, v) in s.mu.iter_mut().enumerate() {
            *v = (i as f64 * 0.1).sin() / 3.0;
        }
        s.p[2] = 1e-300;
        s.theta[1] = -std::f64::consts::PI;
        let path = dir.path().join("f.csv");
        export_fields(&mesh, &s, &path, FieldFormat::Csv).unwrap();
        let (coords, back) = read_fields_csv(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(coords, mesh.vertices);
    }
}
