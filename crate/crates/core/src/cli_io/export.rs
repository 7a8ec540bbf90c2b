//! Plain-text exports: OBJ and legacy VTK meshes, CSV fields and history.
//!
//! Reals are written with `{:.16e}`, which round-trips every `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::diagnostics::weingarten_field;
use crate::error::Result;
use crate::graphgeom::{GraphState, Mesh};
use crate::psidsl::PsiExpr;
use crate::solver::HistoryEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Vtk,
}

impl MeshFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MeshFormat::Obj => "obj",
            MeshFormat::Vtk => "vtk",
        }
    }
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_obj(mesh: &Mesh, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "# radial graph: {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len())?;
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", real(v[0]), real(v[1]), real(v[2]))?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

/// Legacy ASCII POLYDATA with one scalar array per `(name, values)`.
pub fn write_vtk(mesh: &Mesh, arrays: &[(&str, &[f64])], out: &mut impl Write) -> std::io::Result<()> {
    let n = mesh.vertices.len();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "radial graph")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET POLYDATA")?;
    writeln!(out, "POINTS {n} double")?;
    for v in &mesh.vertices {
        writeln!(out, "{} {} {}", real(v[0]), real(v[1]), real(v[2]))?;
    }
    writeln!(out, "POLYGONS {} {}", mesh.faces.len(), 4 * mesh.faces.len())?;
    for f in &mesh.faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    if !arrays.is_empty() {
        writeln!(out, "POINT_DATA {n}")?;
    }
    for (name, values) in arrays {
        assert_eq!(values.len(), n, "array '{name}' has the wrong length");
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for &x in *values {
            writeln!(out, "{}", real(x))?;
        }
    }
    Ok(())
}

/// `psi(eta)` at every node.
pub fn psi_on_normals(state: &GraphState, psi: &PsiExpr) -> Vec<f64> {
    state.points().iter().map(|p| psi.value(p.eta)).collect()
}

pub fn write_mesh(state: &GraphState, psi: &PsiExpr, k: usize, format: MeshFormat, out: &mut impl Write) -> Result<()> {
    let mesh = state.embed();
    match format {
        MeshFormat::Obj => write_obj(&mesh, out)?,
        MeshFormat::Vtk => {
            let wk = weingarten_field(state, k);
            let ps = psi_on_normals(state, psi);
            write_vtk(&mesh, &[("Wk", &wk), ("psi", &ps)], out)?;
        }
    }
    Ok(())
}

pub fn export_mesh(state: &GraphState, psi: &PsiExpr, k: usize, format: MeshFormat, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_mesh(state, psi, k, format, &mut out)?;
    out.flush()?;
    Ok(())
}

/// One row per node: grid position, `u`, embedded point, normal, `W_k`, `psi(eta)`.
pub fn write_field_csv(state: &GraphState, psi: &PsiExpr, k: usize, out: &mut impl Write) -> std::io::Result<()> {
    let grid = state.grid();
    let wk = weingarten_field(state, k);
    let u = state.u_values();
    writeln!(out, "node,ring,sector,x,y,z,u,px,py,pz,nx,ny,nz,wk,psi")?;
    for (i, p) in state.points().iter().enumerate() {
        let node = grid.node(i);
        let cols = [
            node.x[0],
            node.x[1],
            node.x[2],
            u[i],
            p.position[0],
            p.position[1],
            p.position[2],
            p.eta[0],
            p.eta[1],
            p.eta[2],
            wk[i],
            psi.value(p.eta),
        ];
        write!(out, "{i},{},{}", node.ring, node.sector)?;
        for c in cols {
            write!(out, ",{}", real(c))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_history_csv(history: &[HistoryEntry], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "index,family,parameter,step,newton_iterations,residual,accepted,min_comparison_margin")?;
    for (i, h) in history.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{}",
            h.family,
            real(h.parameter),
            real(h.step),
            h.newton_iterations,
            real(h.residual),
            h.accepted,
            real(h.min_comparison_margin)
        )?;
    }
    Ok(())
}

/// Writes through a buffer and surfaces every I/O error.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    f(&mut out)?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::CapGrid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit_cap(rings: usize, sectors: usize) -> GraphState {
        let grid = Arc::new(CapGrid::build(PI / 3.0, rings, sectors).unwrap());
        let n = grid.len();
        GraphState::from_u(grid, vec![1.0; n]).unwrap()
    }

    #[test]
    fn obj_unit_cap() {
        let state = unit_cap(6, 12);
        let mut buf = Vec::new();
        write_mesh(&state, &"1".parse().unwrap(), 2, MeshFormat::Obj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let verts: Vec<[f64; 3]> = text
            .lines()
            .filter_map(|l| l.strip_prefix("v "))
            .map(|l| {
                let x: Vec<f64> = l.split(' ').map(|t| t.parse().unwrap()).collect();
                [x[0], x[1], x[2]]
            })
            .collect();
        assert_eq!(verts.len(), 1 + 6 * 12);
        for v in &verts {
            assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-10);
        }
        let faces = text.lines().filter(|l| l.starts_with("f ")).count();
        assert_eq!(faces, 12 + 2 * 12 * 5);
    }

    #[test]
    fn vtk_has_two_arrays() {
        let state = unit_cap(4, 8);
        let mut buf = Vec::new();
        write_mesh(&state, &"0.5 + 0.1*nz".parse().unwrap(), 1, MeshFormat::Vtk, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("DATASET POLYDATA"));
        assert!(text.contains(&format!("POINT_DATA {}", 1 + 4 * 8)));
        assert!(text.contains("SCALARS Wk double 1"));
        assert!(text.contains("SCALARS psi double 1"));
        assert_eq!(text.matches("SCALARS").count(), 2);
    }

    #[test]
    fn exports_are_byte_stable() {
        let state = unit_cap(5, 10);
        let psi: PsiExpr = "0.7 - 0.2*nz".parse().unwrap();
        for format in [MeshFormat::Obj, MeshFormat::Vtk] {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            write_mesh(&state, &psi, 2, format, &mut a).unwrap();
            write_mesh(&state.clone(), &psi, 2, format, &mut b).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn csv_round_trips_values() {
        let state = unit_cap(4, 8);
        let mut buf = Vec::new();
        write_field_csv(&state, &"1".parse().unwrap(), 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 1 + state.grid().len());
        let u: f64 = rows[1].split(',').nth(6).unwrap().parse().unwrap();
        assert_eq!(u, 1.0);
    }
}
