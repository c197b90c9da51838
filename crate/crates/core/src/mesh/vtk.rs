//! Legacy ASCII VTK export.

use std::io::{self, Write};

use super::{CellKind, Mesh};

/// Writes the mesh as an unstructured grid, with optional per-cell scalar fields.
pub fn write_vtk<W: Write>(mesh: &Mesh, mut w: W, cell_data: &[(&str, &[f64])]) -> io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "minres mesh")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2])?;
    }
    let k = mesh.cell_size();
    writeln!(
        w,
        "CELLS {} {}",
        mesh.num_cells(),
        mesh.num_cells() * (k + 1)
    )?;
    for c in 0..mesh.num_cells() {
        let ids: Vec<String> = mesh.cell(c).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{} {}", k, ids.join(" "))?;
    }
    let ty = match (mesh.kind(), mesh.dim()) {
        (CellKind::Rectangle, _) => 9, // VTK_QUAD
        (CellKind::Simplex, 2) => 5,   // VTK_TRIANGLE
        _ => 10,                       // VTK_TETRA
    };
    writeln!(w, "CELL_TYPES {}", mesh.num_cells())?;
    for _ in 0..mesh.num_cells() {
        writeln!(w, "{ty}")?;
    }
    if !cell_data.is_empty() {
        writeln!(w, "CELL_DATA {}", mesh.num_cells())?;
        for (name, vals) in cell_data {
            assert_eq!(
                vals.len(),
                mesh.num_cells(),
                "cell field {name} has wrong length"
            );
            writeln!(w, "SCALARS {name} double 1")?;
            writeln!(w, "LOOKUP_TABLE default")?;
            for v in vals.iter() {
                writeln!(w, "{v:.17e}")?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::presets::*;
    use super::*;

    #[test]
    fn writes_expected_sections() {
        let m = unit_square_triangles();
        let mut buf = Vec::new();
        write_vtk(&m, &mut buf, &[("eta", &[1.0, 2.0])]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("POINTS 4 double"));
        assert!(s.contains("CELLS 2 8"));
        assert!(s.contains("CELL_TYPES 2\n5\n5"));
        assert!(s.contains("SCALARS eta double 1"));
    }
}
