//! File writers: legacy ASCII VTK, OFF, curve and CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evolution::{pushforward_snapshot, SolutionTrajectory};
use crate::flow::FlowMap;
use crate::mesh::{Point, SurfaceMesh};

/// Writes a CSV table. Numbers are formatted by the caller; Rust float
/// formatting does not depend on the locale.
pub fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.as_ref()).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Empty string for a missing value.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// OFF text with 17 significant digits per coordinate.
pub fn off_string(mesh: &SurfaceMesh) -> Result<String> {
    if mesh.dim() != 2 {
        return Err(Error::Validation("OFF output needs a triangle mesh".into()));
    }
    let mut s = format!("OFF\n{} {} 0\n", mesh.num_vertices(), mesh.num_elements());
    for x in mesh.vertices() {
        writeln!(s, "{:.16e} {:.16e} {:.16e}", x.x, x.y, x.z).unwrap();
    }
    for el in mesh.elements() {
        writeln!(s, "3 {} {} {}", el[0], el[1], el[2]).unwrap();
    }
    Ok(s)
}

pub fn write_off(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    fs::write(path, off_string(mesh)?)?;
    Ok(())
}

/// Curve text; the segments must form a single chain `0 → 1 → … → N−1 (→ 0)`.
pub fn curve_string(mesh: &SurfaceMesh) -> Result<String> {
    if mesh.dim() != 1 {
        return Err(Error::Validation("curve output needs a segment mesh".into()));
    }
    let nv = mesh.num_vertices();
    let closed = mesh.is_closed();
    let chain = mesh
        .elements()
        .enumerate()
        .all(|(i, el)| el[0] == i && el[1] == (i + 1) % nv);
    if !chain || mesh.num_elements() != if closed { nv } else { nv - 1 } {
        return Err(Error::Validation(
            "curve output needs consecutively numbered vertices".into(),
        ));
    }
    if mesh.vertices().iter().any(|x| x.z != 0.0) {
        return Err(Error::Validation("curve output needs a planar curve in z = 0".into()));
    }
    let mut s = format!("CURVE {nv} {}\n", if closed { "closed" } else { "open" });
    for x in mesh.vertices() {
        writeln!(s, "{:.16e} {:.16e}", x.x, x.y).unwrap();
    }
    Ok(s)
}

pub fn write_curve(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    fs::write(path, curve_string(mesh)?)?;
    Ok(())
}

/// Legacy ASCII unstructured grid with a point scalar field `u`.
pub fn vtk_string(mesh: &SurfaceMesh, positions: &[Point], values: &[f64], title: &str) -> String {
    let nv = mesh.num_vertices();
    let ne = mesh.num_elements();
    let k = mesh.dim() + 1;
    let cell_type = if mesh.dim() == 2 { 5 } else { 3 };
    let mut s = String::new();
    writeln!(s, "# vtk DataFile Version 3.0").unwrap();
    writeln!(s, "{}", title.lines().next().unwrap_or("")).unwrap();
    writeln!(s, "ASCII\nDATASET UNSTRUCTURED_GRID").unwrap();
    writeln!(s, "POINTS {nv} double").unwrap();
    for p in positions {
        writeln!(s, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z).unwrap();
    }
    writeln!(s, "CELLS {ne} {}", ne * (k + 1)).unwrap();
    for el in mesh.elements() {
        let ids: Vec<String> = el.iter().map(|v| v.to_string()).collect();
        writeln!(s, "{k} {}", ids.join(" ")).unwrap();
    }
    writeln!(s, "CELL_TYPES {ne}").unwrap();
    for _ in 0..ne {
        writeln!(s, "{cell_type}").unwrap();
    }
    writeln!(s, "POINT_DATA {nv}\nSCALARS u double 1\nLOOKUP_TABLE default").unwrap();
    for v in values {
        writeln!(s, "{:.16e}", v).unwrap();
    }
    s
}

/// One file pair per stored level: `u_NNNN.vtk` on the moved surface and
/// `utilde_NNNN.vtk` on the initial surface.
pub fn write_vtk_series(
    traj: &SolutionTrajectory,
    flow: &FlowMap,
    mesh: &SurfaceMesh,
    directory: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(directory)?;
    let mut written = Vec::with_capacity(2 * traj.num_levels());
    for (k, &t) in traj.times.iter().enumerate() {
        let (positions, values) = pushforward_snapshot(traj, flow, mesh, t)?;
        let moved = directory.join(format!("u_{k:04}.vtk"));
        fs::write(&moved, vtk_string(mesh, &positions, &values, &format!("u t={t}")))?;
        let fixed = directory.join(format!("utilde_{k:04}.vtk"));
        fs::write(
            &fixed,
            vtk_string(mesh, mesh.vertices(), &traj.values[k], &format!("utilde t={t}")),
        )?;
        written.push(moved);
        written.push(fixed);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::TangentialIdentity;
    use crate::evolution::{interpolate, solve_evolution, EvolutionProblem};
    use crate::flow::UniformScale;
    use crate::mesh::{circle, icosphere, load_curve, load_off};

    #[test]
    fn off_round_trip() {
        let m = icosphere(2);
        let back = load_off(&off_string(&m).unwrap()).unwrap();
        assert_eq!(back.elements().collect::<Vec<_>>(), m.elements().collect::<Vec<_>>());
        for (a, b) in back.vertices().iter().zip(m.vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn curve_round_trip() {
        let m = circle(12).unwrap();
        let back = load_curve(&curve_string(&m).unwrap()).unwrap();
        assert_eq!(back.elements().collect::<Vec<_>>(), m.elements().collect::<Vec<_>>());
        assert_eq!(back.vertices(), m.vertices());
    }

    #[test]
    fn empty_csv_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows: Vec<Vec<String>> = Vec::new();
        write_csv(&p, &["level", "h", "l2_err", "l2_eoc", "h1_err", "h1_eoc"], &rows).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "level,h,l2_err,l2_eoc,h1_err,h1_eoc\n");
    }

    fn parse_vtk(text: &str) -> (Vec<Point>, Vec<usize>, Vec<f64>) {
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[2], "ASCII");
        assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
        let np: usize = lines[4].split_whitespace().nth(1).unwrap().parse().unwrap();
        let pts = lines[5..5 + np]
            .iter()
            .map(|l| {
                let v: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
                Point::new(v[0], v[1], v[2])
            })
            .collect();
        let ct = lines.iter().position(|l| l.starts_with("CELL_TYPES")).unwrap();
        let nc: usize = lines[ct].split_whitespace().nth(1).unwrap().parse().unwrap();
        let types = lines[ct + 1..ct + 1 + nc].iter().map(|l| l.parse().unwrap()).collect();
        let pd = lines.iter().position(|l| l.starts_with("POINT_DATA")).unwrap();
        assert_eq!(lines[pd + 1], "SCALARS u double 1");
        let vals = lines[pd + 3..pd + 3 + np].iter().map(|l| l.parse().unwrap()).collect();
        (pts, types, vals)
    }

    #[test]
    fn vtk_series_contents() {
        let m = icosphere(1);
        let f = FlowMap::analytic(Box::new(UniformScale { rate: 1.0 }), 0.5);
        let d = TangentialIdentity;
        let u0 = interpolate(&m, |x| x.x + 2.0);
        let traj = solve_evolution(&EvolutionProblem::new(&m, &f, &d, u0.clone(), 0.5, 0.25)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = write_vtk_series(&traj, &f, &m, dir.path()).unwrap();
        assert_eq!(files.len(), 6);

        let (p0, types, v0) = parse_vtk(&fs::read_to_string(dir.path().join("u_0000.vtk")).unwrap());
        assert!(types.iter().all(|&t| t == 5));
        assert_eq!(v0, u0);
        for (a, b) in p0.iter().zip(m.vertices()) {
            assert_eq!(a, b);
        }

        let (p2, _, v2) = parse_vtk(&fs::read_to_string(dir.path().join("u_0002.vtk")).unwrap());
        assert_eq!(v2, traj.values[2]);
        let bbox = |ps: &[Point]| -> (Point, Point) {
            ps.iter().fold(
                (Point::repeat(f64::INFINITY), Point::repeat(f64::NEG_INFINITY)),
                |(lo, hi), p| (lo.inf(p), hi.sup(p)),
            )
        };
        let (lo0, hi0) = bbox(m.vertices());
        let (lo2, hi2) = bbox(&p2);
        assert!((lo2 - 1.5 * lo0).amax() < 1e-9 && (hi2 - 1.5 * hi0).amax() < 1e-9);

        let (pf, _, vf) = parse_vtk(&fs::read_to_string(dir.path().join("utilde_0002.vtk")).unwrap());
        assert_eq!(pf, m.vertices());
        assert_eq!(vf, traj.values[2]);
    }

    #[test]
    fn vtk_lines_for_curves() {
        let m = circle(5).unwrap();
        let s = vtk_string(&m, m.vertices(), &[0.0; 5], "c");
        let (_, types, _) = parse_vtk(&s);
        assert_eq!(types, vec![3; 5]);
        assert!(s.contains("CELLS 5 15"));
    }
}
