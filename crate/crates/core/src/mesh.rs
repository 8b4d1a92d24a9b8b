//! Fixed simplicial hypersurface meshes: polygonal curves in the plane (n = 1)
//! and triangulated surfaces in space (n = 2).
//!
//! Points are always stored as [`Point`] (three components); curves live in the
//! plane `z = 0`.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;

use nalgebra::Vector3;

use crate::calculus::{element_geometry, ElementGeometry};
use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Element measure below this fraction of `(longest edge)^n` is rejected.
pub const DEGENERACY_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    boundary: BTreeSet<usize>,
}

impl SurfaceMesh {
    /// Builds and validates a mesh. `cells` is a flat list of `dim + 1` vertex
    /// indices per element.
    pub fn new(dim: usize, vertices: Vec<Point>, cells: Vec<usize>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Validation(format!(
                "surface dimension must be 1 or 2, got {dim}"
            )));
        }
        let stride = dim + 1;
        if cells.is_empty() || !cells.len().is_multiple_of(stride) {
            return Err(Error::Validation(format!(
                "element list length {} is not a positive multiple of {stride}",
                cells.len()
            )));
        }
        if let Some(&bad) = cells.iter().find(|&&v| v >= vertices.len()) {
            return Err(Error::Validation(format!(
                "vertex index {bad} out of range ({} vertices)",
                vertices.len()
            )));
        }
        let mut mesh = SurfaceMesh {
            dim,
            vertices,
            cells,
            boundary: BTreeSet::new(),
        };
        for e in 0..mesh.num_elements() {
            let el = mesh.element(e);
            if (1..el.len()).any(|i| el[..i].contains(&el[i])) {
                return Err(Error::DegenerateElement {
                    element: e,
                    measure: 0.0,
                });
            }
            check_nondegenerate(e, &mesh.element_coords(e))?;
        }
        mesh.boundary = mesh.compute_boundary()?;
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let s = self.dim + 1;
        &self.cells[e * s..(e + 1) * s]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks_exact(self.dim + 1)
    }

    pub fn element_coords(&self, e: usize) -> Vec<Point> {
        self.element(e).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn boundary_vertices(&self) -> &BTreeSet<usize> {
        &self.boundary
    }

    pub fn is_closed(&self) -> bool {
        self.boundary.is_empty()
    }

    /// Same connectivity, new vertex positions (e.g. the moved surface at time t).
    pub fn with_positions(&self, positions: Vec<Point>) -> Result<Self> {
        if positions.len() != self.vertices.len() {
            return Err(Error::Validation(format!(
                "expected {} positions, got {}",
                self.vertices.len(),
                positions.len()
            )));
        }
        let moved = SurfaceMesh {
            dim: self.dim,
            vertices: positions,
            cells: self.cells.clone(),
            boundary: self.boundary.clone(),
        };
        for e in 0..moved.num_elements() {
            check_nondegenerate(e, &moved.element_coords(e))?;
        }
        Ok(moved)
    }

    pub fn geometries(&self) -> Result<Vec<ElementGeometry>> {
        (0..self.num_elements())
            .map(|e| {
                element_geometry(&self.element_coords(e)).map_err(|err| match err {
                    Error::DegenerateElement { measure, .. } => {
                        Error::DegenerateElement { element: e, measure }
                    }
                    other => other,
                })
            })
            .collect()
    }

    pub fn total_measure(&self) -> Result<f64> {
        Ok(self.geometries()?.iter().map(|g| g.measure).sum())
    }

    /// Vertices minus edges plus faces (n = 2) or vertices minus segments (n = 1).
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.num_vertices() as i64;
        let f = self.num_elements() as i64;
        if self.dim == 1 {
            return v - f;
        }
        let mut edges = BTreeSet::new();
        for el in self.elements() {
            for k in 0..3 {
                let (a, b) = (el[k], el[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        v - edges.len() as i64 + f
    }

    fn compute_boundary(&self) -> Result<BTreeSet<usize>> {
        // facet -> (count, signed traversal sum)
        let mut facets: HashMap<Vec<usize>, (usize, i64)> = HashMap::new();
        for el in self.elements() {
            if self.dim == 1 {
                for (v, sign) in [(el[0], -1), (el[1], 1)] {
                    let entry = facets.entry(vec![v]).or_default();
                    entry.0 += 1;
                    entry.1 += sign;
                }
            } else {
                for k in 0..3 {
                    let (a, b) = (el[k], el[(k + 1) % 3]);
                    let sign = if a < b { 1 } else { -1 };
                    let entry = facets.entry(vec![a.min(b), a.max(b)]).or_default();
                    entry.0 += 1;
                    entry.1 += sign;
                }
            }
        }
        let mut boundary = BTreeSet::new();
        for (facet, (count, orient)) in facets {
            match count {
                1 => boundary.extend(facet),
                2 if orient != 0 => {
                    return Err(Error::Validation(format!(
                        "inconsistent orientation across facet {facet:?}"
                    )))
                }
                2 => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "non-manifold facet {facet:?} shared by {count} elements"
                    )))
                }
            }
        }
        Ok(boundary)
    }
}

fn check_nondegenerate(e: usize, coords: &[Point]) -> Result<()> {
    let n = coords.len() - 1;
    let mut longest: f64 = 0.0;
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            longest = longest.max((coords[i] - coords[j]).norm());
        }
    }
    let measure = simplex_measure(coords);
    if !(measure >= DEGENERACY_TOLERANCE * longest.powi(n as i32)) || longest == 0.0 {
        return Err(Error::DegenerateElement {
            element: e,
            measure,
        });
    }
    Ok(())
}

fn simplex_measure(coords: &[Point]) -> f64 {
    match coords.len() {
        2 => (coords[1] - coords[0]).norm(),
        _ => 0.5 * (coords[1] - coords[0]).cross(&(coords[2] - coords[0])).norm(),
    }
}

/// Maximum element diameter (longest edge over all elements).
pub fn mesh_size(mesh: &SurfaceMesh) -> f64 {
    let mut h: f64 = 0.0;
    for el in mesh.elements() {
        for i in 0..el.len() {
            for j in i + 1..el.len() {
                h = h.max((mesh.vertices[el[i]] - mesh.vertices[el[j]]).norm());
            }
        }
    }
    h
}

/// Maps points onto the exact surface during refinement.
pub trait SurfaceProjector {
    fn project(&self, p: &Point) -> Point;

    /// Projection for midpoints of boundary facets; defaults to [`Self::project`].
    fn project_boundary(&self, p: &Point) -> Point {
        self.project(p)
    }
}

/// Radial projection onto the sphere (or, for planar curves, the circle) of
/// radius `radius` centred at the origin.
#[derive(Debug, Clone, Copy)]
pub struct SphereProjector {
    pub radius: f64,
}

impl Default for SphereProjector {
    fn default() -> Self {
        SphereProjector { radius: 1.0 }
    }
}

impl SurfaceProjector for SphereProjector {
    fn project(&self, p: &Point) -> Point {
        p * (self.radius / p.norm())
    }
}

/// Closest-point projection onto the ellipsoid `Σ (x_i / a_i)² = 1`.
#[derive(Debug, Clone, Copy)]
pub struct EllipsoidProjector {
    pub semi_axes: [f64; 3],
}

impl SurfaceProjector for EllipsoidProjector {
    fn project(&self, p: &Point) -> Point {
        let a = self.semi_axes;
        // x_i = p_i a_i² / (a_i² + s); solve Σ (x_i/a_i)² = 1 for s by Newton.
        let f = |s: f64| -> (f64, f64) {
            let mut val = -1.0;
            let mut der = 0.0;
            for i in 0..3 {
                let d = a[i] * a[i] + s;
                let q = p[i] * a[i] / d;
                val += q * q;
                der += -2.0 * q * q / d;
            }
            (val, der)
        };
        // the root lies above −a_i² for every axis the point is off of; axes
        // with p_i = 0 drop out of f
        let amin = (0..3)
            .filter(|&i| p[i] != 0.0)
            .map(|i| a[i])
            .fold(f64::INFINITY, f64::min);
        if !amin.is_finite() {
            return Point::new(0.0, 0.0, a[2]);
        }
        let mut s = 0.0;
        for _ in 0..100 {
            let (val, der) = f(s);
            if val.abs() < 1e-16 || der == 0.0 {
                break;
            }
            let mut next = s - val / der;
            if next <= -amin * amin {
                next = 0.5 * (s - amin * amin);
            }
            if (next - s).abs() <= 1e-16 * (1.0 + s.abs()) {
                s = next;
                break;
            }
            s = next;
        }
        Point::from_fn(|i, _| p[i] * a[i] * a[i] / (a[i] * a[i] + s))
    }
}

/// Flat unit disk in the plane `z = 0`: interior points stay put, boundary
/// midpoints are pushed onto the rim.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiskProjector;

impl SurfaceProjector for DiskProjector {
    fn project(&self, p: &Point) -> Point {
        Point::new(p.x, p.y, 0.0)
    }

    fn project_boundary(&self, p: &Point) -> Point {
        let q = Point::new(p.x, p.y, 0.0);
        q / q.norm()
    }
}

/// Midpoint (red) refinement: triangles into four, segments into two.
pub fn refine(mesh: &SurfaceMesh, projector: Option<&dyn SurfaceProjector>) -> Result<SurfaceMesh> {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let edge_count = if mesh.dim == 2 {
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for el in mesh.elements() {
            for k in 0..3 {
                let (a, b) = (el[k], el[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        counts
    } else {
        HashMap::new()
    };
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let m = 0.5 * (vertices[a] + vertices[b]);
            let on_boundary = edge_count.get(&key) == Some(&1);
            let p = match projector {
                Some(pr) if on_boundary => pr.project_boundary(&m),
                Some(pr) => pr.project(&m),
                None => m,
            };
            vertices.push(p);
            vertices.len() - 1
        })
    };
    let mut cells = Vec::with_capacity(mesh.cells.len() * if mesh.dim == 2 { 4 } else { 2 });
    for e in 0..mesh.num_elements() {
        let el = mesh.element(e).to_vec();
        if mesh.dim == 1 {
            let m = midpoint(el[0], el[1], &mut vertices);
            cells.extend_from_slice(&[el[0], m, m, el[1]]);
        } else {
            let (a, b, c) = (el[0], el[1], el[2]);
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            cells.extend_from_slice(&[a, ab, ca, ab, b, bc, ca, bc, c, ab, bc, ca]);
        }
    }
    SurfaceMesh::new(mesh.dim, vertices, cells)
}

pub fn refine_times(
    mesh: &SurfaceMesh,
    levels: usize,
    projector: Option<&dyn SurfaceProjector>,
) -> Result<SurfaceMesh> {
    let mut m = mesh.clone();
    for _ in 0..levels {
        m = refine(&m, projector)?;
    }
    Ok(m)
}

/// Parses an ASCII OFF file containing triangles only.
pub fn load_off(text: &str) -> Result<SurfaceMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty input, expected OFF header".into(),
    })?;
    let mut header_tokens = header.split_whitespace();
    if header_tokens.next() != Some("OFF") {
        return Err(Error::Parse {
            line: hline,
            message: format!("malformed header {header:?}, expected \"OFF\""),
        });
    }
    let rest: Vec<&str> = header_tokens.collect();
    let (count_line, counts): (usize, Vec<&str>) = if rest.is_empty() {
        let (l, s) = lines.next().ok_or(Error::Parse {
            line: hline + 1,
            message: "missing counts line".into(),
        })?;
        (l, s.split_whitespace().collect())
    } else {
        (hline, rest)
    };
    if counts.len() < 2 {
        return Err(Error::Parse {
            line: count_line,
            message: "counts line needs at least vertex and face counts".into(),
        });
    }
    let parse_count = |s: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::Parse {
            line: count_line,
            message: format!("invalid count {s:?}"),
        })
    };
    let nv = parse_count(counts[0])?;
    let nf = parse_count(counts[1])?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = lines.next().ok_or(Error::Parse {
            line: count_line,
            message: format!("expected {nv} vertex lines"),
        })?;
        let xs: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: l,
                message: format!("invalid vertex {s:?}"),
            })?;
        if xs.len() < 3 {
            return Err(Error::Parse {
                line: l,
                message: "vertex needs 3 coordinates".into(),
            });
        }
        vertices.push(Point::new(xs[0], xs[1], xs[2]));
    }

    let mut cells = Vec::with_capacity(3 * nf);
    for f in 0..nf {
        let (l, s) = lines.next().ok_or(Error::Parse {
            line: count_line,
            message: format!("expected {nf} face lines"),
        })?;
        let idx: Vec<usize> = s
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: l,
                message: format!("invalid face {s:?}"),
            })?;
        if idx.is_empty() || idx[0] != 3 || idx.len() < 4 {
            return Err(Error::Parse {
                line: l,
                message: format!("non-triangle face {s:?}"),
            });
        }
        let tri = &idx[1..4];
        if let Some(&bad) = tri.iter().find(|&&v| v >= nv) {
            return Err(Error::Parse {
                line: l,
                message: format!("index out of range: {bad} (have {nv} vertices)"),
            });
        }
        let coords: Vec<Point> = tri.iter().map(|&v| vertices[v]).collect();
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(Error::Parse {
                line: l,
                message: format!("degenerate face {f}"),
            });
        }
        check_nondegenerate(f, &coords).map_err(|e| Error::Parse {
            line: l,
            message: e.to_string(),
        })?;
        cells.extend_from_slice(tri);
    }
    SurfaceMesh::new(2, vertices, cells)
}

/// Parses the curve format: `CURVE <N> <closed|open>` followed by `N` lines `x y`.
pub fn load_curve(text: &str) -> Result<SurfaceMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty input, expected CURVE header".into(),
    })?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 3 || tokens[0] != "CURVE" {
        return Err(Error::Parse {
            line: hline,
            message: format!("malformed header {header:?}, expected \"CURVE <N> <closed|open>\""),
        });
    }
    let nv: usize = tokens[1].parse().map_err(|_| Error::Parse {
        line: hline,
        message: format!("invalid vertex count {:?}", tokens[1]),
    })?;
    let closed = match tokens[2] {
        "closed" => true,
        "open" => false,
        other => {
            return Err(Error::Parse {
                line: hline,
                message: format!("expected closed|open, got {other:?}"),
            })
        }
    };
    let mut vertices = Vec::with_capacity(nv);
    let mut line_of = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (l, s) = lines.next().ok_or(Error::Parse {
            line: hline,
            message: format!("expected {nv} vertex lines"),
        })?;
        let xs: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: l,
                message: format!("invalid vertex {s:?}"),
            })?;
        if xs.len() != 2 {
            return Err(Error::Parse {
                line: l,
                message: "curve vertex needs exactly 2 coordinates".into(),
            });
        }
        vertices.push(Point::new(xs[0], xs[1], 0.0));
        line_of.push(l);
    }
    let min_vertices = if closed { 3 } else { 2 };
    if nv < min_vertices {
        return Err(Error::Parse {
            line: hline,
            message: format!("curve needs at least {min_vertices} vertices"),
        });
    }
    let segs = if closed { nv } else { nv - 1 };
    let mut cells = Vec::with_capacity(2 * segs);
    for i in 0..segs {
        let j = (i + 1) % nv;
        if (vertices[i] - vertices[j]).norm() == 0.0 {
            return Err(Error::Parse {
                line: line_of[j],
                message: format!("degenerate segment {i}"),
            });
        }
        cells.extend_from_slice(&[i, j]);
    }
    SurfaceMesh::new(1, vertices, cells)
}

pub fn tetrahedron() -> SurfaceMesh {
    let s = 1.0 / 3f64.sqrt();
    let v = vec![
        Point::new(s, s, s),
        Point::new(s, -s, -s),
        Point::new(-s, s, -s),
        Point::new(-s, -s, s),
    ];
    SurfaceMesh::new(2, v, vec![0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2]).expect("valid tetrahedron")
}

/// Regular icosahedron inscribed in the unit sphere.
pub fn icosahedron() -> SurfaceMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let vertices = raw
        .iter()
        .map(|&(x, y, z)| Point::new(x, y, z).normalize())
        .collect();
    #[rustfmt::skip]
    let faces = vec![
        0, 11, 5,  0, 5, 1,  0, 1, 7,  0, 7, 10,  0, 10, 11,
        1, 5, 9,  5, 11, 4,  11, 10, 2,  10, 7, 6,  7, 1, 8,
        3, 9, 4,  3, 4, 2,  3, 2, 6,  3, 6, 8,  3, 8, 9,
        4, 9, 5,  2, 4, 11,  6, 2, 10,  8, 6, 7,  9, 8, 1,
    ];
    SurfaceMesh::new(2, vertices, faces).expect("valid icosahedron")
}

/// Icosahedron refined `level` times with vertices projected to the unit sphere.
pub fn icosphere(level: usize) -> SurfaceMesh {
    refine_times(&icosahedron(), level, Some(&SphereProjector::default()))
        .expect("refinement of a valid mesh")
}

/// Regular `n`-gon inscribed in the unit circle, counter-clockwise.
pub fn circle(n: usize) -> Result<SurfaceMesh> {
    if n < 3 {
        return Err(Error::Validation(format!(
            "circle needs at least 3 vertices, got {n}"
        )));
    }
    let vertices = (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            Point::new(a.cos(), a.sin(), 0.0)
        })
        .collect();
    let cells = (0..n).flat_map(|k| [k, (k + 1) % n]).collect();
    SurfaceMesh::new(1, vertices, cells)
}

/// Flat unit disk: a hexagon fan refined `level` times, rim vertices on the unit circle.
pub fn disk(level: usize) -> SurfaceMesh {
    let mut vertices = vec![Point::zeros()];
    for k in 0..6 {
        let a = PI / 3.0 * k as f64;
        vertices.push(Point::new(a.cos(), a.sin(), 0.0));
    }
    let cells = (0..6).flat_map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
    let base = SurfaceMesh::new(2, vertices, cells).expect("valid hexagon");
    refine_times(&base, level, Some(&DiskProjector)).expect("refinement of a valid mesh")
}
