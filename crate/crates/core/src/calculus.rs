//! Element-level tangential calculus for P1 functions on simplices embedded in
//! space: metric, tangential gradients of barycentric basis functions, the
//! divergence of non-tangent vector fields, and discrete L² / H¹ norms.
//!
//! A simplex with vertices `p_0..p_n` is parametrised over the reference simplex
//! by `F(ξ) = p_0 + Σ ξ_i (p_i - p_0)`, so `∂_i F = p_i - p_0`. The metric is
//! `g_ij = ∂_iF · ∂_jF` and the tangential gradient of `h` is
//! `g^{ij} ∂_j h ∂_i F`. The divergence of an ambient vector field `X` along the
//! element is `g^{ij} ∂_i X · ∂_j F`, which for P1-interpolated `X` reduces to
//! `Σ_k ∇λ_k · X_k`.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::mesh::{Point, SurfaceMesh};

/// Relative tolerance for geometric identities.
pub const GEOMETRY_TOLERANCE: f64 = 1e-12;

/// Symmetric-or-not `n × n` matrix in chart coordinates, `n ∈ {1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartMatrix {
    dim: usize,
    m: [[f64; 2]; 2],
}

impl ChartMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim == 1 || dim == 2, "chart dimension must be 1 or 2");
        ChartMatrix {
            dim,
            m: [[0.0; 2]; 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = Self::zeros(dim);
        for i in 0..dim {
            a.m[i][i] = 1.0;
        }
        a
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut a = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                a.m[i][j] = f(i, j);
            }
        }
        a
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn det(&self) -> f64 {
        match self.dim {
            1 => self.m[0][0],
            _ => self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0],
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let mut inv = Self::zeros(self.dim);
        match self.dim {
            1 => inv.m[0][0] = 1.0 / d,
            _ => {
                inv.m[0][0] = self.m[1][1] / d;
                inv.m[1][1] = self.m[0][0] / d;
                inv.m[0][1] = -self.m[0][1] / d;
                inv.m[1][0] = -self.m[1][0] / d;
            }
        }
        Some(inv)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::from_fn(self.dim, |i, j| {
            (0..self.dim).map(|k| self.m[i][k] * other.m[k][j]).sum()
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(self.dim, |i, j| s * self.m[i][j])
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        (self.m[0][1] - self.m[1][0]).abs()
    }

    /// Smallest eigenvalue of the symmetric part.
    pub fn min_eigenvalue(&self) -> f64 {
        match self.dim {
            1 => self.m[0][0],
            _ => {
                let a = self.m[0][0];
                let d = self.m[1][1];
                let b = 0.5 * (self.m[0][1] + self.m[1][0]);
                let mean = 0.5 * (a + d);
                let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
                mean - r
            }
        }
    }
}

impl Index<(usize, usize)> for ChartMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        assert!(i < self.dim && j < self.dim);
        &self.m[i][j]
    }
}

impl IndexMut<(usize, usize)> for ChartMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        assert!(i < self.dim && j < self.dim);
        &mut self.m[i][j]
    }
}

/// Reference-element derivatives `∂_j λ_k` of the barycentric coordinates.
pub fn reference_gradient(dim: usize, k: usize, j: usize) -> f64 {
    debug_assert!(j < dim && k <= dim);
    if k == 0 {
        -1.0
    } else if k == j + 1 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub dim: usize,
    /// Coordinate tangent vectors `∂_i F`, first `dim` entries valid.
    pub tangents: [Point; 2],
    pub metric: ChartMatrix,
    pub inverse_metric: ChartMatrix,
    pub sqrt_det: f64,
    pub measure: f64,
    /// Tangential gradients of the `dim + 1` barycentric basis functions.
    pub basis_gradients: [Point; 3],
    /// Unit normal: `∂_1F × ∂_2F` normalised for triangles, the in-plane
    /// normal (tangent rotated by +90° about z) for segments.
    pub unit_normal: Point,
}

impl ElementGeometry {
    pub fn gradients(&self) -> &[Point] {
        &self.basis_gradients[..=self.dim]
    }

    pub fn tangent_vectors(&self) -> &[Point] {
        &self.tangents[..self.dim]
    }

    /// Orthogonal projector onto the element's tangent space.
    pub fn tangential_projector(&self) -> nalgebra::Matrix3<f64> {
        let mut p = nalgebra::Matrix3::zeros();
        for i in 0..self.dim {
            for j in 0..self.dim {
                p += self.inverse_metric[(i, j)] * self.tangents[i] * self.tangents[j].transpose();
            }
        }
        p
    }

    /// Pulls an ambient tensor back to the chart: `g^{-1} (∂F^T D ∂F) g^{-1}`.
    pub fn chart_tensor(&self, d: &nalgebra::Matrix3<f64>) -> ChartMatrix {
        let inner = ChartMatrix::from_fn(self.dim, |i, j| {
            self.tangents[i].dot(&(d * self.tangents[j]))
        });
        self.inverse_metric.mul(&inner).mul(&self.inverse_metric)
    }
}

fn reference_measure(dim: usize) -> f64 {
    if dim == 1 {
        1.0
    } else {
        0.5
    }
}

pub fn element_geometry(coords: &[Point]) -> Result<ElementGeometry> {
    let dim = coords
        .len()
        .checked_sub(1)
        .filter(|d| *d == 1 || *d == 2)
        .ok_or_else(|| {
            Error::Validation(format!("simplex needs 2 or 3 vertices, got {}", coords.len()))
        })?;
    let mut tangents = [Point::zeros(); 2];
    for i in 0..dim {
        tangents[i] = coords[i + 1] - coords[0];
    }
    let metric = ChartMatrix::from_fn(dim, |i, j| tangents[i].dot(&tangents[j]));
    let det = metric.det();
    let longest = (0..coords.len())
        .flat_map(|i| (i + 1..coords.len()).map(move |j| (i, j)))
        .map(|(i, j)| (coords[i] - coords[j]).norm())
        .fold(0.0, f64::max);
    let sqrt_det = det.max(0.0).sqrt();
    let measure = sqrt_det * reference_measure(dim);
    let degenerate = !(measure >= crate::mesh::DEGENERACY_TOLERANCE * longest.powi(dim as i32))
        || longest == 0.0;
    let inverse_metric = match metric.inverse() {
        Some(inv) if !degenerate => inv,
        _ => {
            return Err(Error::DegenerateElement {
                element: 0,
                measure,
            })
        }
    };
    let mut basis_gradients = [Point::zeros(); 3];
    for (k, grad) in basis_gradients.iter_mut().enumerate().take(dim + 1) {
        for i in 0..dim {
            for j in 0..dim {
                *grad += inverse_metric[(i, j)] * reference_gradient(dim, k, j) * tangents[i];
            }
        }
    }
    let unit_normal = if dim == 2 {
        tangents[0].cross(&tangents[1]).normalize()
    } else {
        Point::new(-tangents[0].y, tangents[0].x, 0.0).normalize()
    };
    Ok(ElementGeometry {
        dim,
        tangents,
        metric,
        inverse_metric,
        sqrt_det,
        measure,
        basis_gradients,
        unit_normal,
    })
}

/// Element-constant tangential gradient of the P1 function with the given vertex values.
pub fn tangential_gradient_p1(geom: &ElementGeometry, nodal: &[f64]) -> Point {
    geom.gradients()
        .iter()
        .zip(nodal)
        .fold(Point::zeros(), |acc, (g, &u)| acc + u * g)
}

/// Divergence along the element of the P1 interpolant of an ambient vector field.
pub fn tangential_divergence(geom: &ElementGeometry, vertex_vectors: &[Point]) -> f64 {
    geom.gradients()
        .iter()
        .zip(vertex_vectors)
        .map(|(g, x)| g.dot(x))
        .sum()
}

/// `∫ (Σ u_k λ_k)²` over one element, integrated exactly.
pub fn element_l2_squared(geom: &ElementGeometry, nodal: &[f64]) -> f64 {
    let n = geom.dim as f64;
    let sum: f64 = nodal.iter().sum();
    let sq: f64 = nodal.iter().map(|u| u * u).sum();
    geom.measure / ((n + 1.0) * (n + 2.0)) * (sq + sum * sum)
}

fn gather(mesh: &SurfaceMesh, e: usize, nodal: &[f64]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (slot, &v) in out.iter_mut().zip(mesh.element(e)) {
        *slot = nodal[v];
    }
    out
}

fn check_len(mesh: &SurfaceMesh, nodal: &[f64]) -> Result<()> {
    if nodal.len() != mesh.num_vertices() {
        return Err(Error::Validation(format!(
            "nodal vector has length {}, mesh has {} vertices",
            nodal.len(),
            mesh.num_vertices()
        )));
    }
    Ok(())
}

pub fn l2_norm_squared(mesh: &SurfaceMesh, geoms: &[ElementGeometry], nodal: &[f64]) -> f64 {
    geoms
        .iter()
        .enumerate()
        .map(|(e, g)| element_l2_squared(g, &gather(mesh, e, nodal)[..=g.dim]))
        .sum()
}

pub fn h1_seminorm_squared(mesh: &SurfaceMesh, geoms: &[ElementGeometry], nodal: &[f64]) -> f64 {
    geoms
        .iter()
        .enumerate()
        .map(|(e, g)| {
            let grad = tangential_gradient_p1(g, &gather(mesh, e, nodal)[..=g.dim]);
            grad.norm_squared() * g.measure
        })
        .sum()
}

pub fn l2_norm(mesh: &SurfaceMesh, nodal: &[f64]) -> Result<f64> {
    check_len(mesh, nodal)?;
    Ok(l2_norm_squared(mesh, &mesh.geometries()?, nodal).sqrt())
}

pub fn h1_seminorm(mesh: &SurfaceMesh, nodal: &[f64]) -> Result<f64> {
    check_len(mesh, nodal)?;
    Ok(h1_seminorm_squared(mesh, &mesh.geometries()?, nodal).sqrt())
}
