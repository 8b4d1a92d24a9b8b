//! Sparse P1 mass / stiffness assembly, Dirichlet elimination and a
//! Jacobi-preconditioned conjugate gradient solver.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::sync::Arc;

use crate::calculus::{reference_gradient, ChartMatrix};
use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;

/// Compressed-row sparsity pattern with sorted column indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    dim: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SparsityPattern {
    pub fn from_mesh(mesh: &SurfaceMesh) -> Self {
        let mut rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); mesh.num_vertices()];
        for el in mesh.elements() {
            for &a in el {
                rows[a].extend(el.iter().copied());
            }
        }
        Self::from_rows(rows.into_iter().map(|r| r.into_iter().collect()).collect())
    }

    fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        for r in &rows {
            col_indices.extend_from_slice(r);
            row_offsets.push(col_indices.len());
        }
        SparsityPattern {
            dim: rows.len(),
            row_offsets,
            col_indices,
        }
    }

    pub fn dense(dim: usize) -> Self {
        Self::from_rows((0..dim).map(|_| (0..dim).collect()).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        self.row(i)
            .binary_search(&j)
            .ok()
            .map(|k| self.row_offsets[i] + k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseSymMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let n = pattern.nnz();
        SparseSymMatrix {
            pattern,
            values: vec![0.0; n],
            symmetric: true,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let pattern = SparsityPattern::from_rows((0..dim).map(|i| vec![i]).collect());
        SparseSymMatrix {
            pattern: Arc::new(pattern),
            values: vec![1.0; dim],
            symmetric: true,
        }
    }

    /// Builds a matrix from a dense row-major array, keeping nonzeros only.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let pattern = SparsityPattern::from_rows(
            rows.iter()
                .enumerate()
                .map(|(i, r)| (0..n).filter(|&j| r[j] != 0.0 || i == j).collect())
                .collect(),
        );
        let values = (0..n)
            .flat_map(|i| pattern.row(i).iter().map(move |&j| rows[i][j]).collect::<Vec<_>>())
            .collect();
        let mut m = SparseSymMatrix {
            pattern: Arc::new(pattern),
            values,
            symmetric: true,
        };
        m.symmetric = m.asymmetry() <= 1e-12 * m.max_abs();
        m
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.pattern.row_offsets[i]..self.pattern.row_offsets[i + 1];
        self.pattern.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row_entries(i).map(|(j, a)| a * x[j]).sum();
        }
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.dim())
            .map(|i| x[i] * self.row_entries(i).map(|(j, a)| a * y[j]).sum::<f64>())
            .sum()
    }

    pub fn sum_entries(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for (j, a) in self.row_entries(i) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn scaled(&self, s: f64) -> Self {
        SparseSymMatrix {
            pattern: self.pattern.clone(),
            values: self.values.iter().map(|v| s * v).collect(),
            symmetric: self.symmetric,
        }
    }

    /// `Σ s_k A_k` over matrices sharing one sparsity pattern.
    pub fn linear_combination(terms: &[(f64, &SparseSymMatrix)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::Validation("empty linear combination".into()))?;
        let mut values = vec![0.0; first.values.len()];
        let mut symmetric = true;
        for (s, m) in terms {
            if !Arc::ptr_eq(&m.pattern, &first.pattern) && m.pattern != first.pattern {
                return Err(Error::Validation(
                    "linear combination of matrices with different patterns".into(),
                ));
            }
            symmetric &= m.symmetric;
            for (v, a) in values.iter_mut().zip(&m.values) {
                *v += s * a;
            }
        }
        Ok(SparseSymMatrix {
            pattern: first.pattern.clone(),
            values,
            symmetric,
        })
    }
}

fn local_mass(dim: usize, i: usize, j: usize) -> f64 {
    let n = dim as f64;
    let base = 1.0 / ((n + 1.0) * (n + 2.0));
    if i == j {
        2.0 * base
    } else {
        base
    }
}

/// Assembles P1 operators on a fixed mesh, reusing the sparsity pattern and the
/// initial element measures.
pub struct Assembler<'a> {
    mesh: &'a SurfaceMesh,
    pattern: Arc<SparsityPattern>,
    /// Value-array positions of each element's local matrix, row-major.
    scatter: Vec<usize>,
    measures: Vec<f64>,
    stiffness_count: Cell<usize>,
}

impl<'a> Assembler<'a> {
    pub fn new(mesh: &'a SurfaceMesh) -> Result<Self> {
        let pattern = Arc::new(SparsityPattern::from_mesh(mesh));
        let mut scatter = Vec::with_capacity(mesh.num_elements() * (mesh.dim() + 1).pow(2));
        for el in mesh.elements() {
            for &a in el {
                for &b in el {
                    scatter.push(pattern.position(a, b).expect("entry in mesh pattern"));
                }
            }
        }
        let measures = mesh.geometries()?.iter().map(|g| g.measure).collect();
        Ok(Assembler {
            mesh,
            pattern,
            scatter,
            measures,
            stiffness_count: Cell::new(0),
        })
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    /// Number of stiffness assemblies performed by this assembler.
    pub fn stiffness_assemblies(&self) -> usize {
        self.stiffness_count.get()
    }

    fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.mesh.num_elements() {
            return Err(Error::Validation(format!(
                "{what} has {len} entries, mesh has {} elements",
                self.mesh.num_elements()
            )));
        }
        Ok(())
    }

    fn assemble(&self, local: impl Fn(usize, usize, usize) -> f64) -> SparseSymMatrix {
        let mut m = SparseSymMatrix::zeros(self.pattern.clone());
        let k = self.mesh.dim() + 1;
        for e in 0..self.mesh.num_elements() {
            let slots = &self.scatter[e * k * k..(e + 1) * k * k];
            for i in 0..k {
                for j in 0..k {
                    m.values[slots[i * k + j]] += local(e, i, j);
                }
            }
        }
        m
    }

    pub fn mass(&self, weights: &[f64]) -> Result<SparseSymMatrix> {
        self.check_len("mass weight", weights.len())?;
        if let Some((e, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
            return Err(Error::Validation(format!(
                "mass weight must be positive, element {e} has {w}"
            )));
        }
        Ok(self.weighted_mass_unchecked(weights, None))
    }

    /// Mass matrix with element weight `c_e * w_e`; `c` may have any sign.
    pub fn weighted_mass(&self, c: &[f64], weights: &[f64]) -> Result<SparseSymMatrix> {
        self.check_len("reaction coefficient", c.len())?;
        self.check_len("mass weight", weights.len())?;
        Ok(self.weighted_mass_unchecked(weights, Some(c)))
    }

    fn weighted_mass_unchecked(&self, weights: &[f64], c: Option<&[f64]>) -> SparseSymMatrix {
        let dim = self.mesh.dim();
        self.assemble(|e, i, j| {
            let w = match c {
                Some(c) => c[e] * weights[e],
                None => weights[e],
            };
            w * self.measures[e] * local_mass(dim, i, j)
        })
    }

    pub fn stiffness(
        &self,
        diffusion: &[ChartMatrix],
        weights: &[f64],
    ) -> Result<SparseSymMatrix> {
        self.check_len("diffusion tensor list", diffusion.len())?;
        self.check_len("mass weight", weights.len())?;
        let dim = self.mesh.dim();
        for (e, a) in diffusion.iter().enumerate() {
            if a.dim() != dim {
                return Err(Error::InvalidDiffusion {
                    element: e,
                    reason: format!("chart tensor has dimension {}, expected {dim}", a.dim()),
                });
            }
            let scale = a.max_abs();
            if a.asymmetry() > 1e-12 * scale {
                return Err(Error::InvalidDiffusion {
                    element: e,
                    reason: "chart tensor is not symmetric".into(),
                });
            }
            if a.min_eigenvalue() < -1e-12 * scale {
                return Err(Error::InvalidDiffusion {
                    element: e,
                    reason: "chart tensor is indefinite".into(),
                });
            }
        }
        self.stiffness_count.set(self.stiffness_count.get() + 1);
        Ok(self.assemble(|e, i, j| {
            let a = &diffusion[e];
            let mut s = 0.0;
            for k in 0..dim {
                for l in 0..dim {
                    s += a[(k, l)] * reference_gradient(dim, i, k) * reference_gradient(dim, j, l);
                }
            }
            weights[e] * self.measures[e] * s
        }))
    }
}

pub fn assemble_mass(mesh: &SurfaceMesh, mass_weight: &[f64]) -> Result<SparseSymMatrix> {
    Assembler::new(mesh)?.mass(mass_weight)
}

pub fn assemble_stiffness(
    mesh: &SurfaceMesh,
    diffusion: &[ChartMatrix],
    mass_weight: &[f64],
) -> Result<SparseSymMatrix> {
    Assembler::new(mesh)?.stiffness(diffusion, mass_weight)
}

pub fn assemble_weighted_mass(
    mesh: &SurfaceMesh,
    c: &[f64],
    mass_weight: &[f64],
) -> Result<SparseSymMatrix> {
    Assembler::new(mesh)?.weighted_mass(c, mass_weight)
}

/// Symmetric elimination of homogeneous Dirichlet conditions on `boundary`.
pub fn apply_dirichlet(matrix: &mut SparseSymMatrix, rhs: &mut [f64], boundary: &BTreeSet<usize>) {
    if boundary.is_empty() {
        return;
    }
    let n = matrix.dim();
    let prescribed = |_: usize| 0.0;
    let pattern = matrix.pattern.clone();
    for i in 0..n {
        let range = pattern.row_offsets[i]..pattern.row_offsets[i + 1];
        if boundary.contains(&i) {
            for k in range {
                matrix.values[k] = if pattern.col_indices[k] == i { 1.0 } else { 0.0 };
            }
            rhs[i] = prescribed(i);
        } else {
            for k in range {
                let j = pattern.col_indices[k];
                if boundary.contains(&j) {
                    rhs[i] -= matrix.values[k] * prescribed(j);
                    matrix.values[k] = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn cg_solve(a: &SparseSymMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<CgSolution> {
    cg_solve_from(a, b, vec![0.0; b.len()], tol, max_iter)
}

/// Jacobi-preconditioned conjugate gradients from the initial guess `x`.
/// Stops when the true residual satisfies `‖b − Ax‖ ≤ tol ‖b‖`.
pub fn cg_solve_from(
    a: &SparseSymMatrix,
    b: &[f64],
    mut x: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<CgSolution> {
    let n = a.dim();
    if b.len() != n || x.len() != n {
        return Err(Error::Validation(format!(
            "system of dimension {n} with rhs {} and guess {}",
            b.len(),
            x.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Validation(format!("cg tolerance must be positive, got {tol}")));
    }
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::Numerical(format!(
            "matrix is not positive definite: diagonal entry {i} is {}",
            diag[i]
        )));
    }
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let target = tol * bnorm;
    let mut ax = a.matvec(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, ax)| b - ax).collect();
    let mut iterations = 0;
    loop {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= target {
            return Ok(CgSolution {
                x,
                iterations,
                relative_residual: rnorm / bnorm,
            });
        }
        // restart from the true residual
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        loop {
            if iterations >= max_iter {
                return Err(Error::CgFailed {
                    iterations,
                    residual: dot(&r, &r).sqrt() / bnorm,
                    level: None,
                });
            }
            a.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::Numerical(format!(
                    "matrix is not positive definite (pᵀAp = {pap:e})"
                )));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if dot(&r, &r).sqrt() <= target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        a.matvec_into(&x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
    }
}
