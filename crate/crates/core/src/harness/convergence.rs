//! Refinement studies against closed-form solutions.

use std::path::Path;

use super::config::{FlowSpec, InitialSpec, MeshSpec, RunConfig};
use super::output::{cell, write_csv};
use crate::calculus::{h1_seminorm_squared, l2_norm_squared};
use crate::coefficients::CoefficientMode;
use crate::error::{Error, Result};
use crate::evolution::{solve_evolution, EvolutionProblem, SolutionTrajectory};
use crate::mesh::{mesh_size, Point, SurfaceMesh};

/// Closed-form `ũ(x, t) = a(t) Y(x)` on the initial surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Benchmark {
    pub initial: InitialSpec,
    /// Eigenvalue of `−Δ` for `Y`.
    pub eigenvalue: f64,
    pub kappa: f64,
    pub flow: FlowSpec,
    pub mode: CoefficientMode,
    /// Intrinsic dimension `n`.
    pub dim: usize,
}

impl Benchmark {
    /// The benchmark matching `config`, if one exists.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        let unknown = |why: &str| {
            Err(Error::Validation(format!(
                "unknown benchmark: {why} (mesh {}, u0 {}, flow {}, mode {})",
                config.mesh, config.u0, config.flow, config.mode
            )))
        };
        let (mesh, _) = config.mesh.build(0)?;
        if !mesh.is_closed() {
            return unknown("no closed-form solution with a boundary");
        }
        let n = mesh.dim();
        let eigenvalue = match config.u0 {
            InitialSpec::Constant(_) => 0.0,
            _ if !config.mesh.is_unit_sphere() => {
                return unknown("non-constant data needs the unit sphere or circle")
            }
            // spherical harmonics of degree l: l (l + n − 1)
            InitialSpec::CosTheta => n as f64,
            InitialSpec::HarmonicX1X2 => 2.0 * (n as f64 + 1.0),
            InitialSpec::Bump => return unknown("bump is not an eigenfunction"),
        };
        let Some(kappa) = config.diffusion.isotropic_scale() else {
            return unknown("anisotropic diffusion");
        };
        match (config.flow, config.mode) {
            (FlowSpec::EllipsoidAxis(a), _) if a != 0.0 => return unknown("ellipsoid_axis flow"),
            (FlowSpec::Rotate(w), CoefficientMode::Literal) if w != 0.0 => {
                return unknown("rotation in literal mode has a time-dependent reaction term")
            }
            _ => {}
        }
        Ok(Benchmark {
            initial: config.u0,
            eigenvalue,
            kappa,
            flow: config.flow,
            mode: config.mode,
            dim: n,
        })
    }

    /// Time factor `a(t)`.
    pub fn amplitude(&self, t: f64) -> f64 {
        let n = self.dim as f64;
        let kl = self.kappa * self.eigenvalue;
        match (self.flow, self.mode) {
            (FlowSpec::UniformScale(a), CoefficientMode::Pullback) => {
                let r = 1.0 + a * t;
                r.powf(-n) * (-kl * t / r).exp()
            }
            (FlowSpec::UniformScale(a), CoefficientMode::Literal) => (-(n * a + kl) * t).exp(),
            (FlowSpec::Radial, CoefficientMode::Pullback) => {
                (-n * t - kl * 0.5 * (1.0 - (-2.0 * t).exp())).exp()
            }
            (FlowSpec::Radial, CoefficientMode::Literal) => (-n * t.exp_m1() - kl * t).exp(),
            _ => (-kl * t).exp(),
        }
    }

    pub fn exact(&self, x: &Point, t: f64) -> f64 {
        self.amplitude(t) * self.initial.eval(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EocRow {
    pub level: usize,
    pub h: f64,
    pub l2_err: f64,
    pub l2_eoc: Option<f64>,
    pub h1_err: f64,
    pub h1_eoc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EocTable {
    pub rows: Vec<EocRow>,
}

pub const EOC_HEADER: [&str; 6] = ["level", "h", "l2_err", "l2_eoc", "h1_err", "h1_eoc"];

/// `log(E_k / E_{k+1}) / log(h_k / h_{k+1})`.
pub fn eoc(e0: f64, e1: f64, h0: f64, h1: f64) -> Option<f64> {
    (e0 > 0.0 && e1 > 0.0).then(|| (e0 / e1).ln() / (h0 / h1).ln())
}

impl EocTable {
    pub fn from_errors(levels: &[usize], h: &[f64], l2: &[f64], h1: &[f64]) -> Self {
        let rows = (0..levels.len())
            .map(|k| EocRow {
                level: levels[k],
                h: h[k],
                l2_err: l2[k],
                l2_eoc: (k > 0).then(|| eoc(l2[k - 1], l2[k], h[k - 1], h[k])).flatten(),
                h1_err: h1[k],
                h1_eoc: (k > 0).then(|| eoc(h1[k - 1], h1[k], h[k - 1], h[k])).flatten(),
            })
            .collect();
        EocTable { rows }
    }

    pub fn min_l2_eoc(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.l2_eoc).reduce(f64::min)
    }

    pub fn min_h1_eoc(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.h1_eoc).reduce(f64::min)
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.level.to_string(),
                    r.h.to_string(),
                    r.l2_err.to_string(),
                    cell(r.l2_eoc),
                    r.h1_err.to_string(),
                    cell(r.h1_eoc),
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &EOC_HEADER, &self.csv_rows())
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub benchmark: Benchmark,
    /// Errors on the initial surface.
    pub fixed: EocTable,
    /// Errors on the moved surface at the final time, when the flow moves it.
    pub moved: Option<EocTable>,
    pub taus: Vec<f64>,
}

/// Solves one refinement level; returns the mesh, step and trajectory.
pub fn solve_level(
    config: &RunConfig,
    refinements: usize,
) -> Result<(SurfaceMesh, usize, f64, SolutionTrajectory)> {
    let (mesh, label) = config.mesh.build(refinements)?;
    let flow = config.flow_map(&mesh)?;
    let diffusion = config.diffusion.build();
    let tau = config.tau_for_mesh(&mesh);
    let problem = EvolutionProblem::new(
        &mesh,
        &flow,
        diffusion.as_ref(),
        config.initial_values(&mesh),
        config.t_final,
        tau,
    )
    .with_mode(config.mode)
    .with_theta(config.theta)
    .with_cg(config.cg_tol, config.cg_max_iter);
    let traj = solve_evolution(&problem)?;
    drop(problem);
    Ok((mesh, label, tau, traj))
}

fn errors(mesh: &SurfaceMesh, err: &[f64]) -> Result<(f64, f64)> {
    let geoms = mesh.geometries()?;
    Ok((
        l2_norm_squared(mesh, &geoms, err).sqrt(),
        h1_seminorm_squared(mesh, &geoms, err).sqrt(),
    ))
}

pub fn run_convergence(config: &RunConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let benchmark = Benchmark::from_config(config)?;
    let moving = !config.flow.is_identity();
    let (mut labels, mut hs, mut taus) = (Vec::new(), Vec::new(), Vec::new());
    let (mut l2, mut h1, mut l2m, mut h1m) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..config.levels {
        let (mesh, label, tau, traj) = solve_level(config, k)?;
        let t = *traj.times.last().unwrap();
        let err: Vec<f64> = mesh
            .vertices()
            .iter()
            .zip(traj.final_values())
            .map(|(x, u)| u - benchmark.exact(x, t))
            .collect();
        let (a, b) = errors(&mesh, &err)?;
        l2.push(a);
        h1.push(b);
        if moving {
            let flow = config.flow_map(&mesh)?;
            let moved = mesh.with_positions(flow.moved_positions(&mesh, t)?)?;
            let (a, b) = errors(&moved, &err)?;
            l2m.push(a);
            h1m.push(b);
        }
        labels.push(label);
        hs.push(mesh_size(&mesh));
        taus.push(tau);
    }
    let fixed = EocTable::from_errors(&labels, &hs, &l2, &h1);
    let moved = moving.then(|| EocTable::from_errors(&labels, &hs, &l2m, &h1m));
    Ok(ConvergenceReport {
        benchmark,
        fixed,
        moved,
        taus,
    })
}

impl MeshSpec {
    /// Short label used in reports.
    pub fn family(&self) -> &'static str {
        match self {
            MeshSpec::Icosphere(_) => "icosphere",
            MeshSpec::Circle(_) => "circle",
            MeshSpec::Disk(_) => "disk",
            MeshSpec::Ellipsoid { .. } => "ellipsoid",
            MeshSpec::File(_) => "file",
        }
    }
}
