//! θ-scheme time stepping of the transformed equation on the initial surface
//! and push-forward of the discrete solution onto the moving surface.
//!
//! The semi-discrete system is `d/dt (M(t) u) + (K(t) + R(t)) u = b(t)`, with
//! the time derivative of the weighted mass taken in product form:
//!
//! ```text
//! [M⁺/τ + θ(K⁺ + R⁺)] u⁺ = [M/τ − (1−θ)(K + R)] u + θ b⁺ + (1−θ) b
//! ```
//!
//! In literal mode `M` is the mass of the initial surface and `R` is the mass
//! weighted by the reaction coefficient. In pullback mode `M` carries the area
//! ratio `J(t)`; since `dJ/dt = J c`, the reaction term is already contained in
//! `d/dt(M u)` and `R` only carries an explicit reaction offset, if any.

use std::sync::Arc;

use crate::assembly::{apply_dirichlet, cg_solve_from, Assembler, SparseSymMatrix};
use crate::calculus::{element_geometry, l2_norm_squared};
use crate::coefficients::{CoefficientMode, CoefficientSampler, Diffusion};
use crate::error::{Error, Result};
use crate::flow::{uniform_grid, FlowMap};
use crate::mesh::{mesh_size, Point, SurfaceMesh};

type TimeFn<'a> = Box<dyn Fn(f64) -> Result<Vec<f64>> + 'a>;

pub enum Source<'a> {
    /// Nodal values `f(t)`; the load vector is `M(t) f(t)`.
    Nodal(TimeFn<'a>),
    /// Assembled load vector `b(t)`.
    Load(TimeFn<'a>),
}

pub struct EvolutionProblem<'a> {
    pub mesh: &'a SurfaceMesh,
    pub flow: &'a FlowMap,
    pub mode: CoefficientMode,
    pub diffusion: &'a dyn Diffusion,
    pub initial: Vec<f64>,
    pub t_final: f64,
    pub tau: f64,
    pub theta: f64,
    pub source: Option<Source<'a>>,
    /// Time-independent per-element addition to the reaction coefficient.
    pub reaction_offset: Option<Vec<f64>>,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl<'a> EvolutionProblem<'a> {
    pub fn new(
        mesh: &'a SurfaceMesh,
        flow: &'a FlowMap,
        diffusion: &'a dyn Diffusion,
        initial: Vec<f64>,
        t_final: f64,
        tau: f64,
    ) -> Self {
        EvolutionProblem {
            mesh,
            flow,
            mode: CoefficientMode::default(),
            diffusion,
            initial,
            t_final,
            tau,
            theta: 1.0,
            source: None,
            reaction_offset: None,
            cg_tol: 1e-12,
            cg_max_iter: 20_000,
        }
    }

    pub fn with_mode(mut self, mode: CoefficientMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_source(mut self, source: Source<'a>) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_reaction_offset(mut self, offset: Vec<f64>) -> Self {
        self.reaction_offset = Some(offset);
        self
    }

    pub fn with_cg(mut self, tol: f64, max_iter: usize) -> Self {
        self.cg_tol = tol;
        self.cg_max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Validation(format!("time step must be positive, got {}", self.tau)));
        }
        if !(self.t_final >= 0.0) {
            return Err(Error::Validation(format!(
                "final time must be nonnegative, got {}",
                self.t_final
            )));
        }
        if self.t_final > self.flow.t_final() * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "final time {} exceeds flow horizon {}",
                self.t_final,
                self.flow.t_final()
            )));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::Validation(format!("theta must lie in [1/2, 1], got {}", self.theta)));
        }
        if self.initial.len() != self.mesh.num_vertices() {
            return Err(Error::Validation(format!(
                "initial data has {} values, mesh has {} vertices",
                self.initial.len(),
                self.mesh.num_vertices()
            )));
        }
        if let Some(off) = &self.reaction_offset {
            if off.len() != self.mesh.num_elements() {
                return Err(Error::Validation(format!(
                    "reaction offset has {} values, mesh has {} elements",
                    off.len(),
                    self.mesh.num_elements()
                )));
            }
        }
        Ok(())
    }

    pub fn time_levels(&self) -> Vec<f64> {
        uniform_grid(self.t_final, self.tau)
    }
}

/// Vertex interpolant of `f`.
pub fn interpolate(mesh: &SurfaceMesh, f: impl Fn(&Point) -> f64) -> Vec<f64> {
    mesh.vertices().iter().map(f).collect()
}

/// Discrete operators at one time level.
#[derive(Debug, Clone)]
pub struct LevelOperators {
    pub t: f64,
    pub mass: Arc<SparseSymMatrix>,
    pub stiffness: Arc<SparseSymMatrix>,
    pub reaction: Option<SparseSymMatrix>,
    pub load: Option<Vec<f64>>,
    pub min_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelDiagnostics {
    pub t: f64,
    pub min_c: f64,
    /// `1ᵀ M(t) u(t)`.
    pub discrete_mass: f64,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SolutionTrajectory {
    pub mode: CoefficientMode,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub diagnostics: Vec<LevelDiagnostics>,
    pub stiffness_assemblies: usize,
}

impl SolutionTrajectory {
    pub fn num_levels(&self) -> usize {
        self.times.len()
    }

    pub fn final_values(&self) -> &[f64] {
        self.values.last().expect("trajectory has at least one level")
    }

    /// Nodal values at `t`, linearly interpolated between stored levels.
    pub fn values_at(&self, t: f64) -> Result<Vec<f64>> {
        let (first, last) = (self.times[0], *self.times.last().unwrap());
        if !(t >= first && t <= last) {
            return Err(Error::TimeOutOfRange { t, t_final: last });
        }
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        if self.times[k] == t || k + 1 == self.times.len() {
            return Ok(self.values[k].clone());
        }
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        Ok(self.values[k]
            .iter()
            .zip(&self.values[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }

    /// Time levels at which the reaction coefficient was negative somewhere.
    pub fn negative_c_levels(&self) -> Vec<usize> {
        self.diagnostics
            .iter()
            .enumerate()
            .filter(|(_, d)| d.min_c < 0.0)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Builds level operators and advances the solution one θ-step at a time.
pub struct Stepper<'p, 'a> {
    problem: &'p EvolutionProblem<'a>,
    assembler: Assembler<'a>,
    sampler: CoefficientSampler<'a>,
    constant_mass: Option<Arc<SparseSymMatrix>>,
    constant_stiffness: Option<Arc<SparseSymMatrix>>,
}

impl<'p, 'a> Stepper<'p, 'a> {
    pub fn new(problem: &'p EvolutionProblem<'a>) -> Result<Self> {
        problem.validate()?;
        Ok(Stepper {
            problem,
            assembler: Assembler::new(problem.mesh)?,
            sampler: CoefficientSampler::new(problem.mesh, problem.flow, problem.mode)?,
            constant_mass: None,
            constant_stiffness: None,
        })
    }

    pub fn stiffness_assemblies(&self) -> usize {
        self.assembler.stiffness_assemblies()
    }

    pub fn operators(&mut self, t: f64) -> Result<LevelOperators> {
        let p = self.problem;
        let ne = p.mesh.num_elements();
        let offset = p.reaction_offset.as_deref();
        let (mass, stiffness, reaction_weights, mass_weight, c) = match p.mode {
            CoefficientMode::Literal => {
                let ones = vec![1.0; ne];
                let mass = match &self.constant_mass {
                    Some(m) => m.clone(),
                    None => {
                        let m = Arc::new(self.assembler.mass(&ones)?);
                        self.constant_mass = Some(m.clone());
                        m
                    }
                };
                let stiffness = match &self.constant_stiffness {
                    Some(k) => k.clone(),
                    None => {
                        let a = self.sampler.diffusion(p.diffusion, t)?;
                        let k = Arc::new(self.assembler.stiffness(&a, &ones)?);
                        if p.diffusion.is_time_independent() {
                            self.constant_stiffness = Some(k.clone());
                        }
                        k
                    }
                };
                let mut c = self.sampler.c(t)?;
                if let Some(off) = offset {
                    c.iter_mut().zip(off).for_each(|(c, d)| *c += d);
                }
                (mass, stiffness, c.clone(), ones, c)
            }
            CoefficientMode::Pullback => {
                let level = self.sampler.level(p.diffusion, t)?;
                let mass = Arc::new(self.assembler.mass(&level.mass_weight)?);
                let stiffness =
                    Arc::new(self.assembler.stiffness(&level.diffusion, &level.mass_weight)?);
                let mut c = level.c;
                let mut explicit = vec![0.0; ne];
                if let Some(off) = offset {
                    c.iter_mut().zip(off).for_each(|(c, d)| *c += d);
                    explicit.copy_from_slice(off);
                }
                (mass, stiffness, explicit, level.mass_weight, c)
            }
        };
        let reaction = if reaction_weights.iter().any(|&r| r != 0.0) {
            Some(self.assembler.weighted_mass(&reaction_weights, &mass_weight)?)
        } else {
            None
        };
        let load = match &p.source {
            None => None,
            Some(Source::Nodal(f)) => Some(mass.matvec(&checked(f(t)?, p.mesh.num_vertices())?)),
            Some(Source::Load(f)) => Some(checked(f(t)?, p.mesh.num_vertices())?),
        };
        Ok(LevelOperators {
            t,
            mass,
            stiffness,
            reaction,
            load,
            min_c: c.iter().copied().fold(f64::INFINITY, f64::min),
        })
    }

    /// One θ-step from `now` to `next`; returns the new state and CG iterations.
    pub fn step(
        &self,
        state: &[f64],
        now: &LevelOperators,
        next: &LevelOperators,
    ) -> Result<(Vec<f64>, usize)> {
        let p = self.problem;
        let tau = next.t - now.t;
        let theta = p.theta;
        let mut terms: Vec<(f64, &SparseSymMatrix)> =
            vec![(1.0 / tau, &next.mass), (theta, &next.stiffness)];
        if let Some(r) = &next.reaction {
            terms.push((theta, r));
        }
        let mut system = SparseSymMatrix::linear_combination(&terms)?;

        let mut rhs = now.mass.matvec(state);
        rhs.iter_mut().for_each(|r| *r /= tau);
        if theta < 1.0 {
            let ku = now.stiffness.matvec(state);
            for (r, k) in rhs.iter_mut().zip(&ku) {
                *r -= (1.0 - theta) * k;
            }
            if let Some(rm) = &now.reaction {
                for (r, k) in rhs.iter_mut().zip(rm.matvec(state)) {
                    *r -= (1.0 - theta) * k;
                }
            }
        }
        if let Some(b) = &next.load {
            rhs.iter_mut().zip(b).for_each(|(r, b)| *r += theta * b);
        }
        if theta < 1.0 {
            if let Some(b) = &now.load {
                rhs.iter_mut().zip(b).for_each(|(r, b)| *r += (1.0 - theta) * b);
            }
        }
        apply_dirichlet(&mut system, &mut rhs, p.mesh.boundary_vertices());
        let mut guess = state.to_vec();
        for &b in p.mesh.boundary_vertices() {
            guess[b] = 0.0;
        }
        let sol = cg_solve_from(&system, &rhs, guess, p.cg_tol, p.cg_max_iter)?;
        Ok((sol.x, sol.iterations))
    }
}

fn checked(v: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    if v.len() != n {
        return Err(Error::Validation(format!(
            "source returned {} values, expected {n}",
            v.len()
        )));
    }
    Ok(v)
}

/// Advances `state` from `t` to `t + tau` (convenience wrapper around [`Stepper`]).
pub fn step_theta(problem: &EvolutionProblem, state: &[f64], t: f64, tau: f64) -> Result<Vec<f64>> {
    let mut stepper = Stepper::new(problem)?;
    let now = stepper.operators(t)?;
    let next = stepper.operators(t + tau)?;
    Ok(stepper.step(state, &now, &next)?.0)
}

pub fn solve_evolution(problem: &EvolutionProblem) -> Result<SolutionTrajectory> {
    let mut stepper = Stepper::new(problem)?;
    let times = problem.time_levels();
    let mut u = problem.initial.clone();
    for &b in problem.mesh.boundary_vertices() {
        u[b] = 0.0;
    }
    let mut now = stepper.operators(0.0)?;
    let mut values = Vec::with_capacity(times.len());
    let mut diagnostics = Vec::with_capacity(times.len());
    diagnostics.push(LevelDiagnostics {
        t: 0.0,
        min_c: now.min_c,
        discrete_mass: now.mass.matvec(&u).iter().sum(),
        cg_iterations: 0,
    });
    values.push(u.clone());
    for (k, &t) in times.iter().enumerate().skip(1) {
        let next = stepper.operators(t).map_err(|e| e.at_level(k))?;
        let (u_next, iterations) = stepper.step(&u, &now, &next).map_err(|e| e.at_level(k))?;
        u = u_next;
        diagnostics.push(LevelDiagnostics {
            t,
            min_c: next.min_c,
            discrete_mass: next.mass.matvec(&u).iter().sum(),
            cg_iterations: iterations,
        });
        values.push(u.clone());
        now = next;
    }
    Ok(SolutionTrajectory {
        mode: problem.mode,
        times,
        values,
        diagnostics,
        stiffness_assemblies: stepper.stiffness_assemblies(),
    })
}

/// Moved vertex positions paired with the nodal values at time `t`.
pub fn pushforward_snapshot(
    traj: &SolutionTrajectory,
    flow: &FlowMap,
    mesh: &SurfaceMesh,
    t: f64,
) -> Result<(Vec<Point>, Vec<f64>)> {
    Ok((flow.moved_positions(mesh, t)?, traj.values_at(t)?))
}

/// Point location on the initial mesh: element index and barycentric
/// coordinates of the closest element, with its distance measure.
pub fn locate(mesh: &SurfaceMesh, x: &Point) -> Result<(usize, [f64; 3], f64)> {
    let mut best: Option<(usize, [f64; 3], f64)> = None;
    for e in 0..mesh.num_elements() {
        let coords = mesh.element_coords(e);
        let g = element_geometry(&coords)?;
        let d = x - coords[0];
        let rhs: Vec<f64> = g.tangent_vectors().iter().map(|t| t.dot(&d)).collect();
        let mut xi = [0.0; 2];
        for i in 0..g.dim {
            for j in 0..g.dim {
                xi[i] += g.inverse_metric[(i, j)] * rhs[j];
            }
        }
        let mut lambda = [0.0; 3];
        lambda[0] = 1.0 - xi[..g.dim].iter().sum::<f64>();
        lambda[1..=g.dim].copy_from_slice(&xi[..g.dim]);
        let projected = coords[0]
            + g.tangent_vectors()
                .iter()
                .zip(&xi)
                .map(|(t, s)| t * *s)
                .sum::<Point>();
        let diam = g.tangent_vectors().iter().map(|t| t.norm()).fold(0.0, f64::max);
        let outside = lambda[..=g.dim].iter().map(|l| (-l).max(0.0)).fold(0.0, f64::max);
        let distance = (x - projected).norm().max(outside * diam);
        if best.as_ref().is_none_or(|b| distance < b.2) {
            best = Some((e, lambda, distance));
        }
    }
    best.ok_or(Error::PointNotLocated {
        distance: f64::INFINITY,
    })
}

/// Value of the pushed-forward solution at a point `p` of the moved surface.
pub fn evaluate_pushforward(
    traj: &SolutionTrajectory,
    flow: &FlowMap,
    mesh: &SurfaceMesh,
    p: &Point,
    t: f64,
) -> Result<f64> {
    evaluate_pushforward_within(traj, flow, mesh, p, t, 1e-6 * mesh_size(mesh))
}

pub fn evaluate_pushforward_within(
    traj: &SolutionTrajectory,
    flow: &FlowMap,
    mesh: &SurfaceMesh,
    p: &Point,
    t: f64,
    tolerance: f64,
) -> Result<f64> {
    let x = flow.inverse_at(p, t)?;
    let (e, lambda, distance) = locate(mesh, &x)?;
    if distance > tolerance {
        return Err(Error::PointNotLocated { distance });
    }
    let values = traj.values_at(t)?;
    Ok(mesh
        .element(e)
        .iter()
        .zip(lambda)
        .map(|(&v, l)| l * values[v])
        .sum())
}

/// Discrete L² norm of nodal values on a mesh with moved positions.
pub fn moved_l2_norm(mesh: &SurfaceMesh, positions: Vec<Point>, nodal: &[f64]) -> Result<f64> {
    let moved = mesh.with_positions(positions)?;
    Ok(l2_norm_squared(&moved, &moved.geometries()?, nodal).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::l2_norm;
    use crate::coefficients::{ScaledTangential, TangentialIdentity};
    use crate::flow::{Rotate, UniformScale};
    use crate::mesh::{circle, disk, icosphere};

    #[test]
    fn constant_stays_constant_without_flow() {
        let m = icosphere(2);
        let f = FlowMap::stationary(1.0);
        let d = TangentialIdentity;
        let p = EvolutionProblem::new(&m, &f, &d, vec![2.5; m.num_vertices()], 0.5, 0.1);
        let traj = solve_evolution(&p).unwrap();
        for u in &traj.values {
            assert!(u.iter().all(|&x| (x - 2.5).abs() < 1e-12));
        }
    }

    #[test]
    fn pure_reaction_is_scalar_implicit_euler() {
        let m = icosphere(1);
        let f = FlowMap::stationary(1.0);
        let d = ScaledTangential { kappa: 0.0 };
        let lambda = 1.7;
        let tau = 0.1;
        let u0: Vec<f64> = m.vertices().iter().map(|x| 1.0 + x.x * x.y).collect();
        let p = EvolutionProblem::new(&m, &f, &d, u0.clone(), 0.3, tau)
            .with_mode(CoefficientMode::Literal)
            .with_reaction_offset(vec![lambda; m.num_elements()]);
        let u1 = step_theta(&p, &u0, 0.0, tau).unwrap();
        for (a, b) in u1.iter().zip(&u0) {
            assert!((a - b / (1.0 + tau * lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn pullback_step_conserves_discrete_mass() {
        let m = icosphere(2);
        let f = FlowMap::analytic(Box::new(UniformScale { rate: 0.5 }), 1.0);
        let d = TangentialIdentity;
        let u0 = interpolate(&m, |x| 1.0 + x.z + x.x * x.y);
        let p = EvolutionProblem::new(&m, &f, &d, u0, 1.0, 0.1).with_cg(1e-14, 10_000);
        let traj = solve_evolution(&p).unwrap();
        let m0 = traj.diagnostics[0].discrete_mass;
        for diag in &traj.diagnostics {
            assert!((diag.discrete_mass - m0).abs() <= 1e-10 * m0.abs());
        }
        // the mass weight grows, so the values must decay on average
        let mean_final: f64 = traj.final_values().iter().sum::<f64>();
        let mean_initial: f64 = traj.values[0].iter().sum::<f64>();
        assert!(mean_final < mean_initial);
    }

    #[test]
    fn zero_final_time_gives_single_level() {
        let m = circle(16).unwrap();
        let f = FlowMap::stationary(1.0);
        let d = TangentialIdentity;
        let u0 = interpolate(&m, |x| x.x);
        let traj = solve_evolution(&EvolutionProblem::new(&m, &f, &d, u0.clone(), 0.0, 0.1)).unwrap();
        assert_eq!(traj.num_levels(), 1);
        assert_eq!(traj.values[0], u0);
    }

    #[test]
    fn invalid_problems_rejected() {
        let m = circle(16).unwrap();
        let f = FlowMap::stationary(1.0);
        let d = TangentialIdentity;
        let u0 = vec![0.0; 16];
        assert!(solve_evolution(&EvolutionProblem::new(&m, &f, &d, u0.clone(), 1.0, 0.0)).is_err());
        assert!(solve_evolution(&EvolutionProblem::new(&m, &f, &d, u0.clone(), 1.0, 0.1).with_theta(0.3)).is_err());
        assert!(solve_evolution(&EvolutionProblem::new(&m, &f, &d, vec![0.0; 3], 1.0, 0.1)).is_err());
        assert!(solve_evolution(&EvolutionProblem::new(&m, &f, &d, u0, 2.0, 0.1)).is_err());
    }

    #[test]
    fn implicit_euler_is_l2_stable() {
        let m = icosphere(2);
        let f = FlowMap::stationary(1.0);
        let d = TangentialIdentity;
        let u0 = interpolate(&m, |x| (3.0 * x.x).sin() + x.y * x.z);
        let p = EvolutionProblem::new(&m, &f, &d, u0, 1.0, 0.05)
            .with_mode(CoefficientMode::Literal)
            .with_reaction_offset(vec![0.3; m.num_elements()]);
        let traj = solve_evolution(&p).unwrap();
        let norms: Vec<f64> = traj.values.iter().map(|u| l2_norm(&m, u).unwrap()).collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-8));
        }
    }

    #[test]
    fn dirichlet_vertices_stay_zero() {
        let m = disk(2);
        let f = FlowMap::stationary(1.0);
        let d = TangentialIdentity;
        let u0 = interpolate(&m, |x| 1.0 - x.norm_squared());
        let traj = solve_evolution(&EvolutionProblem::new(&m, &f, &d, u0, 0.2, 0.05)).unwrap();
        for u in &traj.values {
            for &b in m.boundary_vertices() {
                assert_eq!(u[b], 0.0);
            }
        }
        assert!(traj.final_values().iter().all(|&x| x >= -1e-12));
    }

    #[test]
    fn pushforward_examples() {
        let m = icosphere(2);
        let scale = FlowMap::analytic(Box::new(UniformScale { rate: 1.0 }), 1.0);
        let d = TangentialIdentity;
        let u0 = interpolate(&m, |x| x.x * x.y + 0.5);
        let traj = solve_evolution(&EvolutionProblem::new(&m, &scale, &d, u0.clone(), 1.0, 0.25)).unwrap();
        let (pos0, val0) = pushforward_snapshot(&traj, &scale, &m, 0.0).unwrap();
        assert_eq!(pos0, m.vertices());
        assert_eq!(val0, u0);
        let (pos1, val1) = pushforward_snapshot(&traj, &scale, &m, 1.0).unwrap();
        for (p, x) in pos1.iter().zip(m.vertices()) {
            assert_eq!(*p, 2.0 * x);
        }
        assert_eq!(val1, traj.final_values());

        // vertex images and edge midpoints
        for v in [0, 7, 40] {
            let got = evaluate_pushforward(&traj, &scale, &m, &pos1[v], 1.0).unwrap();
            assert!((got - val1[v]).abs() < 1e-10);
        }
        let el = m.element(3);
        let mid = 0.5 * (pos1[el[0]] + pos1[el[1]]);
        let got = evaluate_pushforward(&traj, &scale, &m, &mid, 1.0).unwrap();
        assert!((got - 0.5 * (val1[el[0]] + val1[el[1]])).abs() < 1e-8);

        // a point far off the surface is rejected
        let off = Point::new(0.0, 0.0, 0.0);
        assert!(matches!(
            evaluate_pushforward(&traj, &scale, &m, &off, 1.0),
            Err(Error::PointNotLocated { .. })
        ));
    }

    #[test]
    fn rotation_pushforward_preserves_l2_norm() {
        let m = icosphere(2);
        let rot = FlowMap::analytic(Box::new(Rotate { angular_speed: 1.0 }), 1.0);
        let d = TangentialIdentity;
        let u0 = interpolate(&m, |x| x.x * x.y);
        let traj = solve_evolution(&EvolutionProblem::new(&m, &rot, &d, u0, 1.0, 0.1)).unwrap();
        for &t in &traj.times {
            let (pos, val) = pushforward_snapshot(&traj, &rot, &m, t).unwrap();
            let moved = moved_l2_norm(&m, pos, &val).unwrap();
            let fixed = l2_norm(&m, &val).unwrap();
            assert!((moved - fixed).abs() <= 1e-10 * fixed.max(1e-300));
        }
        let constant = solve_evolution(&EvolutionProblem::new(&m, &rot, &d, vec![3.0; m.num_vertices()], 1.0, 0.1)).unwrap();
        let moved = rot.moved_positions(&m, 0.6).unwrap();
        let q = 0.5 * (moved[m.element(5)[1]] + moved[m.element(5)[2]]);
        let v = evaluate_pushforward(&constant, &rot, &m, &q, 0.6).unwrap();
        assert!((v - 3.0).abs() < 1e-10);
    }

    /// On a regular polygon the sampled `cos θ` is an exact generalized
    /// eigenvector of (K, M); its discrete decay `e^{-λ_h t}` isolates the
    /// time-stepping error.
    fn time_order(theta: f64) -> f64 {
        let m = circle(64).unwrap();
        let u0 = interpolate(&m, |x| x.x);
        let asm = Assembler::new(&m).unwrap();
        let ones = vec![1.0; m.num_elements()];
        let mass = asm.mass(&ones).unwrap();
        let a = CoefficientSampler::new(&m, &FlowMap::stationary(1.0), CoefficientMode::Literal)
            .unwrap()
            .diffusion(&TangentialIdentity, 0.0)
            .unwrap();
        let stiff = asm.stiffness(&a, &ones).unwrap();
        let lambda_h = stiff.bilinear(&u0, &u0) / mass.bilinear(&u0, &u0);
        let f = FlowMap::stationary(1.0);
        let d = TangentialIdentity;
        let taus = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = taus
            .iter()
            .map(|&tau| {
                let p = EvolutionProblem::new(&m, &f, &d, u0.clone(), 1.0, tau)
                    .with_theta(theta)
                    .with_cg(1e-14, 10_000);
                let u = solve_evolution(&p).unwrap();
                let exact: Vec<f64> = u0.iter().map(|v| (-lambda_h).exp() * v).collect();
                let diff: Vec<f64> = u.final_values().iter().zip(&exact).map(|(a, b)| a - b).collect();
                l2_norm(&m, &diff).unwrap()
            })
            .collect();
        let x: Vec<f64> = taus.to_vec();
        match crate::perturbation::fit_log_slope(&x, &errs).unwrap() {
            crate::perturbation::Slope::Fitted(s) => s,
            crate::perturbation::Slope::Exact => f64::NAN,
        }
    }

    #[test]
    fn implicit_euler_is_first_order_in_time() {
        let order = time_order(1.0);
        assert!((order - 1.0).abs() <= 0.2, "order {order}");
    }

    #[test]
    fn crank_nicolson_is_second_order_in_time() {
        let order = time_order(0.5);
        assert!((order - 2.0).abs() <= 0.3, "order {order}");
    }

    #[test]
    fn pushforward_keeps_value_multiset() {
        let m = icosphere(2);
        let scale = FlowMap::analytic(Box::new(UniformScale { rate: 1.0 }), 1.0);
        let d = TangentialIdentity;
        let u0 = interpolate(&m, |x| x.x * x.y + 0.5 * x.z);
        let traj = solve_evolution(&EvolutionProblem::new(&m, &scale, &d, u0, 1.0, 0.25)).unwrap();
        for (k, &t) in traj.times.iter().enumerate() {
            let (_, vals) = pushforward_snapshot(&traj, &scale, &m, t).unwrap();
            let mut a = vals.clone();
            let mut b = traj.values[k].clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert_eq!(a, b);
        }
    }
}
