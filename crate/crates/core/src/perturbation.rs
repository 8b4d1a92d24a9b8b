//! Sensitivity of the solution to an `O(h)` error in the reaction coefficient.
//!
//! For each amplitude `h` the problem is solved once with the exact `c` and once
//! with a perturbed `c_h`; the difference is measured in `L²(0, T; H¹(Γ₀))`.

use std::sync::Arc;

use crate::assembly::Assembler;
use crate::calculus::{h1_seminorm_squared, l2_norm_squared};
use crate::coefficients::{
    CoefficientMode, CoefficientSampler, PerturbationProfile, TangentialIdentity,
};
use crate::error::{Error, Result};
use crate::evolution::{solve_evolution, EvolutionProblem, SolutionTrajectory, Source};
use crate::flow::{integrate_flow, FlowMap, OdeScheme, VelocityField};
use crate::mesh::{Point, SurfaceMesh};

/// `(∫₀ᵀ ‖a(t) − b(t)‖²_{H¹} dt)^{1/2}` by the composite trapezoidal rule.
pub fn spacetime_h1_norm(
    a: &SolutionTrajectory,
    b: &SolutionTrajectory,
    mesh: &SurfaceMesh,
) -> Result<f64> {
    if a.times != b.times {
        return Err(Error::Validation(
            "trajectories do not share time levels".into(),
        ));
    }
    let diff: Vec<Vec<f64>> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| x.iter().zip(y).map(|(x, y)| x - y).collect())
        .collect();
    spacetime_norm(&a.times, &diff, mesh)
}

/// Space-time norm of a single nodal trajectory.
pub fn spacetime_norm(times: &[f64], values: &[Vec<f64>], mesh: &SurfaceMesh) -> Result<f64> {
    if times.len() != values.len() {
        return Err(Error::Validation(format!(
            "{} time levels but {} nodal vectors",
            times.len(),
            values.len()
        )));
    }
    let geoms = mesh.geometries()?;
    let mut sq = Vec::with_capacity(values.len());
    for v in values {
        if v.len() != mesh.num_vertices() {
            return Err(Error::Validation(format!(
                "nodal vector has {} entries, mesh has {} vertices",
                v.len(),
                mesh.num_vertices()
            )));
        }
        sq.push(l2_norm_squared(mesh, &geoms, v) + h1_seminorm_squared(mesh, &geoms, v));
    }
    let integral: f64 = times
        .windows(2)
        .zip(sq.windows(2))
        .map(|(t, s)| 0.5 * (t[1] - t[0]) * (s[0] + s[1]))
        .sum();
    Ok(integral.max(0.0).sqrt())
}

/// How the perturbed coefficient is produced.
#[derive(Clone)]
pub enum PerturbationVariant {
    /// `c_h = c + h g` per element.
    Coefficient,
    /// `c_h` taken from an Euler integration of `field` with step `h`.
    EulerFlow { field: Arc<dyn VelocityField> },
}

impl PerturbationVariant {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbationVariant::Coefficient => "coefficient",
            PerturbationVariant::EulerFlow { .. } => "euler_flow",
        }
    }
}

impl std::fmt::Debug for PerturbationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub struct PerturbationConfig<'a> {
    pub mesh: &'a SurfaceMesh,
    pub flow: &'a FlowMap,
    pub mode: CoefficientMode,
    pub initial: Vec<f64>,
    pub t_final: f64,
    pub tau: f64,
    pub theta: f64,
    pub levels: Vec<f64>,
    pub profile: PerturbationProfile,
    pub variant: PerturbationVariant,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl<'a> PerturbationConfig<'a> {
    pub fn new(
        mesh: &'a SurfaceMesh,
        flow: &'a FlowMap,
        initial: Vec<f64>,
        t_final: f64,
        tau: f64,
    ) -> Self {
        PerturbationConfig {
            mesh,
            flow,
            mode: CoefficientMode::default(),
            initial,
            t_final,
            tau,
            theta: 1.0,
            levels: vec![0.1, 0.05, 0.025],
            profile: PerturbationProfile::alternating(mesh.num_elements()),
            variant: PerturbationVariant::Coefficient,
            cg_tol: 1e-12,
            cg_max_iter: 20_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.levels.len() < 3 {
            return Err(Error::Validation(format!(
                "need at least 3 perturbation levels, got {}",
                self.levels.len()
            )));
        }
        if !self.levels.iter().all(|&h| h > 0.0 && h.is_finite()) {
            return Err(Error::Validation("perturbation levels must be positive".into()));
        }
        if !self.levels.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::Validation(
                "perturbation levels must be strictly decreasing".into(),
            ));
        }
        if self.profile.values().len() != self.mesh.num_elements() {
            return Err(Error::Validation(format!(
                "profile has {} values, mesh has {} elements",
                self.profile.values().len(),
                self.mesh.num_elements()
            )));
        }
        Ok(())
    }

    fn problem(&self, flow: &'a FlowMap) -> EvolutionProblem<'a> {
        static D0: TangentialIdentity = TangentialIdentity;
        EvolutionProblem::new(self.mesh, flow, &D0, self.initial.clone(), self.t_final, self.tau)
            .with_mode(self.mode)
            .with_theta(self.theta)
            .with_cg(self.cg_tol, self.cg_max_iter)
    }

    fn offset(&self, h: f64) -> Vec<f64> {
        self.profile.values().iter().map(|g| h * g).collect()
    }

    /// Solution with the exact coefficient.
    pub fn reference(&self) -> Result<SolutionTrajectory> {
        solve_evolution(&self.problem(self.flow))
    }

    /// Solution with the coefficient perturbed at amplitude `h`.
    pub fn perturbed(&self, h: f64) -> Result<SolutionTrajectory> {
        match &self.variant {
            PerturbationVariant::Coefficient => {
                let problem = self.problem(self.flow);
                if h == 0.0 {
                    solve_evolution(&problem)
                } else {
                    solve_evolution(&problem.with_reaction_offset(self.offset(h)))
                }
            }
            PerturbationVariant::EulerFlow { field } => {
                let field = Arc::clone(field);
                let shared = Box::new(move |y: &Point, t: f64| field.velocity(y, t));
                let flow = integrate_flow(shared, self.mesh, self.t_final, h, OdeScheme::Euler)?;
                let problem = EvolutionProblem {
                    flow: &flow,
                    ..self.problem(self.flow)
                };
                solve_evolution(&problem)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slope {
    Fitted(f64),
    /// Every error vanished; there is nothing to fit.
    Exact,
}

impl std::fmt::Display for Slope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Slope::Fitted(s) => write!(f, "{s}"),
            Slope::Exact => f.write_str("exact"),
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_log_slope(x: &[f64], y: &[f64]) -> Result<Slope> {
    if y.iter().all(|&e| e == 0.0) {
        return Ok(Slope::Exact);
    }
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Validation("slope fit needs at least two points".into()));
    }
    if !y.iter().chain(x).all(|&v| v > 0.0) {
        return Err(Error::Numerical(
            "cannot fit a slope through zero and nonzero errors".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(Slope::Fitted(sxy / sxx))
}

#[derive(Debug, Clone)]
pub struct PerturbationStudy {
    pub variant: PerturbationVariant,
    pub levels: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: Slope,
}

impl PerturbationStudy {
    /// `log(E_k / E_{k+1}) / log(h_k / h_{k+1})`, absent on the first row.
    pub fn pairwise_eoc(&self) -> Vec<Option<f64>> {
        let mut out = vec![None];
        for k in 1..self.levels.len() {
            let (e0, e1) = (self.errors[k - 1], self.errors[k]);
            out.push(if e0 > 0.0 && e1 > 0.0 {
                Some((e0 / e1).ln() / (self.levels[k - 1] / self.levels[k]).ln())
            } else {
                None
            });
        }
        out
    }
}

pub fn run_perturbation_study(config: &PerturbationConfig) -> Result<PerturbationStudy> {
    config.validate()?;
    let reference = config.reference()?;
    let errors = if matches!(config.variant, PerturbationVariant::Coefficient)
        && config.profile.max_abs() == 0.0
    {
        vec![0.0; config.levels.len()]
    } else {
        config
            .levels
            .iter()
            .map(|&h| spacetime_h1_norm(&reference, &config.perturbed(h)?, config.mesh))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(PerturbationStudy {
        variant: config.variant.clone(),
        slope: fit_log_slope(&config.levels, &errors)?,
        levels: config.levels.clone(),
        errors,
    })
}

/// Solves the linearized error equation `e' + c e − ∇·(D∇e) = δ ũ`, `e(0) = 0`,
/// with `ũ` frozen to `reference` and `δ = h g`.
pub fn solve_error_equation(
    config: &PerturbationConfig,
    reference: &SolutionTrajectory,
    h: f64,
) -> Result<SolutionTrajectory> {
    let delta = config.offset(h);
    let assembler = Assembler::new(config.mesh)?;
    let sampler = CoefficientSampler::new(config.mesh, config.flow, config.mode)?;
    let load = move |t: f64| -> Result<Vec<f64>> {
        let weight = sampler.mass_weight(t)?;
        let r = assembler.weighted_mass(&delta, &weight)?;
        Ok(r.matvec(&reference.values_at(t)?))
    };
    let mut problem = config.problem(config.flow).with_source(Source::Load(Box::new(load)));
    problem.initial = vec![0.0; config.mesh.num_vertices()];
    solve_evolution(&problem)
}
