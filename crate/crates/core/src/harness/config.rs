//! Flat `key = value` run configuration and the built-in names it refers to.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coefficients::{
    AnisotropicDiag, CoefficientMode, Diffusion, PerturbationProfile, ScaledTangential,
    TangentialIdentity,
};
use crate::error::{Error, Result};
use crate::flow::{
    integrate_flow, AnalyticFlow, EllipsoidAxis, Exponential, FlowMap, Identity, OdeScheme,
    Rotate, Translate, UniformScale, VelocityField,
};
use crate::mesh::{
    circle, disk, icosahedron, icosphere, load_curve, load_off, mesh_size, refine_times,
    EllipsoidProjector, Point, SurfaceMesh,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Solve,
    Converge,
    Perturb,
    FlowTest,
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solve" => Ok(ExperimentKind::Solve),
            "converge" => Ok(ExperimentKind::Converge),
            "perturb" => Ok(ExperimentKind::Perturb),
            "flow-test" | "flow_test" => Ok(ExperimentKind::FlowTest),
            other => Err(Error::Validation(format!("unknown experiment {other:?}"))),
        }
    }
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn num<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Validation(format!("{key}: cannot parse {s:?}")))
}

fn arity(what: &str, got: &[&str], expected: usize) -> Result<()> {
    if got.len() != expected + 1 {
        return Err(Error::Validation(format!(
            "{what} {:?} expects {expected} parameter(s), got {}",
            got[0],
            got.len() - 1
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    Icosphere(usize),
    Circle(usize),
    Disk(usize),
    Ellipsoid { level: usize, semi_axes: [f64; 3] },
    File(PathBuf),
}

impl FromStr for MeshSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let w = words(s);
        let Some(&name) = w.first() else {
            return Err(Error::Validation("mesh: empty value".into()));
        };
        match name {
            "icosphere" => {
                arity("mesh", &w, 1)?;
                Ok(MeshSpec::Icosphere(num("mesh", w[1])?))
            }
            "circle" => {
                arity("mesh", &w, 1)?;
                Ok(MeshSpec::Circle(num("mesh", w[1])?))
            }
            "disk" => {
                arity("mesh", &w, 1)?;
                Ok(MeshSpec::Disk(num("mesh", w[1])?))
            }
            "ellipsoid" => {
                arity("mesh", &w, 4)?;
                let semi_axes = [num("mesh", w[2])?, num("mesh", w[3])?, num("mesh", w[4])?];
                if !semi_axes.iter().all(|&a: &f64| a > 0.0) {
                    return Err(Error::Validation("mesh: semi-axes must be positive".into()));
                }
                Ok(MeshSpec::Ellipsoid {
                    level: num("mesh", w[1])?,
                    semi_axes,
                })
            }
            _ if w.len() == 1 && (s.ends_with(".off") || s.ends_with(".curve")) => {
                Ok(MeshSpec::File(PathBuf::from(s.trim())))
            }
            other => Err(Error::Validation(format!(
                "unknown mesh {other:?} (expected icosphere L, circle N, disk L, ellipsoid L a b c, or a .off/.curve path)"
            ))),
        }
    }
}

impl fmt::Display for MeshSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshSpec::Icosphere(l) => write!(f, "icosphere {l}"),
            MeshSpec::Circle(n) => write!(f, "circle {n}"),
            MeshSpec::Disk(l) => write!(f, "disk {l}"),
            MeshSpec::Ellipsoid { level, semi_axes: [a, b, c] } => {
                write!(f, "ellipsoid {level} {a} {b} {c}")
            }
            MeshSpec::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl MeshSpec {
    /// The mesh after `refinements` additional refinement levels, with a level label.
    pub fn build(&self, refinements: usize) -> Result<(SurfaceMesh, usize)> {
        match self {
            MeshSpec::Icosphere(l) => Ok((icosphere(l + refinements), l + refinements)),
            MeshSpec::Circle(n) => {
                let n = n
                    .checked_mul(1 << refinements)
                    .ok_or_else(|| Error::Validation("circle too fine".into()))?;
                Ok((circle(n)?, n))
            }
            MeshSpec::Disk(l) => Ok((disk(l + refinements), l + refinements)),
            MeshSpec::Ellipsoid { level, semi_axes } => {
                let projector = EllipsoidProjector {
                    semi_axes: *semi_axes,
                };
                let base = icosahedron().with_positions(
                    icosahedron()
                        .vertices()
                        .iter()
                        .map(|x| x.component_mul(&Point::from(*semi_axes)))
                        .collect(),
                )?;
                let l = level + refinements;
                Ok((refine_times(&base, l, Some(&projector))?, l))
            }
            MeshSpec::File(path) => {
                let text = std::fs::read_to_string(path)?;
                let base = if path.extension().is_some_and(|e| e == "curve") {
                    load_curve(&text)?
                } else {
                    load_off(&text)?
                };
                Ok((refine_times(&base, refinements, None)?, refinements))
            }
        }
    }

    /// Whether the mesh approximates the unit sphere or unit circle.
    pub fn is_unit_sphere(&self) -> bool {
        matches!(self, MeshSpec::Icosphere(_) | MeshSpec::Circle(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowSpec {
    Identity,
    UniformScale(f64),
    Translate([f64; 3]),
    EllipsoidAxis(f64),
    Rotate(f64),
    Radial,
}

impl FromStr for FlowSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let w = words(s);
        let Some(&name) = w.first() else {
            return Err(Error::Validation("flow: empty value".into()));
        };
        match name {
            "identity" | "zero" => {
                arity("flow", &w, 0)?;
                Ok(FlowSpec::Identity)
            }
            "uniform_scale" => {
                arity("flow", &w, 1)?;
                Ok(FlowSpec::UniformScale(num("flow", w[1])?))
            }
            "translate" => {
                arity("flow", &w, 3)?;
                Ok(FlowSpec::Translate([
                    num("flow", w[1])?,
                    num("flow", w[2])?,
                    num("flow", w[3])?,
                ]))
            }
            "ellipsoid_axis" => {
                arity("flow", &w, 1)?;
                Ok(FlowSpec::EllipsoidAxis(num("flow", w[1])?))
            }
            "rotate" => {
                arity("flow", &w, 1)?;
                Ok(FlowSpec::Rotate(num("flow", w[1])?))
            }
            "rotation" => {
                arity("flow", &w, 0)?;
                Ok(FlowSpec::Rotate(1.0))
            }
            "radial" | "exponential" => {
                arity("flow", &w, 0)?;
                Ok(FlowSpec::Radial)
            }
            other => Err(Error::Validation(format!(
                "unknown flow {other:?} (expected identity, uniform_scale a, translate x y z, ellipsoid_axis a, rotate w, rotation, radial)"
            ))),
        }
    }
}

impl fmt::Display for FlowSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowSpec::Identity => write!(f, "identity"),
            FlowSpec::UniformScale(a) => write!(f, "uniform_scale {a}"),
            FlowSpec::Translate([x, y, z]) => write!(f, "translate {x} {y} {z}"),
            FlowSpec::EllipsoidAxis(a) => write!(f, "ellipsoid_axis {a}"),
            FlowSpec::Rotate(w) => write!(f, "rotate {w}"),
            FlowSpec::Radial => write!(f, "radial"),
        }
    }
}

impl FlowSpec {
    pub fn analytic(&self) -> Box<dyn AnalyticFlow> {
        match *self {
            FlowSpec::Identity => Box::new(Identity),
            FlowSpec::UniformScale(rate) => Box::new(UniformScale { rate }),
            FlowSpec::Translate(d) => Box::new(Translate {
                direction: Point::from(d),
            }),
            FlowSpec::EllipsoidAxis(amplitude) => Box::new(EllipsoidAxis { amplitude }),
            FlowSpec::Rotate(angular_speed) => Box::new(Rotate { angular_speed }),
            FlowSpec::Radial => Box::new(Exponential),
        }
    }

    /// Velocity field whose trajectories are the closed-form flow.
    pub fn field(&self) -> Box<dyn VelocityField> {
        match *self {
            FlowSpec::Identity => Box::new(|_: &Point, _: f64| Point::zeros()),
            FlowSpec::UniformScale(a) => Box::new(move |y: &Point, t: f64| a / (1.0 + a * t) * y),
            FlowSpec::Translate(d) => Box::new(move |_: &Point, _: f64| Point::from(d)),
            FlowSpec::EllipsoidAxis(amplitude) => {
                let e = EllipsoidAxis { amplitude };
                Box::new(move |y: &Point, t: f64| {
                    Point::new(e.stretch_rate(t) / e.stretch(t) * y.x, 0.0, 0.0)
                })
            }
            FlowSpec::Rotate(w) => Box::new(move |y: &Point, _: f64| w * Point::new(-y.y, y.x, 0.0)),
            FlowSpec::Radial => Box::new(|y: &Point, _: f64| *y),
        }
    }

    pub fn is_identity(&self) -> bool {
        match *self {
            FlowSpec::Identity => true,
            FlowSpec::UniformScale(a) | FlowSpec::EllipsoidAxis(a) | FlowSpec::Rotate(a) => a == 0.0,
            FlowSpec::Translate(d) => d == [0.0; 3],
            FlowSpec::Radial => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowIntegration {
    Analytic,
    Ode(OdeScheme),
}

impl FromStr for FlowIntegration {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(FlowIntegration::Analytic),
            other => other.parse().map(FlowIntegration::Ode),
        }
    }
}

impl fmt::Display for FlowIntegration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowIntegration::Analytic => f.write_str("analytic"),
            FlowIntegration::Ode(OdeScheme::Euler) => f.write_str("euler"),
            FlowIntegration::Ode(OdeScheme::Rk4) => f.write_str("rk4"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiffusionSpec {
    TangentialIdentity,
    Scaled(f64),
    Anisotropic([f64; 3]),
}

impl FromStr for DiffusionSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let w = words(s);
        match w.first().copied() {
            Some("tangential_identity") => {
                arity("diffusion", &w, 0)?;
                Ok(DiffusionSpec::TangentialIdentity)
            }
            Some("scaled") => {
                arity("diffusion", &w, 1)?;
                let k: f64 = num("diffusion", w[1])?;
                if !(k >= 0.0) {
                    return Err(Error::Validation("diffusion: scale must be nonnegative".into()));
                }
                Ok(DiffusionSpec::Scaled(k))
            }
            Some("anisotropic") => {
                arity("diffusion", &w, 3)?;
                let d = [num("diffusion", w[1])?, num("diffusion", w[2])?, num("diffusion", w[3])?];
                if !d.iter().all(|&x: &f64| x >= 0.0) {
                    return Err(Error::Validation("diffusion: entries must be nonnegative".into()));
                }
                Ok(DiffusionSpec::Anisotropic(d))
            }
            _ => Err(Error::Validation(format!(
                "unknown diffusion {s:?} (expected tangential_identity, scaled k, anisotropic a b c)"
            ))),
        }
    }
}

impl fmt::Display for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionSpec::TangentialIdentity => f.write_str("tangential_identity"),
            DiffusionSpec::Scaled(k) => write!(f, "scaled {k}"),
            DiffusionSpec::Anisotropic([a, b, c]) => write!(f, "anisotropic {a} {b} {c}"),
        }
    }
}

impl DiffusionSpec {
    pub fn build(&self) -> Box<dyn Diffusion> {
        match *self {
            DiffusionSpec::TangentialIdentity => Box::new(TangentialIdentity),
            DiffusionSpec::Scaled(kappa) => Box::new(ScaledTangential { kappa }),
            DiffusionSpec::Anisotropic(diag) => Box::new(AnisotropicDiag { diag }),
        }
    }

    /// Scalar κ when the tensor is `κ P`.
    pub fn isotropic_scale(&self) -> Option<f64> {
        match *self {
            DiffusionSpec::TangentialIdentity => Some(1.0),
            DiffusionSpec::Scaled(k) => Some(k),
            DiffusionSpec::Anisotropic([a, b, c]) if a == b && b == c => Some(a),
            DiffusionSpec::Anisotropic(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialSpec {
    HarmonicX1X2,
    CosTheta,
    Constant(f64),
    Bump,
}

impl FromStr for InitialSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let w = words(s);
        match w.first().copied() {
            Some("harmonic_x1x2") => {
                arity("u0", &w, 0)?;
                Ok(InitialSpec::HarmonicX1X2)
            }
            Some("cos_theta") => {
                arity("u0", &w, 0)?;
                Ok(InitialSpec::CosTheta)
            }
            Some("constant") => {
                arity("u0", &w, 1)?;
                Ok(InitialSpec::Constant(num("u0", w[1])?))
            }
            Some("bump") => {
                arity("u0", &w, 0)?;
                Ok(InitialSpec::Bump)
            }
            _ => Err(Error::Validation(format!(
                "unknown u0 {s:?} (expected harmonic_x1x2, cos_theta, constant k, bump)"
            ))),
        }
    }
}

impl fmt::Display for InitialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialSpec::HarmonicX1X2 => f.write_str("harmonic_x1x2"),
            InitialSpec::CosTheta => f.write_str("cos_theta"),
            InitialSpec::Constant(k) => write!(f, "constant {k}"),
            InitialSpec::Bump => f.write_str("bump"),
        }
    }
}

impl InitialSpec {
    pub fn eval(&self, x: &Point) -> f64 {
        match *self {
            InitialSpec::HarmonicX1X2 => x.x * x.y,
            // cos θ on the unit circle is the first coordinate
            InitialSpec::CosTheta => x.x,
            InitialSpec::Constant(k) => k,
            InitialSpec::Bump => (-2.0 * (x - Point::new(0.5, 0.0, 0.5)).norm_squared()).exp(),
        }
    }
}

/// Time step: fixed, or `factor · h^p` of the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauRule {
    Fixed(f64),
    MeshPower(i32),
}

impl FromStr for TauRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "h2" => Ok(TauRule::MeshPower(2)),
            "h" => Ok(TauRule::MeshPower(1)),
            other => {
                let v: f64 = num("tau", other)?;
                if !(v > 0.0) {
                    return Err(Error::Validation(format!("tau must be positive, got {v}")));
                }
                Ok(TauRule::Fixed(v))
            }
        }
    }
}

impl fmt::Display for TauRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauRule::Fixed(v) => write!(f, "{v}"),
            TauRule::MeshPower(2) => f.write_str("h2"),
            TauRule::MeshPower(_) => f.write_str("h"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfileSpec {
    Alternating,
    Zero,
    Constant(f64),
}

impl FromStr for ProfileSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let w = words(s);
        match w.first().copied() {
            Some("alternating") => Ok(ProfileSpec::Alternating),
            Some("zero") => Ok(ProfileSpec::Zero),
            Some("constant") => {
                arity("perturb_profile", &w, 1)?;
                Ok(ProfileSpec::Constant(num("perturb_profile", w[1])?))
            }
            _ => Err(Error::Validation(format!(
                "unknown perturbation profile {s:?} (expected alternating, zero, constant g)"
            ))),
        }
    }
}

impl ProfileSpec {
    pub fn build(&self, num_elements: usize) -> Result<PerturbationProfile> {
        match *self {
            ProfileSpec::Alternating => Ok(PerturbationProfile::alternating(num_elements)),
            ProfileSpec::Zero => Ok(PerturbationProfile::zero(num_elements)),
            ProfileSpec::Constant(g) => PerturbationProfile::constant(num_elements, g),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantSpec {
    Coefficient,
    EulerFlow,
}

impl FromStr for VariantSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "coefficient" => Ok(VariantSpec::Coefficient),
            "euler_flow" => Ok(VariantSpec::EulerFlow),
            other => Err(Error::Validation(format!(
                "unknown perturbation variant {other:?} (expected coefficient, euler_flow)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshSpec,
    /// Number of refinement levels (convergence) or step halvings (flow test).
    pub levels: usize,
    pub flow: FlowSpec,
    pub flow_integration: FlowIntegration,
    pub ode_step: f64,
    pub mode: CoefficientMode,
    pub diffusion: DiffusionSpec,
    pub u0: InitialSpec,
    pub t_final: f64,
    pub tau: TauRule,
    pub tau_factor: f64,
    pub theta: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub perturb_levels: Vec<f64>,
    pub perturb_profile: ProfileSpec,
    pub perturb_variant: VariantSpec,
    pub write_vtk: bool,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: MeshSpec::Icosphere(2),
            levels: 3,
            flow: FlowSpec::Identity,
            flow_integration: FlowIntegration::Analytic,
            ode_step: 0.01,
            mode: CoefficientMode::Pullback,
            diffusion: DiffusionSpec::TangentialIdentity,
            u0: InitialSpec::HarmonicX1X2,
            t_final: 0.1,
            tau: TauRule::MeshPower(2),
            tau_factor: 1.0,
            theta: 1.0,
            cg_tol: 1e-12,
            cg_max_iter: 20_000,
            perturb_levels: vec![0.1, 0.05, 0.025],
            perturb_profile: ProfileSpec::Alternating,
            perturb_variant: VariantSpec::Coefficient,
            write_vtk: true,
            out: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "mesh",
    "levels",
    "flow",
    "flow_integration",
    "ode_step",
    "mode",
    "diffusion",
    "u0",
    "t_final",
    "tau",
    "tau_factor",
    "theta",
    "cg_tol",
    "cg_max_iter",
    "perturb_levels",
    "perturb_profile",
    "perturb_variant",
    "write_vtk",
    "out",
];

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), i + 1) {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate key {key:?} (first set on line {prev})"),
                });
            }
            cfg.set(key, value.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key; `-` in the key is read as `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        match key.as_str() {
            "mesh" => self.mesh = value.parse()?,
            "levels" => self.levels = num(&key, value)?,
            "flow" => self.flow = value.parse()?,
            "flow_integration" => self.flow_integration = value.trim().parse()?,
            "ode_step" => self.ode_step = num(&key, value)?,
            "mode" => self.mode = value.trim().parse()?,
            "diffusion" => self.diffusion = value.parse()?,
            "u0" => self.u0 = value.parse()?,
            "t_final" => self.t_final = num(&key, value)?,
            "tau" => self.tau = value.parse()?,
            "tau_factor" => self.tau_factor = num(&key, value)?,
            "theta" => self.theta = num(&key, value)?,
            "cg_tol" => self.cg_tol = num(&key, value)?,
            "cg_max_iter" => self.cg_max_iter = num(&key, value)?,
            "perturb_levels" => {
                self.perturb_levels = value
                    .split(',')
                    .map(|v| num(&key, v))
                    .collect::<Result<_>>()?
            }
            "perturb_profile" => self.perturb_profile = value.parse()?,
            "perturb_variant" => self.perturb_variant = value.parse()?,
            "write_vtk" => self.write_vtk = num(&key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            other => {
                return Err(Error::Validation(format!(
                    "unknown key {other:?} (known: {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if !(self.ode_step > 0.0) {
            return bad(format!("ode_step must be positive, got {}", self.ode_step));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final must be nonnegative, got {}", self.t_final));
        }
        if !(self.tau_factor > 0.0) {
            return bad(format!("tau_factor must be positive, got {}", self.tau_factor));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return bad(format!("theta must lie in [0.5, 1], got {}", self.theta));
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return bad(format!("cg_tol must lie in (0, 1), got {}", self.cg_tol));
        }
        if self.cg_max_iter == 0 {
            return bad("cg_max_iter must be positive".into());
        }
        if let ProfileSpec::Constant(g) = self.perturb_profile {
            if !(g.abs() <= 1.0) {
                return bad(format!("perturbation profile must satisfy |g| <= 1, got {g}"));
            }
        }
        Ok(())
    }

    /// Time step for a mesh of size `h`.
    pub fn tau_for(&self, h: f64) -> f64 {
        match self.tau {
            TauRule::Fixed(v) => v,
            TauRule::MeshPower(p) => self.tau_factor * h.powi(p),
        }
    }

    /// Builds the surface evolution for `mesh` up to the final time.
    pub fn flow_map(&self, mesh: &SurfaceMesh) -> Result<FlowMap> {
        match self.flow_integration {
            FlowIntegration::Analytic => Ok(FlowMap::analytic(self.flow.analytic(), self.t_final)),
            FlowIntegration::Ode(scheme) => {
                integrate_flow(self.flow.field(), mesh, self.t_final, self.ode_step, scheme)
            }
        }
    }

    pub fn initial_values(&self, mesh: &SurfaceMesh) -> Vec<f64> {
        mesh.vertices().iter().map(|x| self.u0.eval(x)).collect()
    }

    pub fn tau_for_mesh(&self, mesh: &SurfaceMesh) -> f64 {
        self.tau_for(mesh_size(mesh))
    }

    /// Config text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let levels: Vec<String> = self.perturb_levels.iter().map(|h| h.to_string()).collect();
        let profile = match self.perturb_profile {
            ProfileSpec::Alternating => "alternating".to_string(),
            ProfileSpec::Zero => "zero".to_string(),
            ProfileSpec::Constant(g) => format!("constant {g}"),
        };
        let variant = match self.perturb_variant {
            VariantSpec::Coefficient => "coefficient",
            VariantSpec::EulerFlow => "euler_flow",
        };
        format!(
            "mesh = {}\nlevels = {}\nflow = {}\nflow_integration = {}\node_step = {}\nmode = {}\n\
             diffusion = {}\nu0 = {}\nt_final = {}\ntau = {}\ntau_factor = {}\ntheta = {}\n\
             cg_tol = {}\ncg_max_iter = {}\nperturb_levels = {}\nperturb_profile = {}\n\
             perturb_variant = {}\nwrite_vtk = {}\nout = {}\n",
            self.mesh,
            self.levels,
            self.flow,
            self.flow_integration,
            self.ode_step,
            self.mode,
            self.diffusion,
            self.u0,
            self.t_final,
            self.tau,
            self.tau_factor,
            self.theta,
            self.cg_tol,
            self.cg_max_iter,
            levels.join(","),
            profile,
            variant,
            self.write_vtk,
            self.out.display()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = RunConfig::parse(
            "# sphere benchmark\nmesh = icosphere 3\nflow = uniform_scale 0.5  # grows\nmode=literal\n\ntau = 0.01\n",
        )
        .unwrap();
        assert_eq!(cfg.mesh, MeshSpec::Icosphere(3));
        assert_eq!(cfg.flow, FlowSpec::UniformScale(0.5));
        assert_eq!(cfg.mode, CoefficientMode::Literal);
        assert_eq!(cfg.tau, TauRule::Fixed(0.01));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("mesh icosphere 2"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(RunConfig::parse("\ncolour = red"), Err(Error::Parse { line: 2, .. })));
        assert!(RunConfig::parse("mesh = torus 2").is_err());
        assert!(RunConfig::parse("theta = 0.2").is_err());
        assert!(RunConfig::parse("flow = uniform_scale").is_err());
        assert!(RunConfig::parse("tau = -1").is_err());
        assert!(RunConfig::parse("levels = 2\nlevels = 3").is_err());
        assert!(RunConfig::parse("perturb_profile = constant 2").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("mesh", "ellipsoid 1 1 0.5 0.25").unwrap();
        cfg.set("flow", "translate 1 0 -0.5").unwrap();
        cfg.set("flow-integration", "rk4").unwrap();
        cfg.set("diffusion", "anisotropic 1 2 3").unwrap();
        cfg.set("u0", "constant 2.5").unwrap();
        cfg.set("perturb_levels", "0.2,0.1,0.05,0.025").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn fields_match_closed_forms() {
        let flows = [
            FlowSpec::UniformScale(0.7),
            FlowSpec::Translate([1.0, -2.0, 0.5]),
            FlowSpec::EllipsoidAxis(0.3),
            FlowSpec::Rotate(2.0),
            FlowSpec::Radial,
        ];
        let x = Point::new(0.3, -0.4, 0.5);
        for f in flows {
            let phi = f.analytic();
            let v = f.field();
            for t in [0.0, 0.3, 0.8] {
                let expected = phi.phi_dt(&x, t);
                let got = v.velocity(&phi.phi(&x, t), t);
                assert!((expected - got).norm() < 1e-12, "{f}");
            }
        }
    }

    #[test]
    fn mesh_levels() {
        let (m, label) = MeshSpec::Circle(32).build(2).unwrap();
        assert_eq!((m.num_elements(), label), (128, 128));
        let (m, label) = MeshSpec::Icosphere(1).build(1).unwrap();
        assert_eq!((m.num_vertices(), label), (162, 2));
        let (m, _) = MeshSpec::Ellipsoid { level: 1, semi_axes: [2.0, 1.0, 0.5] }.build(0).unwrap();
        for x in m.vertices() {
            let r = (x.x / 2.0).powi(2) + x.y.powi(2) + (x.z / 0.5).powi(2);
            assert!((r - 1.0).abs() < 1e-9, "{r}");
        }
    }
}
