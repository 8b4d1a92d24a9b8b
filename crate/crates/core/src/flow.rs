//! Surface evolution `Φ(·, t)`: either given in closed form or obtained by
//! integrating the trajectories `y' = V(y, t), y(x, 0) = x` of the mesh vertices.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{Point, SurfaceMesh};

/// Closed-form family of diffeomorphisms with `phi(x, 0) = x`.
pub trait AnalyticFlow: Send + Sync {
    fn phi(&self, x: &Point, t: f64) -> Point;
    fn phi_dt(&self, x: &Point, t: f64) -> Point;
    fn phi_inverse(&self, _p: &Point, _t: f64) -> Option<Point> {
        None
    }
}

pub trait VelocityField: Send + Sync {
    fn velocity(&self, y: &Point, t: f64) -> Point;
}

impl<F> VelocityField for F
where
    F: Fn(&Point, f64) -> Point + Send + Sync,
{
    fn velocity(&self, y: &Point, t: f64) -> Point {
        self(y, t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeScheme {
    Euler,
    Rk4,
}

impl OdeScheme {
    pub fn order(self) -> u32 {
        match self {
            OdeScheme::Euler => 1,
            OdeScheme::Rk4 => 4,
        }
    }

    pub fn step(self, field: &dyn VelocityField, y: &Point, t: f64, dt: f64) -> Point {
        match self {
            OdeScheme::Euler => y + dt * field.velocity(y, t),
            OdeScheme::Rk4 => {
                let k1 = field.velocity(y, t);
                let k2 = field.velocity(&(y + 0.5 * dt * k1), t + 0.5 * dt);
                let k3 = field.velocity(&(y + 0.5 * dt * k2), t + 0.5 * dt);
                let k4 = field.velocity(&(y + dt * k3), t + dt);
                y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            }
        }
    }
}

impl std::str::FromStr for OdeScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(OdeScheme::Euler),
            "rk4" => Ok(OdeScheme::Rk4),
            other => Err(Error::Validation(format!("unknown ODE scheme {other:?}"))),
        }
    }
}

/// Time grid `0 = t_0 < … < t_M = t_final` with uniform step, last step shortened.
pub fn uniform_grid(t_final: f64, step: f64) -> Vec<f64> {
    if t_final == 0.0 {
        return vec![0.0];
    }
    let ratio = t_final / step;
    let steps = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let mut times: Vec<f64> = (0..steps).map(|k| k as f64 * step).collect();
    times.push(t_final);
    times
}

pub struct IntegratedFlow {
    field: Box<dyn VelocityField>,
    scheme: OdeScheme,
    ode_step: f64,
    times: Vec<f64>,
    /// `snapshots[k][v]` is the position of vertex `v` at `times[k]`.
    snapshots: Vec<Vec<Point>>,
}

impl IntegratedFlow {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn scheme(&self) -> OdeScheme {
        self.scheme
    }

    pub fn ode_step(&self) -> f64 {
        self.ode_step
    }

    pub fn trajectory(&self, vertex: usize) -> impl Iterator<Item = (f64, Point)> + '_ {
        self.times
            .iter()
            .zip(&self.snapshots)
            .map(move |(&t, s)| (t, s[vertex]))
    }

    /// Bracketing snapshot index and interpolation weight toward the next one.
    fn locate(&self, t: f64) -> (usize, f64) {
        let k = self.times.partition_point(|&s| s <= t).max(1) - 1;
        if self.times[k] == t || k + 1 == self.times.len() {
            return (k, 0.0);
        }
        (k, (t - self.times[k]) / (self.times[k + 1] - self.times[k]))
    }

    fn position(&self, vertex: usize, t: f64) -> Point {
        let (k, w) = self.locate(t);
        let a = self.snapshots[k][vertex];
        if w == 0.0 {
            return a;
        }
        a + w * (self.snapshots[k + 1][vertex] - a)
    }

    fn positions(&self, t: f64) -> Vec<Point> {
        let (k, w) = self.locate(t);
        if w == 0.0 {
            return self.snapshots[k].clone();
        }
        self.snapshots[k]
            .iter()
            .zip(&self.snapshots[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }
}

pub enum FlowKind {
    Analytic(Box<dyn AnalyticFlow>),
    Integrated(IntegratedFlow),
}

pub struct FlowMap {
    kind: FlowKind,
    t_final: f64,
}

impl FlowMap {
    pub fn analytic(flow: Box<dyn AnalyticFlow>, t_final: f64) -> Self {
        FlowMap {
            kind: FlowKind::Analytic(flow),
            t_final,
        }
    }

    pub fn stationary(t_final: f64) -> Self {
        Self::analytic(Box::new(Identity), t_final)
    }

    pub fn kind(&self) -> &FlowKind {
        &self.kind
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn is_integrated(&self) -> bool {
        matches!(self.kind, FlowKind::Integrated(_))
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * self.t_final.max(1.0);
        if !(t >= -slack && t <= self.t_final + slack) {
            return Err(Error::TimeOutOfRange {
                t,
                t_final: self.t_final,
            });
        }
        Ok(())
    }

    fn check_mesh(&self, mesh: &SurfaceMesh) -> Result<()> {
        if let FlowKind::Integrated(f) = &self.kind {
            if f.snapshots[0].len() != mesh.num_vertices() {
                return Err(Error::Validation(format!(
                    "integrated flow has {} trajectories, mesh has {} vertices",
                    f.snapshots[0].len(),
                    mesh.num_vertices()
                )));
            }
        }
        Ok(())
    }

    /// Velocity of the material point that starts at mesh vertex `vertex`.
    pub fn velocity_at(&self, mesh: &SurfaceMesh, vertex: usize, t: f64) -> Result<Point> {
        self.check_time(t)?;
        self.check_mesh(mesh)?;
        let v = match &self.kind {
            FlowKind::Analytic(f) => f.phi_dt(mesh.vertex(vertex), t),
            FlowKind::Integrated(f) => f.field.velocity(&f.position(vertex, t), t),
        };
        if !v.iter().all(|c| c.is_finite()) {
            return Err(Error::NonFiniteVelocity { vertex, t });
        }
        Ok(v)
    }

    pub fn velocities(&self, mesh: &SurfaceMesh, t: f64) -> Result<Vec<Point>> {
        (0..mesh.num_vertices())
            .map(|v| self.velocity_at(mesh, v, t))
            .collect()
    }

    pub fn moved_positions(&self, mesh: &SurfaceMesh, t: f64) -> Result<Vec<Point>> {
        self.check_time(t)?;
        self.check_mesh(mesh)?;
        Ok(match &self.kind {
            FlowKind::Analytic(f) => {
                if t == 0.0 {
                    mesh.vertices().to_vec()
                } else {
                    mesh.vertices().iter().map(|x| f.phi(x, t)).collect()
                }
            }
            FlowKind::Integrated(f) => f.positions(t),
        })
    }

    /// `Φ(·, t)^{-1}(p)`: closed-form inverse, or backward integration to t = 0.
    pub fn inverse_at(&self, p: &Point, t: f64) -> Result<Point> {
        self.check_time(t)?;
        if t == 0.0 {
            return Ok(*p);
        }
        match &self.kind {
            FlowKind::Analytic(f) => f
                .phi_inverse(p, t)
                .ok_or_else(|| Error::MissingInverse("analytic flow supplies no inverse".into())),
            FlowKind::Integrated(f) => {
                let mut y = *p;
                let mut s = t;
                while s > 0.0 {
                    let dt = f.ode_step.min(s);
                    y = f.scheme.step(f.field.as_ref(), &y, s, -dt);
                    s = if dt == s { 0.0 } else { s - dt };
                    if !y.iter().all(|c| c.is_finite()) {
                        return Err(Error::Numerical(format!(
                            "backward integration produced non-finite position at t={s}"
                        )));
                    }
                }
                Ok(y)
            }
        }
    }
}

/// Integrates every vertex trajectory of `mesh` under `field` up to `t_final`.
pub fn integrate_flow(
    field: Box<dyn VelocityField>,
    mesh: &SurfaceMesh,
    t_final: f64,
    ode_step: f64,
    scheme: OdeScheme,
) -> Result<FlowMap> {
    if !(ode_step > 0.0) || !(t_final >= 0.0) {
        return Err(Error::Validation(format!(
            "need ode_step > 0 and t_final >= 0, got {ode_step} and {t_final}"
        )));
    }
    let times = uniform_grid(t_final, ode_step);
    let mut snapshots = Vec::with_capacity(times.len());
    snapshots.push(mesh.vertices().to_vec());
    for k in 1..times.len() {
        let (t0, dt) = (times[k - 1], times[k] - times[k - 1]);
        let prev = &snapshots[k - 1];
        let mut next = Vec::with_capacity(prev.len());
        for (v, y) in prev.iter().enumerate() {
            let vel = field.velocity(y, t0);
            if !vel.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteVelocity { vertex: v, t: t0 });
            }
            let y1 = scheme.step(field.as_ref(), y, t0, dt);
            if !y1.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFiniteVelocity { vertex: v, t: t0 });
            }
            next.push(y1);
        }
        snapshots.push(next);
    }
    Ok(FlowMap {
        kind: FlowKind::Integrated(IntegratedFlow {
            field,
            scheme,
            ode_step,
            times,
            snapshots,
        }),
        t_final,
    })
}

/// `Φ(x, t) = x`.
#[derive(Debug, Clone, Copy)]
pub struct Identity;

impl AnalyticFlow for Identity {
    fn phi(&self, x: &Point, _t: f64) -> Point {
        *x
    }
    fn phi_dt(&self, _x: &Point, _t: f64) -> Point {
        Point::zeros()
    }
    fn phi_inverse(&self, p: &Point, _t: f64) -> Option<Point> {
        Some(*p)
    }
}

/// `Φ(x, t) = (1 + αt) x`.
#[derive(Debug, Clone, Copy)]
pub struct UniformScale {
    pub rate: f64,
}

impl UniformScale {
    pub fn radius(&self, t: f64) -> f64 {
        1.0 + self.rate * t
    }
}

impl AnalyticFlow for UniformScale {
    fn phi(&self, x: &Point, t: f64) -> Point {
        self.radius(t) * x
    }
    fn phi_dt(&self, x: &Point, _t: f64) -> Point {
        self.rate * x
    }
    fn phi_inverse(&self, p: &Point, t: f64) -> Option<Point> {
        Some(p / self.radius(t))
    }
}

/// `Φ(x, t) = x + t d`.
#[derive(Debug, Clone, Copy)]
pub struct Translate {
    pub direction: Point,
}

impl AnalyticFlow for Translate {
    fn phi(&self, x: &Point, t: f64) -> Point {
        x + t * self.direction
    }
    fn phi_dt(&self, _x: &Point, _t: f64) -> Point {
        self.direction
    }
    fn phi_inverse(&self, p: &Point, t: f64) -> Option<Point> {
        Some(p - t * self.direction)
    }
}

/// Stretch along the first axis: `a(t) = 1 + α sin(2πt)`, `Φ = (a x₁, x₂, x₃)`.
#[derive(Debug, Clone, Copy)]
pub struct EllipsoidAxis {
    pub amplitude: f64,
}

impl EllipsoidAxis {
    pub fn stretch(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * t).sin()
    }
    pub fn stretch_rate(&self, t: f64) -> f64 {
        2.0 * PI * self.amplitude * (2.0 * PI * t).cos()
    }
}

impl AnalyticFlow for EllipsoidAxis {
    fn phi(&self, x: &Point, t: f64) -> Point {
        Point::new(self.stretch(t) * x.x, x.y, x.z)
    }
    fn phi_dt(&self, x: &Point, t: f64) -> Point {
        Point::new(self.stretch_rate(t) * x.x, 0.0, 0.0)
    }
    fn phi_inverse(&self, p: &Point, t: f64) -> Option<Point> {
        Some(Point::new(p.x / self.stretch(t), p.y, p.z))
    }
}

/// Rigid rotation about the x₃ axis with angular speed ω.
#[derive(Debug, Clone, Copy)]
pub struct Rotate {
    pub angular_speed: f64,
}

impl Rotate {
    fn rotation(&self, t: f64) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.angular_speed * t)
    }
}

impl AnalyticFlow for Rotate {
    fn phi(&self, x: &Point, t: f64) -> Point {
        self.rotation(t) * x
    }
    fn phi_dt(&self, x: &Point, t: f64) -> Point {
        let y = self.rotation(t) * x;
        self.angular_speed * Point::new(-y.y, y.x, 0.0)
    }
    fn phi_inverse(&self, p: &Point, t: f64) -> Option<Point> {
        Some(self.rotation(t).inverse() * p)
    }
}

/// `Φ(x, t) = eᵗ x`, the flow of the radial field `V(y) = y`.
#[derive(Debug, Clone, Copy)]
pub struct Exponential;

impl AnalyticFlow for Exponential {
    fn phi(&self, x: &Point, t: f64) -> Point {
        t.exp() * x
    }
    fn phi_dt(&self, x: &Point, t: f64) -> Point {
        t.exp() * x
    }
    fn phi_inverse(&self, p: &Point, t: f64) -> Option<Point> {
        Some((-t).exp() * p)
    }
}

pub fn zero_field() -> Box<dyn VelocityField> {
    Box::new(|_: &Point, _: f64| Point::zeros())
}

pub fn radial_field() -> Box<dyn VelocityField> {
    Box::new(|y: &Point, _: f64| *y)
}

pub fn rotation_field() -> Box<dyn VelocityField> {
    Box::new(|y: &Point, _: f64| Point::new(-y.y, y.x, 0.0))
}
