//! Coefficients of the transformed equation on the initial surface.
//!
//! Two readings of the reaction coefficient are supported. In
//! [`CoefficientMode::Literal`] the divergence of `∂Φ/∂t` is taken along the
//! initial surface and the diffusion tensor acts in the initial metric. In
//! [`CoefficientMode::Pullback`] every quantity is measured on the moved
//! element, which makes the fixed-surface problem an exact pullback of the
//! moving-surface problem: the reaction coefficient is the divergence of the
//! velocity along `Γ(t)`, the mass carries the area ratio `J(t)`, and the
//! diffusion tensor is expressed in the moved metric.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;

use crate::calculus::{element_geometry, tangential_divergence, ChartMatrix, ElementGeometry};
use crate::error::{Error, Result};
use crate::flow::FlowMap;
use crate::mesh::{Point, SurfaceMesh};

/// Allowed `|D₀ ν|` relative to `max(1, |D₀|)`.
pub const NORMAL_SPACE_TOLERANCE: f64 = 1e-8;
/// Smallest admissible moved/initial measure ratio.
pub const MIN_MEASURE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientMode {
    Literal,
    #[default]
    Pullback,
}

impl fmt::Display for CoefficientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoefficientMode::Literal => "literal",
            CoefficientMode::Pullback => "pullback",
        })
    }
}

impl FromStr for CoefficientMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(CoefficientMode::Literal),
            "pullback" => Ok(CoefficientMode::Pullback),
            other => Err(Error::Validation(format!(
                "unknown coefficient mode {other:?} (expected literal|pullback)"
            ))),
        }
    }
}

/// Diffusion tensor `D₀(p, t)` in ambient coordinates. `frame` is the element
/// the tensor is evaluated on, so tangential tensors can be built from its
/// tangent space. Must vanish on the normal space of `frame`.
pub trait Diffusion: Send + Sync {
    fn tensor(&self, p: &Point, t: f64, frame: &ElementGeometry) -> Matrix3<f64>;

    /// True when the tensor depends on the frame only (not on `p` or `t`).
    fn is_time_independent(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TangentialIdentity;

impl Diffusion for TangentialIdentity {
    fn tensor(&self, _p: &Point, _t: f64, frame: &ElementGeometry) -> Matrix3<f64> {
        frame.tangential_projector()
    }
    fn is_time_independent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScaledTangential {
    pub kappa: f64,
}

impl Diffusion for ScaledTangential {
    fn tensor(&self, _p: &Point, _t: f64, frame: &ElementGeometry) -> Matrix3<f64> {
        self.kappa * frame.tangential_projector()
    }
    fn is_time_independent(&self) -> bool {
        true
    }
}

/// `P diag(d) P` with `P` the tangential projector.
#[derive(Debug, Clone, Copy)]
pub struct AnisotropicDiag {
    pub diag: [f64; 3],
}

impl Diffusion for AnisotropicDiag {
    fn tensor(&self, _p: &Point, _t: f64, frame: &ElementGeometry) -> Matrix3<f64> {
        let p = frame.tangential_projector();
        let d = Matrix3::from_diagonal(&Point::from(self.diag));
        p * d * p
    }
    fn is_time_independent(&self) -> bool {
        true
    }
}

/// Per-element perturbation profile `g` with `|g| ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationProfile(Vec<f64>);

impl PerturbationProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((e, g)) = values
            .iter()
            .enumerate()
            .find(|(_, g)| !(g.abs() <= 1.0))
        {
            return Err(Error::Validation(format!(
                "perturbation profile must satisfy |g| <= 1, element {e} has {g}"
            )));
        }
        Ok(PerturbationProfile(values))
    }

    pub fn zero(num_elements: usize) -> Self {
        PerturbationProfile(vec![0.0; num_elements])
    }

    pub fn alternating(num_elements: usize) -> Self {
        PerturbationProfile(
            (0..num_elements)
                .map(|e| if e % 2 == 0 { 1.0 } else { -1.0 })
                .collect(),
        )
    }

    pub fn constant(num_elements: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; num_elements])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |a, g| a.max(g.abs()))
    }
}

/// `c + h g` elementwise.
pub fn perturb_c(c: &[f64], h: f64, g: &PerturbationProfile) -> Vec<f64> {
    assert_eq!(c.len(), g.0.len(), "profile length must match element count");
    c.iter().zip(&g.0).map(|(c, g)| c + h * g).collect()
}

/// All coefficient fields at one time level.
#[derive(Debug, Clone)]
pub struct CoefficientLevel {
    pub t: f64,
    pub c: Vec<f64>,
    pub diffusion: Vec<ChartMatrix>,
    pub mass_weight: Vec<f64>,
}

impl CoefficientLevel {
    pub fn min_c(&self) -> f64 {
        self.c.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub mode: CoefficientMode,
    pub levels: Vec<CoefficientLevel>,
}

impl CoefficientSet {
    pub fn sample(
        mesh: &SurfaceMesh,
        flow: &FlowMap,
        diffusion: &dyn Diffusion,
        mode: CoefficientMode,
        times: &[f64],
    ) -> Result<Self> {
        let sampler = CoefficientSampler::new(mesh, flow, mode)?;
        let levels = times
            .iter()
            .map(|&t| sampler.level(diffusion, t))
            .collect::<Result<_>>()?;
        Ok(CoefficientSet { mode, levels })
    }
}

/// Evaluates coefficient fields for one mesh/flow pair, caching the geometry
/// of the initial surface.
pub struct CoefficientSampler<'a> {
    mesh: &'a SurfaceMesh,
    flow: &'a FlowMap,
    mode: CoefficientMode,
    fixed: Vec<ElementGeometry>,
}

struct Moved {
    positions: Vec<Point>,
    geometry: Option<Vec<ElementGeometry>>,
}

impl<'a> CoefficientSampler<'a> {
    pub fn new(mesh: &'a SurfaceMesh, flow: &'a FlowMap, mode: CoefficientMode) -> Result<Self> {
        Ok(CoefficientSampler {
            mesh,
            flow,
            mode,
            fixed: mesh.geometries()?,
        })
    }

    pub fn mode(&self) -> CoefficientMode {
        self.mode
    }

    pub fn fixed_geometry(&self) -> &[ElementGeometry] {
        &self.fixed
    }

    fn moved(&self, t: f64, need_geometry: bool) -> Result<Moved> {
        let positions = self.flow.moved_positions(self.mesh, t)?;
        let geometry = if need_geometry {
            let mut geoms = Vec::with_capacity(self.mesh.num_elements());
            for e in 0..self.mesh.num_elements() {
                let coords: Vec<Point> = self.mesh.element(e).iter().map(|&v| positions[v]).collect();
                let g = element_geometry(&coords).map_err(|_| Error::FlowDegenerate {
                    element: e,
                    t,
                    ratio: 0.0,
                })?;
                let ratio = g.measure / self.fixed[e].measure;
                if !(ratio >= MIN_MEASURE_RATIO) {
                    return Err(Error::FlowDegenerate { element: e, t, ratio });
                }
                geoms.push(g);
            }
            Some(geoms)
        } else {
            None
        };
        Ok(Moved {
            positions,
            geometry,
        })
    }

    fn frames<'m>(&'m self, moved: &'m Moved) -> &'m [ElementGeometry] {
        match self.mode {
            CoefficientMode::Literal => &self.fixed,
            CoefficientMode::Pullback => moved.geometry.as_deref().expect("moved geometry"),
        }
    }

    fn c_from(&self, moved: &Moved, t: f64) -> Result<Vec<f64>> {
        let vel = self.flow.velocities(self.mesh, t)?;
        let frames = self.frames(moved);
        Ok((0..self.mesh.num_elements())
            .map(|e| {
                let v: Vec<Point> = self.mesh.element(e).iter().map(|&k| vel[k]).collect();
                tangential_divergence(&frames[e], &v)
            })
            .collect())
    }

    fn diffusion_from(
        &self,
        moved: &Moved,
        d0: &dyn Diffusion,
        t: f64,
    ) -> Result<Vec<ChartMatrix>> {
        let frames = self.frames(moved);
        let mut out = Vec::with_capacity(frames.len());
        for (e, frame) in frames.iter().enumerate() {
            let el = self.mesh.element(e);
            let centroid =
                el.iter().map(|&v| moved.positions[v]).sum::<Point>() / el.len() as f64;
            let d = d0.tensor(&centroid, t, frame);
            let scale = d.amax().max(1.0);
            if (d - d.transpose()).amax() > 1e-12 * scale {
                return Err(Error::InvalidDiffusion {
                    element: e,
                    reason: "tensor is not symmetric".into(),
                });
            }
            let mut normals = vec![frame.unit_normal];
            if frame.dim == 1 {
                normals.push(Point::z());
            }
            for nu in normals {
                if (d * nu).norm() > NORMAL_SPACE_TOLERANCE * scale {
                    return Err(Error::InvalidDiffusion {
                        element: e,
                        reason: format!(
                            "does not vanish on the normal space (|D nu| = {:e})",
                            (d * nu).norm()
                        ),
                    });
                }
            }
            out.push(frame.chart_tensor(&d));
        }
        Ok(out)
    }

    fn weight_from(&self, moved: &Moved) -> Vec<f64> {
        match self.mode {
            CoefficientMode::Literal => vec![1.0; self.fixed.len()],
            CoefficientMode::Pullback => moved
                .geometry
                .as_ref()
                .expect("moved geometry")
                .iter()
                .zip(&self.fixed)
                .map(|(m, f)| m.measure / f.measure)
                .collect(),
        }
    }

    fn needs_moved_geometry(&self) -> bool {
        self.mode == CoefficientMode::Pullback
    }

    pub fn c(&self, t: f64) -> Result<Vec<f64>> {
        let moved = self.moved(t, self.needs_moved_geometry())?;
        self.c_from(&moved, t)
    }

    pub fn diffusion(&self, d0: &dyn Diffusion, t: f64) -> Result<Vec<ChartMatrix>> {
        let moved = self.moved(t, self.needs_moved_geometry())?;
        self.diffusion_from(&moved, d0, t)
    }

    pub fn mass_weight(&self, t: f64) -> Result<Vec<f64>> {
        // degeneracy of the moved surface is an error in both modes
        let moved = self.moved(t, true)?;
        Ok(self.weight_from(&moved))
    }

    pub fn level(&self, d0: &dyn Diffusion, t: f64) -> Result<CoefficientLevel> {
        let moved = self.moved(t, true)?;
        Ok(CoefficientLevel {
            t,
            c: self.c_from(&moved, t)?,
            diffusion: self.diffusion_from(&moved, d0, t)?,
            mass_weight: self.weight_from(&moved),
        })
    }

    /// Coefficient fields without the diffusion tensor (used when the stiffness
    /// matrix is reused across levels).
    pub fn reaction_and_weight(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let moved = self.moved(t, true)?;
        Ok((self.c_from(&moved, t)?, self.weight_from(&moved)))
    }
}

/// Reaction coefficient per element at time `t`.
pub fn compute_c(
    flow: &FlowMap,
    mesh: &SurfaceMesh,
    t: f64,
    mode: CoefficientMode,
) -> Result<Vec<f64>> {
    CoefficientSampler::new(mesh, flow, mode)?.c(t)
}

/// Chart diffusion tensor `a^{kl}` per element at time `t`.
pub fn effective_diffusion(
    d0: &dyn Diffusion,
    flow: &FlowMap,
    mesh: &SurfaceMesh,
    t: f64,
    mode: CoefficientMode,
) -> Result<Vec<ChartMatrix>> {
    CoefficientSampler::new(mesh, flow, mode)?.diffusion(d0, t)
}

/// Moved-to-initial measure ratio per element (all ones in literal mode).
pub fn mass_weight(
    flow: &FlowMap,
    mesh: &SurfaceMesh,
    t: f64,
    mode: CoefficientMode,
) -> Result<Vec<f64>> {
    CoefficientSampler::new(mesh, flow, mode)?.mass_weight(t)
}
