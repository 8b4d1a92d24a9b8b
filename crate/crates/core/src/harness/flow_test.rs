//! Observed order of the trajectory integrators against closed-form flows.

use std::path::Path;

use super::config::RunConfig;
use super::output::{cell, write_csv};
use crate::error::Result;
use crate::flow::{integrate_flow, OdeScheme};
use crate::perturbation::{fit_log_slope, Slope};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTestRow {
    pub scheme: OdeScheme,
    pub tau: f64,
    pub max_err: f64,
    pub eoc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowTestReport {
    pub rows: Vec<FlowTestRow>,
    /// Least-squares order per scheme.
    pub fits: Vec<(OdeScheme, Slope)>,
    /// Largest forward-backward round-trip error over vertices, RK4 at the finest step.
    pub round_trip_err: f64,
}

pub const FLOW_TEST_HEADER: [&str; 4] = ["scheme", "tau", "max_err", "eoc"];

fn scheme_name(s: OdeScheme) -> &'static str {
    match s {
        OdeScheme::Euler => "euler",
        OdeScheme::Rk4 => "rk4",
    }
}

impl FlowTestReport {
    pub fn order(&self, scheme: OdeScheme) -> Option<Slope> {
        self.fits.iter().find(|(s, _)| *s == scheme).map(|(_, o)| *o)
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    scheme_name(r.scheme).to_string(),
                    r.tau.to_string(),
                    r.max_err.to_string(),
                    cell(r.eoc),
                ]
            })
            .collect();
        for (s, o) in &self.fits {
            rows.push(vec![scheme_name(*s).to_string(), "fit".into(), String::new(), o.to_string()]);
        }
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &FLOW_TEST_HEADER, &self.csv_rows())
    }
}

/// Integrates the configured flow's field with both schemes at `levels` steps
/// `ode_step, ode_step/2, …` and compares with the closed form at `t_final`.
pub fn run_flow_test(config: &RunConfig) -> Result<FlowTestReport> {
    config.validate()?;
    let (mesh, _) = config.mesh.build(0)?;
    let exact = config.flow.analytic();
    let target: Vec<_> = mesh.vertices().iter().map(|x| exact.phi(x, config.t_final)).collect();
    let taus: Vec<f64> = (0..config.levels)
        .map(|k| config.ode_step / (1u64 << k) as f64)
        .collect();
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut round_trip_err = 0.0;
    for scheme in [OdeScheme::Euler, OdeScheme::Rk4] {
        let mut errs: Vec<f64> = Vec::with_capacity(taus.len());
        for (k, &tau) in taus.iter().enumerate() {
            let flow = integrate_flow(config.flow.field(), &mesh, config.t_final, tau, scheme)?;
            let pos = flow.moved_positions(&mesh, config.t_final)?;
            let err = pos
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            let eoc = (k > 0 && errs[k - 1] > 0.0 && err > 0.0)
                .then(|| (errs[k - 1] / err).ln() / (taus[k - 1] / tau).ln());
            rows.push(FlowTestRow {
                scheme,
                tau,
                max_err: err,
                eoc,
            });
            errs.push(err);
            if scheme == OdeScheme::Rk4 && k + 1 == taus.len() {
                for (x, p) in mesh.vertices().iter().zip(&pos) {
                    round_trip_err = f64::max(round_trip_err, (flow.inverse_at(p, config.t_final)? - x).norm());
                }
            }
        }
        // a single level has no order to fit
        let fit = if taus.len() >= 2 {
            fit_log_slope(&taus, &errs)?
        } else {
            Slope::Exact
        };
        fits.push((scheme, fit));
    }
    Ok(FlowTestReport {
        rows,
        fits,
        round_trip_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(text: &str) -> FlowTestReport {
        run_flow_test(&RunConfig::parse(text).unwrap()).unwrap()
    }

    #[test]
    fn radial_orders() {
        let r = report("mesh = icosphere 0\nflow = radial\nt_final = 1\node_step = 0.1\nlevels = 3\n");
        let Some(Slope::Fitted(e)) = r.order(OdeScheme::Euler) else { panic!() };
        let Some(Slope::Fitted(k)) = r.order(OdeScheme::Rk4) else { panic!() };
        assert!((e - 1.0).abs() <= 0.2, "euler {e}");
        assert!((k - 4.0).abs() <= 0.3, "rk4 {k}");
        assert!(r.round_trip_err <= 1e-7);
    }

    #[test]
    fn identity_is_exact() {
        let r = report("mesh = icosphere 0\nflow = identity\nt_final = 1\node_step = 0.1\n");
        assert!(r.rows.iter().all(|row| row.max_err == 0.0 && row.eoc.is_none()));
        assert_eq!(r.order(OdeScheme::Rk4), Some(Slope::Exact));
        assert_eq!(r.round_trip_err, 0.0);
        let rows = r.csv_rows();
        assert_eq!(rows.last().unwrap(), &vec!["rk4".to_string(), "fit".into(), String::new(), "exact".into()]);
    }
}
