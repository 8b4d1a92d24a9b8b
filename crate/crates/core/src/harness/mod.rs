//! Experiment drivers behind the command line: configuration, refinement
//! studies, flow-integrator checks and file output.

pub mod config;
pub mod convergence;
pub mod flow_test;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use config::{ExperimentKind, RunConfig};
pub use convergence::{run_convergence, Benchmark, ConvergenceReport, EocRow, EocTable};
pub use flow_test::{run_flow_test, FlowTestReport};
pub use output::{write_csv, write_off, write_vtk_series};

use crate::error::Result;
use crate::evolution::SolutionTrajectory;
use crate::perturbation::{
    run_perturbation_study, PerturbationConfig, PerturbationStudy, PerturbationVariant,
};
use config::VariantSpec;
use output::cell;

pub const DIAGNOSTICS_HEADER: [&str; 5] = ["level", "t", "min_c", "mass", "cg_iterations"];
pub const PERTURBATION_HEADER: [&str; 3] = ["h", "E", "eoc"];

/// Outcome of one command: human-readable summary lines and files written.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

pub fn run(kind: ExperimentKind, config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    let mut summary = match kind {
        ExperimentKind::Solve => run_solve(config)?,
        ExperimentKind::Converge => run_converge(config)?,
        ExperimentKind::Perturb => run_perturb(config)?,
        ExperimentKind::FlowTest => run_flow_test_files(config)?,
    };
    let cfg_path = config.out.join("run.cfg");
    fs::write(&cfg_path, config.to_text())?;
    summary.files.push(cfg_path);
    Ok(summary)
}

pub fn diagnostics_rows(traj: &SolutionTrajectory) -> Vec<Vec<String>> {
    traj.diagnostics
        .iter()
        .enumerate()
        .map(|(k, d)| {
            vec![
                k.to_string(),
                d.t.to_string(),
                d.min_c.to_string(),
                d.discrete_mass.to_string(),
                d.cg_iterations.to_string(),
            ]
        })
        .collect()
}

fn run_solve(config: &RunConfig) -> Result<RunSummary> {
    let (mesh, _, tau, traj) = convergence::solve_level(config, 0)?;
    let mut summary = RunSummary::default();
    let diag = config.out.join("diagnostics.csv");
    write_csv(&diag, &DIAGNOSTICS_HEADER, &diagnostics_rows(&traj))?;
    summary.files.push(diag);
    if config.write_vtk {
        let flow = config.flow_map(&mesh)?;
        summary.files.extend(write_vtk_series(&traj, &flow, &mesh, &config.out)?);
    }
    let m0 = traj.diagnostics[0].discrete_mass;
    let drift = traj
        .diagnostics
        .iter()
        .map(|d| (d.discrete_mass - m0).abs())
        .fold(0.0, f64::max);
    let step = traj.times.get(1).map_or(tau, |t1| t1 - traj.times[0]);
    let negative = traj.negative_c_levels();
    summary.lines.push(format!(
        "solve: {} vertices, {} elements, {} levels, tau {step}, mode {}",
        mesh.num_vertices(),
        mesh.num_elements(),
        traj.num_levels(),
        traj.mode
    ));
    summary.lines.push(format!(
        "initial mass {m0:e}, max mass drift {drift:e}, stiffness assemblies {}, cg iterations {}",
        traj.stiffness_assemblies,
        traj.diagnostics.iter().map(|d| d.cg_iterations).sum::<usize>()
    ));
    if !negative.is_empty() {
        summary.lines.push(format!(
            "note: reaction coefficient negative at {} of {} levels",
            negative.len(),
            traj.num_levels()
        ));
    }
    Ok(summary)
}

fn run_converge(config: &RunConfig) -> Result<RunSummary> {
    let report = run_convergence(config)?;
    let mut summary = RunSummary::default();
    let path = config.out.join("eoc.csv");
    report.fixed.write_csv(&path)?;
    summary.files.push(path);
    if let Some(moved) = &report.moved {
        let path = config.out.join("eoc_moved.csv");
        moved.write_csv(&path)?;
        summary.files.push(path);
    }
    summary.lines.push(format!(
        "converge: {} levels, min L2 EOC {}, min H1 EOC {}",
        report.fixed.rows.len(),
        cell(report.fixed.min_l2_eoc()),
        cell(report.fixed.min_h1_eoc())
    ));
    Ok(summary)
}

/// Perturbation study for the configured problem on the unrefined mesh.
pub fn perturbation_study(config: &RunConfig) -> Result<PerturbationStudy> {
    let (mesh, _) = config.mesh.build(0)?;
    let flow = config.flow_map(&mesh)?;
    let mut study = PerturbationConfig::new(
        &mesh,
        &flow,
        config.initial_values(&mesh),
        config.t_final,
        config.tau_for_mesh(&mesh),
    );
    study.mode = config.mode;
    study.theta = config.theta;
    study.levels = config.perturb_levels.clone();
    study.profile = config.perturb_profile.build(mesh.num_elements())?;
    study.cg_tol = config.cg_tol;
    study.cg_max_iter = config.cg_max_iter;
    study.variant = match config.perturb_variant {
        VariantSpec::Coefficient => PerturbationVariant::Coefficient,
        VariantSpec::EulerFlow => PerturbationVariant::EulerFlow {
            field: Arc::from(config.flow.field()),
        },
    };
    run_perturbation_study(&study)
}

pub fn perturbation_rows(study: &PerturbationStudy) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = study
        .levels
        .iter()
        .zip(&study.errors)
        .zip(study.pairwise_eoc())
        .map(|((h, e), eoc)| vec![h.to_string(), e.to_string(), cell(eoc)])
        .collect();
    rows.push(vec!["slope".into(), study.slope.to_string(), String::new()]);
    rows
}

fn run_perturb(config: &RunConfig) -> Result<RunSummary> {
    let study = perturbation_study(config)?;
    let path = config.out.join("perturbation.csv");
    write_csv(&path, &PERTURBATION_HEADER, &perturbation_rows(&study))?;
    Ok(RunSummary {
        lines: vec![format!(
            "perturb: variant {}, {} levels, fitted slope {}",
            study.variant.name(),
            study.levels.len(),
            study.slope
        )],
        files: vec![path],
    })
}

fn run_flow_test_files(config: &RunConfig) -> Result<RunSummary> {
    let report = run_flow_test(config)?;
    let path = config.out.join("flow_test.csv");
    report.write_csv(&path)?;
    let orders: Vec<String> = report
        .csv_rows()
        .iter()
        .filter(|r| r[1] == "fit")
        .map(|r| format!("{} {}", r[0], r[3]))
        .collect();
    Ok(RunSummary {
        lines: vec![format!(
            "flow-test: orders {}, round trip error {:e}",
            orders.join(", "),
            report.round_trip_err
        )],
        files: vec![path],
    })
}

/// Reads the config file if given, then applies overrides in order.
pub fn load_config(
    path: Option<&Path>,
    out: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    if let Some(o) = out {
        cfg.out = o.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reruns_are_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::parse("mesh = icosphere 1\nlevels = 2\nflow = uniform_scale 0.5").unwrap();
        let mut outputs = Vec::new();
        for run_id in 0..2 {
            cfg.out = dir.path().join(format!("r{run_id}"));
            run(ExperimentKind::Converge, &cfg).unwrap();
            run(ExperimentKind::Solve, &cfg).unwrap();
            let read = |f: &str| fs::read(cfg.out.join(f)).unwrap();
            outputs.push((read("eoc.csv"), read("eoc_moved.csv"), read("diagnostics.csv"), read("u_0001.vtk")));
        }
        assert_eq!(outputs[0], outputs[1]);
    }

    #[test]
    fn perturbation_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_config(
            None,
            Some(dir.path()),
            &[("mesh".into(), "icosphere 1".into()), ("perturb_profile".into(), "zero".into())],
        )
        .unwrap();
        run(ExperimentKind::Perturb, &cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("perturbation.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "h,E,eoc");
        assert_eq!(lines[1], "0.1,0,");
        assert_eq!(*lines.last().unwrap(), "slope,exact,");
    }
}
