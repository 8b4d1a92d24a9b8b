//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use surfevo::assembly::{Assembler, SparseSymMatrix};
use surfevo::calculus::tangential_divergence;
use surfevo::coefficients::{compute_c, effective_diffusion, CoefficientMode, TangentialIdentity};
use surfevo::evolution::{
    interpolate, pushforward_snapshot, solve_evolution, EvolutionProblem, Stepper,
};
use surfevo::flow::{FlowMap, OdeScheme, UniformScale};
use surfevo::harness::{run, run_convergence, run_flow_test, ExperimentKind, RunConfig};
use surfevo::harness::perturbation_study;
use surfevo::mesh::{circle, icosphere, SurfaceMesh};
use surfevo::perturbation::Slope;

type Criterion = (&'static str, Option<u64>, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn config(text: &str) -> RunConfig {
    RunConfig::parse(text).expect("acceptance config")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into())
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    match limit {
        Some(l) => Outcome {
            pass: out.pass && elapsed < l,
            detail: format!("{}; runtime {:.2}s (limit {}s)", out.detail, elapsed.as_secs_f64(), l.as_secs()),
        },
        None => Outcome {
            detail: format!("{}; runtime {:.2}s", out.detail, elapsed.as_secs_f64()),
            ..out
        },
    }
}

fn circle_benchmark() -> Outcome {
    let cfg = config(
        "mesh = circle 32\nlevels = 3\nflow = identity\nu0 = cos_theta\nt_final = 1\ntau = h2\ntheta = 1\n",
    );
    match run_convergence(&cfg) {
        Ok(r) => {
            let (l2, h1) = (r.fixed.min_l2_eoc(), r.fixed.min_h1_eoc());
            let levels: Vec<String> = r.fixed.rows.iter().map(|row| row.level.to_string()).collect();
            check(
                l2.is_some_and(|e| e >= 1.9) && h1.is_some_and(|e| e >= 0.9),
                format!(
                    "N = {}: min L2 EOC {} (>= 1.9), min H1 EOC {} (>= 0.9)",
                    levels.join(", "),
                    fmt_opt(l2),
                    fmt_opt(h1)
                ),
            )
        }
        Err(e) => check(false, format!("error: {e}")),
    }
}

fn rayleigh_quotient(mesh: &SurfaceMesh, u: &[f64]) -> f64 {
    let asm = Assembler::new(mesh).unwrap();
    let ones = vec![1.0; mesh.num_elements()];
    let flow = FlowMap::stationary(1.0);
    let a = effective_diffusion(&TangentialIdentity, &flow, mesh, 0.0, CoefficientMode::Literal).unwrap();
    let k = asm.stiffness(&a, &ones).unwrap();
    let m = asm.mass(&ones).unwrap();
    k.bilinear(u, u) / m.bilinear(u, u)
}

fn sphere_benchmark() -> Outcome {
    let fine = icosphere(5);
    let q = rayleigh_quotient(&fine, &interpolate(&fine, |x| x.x * x.y));
    let oracle_ok = (q - 6.0).abs() <= 0.01 * 6.0;
    // with theta = 1 the coarsest level takes a single step of size 0.1 and the
    // time error masks the spatial rate; the backward Euler figure is reported alongside
    let text = "mesh = icosphere 2\nlevels = 3\nflow = identity\nu0 = harmonic_x1x2\nt_final = 0.1\ntau = h2\n";
    let euler = run_convergence(&config(&format!("{text}theta = 1\n")))
        .ok()
        .and_then(|r| r.fixed.min_l2_eoc());
    match run_convergence(&config(&format!("{text}theta = 0.5\n"))) {
        Ok(r) => {
            let l2 = r.fixed.min_l2_eoc();
            check(
                oracle_ok && l2.is_some_and(|e| e >= 1.8) && r.benchmark.eigenvalue == 6.0,
                format!(
                    "levels 2-4, theta 0.5: min L2 EOC {} (>= 1.8) [theta 1: {}]; Rayleigh quotient on level 5 = {q:.5} (within 1% of 6)",
                    fmt_opt(l2),
                    fmt_opt(euler)
                ),
            )
        }
        Err(e) => check(false, format!("error: {e}")),
    }
}

fn conservation() -> Outcome {
    let mesh = icosphere(3);
    let flow = FlowMap::analytic(Box::new(UniformScale { rate: 0.5 }), 1.0);
    let d = TangentialIdentity;
    let u0 = interpolate(&mesh, |x| (-2.0 * (x - nalgebra::Vector3::new(0.5, 0.0, 0.5)).norm_squared()).exp());
    let problem = EvolutionProblem::new(&mesh, &flow, &d, u0, 1.0, 0.02)
        .with_mode(CoefficientMode::Pullback)
        .with_cg(1e-14, 20_000);
    match solve_evolution(&problem) {
        Ok(traj) => {
            let m0 = traj.diagnostics[0].discrete_mass;
            let drift = traj
                .diagnostics
                .iter()
                .map(|d| ((d.discrete_mass - m0) / m0).abs())
                .fold(0.0, f64::max);
            check(
                drift <= 1e-9 && mesh.is_closed(),
                format!("{} steps, max relative drift of total mass {drift:.2e} (<= 1e-9)", traj.num_levels() - 1),
            )
        }
        Err(e) => check(false, format!("error: {e}")),
    }
}

fn coefficient_discrepancy() -> Outcome {
    let mesh = icosphere(3);
    let flow = FlowMap::analytic(Box::new(UniformScale { rate: 1.0 }), 1.0);
    let dev = |mode, target: f64| -> Result<f64, surfevo::Error> {
        let c = compute_c(&flow, &mesh, 1.0, mode)?;
        Ok(c.iter().map(|c| (c - target).abs()).fold(0.0, f64::max))
    };
    match (dev(CoefficientMode::Literal, 2.0), dev(CoefficientMode::Pullback, 1.0)) {
        (Ok(lit), Ok(pb)) => check(
            lit <= 1e-9 && pb <= 1e-9,
            format!("max |c - 2| literal {lit:.2e}, max |c - 1| pullback {pb:.2e} (<= 1e-9)"),
        ),
        (Err(e), _) | (_, Err(e)) => check(false, format!("error: {e}")),
    }
}

fn constant_stiffness() -> Outcome {
    let mesh = icosphere(3);
    let t_final = 0.5;
    let flow = FlowMap::analytic(Box::new(UniformScale { rate: 1.0 }), t_final);
    let d = TangentialIdentity;
    let u0 = interpolate(&mesh, |x| x.x * x.y);
    let problem = EvolutionProblem::new(&mesh, &flow, &d, u0, t_final, 0.05).with_mode(CoefficientMode::Literal);
    let traj = solve_evolution(&problem).unwrap();
    // independent check: assemble at both ends from scratch
    let asm = Assembler::new(&mesh).unwrap();
    let ones = vec![1.0; mesh.num_elements()];
    let k_at = |t: f64| -> SparseSymMatrix {
        let a = effective_diffusion(&d, &flow, &mesh, t, CoefficientMode::Literal).unwrap();
        asm.stiffness(&a, &ones).unwrap()
    };
    let (k0, kt) = (k_at(0.0), k_at(t_final));
    let identical = k0.values().iter().zip(kt.values()).all(|(a, b)| a.to_bits() == b.to_bits());
    let mut stepper = Stepper::new(&problem).unwrap();
    let (o0, ot) = (stepper.operators(0.0).unwrap(), stepper.operators(t_final).unwrap());
    let reused = o0.stiffness.values() == ot.stiffness.values() && stepper.stiffness_assemblies() == 1;
    check(
        identical && reused && traj.stiffness_assemblies == 1,
        format!(
            "stiffness at t=0 and t={t_final} bitwise identical: {identical}; assemblies per run: {} (== 1)",
            traj.stiffness_assemblies
        ),
    )
}

fn perturbation_rate() -> Outcome {
    let cfg = config(
        "mesh = icosphere 3\nflow = identity\nu0 = harmonic_x1x2\nt_final = 0.1\ntau = 0.01\nperturb_levels = 0.1,0.05,0.025\nperturb_profile = alternating\n",
    );
    match perturbation_study(&cfg) {
        Ok(study) => {
            let errs: Vec<String> = study.errors.iter().map(|e| format!("{e:.3e}")).collect();
            match study.slope {
                Slope::Fitted(s) => check(
                    (0.8..=1.2).contains(&s),
                    format!("E(h) = [{}], fitted slope {s:.4} (in [0.8, 1.2])", errs.join(", ")),
                ),
                Slope::Exact => check(false, "all errors vanished".into()),
            }
        }
        Err(e) => check(false, format!("error: {e}")),
    }
}

fn flow_orders() -> Outcome {
    let cfg = config("mesh = icosphere 1\nflow = radial\nt_final = 1\node_step = 0.1\nlevels = 3\n");
    match run_flow_test(&cfg) {
        Ok(r) => {
            let order = |s| match r.order(s) {
                Some(Slope::Fitted(o)) => o,
                _ => f64::NAN,
            };
            let (e, k) = (order(OdeScheme::Euler), order(OdeScheme::Rk4));
            check(
                (k - 4.0).abs() <= 0.3 && (e - 1.0).abs() <= 0.2 && r.round_trip_err <= 1e-7,
                format!(
                    "rk4 order {k:.4} (4.0 +- 0.3), euler order {e:.4} (1.0 +- 0.2), round trip {:.2e} (<= 1e-7)",
                    r.round_trip_err
                ),
            )
        }
        Err(e) => check(false, format!("error: {e}")),
    }
}

fn structural_invariants() -> Outcome {
    let mesh = icosphere(2);
    let mut failures = Vec::new();
    let asm = Assembler::new(&mesh).unwrap();
    let ones = vec![1.0; mesh.num_elements()];
    let mass = asm.mass(&ones).unwrap();
    let area = mesh.total_measure().unwrap();
    let n = mesh.num_vertices();
    let dense = DMatrix::from_fn(n, n, |i, j| mass.get(i, j));
    if (mass.sum_entries() - area).abs() > 1e-10 * area {
        failures.push("mass entry sum != area");
    }
    if mass.asymmetry() != 0.0 || dense.clone().cholesky().is_none() {
        failures.push("mass not SPD");
    }

    let flow = FlowMap::stationary(1.0);
    let a = effective_diffusion(&TangentialIdentity, &flow, &mesh, 0.0, CoefficientMode::Literal).unwrap();
    let stiff = asm.stiffness(&a, &ones).unwrap();
    let scale = stiff.max_abs();
    let row_sums = stiff.matvec(&vec![1.0; n]);
    if row_sums.iter().any(|r| r.abs() > 1e-10 * scale) {
        failures.push("stiffness row sums nonzero");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if stiff.bilinear(&x, &x) < -1e-12 * scale {
            failures.push("stiffness not PSD");
            break;
        }
    }

    let geoms = mesh.geometries().unwrap();
    for (e, g) in geoms.iter().enumerate() {
        let sum: nalgebra::Vector3<f64> = g.gradients().iter().sum();
        if sum.amax() > 1e-12 {
            failures.push("basis gradients do not sum to zero");
            break;
        }
        let pos: Vec<_> = mesh.element(e).iter().map(|&v| *mesh.vertex(v)).collect();
        if (tangential_divergence(g, &pos) - 2.0).abs() > 1e-12 {
            failures.push("position divergence != n");
            break;
        }
    }
    let curve = circle(40).unwrap();
    for (e, g) in curve.geometries().unwrap().iter().enumerate() {
        let pos: Vec<_> = curve.element(e).iter().map(|&v| *curve.vertex(v)).collect();
        if (tangential_divergence(g, &pos) - 1.0).abs() > 1e-12 {
            failures.push("position divergence != n on a curve");
            break;
        }
    }

    let moving = FlowMap::analytic(Box::new(UniformScale { rate: 1.0 }), 1.0);
    let d = TangentialIdentity;
    let u0 = interpolate(&mesh, |x| x.x * x.y + x.z);
    let traj = solve_evolution(&EvolutionProblem::new(&mesh, &moving, &d, u0, 1.0, 0.25)).unwrap();
    for (k, &t) in traj.times.iter().enumerate() {
        let (_, vals) = pushforward_snapshot(&traj, &moving, &mesh, t).unwrap();
        let (mut a, mut b) = (vals, traj.values[k].clone());
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        if a != b {
            failures.push("pushforward changed the value multiset");
            break;
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run_id in 0..2 {
        let mut cfg = config("mesh = icosphere 1\nlevels = 2\nflow = uniform_scale 0.5\nt_final = 0.2\ntau = 0.05\n");
        cfg.out = dir.path().join(format!("run{run_id}"));
        run(ExperimentKind::Converge, &cfg).unwrap();
        run(ExperimentKind::Solve, &cfg).unwrap();
        let mut files: Vec<_> = std::fs::read_dir(&cfg.out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "run.cfg")
            .collect();
        files.sort();
        let contents: Vec<_> = files
            .iter()
            .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap()))
            .collect();
        outputs.push(contents);
    }
    if outputs[0] != outputs[1] {
        failures.push("reruns differ");
    }

    check(
        failures.is_empty(),
        if failures.is_empty() {
            "mass SPD and sums to area, stiffness row sums 0 and PSD, gradient partition of unity, position divergence n, pushforward multiset, bitwise reruns".into()
        } else {
            failures.join("; ")
        },
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("circle heat benchmark", Some(10), circle_benchmark),
        ("sphere heat benchmark", Some(60), sphere_benchmark),
        ("moving-surface conservation", Some(30), conservation),
        ("literal vs pullback coefficient", None, coefficient_discrepancy),
        ("constant stiffness in literal mode", None, constant_stiffness),
        ("perturbation rate", Some(120), perturbation_rate),
        ("flow integrator orders", None, flow_orders),
        ("structural invariants", None, structural_invariants),
    ];
    let mut failed = 0;
    for (k, (name, limit, f)) in criteria.into_iter().enumerate() {
        let out = timed(limit.map(Duration::from_secs), f);
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{}] {name}: {}", k + 1, out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
