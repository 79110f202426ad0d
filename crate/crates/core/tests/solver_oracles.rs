use std::f64::consts::PI;

use nlad_core::adhesion::AdhesionForce;
use nlad_core::fields::{BoundaryMode, BoxDomain, ScalarField};
use nlad_core::initial::InitialCondition;
use nlad_core::linalg::SymMat;
use nlad_core::solver::{mass_balance_residual, run, subdomain_diagnostics, AdvectionScheme, Region, SolverConfig, Trajectory};
use nlad_core::tensor::TensorSpec;

fn identity() -> TensorSpec<f64> {
    TensorSpec::constant(SymMat::identity(3)).unwrap()
}

fn reference_domain(n: usize) -> BoxDomain<f64> {
    BoxDomain::cube(3, 4.0, n, BoundaryMode::NoFlux).unwrap()
}

fn reference_spec() -> TensorSpec<f64> {
    TensorSpec::scalar_isotropic(vec![vec![2.0, 2.0, 2.0]]).unwrap()
}

fn reference_initial(dom: &BoxDomain<f64>) -> ScalarField<f64> {
    InitialCondition::Gaussian {
        center: vec![1.7, 2.2, 2.0],
        width: 0.5,
        amplitude: 1.0,
        background: 0.1,
    }
    .sample(dom)
    .unwrap()
}

fn reference_config(dt: f64) -> SolverConfig<f64> {
    let mut cfg = SolverConfig::new(0.02, 1.0, 4.0, 0.5);
    cfg.cfl = 0.9;
    cfg.dt = Some(dt);
    cfg.advection = AdvectionScheme::Centered;
    cfg
}

#[test]
fn logistic_closed_form() {
    let dom = BoxDomain::cube(3, 1.0, 4, BoundaryMode::Periodic).unwrap();
    let mut cfg = SolverConfig::new(0.0, 1.0, 2.0, 2.0);
    cfg.dt = Some(1e-3);
    cfg.snapshot_stride = 1;
    let c0 = ScalarField::constant(&dom, 0.5);
    let traj = run(&c0, &identity(), AdhesionForce::Hat { f0: 1.0 }, cfg).unwrap();
    assert_eq!(traj.steps(), 2000);
    let mut worst: f64 = 0.0;
    for s in &traj.snapshots {
        let exact = 1.0 / (1.0 + (-s.t).exp());
        for &v in s.c.values() {
            worst = worst.max((v - exact).abs());
        }
    }
    assert!(worst < 1e-6, "{worst:e}");
    assert!((traj.t_final() - 2.0).abs() < 1e-12);
}

fn heat_run(n: usize, t_final: f64) -> Trajectory<f64> {
    let dom = BoxDomain::cube(3, 1.0, n, BoundaryMode::Periodic).unwrap();
    let mut cfg = SolverConfig::new(0.0, 0.0, 2.0, t_final);
    cfg.cfl = 1.0;
    cfg.snapshot_stride = 4;
    let c0 = ScalarField::from_fn(&dom, |x: &[f64]| 1.0 + 0.5 * (2.0 * PI * x[0]).sin()).unwrap();
    run(&c0, &identity(), AdhesionForce::Constant { f0: 0.0 }, cfg).unwrap()
}

/// Amplitude of the `sin(2πx₁)` mode.
fn mode_amplitude(c: &ScalarField<f64>) -> f64 {
    let dom = c.domain();
    let mut x = vec![0.0; 3];
    let mut s = 0.0;
    for (i, &v) in c.values().iter().enumerate() {
        dom.center_into(i, &mut x);
        s += v * (2.0 * PI * x[0]).sin();
    }
    2.0 * s * dom.cell_volume()
}

#[test]
fn heat_mode_decay_and_accumulated_gradient() {
    let t = 0.05;
    let traj = heat_run(32, t);
    let ratio = mode_amplitude(traj.final_state()) / mode_amplitude(traj.initial());
    let exact = (-4.0 * PI * PI * t).exp();
    assert!((ratio / exact - 1.0).abs() < 0.01, "{ratio} vs {exact}");

    // ∫₀ᵀ ‖∇c‖² = ∫ (0.5·2π)² e^{−8π²t} |Ω|/2 dt
    let k = 2.0 * PI;
    let exact_h1 = 0.25 * k * k * 0.5 * (1.0 - (-2.0 * k * k * t).exp()) / (2.0 * k * k);
    let diag = subdomain_diagnostics(&traj, &Region::Whole, None, 0.0).unwrap();
    assert!((diag.h1_seminorm_sq / exact_h1 - 1.0).abs() < 0.02, "{} vs {exact_h1}", diag.h1_seminorm_sq);
}

#[test]
fn constant_state_has_no_gradient() {
    let dom = BoxDomain::cube(3, 2.0, 6, BoundaryMode::Periodic).unwrap();
    let cfg = SolverConfig::new(0.0, 0.0, 2.0, 0.1);
    let traj = run(&ScalarField::constant(&dom, 0.3), &identity(), AdhesionForce::Hat { f0: 1.0 }, cfg).unwrap();
    let b = Region::Box {
        lo: vec![0.5; 3],
        hi: vec![1.5; 3],
    };
    let diag = subdomain_diagnostics(&traj, &b, None, 0.0).unwrap();
    assert_eq!(diag.h1_seminorm_sq, 0.0);
    assert!(traj.final_state().values().iter().all(|&v| v == 0.3));
}

#[test]
fn zero_initial_data_stays_zero() {
    let dom = reference_domain(8);
    let cfg = SolverConfig::new(0.04, 1.0, 4.0, 0.1);
    let traj = run(&ScalarField::zeros(&dom), &reference_spec(), AdhesionForce::Hat { f0: 1.0 }, cfg).unwrap();
    assert!(traj.final_state().values().iter().all(|&v| v == 0.0));
}

#[test]
fn transport_conserves_mass_over_a_thousand_steps() {
    let dom = reference_domain(16);
    let mut cfg = SolverConfig::new(0.02, 0.0, 4.0, 1.0);
    cfg.dt = Some(1e-3);
    cfg.snapshot_stride = 100;
    cfg.advection = AdvectionScheme::Upwind;
    let c0 = reference_initial(&dom);
    let traj = run(&c0, &reference_spec(), AdhesionForce::Hat { f0: 3.0 }, cfg).unwrap();
    assert_eq!(traj.steps(), 1000);
    let m0 = traj.rows[0].mass;
    let drift = traj.rows.iter().map(|r| (r.mass - m0).abs()).fold(0.0, f64::max);
    assert!(drift <= 1e-12 * m0, "relative drift {:e}", drift / m0);
}

#[test]
fn gronwall_bound_and_mass_balance() {
    let dom = reference_domain(16);
    let mut cfg = reference_config(2e-3);
    cfg.t_final = 1.0;
    let c0 = reference_initial(&dom);
    let traj = run(&c0, &reference_spec(), AdhesionForce::Hat { f0: 1.0 }, cfg).unwrap();
    let l1_0 = traj.rows[0].l1;
    for r in &traj.rows {
        assert!(r.l1 <= (r.t).exp() * l1_0 * (1.0 + 1e-6), "t = {}", r.t);
    }
    // per-step defect of the trapezoid mass law is third order in the step
    let res = mass_balance_residual(&traj).unwrap();
    let worst = res.iter().fold(0.0f64, |m, &v| m.max(v));
    assert!(worst < 1e-6 * l1_0, "{worst:e}");
}

#[test]
fn time_step_self_convergence_is_second_order() {
    let dom = reference_domain(32);
    let c0 = reference_initial(&dom);
    let finals: Vec<ScalarField<f64>> = [1e-3, 5e-4, 2.5e-4]
        .iter()
        .map(|&dt| {
            let mut cfg = reference_config(dt);
            cfg.snapshot_stride = 1000;
            run(&c0, &reference_spec(), AdhesionForce::Hat { f0: 1.0 }, cfg)
                .unwrap()
                .final_state()
                .clone()
        })
        .collect();
    let l1 = |a: &ScalarField<f64>, b: &ScalarField<f64>| a.lin_comb(1.0, b, -1.0).unwrap().lp_norm(1.0).unwrap();
    let ratio = l1(&finals[0], &finals[1]) / l1(&finals[1], &finals[2]);
    assert!((ratio - 4.0).abs() <= 1.2, "{ratio}");
}
