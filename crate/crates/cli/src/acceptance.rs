//! The acceptance suite behind `nlad verify`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nlad_core::adhesion::{
    adhesion_via_potential, apply_adhesion, build_kernel, AdhesionForce, AdhesionKernel, AdhesionOperator,
    PotentialGradient, Strategy,
};
use nlad_core::fields::{BoundaryMode, BoxDomain, ScalarField};
use nlad_core::fractal::{dyadic_schedule, upper_box_dim, verify_cutoff, CompactSet, CutoffCheckOptions};
use nlad_core::initial::InitialCondition;
use nlad_core::linalg::SymMat;
use nlad_core::solver::{run, AdvectionScheme, SolverConfig};
use nlad_core::tensor::{check_regularization, divergence_sup, evaluate, regularize, TensorSpec};
use nlad_core::weakform::TestMode;
use rand::{Rng, SeedableRng};

use crate::commands::{self, Axis};
use crate::config::{RunConfig, DEFAULT_SEED};
use crate::error::CliError;
use crate::store;

pub const REFERENCE_CONFIG: &str = include_str!("../../../configs/reference.json");

pub fn reference_config() -> RunConfig {
    RunConfig::from_json(REFERENCE_CONFIG).expect("bundled reference config parses")
}

#[derive(Clone, Debug)]
pub struct Criterion {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
}

impl Criterion {
    pub fn line(&self) -> String {
        let budget = self.budget.map_or(String::new(), |b| format!(" / {} s", b.as_secs()));
        format!(
            "[{}] {:>2} {}: {} ({:.1} s{budget})",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

fn timed(
    id: u8,
    name: &'static str,
    budget: Option<u64>,
    f: impl FnOnce() -> Result<(bool, String), CliError>,
) -> Criterion {
    let start = Instant::now();
    let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let elapsed = start.elapsed();
    let budget = budget.map(Duration::from_secs);
    let in_time = budget.map_or(true, |b| elapsed < b);
    Criterion {
        id,
        name,
        passed: ok && in_time,
        detail: if in_time { detail } else { format!("{detail}; over the time budget") },
        elapsed,
        budget,
    }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

/// Largest relative gap between kernel summation and the potential route over `fields`
/// random densities.
pub fn oracle_gap(kernel: &AdhesionKernel<f64>, fields: usize, seed: u64) -> Result<f64, CliError> {
    let dom = kernel.domain().clone();
    let g = PotentialGradient::new(*kernel.force(), dom.dim());
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..fields {
        let c = ScalarField::new(dom.clone(), (0..dom.len()).map(|_| rng.gen_range(0.0..1.0)).collect())?;
        let a = apply_adhesion(kernel, &c)?;
        let b = adhesion_via_potential(&g, &c)?;
        worst = worst.max(a.max_abs_diff(&b)? / a.max_norm().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

fn oracle_kernel() -> Result<AdhesionKernel<f64>, CliError> {
    let dom = BoxDomain::cube(3, 2.0, 16, BoundaryMode::NoFlux)?;
    Ok(build_kernel(AdhesionForce::Hat { f0: 1.0 }, &dom)?)
}

/// Flips the sign of the kernel weights at the offset `(1, 0, …, 0)`.
pub fn inject_sign_error(kernel: &mut AdhesionKernel<f64>) {
    let d = kernel.domain().dim();
    let target: Vec<isize> = (0..d).map(|i| isize::from(i == 0)).collect();
    for k in 0..kernel.len() {
        if kernel.offset(k) == target.as_slice() {
            kernel.weight_mut(k).iter_mut().for_each(|w| *w = -*w);
        }
    }
}

pub fn adhesion_oracle(seed: u64, sabotage: bool) -> Criterion {
    timed(1, "adhesion oracle equivalence", Some(10), || {
        let mut kernel = oracle_kernel()?;
        if sabotage {
            inject_sign_error(&mut kernel);
        }
        let gap = oracle_gap(&kernel, 20, seed)?;
        Ok((gap <= 1e-12, format!("max relative gap {gap:.2e} over 20 fields (tol 1e-12)")))
    })
}

fn j1(a: f64) -> f64 {
    if a.abs() < 1e-3 {
        a / 3.0 - a.powi(3) / 30.0
    } else {
        a.sin() / (a * a) - a.cos() / a
    }
}

/// Error of the discrete operator against the quadrature of the defining integral for the
/// plane wave `1 + ½ sin(k·x)` on the periodic box of side 4 with `n` cells per axis.
///
/// For `c = sin(k·x)` the integral reduces to `k̂ cos(k·x) · 3∫₀¹ F(s) s² j₁(|k|s) ds`.
pub fn plane_wave_error(n: usize) -> Result<f64, CliError> {
    let k = [PI / 2.0, PI, PI / 2.0];
    let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    let force = AdhesionForce::Hat { f0: 1.0 };
    let m = 400_000;
    let gain = 3.0
        * (0..m)
            .map(|i| {
                let s = (i as f64 + 0.5) / m as f64;
                force.eval(s) * s * s * j1(kn * s)
            })
            .sum::<f64>()
        / m as f64;
    let dom = BoxDomain::cube(3, 4.0, n, BoundaryMode::Periodic)?;
    let phase = |x: &[f64]| k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
    let c = ScalarField::from_fn(&dom, |x| 1.0 + 0.5 * phase(x).sin())?;
    let a = AdhesionOperator::new(build_kernel(force, &dom)?, Strategy::Auto).apply(&c)?;
    let mut x = vec![0.0; 3];
    let mut err: f64 = 0.0;
    for cell in 0..dom.len() {
        dom.center_into(cell, &mut x);
        let ph = phase(&x).cos();
        for q in 0..3 {
            err = err.max((a.at(cell)[q] - 0.5 * gain * ph * k[q] / kn).abs());
        }
    }
    Ok(err)
}

pub fn adhesion_quadrature() -> Criterion {
    timed(2, "adhesion quadrature convergence", Some(60), || {
        let (e1, e2) = (plane_wave_error(32)?, plane_wave_error(64)?);
        let ratio = e1 / e2;
        Ok((
            (3.2..=4.8).contains(&ratio),
            format!("h = 1/8: {e1:.3e}, h = 1/16: {e2:.3e}, ratio {ratio:.3} (want [3.2, 4.8])"),
        ))
    })
}

fn reference_domain(n: usize) -> Result<BoxDomain<f64>, CliError> {
    Ok(BoxDomain::cube(3, 4.0, n, BoundaryMode::NoFlux)?)
}

fn reference_spec() -> Result<TensorSpec<f64>, CliError> {
    Ok(TensorSpec::scalar_isotropic(vec![vec![2.0, 2.0, 2.0]])?)
}

pub fn regularization() -> Criterion {
    timed(3, "regularization guarantees", Some(60), || {
        let dom = reference_domain(32)?;
        let spec = reference_spec()?;
        let k = spec.degeneracy().expect("degenerate spec").clone();
        let d = evaluate(&spec, &dom)?;
        let mut ok = true;
        let mut dist = Vec::new();
        let mut div = Vec::new();
        for eps in [0.04, 0.02, 0.01] {
            let de = regularize(&spec, &dom, eps)?;
            let rep = check_regularization(&d, &de, eps)?;
            ok &= rep.elliptic_ok && rep.bound_ok;
            dist.push(rep.distance);
            div.push(divergence_sup(&de, |x| k.distance(x) >= 0.2)?);
        }
        let decreasing = dist.windows(2).all(|w| w[1] < w[0]);
        let ratio = max_of(div.iter().copied()) / div.iter().copied().fold(f64::INFINITY, f64::min);
        Ok((
            ok && decreasing && ratio <= 10.0,
            format!(
                "eigen/norm bounds {}, |D_eps - D| = {:.3e} > {:.3e} > {:.3e}, divergence max/min {ratio:.3}",
                if ok { "hold" } else { "violated" },
                dist[0],
                dist[1],
                dist[2]
            ),
        ))
    })
}

fn gaussian(dom: &BoxDomain<f64>) -> Result<ScalarField<f64>, CliError> {
    Ok(InitialCondition::Gaussian {
        center: vec![1.7, 2.2, 2.0],
        width: 0.5,
        amplitude: 1.0,
        background: 0.1,
    }
    .sample(dom)?)
}

pub fn mass_law() -> Criterion {
    timed(4, "mass law", None, || {
        let dom = reference_domain(16)?;
        let c0 = gaussian(&dom)?;
        let spec = reference_spec()?;

        let mut cfg = SolverConfig::new(0.02, 0.0, 4.0, 1.0);
        cfg.dt = Some(1e-3);
        cfg.snapshot_stride = 100;
        let traj = run(&c0, &spec, AdhesionForce::Hat { f0: 3.0 }, cfg)?;
        let m0 = traj.rows[0].mass;
        let drift = max_of(traj.rows.iter().map(|r| (r.mass - m0).abs())) / m0;

        let mut cfg = SolverConfig::new(0.02, 1.0, 4.0, 1.0);
        cfg.dt = Some(2e-3);
        cfg.cfl = 0.9;
        cfg.advection = AdvectionScheme::Centered;
        let traj = run(&c0, &spec, AdhesionForce::Hat { f0: 1.0 }, cfg)?;
        let l1_0 = traj.rows[0].l1;
        let slack = max_of(traj.rows.iter().map(|r| r.l1 / (r.t.exp() * l1_0)));
        Ok((
            drift <= 1e-12 && slack <= 1.0 + 1e-6,
            format!(
                "mu = 0: relative drift {drift:.2e} over 1000 steps; mu = 1: max |c|_1 / (e^t |c0|_1) = {slack:.6}"
            ),
        ))
    })
}

pub fn logistic() -> Criterion {
    timed(5, "logistic oracle", None, || {
        let dom: BoxDomain<f64> = BoxDomain::cube(3, 1.0, 4, BoundaryMode::Periodic)?;
        let mut cfg = SolverConfig::new(0.0, 1.0, 2.0, 2.0);
        cfg.dt = Some(1e-3);
        cfg.snapshot_stride = 1;
        let spec = TensorSpec::constant(SymMat::identity(3))?;
        let traj = run(&ScalarField::constant(&dom, 0.5), &spec, AdhesionForce::Hat { f0: 1.0 }, cfg)?;
        let err = max_of(traj.snapshots.iter().flat_map(|s| {
            let exact: f64 = 1.0 / (1.0 + (-s.t).exp());
            s.c.values().iter().map(move |&v: &f64| (v - exact).abs())
        }));
        Ok((err <= 1e-6, format!("sup error {err:.2e} over {} steps", traj.steps())))
    })
}

pub fn heat() -> Criterion {
    timed(6, "heat oracle", None, || {
        let t = 0.05;
        let dom: BoxDomain<f64> = BoxDomain::cube(3, 1.0, 64, BoundaryMode::Periodic)?;
        let mut cfg = SolverConfig::new(0.0, 0.0, 2.0, t);
        cfg.cfl = 1.0;
        cfg.snapshot_stride = usize::MAX;
        let c0 = ScalarField::from_fn(&dom, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin())?;
        let spec = TensorSpec::constant(SymMat::identity(3))?;
        let traj = run(&c0, &spec, AdhesionForce::Constant { f0: 0.0 }, cfg)?;
        let amplitude = |c: &ScalarField<f64>| {
            let mut x = vec![0.0; 3];
            let mut s = 0.0;
            for (i, &v) in c.values().iter().enumerate() {
                dom.center_into(i, &mut x);
                s += v * (2.0 * PI * x[0]).sin();
            }
            2.0 * s * dom.cell_volume()
        };
        let ratio = amplitude(traj.final_state()) / amplitude(traj.initial());
        let exact = (-4.0 * PI * PI * t).exp();
        let rel = (ratio / exact - 1.0).abs();
        Ok((rel <= 0.01, format!("decay {ratio:.6} vs {exact:.6}, relative error {rel:.2e}")))
    })
}

pub fn box_dimension() -> Criterion {
    timed(7, "box dimension", Some(30), || {
        let sched = dyadic_schedule::<f64>(1, 8);
        let p = upper_box_dim(&CompactSet::single_point(vec![0.37, 0.51, 0.23])?, &sched)?.estimate;
        let s = upper_box_dim(&CompactSet::segment(vec![0.0, 0.3, 0.7], vec![1.0, 0.3, 0.7])?, &sched)?.estimate;
        let c = upper_box_dim(&CompactSet::cantor(vec![0.0, 0.3, 0.7], 0, 1.0, 8)?, &sched)?.estimate;
        let target = 2f64.ln() / 3f64.ln();
        Ok((
            p <= 0.05 && (s - 1.0).abs() <= 0.15 && (c - target).abs() <= 0.1,
            format!("point {p:.4}, segment {s:.4}, Cantor {c:.4} (log 2 / log 3 = {target:.4})"),
        ))
    })
}

pub fn cutoff_properties(seed: u64) -> Criterion {
    timed(8, "cutoff properties", Some(60), || {
        let k = CompactSet::single_point(vec![0.5, 0.5, 0.5])?;
        let opts = CutoffCheckOptions {
            seed,
            ..CutoffCheckOptions::default()
        };
        let rep = verify_cutoff(&k, 4.0, &dyadic_schedule(3, 7), &opts)?;
        let keys: Vec<String> = rep.rows.iter().map(|r| format!("{:.3e}", r.key_limit)).collect();
        Ok((
            rep.passed(),
            format!(
                "exact checks {}, derivative ratios {:.2}/{:.2}, key limit [{}]",
                if rep.exact_properties_ok() { "pass" } else { "fail" },
                rep.grad_ratio,
                rep.hess_ratio,
                keys.join(", ")
            ),
        ))
    })
}

pub fn eps_cauchy() -> Criterion {
    timed(9, "eps-Cauchy", Some(600), || {
        let mut cfg = reference_config();
        cfg.model.eps_schedule = Some(vec![0.04, 0.02, 0.01, 0.005]);
        let p = cfg.prepare()?;
        let sweep = commands::sweep(&p, Axis::Eps, 2.0, 4, 1, None)?;
        let d: Vec<String> = sweep.rows[..3]
            .iter()
            .map(|r| r.distance.map_or("-".into(), |v| format!("{v:.3e}")))
            .collect();
        Ok((
            sweep.report.passed,
            format!(
                "distances [{}], subdomain spreads {:.3} (H1), {:.3} (L^5)",
                d.join(", "),
                sweep.h1_spread,
                sweep.lrp1_spread
            ),
        ))
    })
}

/// Least-squares slope of `log₂ residual` against the refinement level.
pub fn empirical_order(residuals: &[f64]) -> f64 {
    let n = residuals.len() as f64;
    let xs: Vec<f64> = (0..residuals.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = residuals.iter().map(|r| -r.log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn weak_residual() -> Criterion {
    timed(10, "weak residual", Some(600), || {
        let base = reference_config();
        let mut poly = Vec::new();
        let mut limit = Vec::new();
        let mut mass = None;
        for (n, dt) in [(16, 2e-3), (32, 1e-3), (64, 5e-4)] {
            let mut cfg = base.clone();
            cfg.domain.cells = vec![n; 3];
            cfg.model.dt = Some(dt);
            let p = cfg.prepare()?;
            let (_, traj) = commands::solve(&p)?;
            let modes: &[TestMode] = if n == 32 {
                &[TestMode::Constant, TestMode::PolynomialInterior]
            } else {
                &[TestMode::PolynomialInterior]
            };
            let set = commands::residuals(&p, &traj, modes)?;
            if n == 32 {
                mass = set.mass;
            }
            poly.push(set.get(TestMode::PolynomialInterior, "D_eps").expect("row"));
            limit.push(set.get(TestMode::PolynomialInterior, "D").expect("row"));
        }
        let m = mass.expect("constant mode evaluated");
        let order = empirical_order(&poly);
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ");
        Ok((
            m.ok && order >= 1.5,
            format!(
                "constant: |{:.3e} - {:.3e}| <= {:.3e} {}; polynomial-interior vs D_eps [{}], order {order:.2}; vs D [{}]",
                m.weak,
                m.mass_identity,
                m.tolerance,
                if m.ok { "holds" } else { "fails" },
                fmt(&poly),
                fmt(&limit)
            ),
        ))
    })
}

pub fn determinism(work: &Path) -> Criterion {
    timed(11, "determinism", None, || {
        let p = reference_config().prepare()?;
        let dirs = [work.join("determinism_a"), work.join("determinism_b")];
        for d in &dirs {
            if d.exists() {
                fs::remove_dir_all(d)?;
            }
            commands::run(&p, d)?;
        }
        let a = fs::read(dirs[0].join(store::DIAGNOSTICS))?;
        let b = fs::read(dirs[1].join(store::DIAGNOSTICS))?;
        let same = a == b && !a.is_empty();
        Ok((
            same,
            format!(
                "diagnostics sha256 {} and {}",
                &store::sha256_hex(&a)[..16],
                &store::sha256_hex(&b)[..16]
            ),
        ))
    })
}

/// Injected faults that the suite must catch.
#[derive(Clone, Debug)]
pub struct Control {
    pub name: &'static str,
    pub caught: bool,
    pub detail: String,
}

pub fn negative_controls(seed: u64) -> Vec<Control> {
    let sabotaged = adhesion_oracle(seed, true);
    let mut cfg = reference_config();
    cfg.model.mu = -1.0;
    let rejected = match cfg.prepare() {
        Err(e @ CliError::Config(_)) => Some(e.to_string()),
        _ => None,
    };
    vec![
        Control {
            name: "sign error in the adhesion kernel fails criterion 1",
            caught: !sabotaged.passed,
            detail: sabotaged.detail,
        },
        Control {
            name: "negative mu rejected by config validation",
            caught: rejected.is_some(),
            detail: rejected.unwrap_or_else(|| "accepted".into()),
        },
    ]
}

/// Runs all criteria in order, handing each result to `sink` as soon as it is known.
pub fn run_all(work: &Path, seed: u64, mut sink: impl FnMut(&Criterion)) -> Vec<Criterion> {
    let mut out = Vec::with_capacity(11);
    let mut push = |c: Criterion| {
        sink(&c);
        out.push(c);
    };
    push(adhesion_oracle(seed, false));
    push(adhesion_quadrature());
    push(regularization());
    push(mass_law());
    push(logistic());
    push(heat());
    push(box_dimension());
    push(cutoff_properties(seed));
    push(eps_cauchy());
    push(weak_residual());
    push(determinism(work));
    out
}

pub fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Scratch directory for runs made by the suite.
pub fn scratch_dir(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| std::env::temp_dir().join(format!("nlad-verify-{}", std::process::id())))
}
