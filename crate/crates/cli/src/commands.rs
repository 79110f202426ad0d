//! Subcommand bodies. Each returns a [`Report`]; `main` turns it into output and an exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nlad_core::adhesion::build_kernel;
use nlad_core::fields::BoxDomain;
use nlad_core::fractal::{dim_condition, upper_box_dim, verify_cutoff, CompactSet, CutoffCheckOptions};
use nlad_core::solver::{subdomain_diagnostics, Region, Snapshot, Solver, SubdomainDiagnostics, Trajectory};
use nlad_core::tensor::{check_regularization, divergence_sup, evaluate, regularize};
use nlad_core::weakform::{integrated_mass_residual, make_test_function, weak_residual, TestMode};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{DeltaSchedule, Prepared, RunConfig};
use crate::error::CliError;
use crate::store;

/// Outcome of an audit-style command.
#[derive(Clone, Debug)]
pub struct Report {
    pub passed: bool,
    /// CSV table.
    pub table: String,
    /// One-line verdicts printed after the table.
    pub lines: Vec<String>,
    pub summary: serde_json::Value,
}

impl Report {
    /// Writes `<name>.csv` and the manifest into `dir`.
    pub fn write(&self, dir: &Path, name: &str, prepared: &Prepared) -> Result<(), CliError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(format!("{name}.csv")), &self.table)?;
        store::write_manifest(dir, name, prepared, self.summary.clone())?;
        Ok(())
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn solve(p: &Prepared) -> Result<(Solver<f64>, Trajectory<f64>), CliError> {
    let solver = Solver::from_spec(&p.domain, &p.spec, p.config.force, p.solver.clone())?;
    let traj = solver.run(&p.c0)?;
    Ok((solver, traj))
}

fn run_summary(traj: &Trajectory<f64>) -> serde_json::Value {
    let last = traj.rows.last().expect("initial row");
    json!({
        "steps": traj.steps(),
        "t_final": traj.t_final(),
        "max_dt": traj.max_dt(),
        "snapshots": traj.snapshots.len(),
        "initial_mass": traj.rows[0].mass,
        "final_mass": last.mass,
        "final_min": last.minc,
        "warnings": traj.warnings,
    })
}

/// Integrates the configured problem and writes the run directory.
pub fn run(p: &Prepared, dir: &Path) -> Result<Trajectory<f64>, CliError> {
    let (_, traj) = solve(p)?;
    store::write_trajectory(dir, &traj)?;
    store::write_manifest(dir, "run", p, run_summary(&traj))?;
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Eps,
    Dt,
    H,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Eps => "eps",
            Axis::Dt => "dt",
            Axis::H => "h",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub eps: f64,
    pub dt: f64,
    pub h: f64,
    /// `‖c_j − c_{j+1}‖_{L¹(Ω×(0,T))}`, on the coarser grid for the `h` axis.
    pub distance: Option<f64>,
    /// `distance_{j−1} / distance_j`
    pub ratio: Option<f64>,
    pub subdomain: Option<SubdomainDiagnostics<f64>>,
    /// `min-eig D_ε` and `max ‖D_ε − D‖` for `ε > 0`.
    pub min_eig: Option<f64>,
    pub reg_distance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub axis: Axis,
    pub rows: Vec<SweepRow>,
    pub decreasing: bool,
    /// max/min of the subdomain columns across the sweep.
    pub h1_spread: f64,
    pub lrp1_spread: f64,
    pub report: Report,
}

/// Largest acceptable max/min ratio of the subdomain diagnostics across a sweep.
pub const SPREAD_LIMIT: f64 = 10.0;

fn sweep_variants(base: &RunConfig, axis: Axis, factor: f64, count: usize) -> Result<Vec<RunConfig>, CliError> {
    if count < 3 {
        return Err(CliError::Config(format!("sweep needs count >= 3, got {count}")));
    }
    if !(factor > 1.0) {
        return Err(CliError::Config("sweep factor must exceed 1".into()));
    }
    let Some(dt) = base.model.dt else {
        return Err(CliError::Config("sweep needs a fixed model.dt so that snapshot times line up".into()));
    };
    let int_factor = factor.round() as usize;
    if axis != Axis::Eps && (factor.fract() != 0.0 || int_factor < 2) {
        return Err(CliError::Config("dt and h sweeps need an integer factor".into()));
    }
    if axis == Axis::H && int_factor != 2 {
        return Err(CliError::Config("h sweeps compare by restriction and need factor 2".into()));
    }
    let values: Vec<f64> = match axis {
        Axis::Eps => base.eps_values(count, factor),
        _ => (0..count).map(|j| factor.powi(j as i32)).collect(),
    };
    if values.len() < 3 {
        return Err(CliError::Config("eps sweep needs at least 3 values".into()));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let mut c = base.clone();
            let scale = int_factor.pow(j as u32);
            match axis {
                Axis::Eps => c.model.eps = v,
                Axis::Dt => {
                    c.model.dt = Some(dt / v);
                    c.model.snapshot_stride *= scale;
                }
                Axis::H => c.domain.cells.iter_mut().for_each(|n| *n *= scale),
            }
            c
        })
        .collect())
}

fn restrict_trajectory(traj: &Trajectory<f64>, coarse: &BoxDomain<f64>) -> Result<Trajectory<f64>, CliError> {
    let snapshots = traj
        .snapshots
        .iter()
        .map(|s| {
            Ok(Snapshot {
                step: s.step,
                t: s.t,
                c: s.c.restrict_to(coarse)?,
            })
        })
        .collect::<Result<_, nlad_core::Error>>()?;
    Ok(Trajectory {
        domain: coarse.clone(),
        snapshots,
        ..traj.clone()
    })
}

fn spread(v: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = v.fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

struct Member {
    traj: Trajectory<f64>,
    subdomain: Option<SubdomainDiagnostics<f64>>,
    min_eig: Option<f64>,
    reg_distance: Option<f64>,
}

fn sweep_member(p: &Prepared, dir: Option<&Path>) -> Result<Member, CliError> {
    let (solver, traj) = solve(p)?;
    let (min_eig, reg_distance) = if p.solver.eps > 0.0 {
        let d = evaluate(&p.spec, &p.domain)?;
        let rep = check_regularization(&d, solver.tensor(), p.solver.eps)?;
        (Some(rep.min_eig), Some(rep.distance))
    } else {
        (None, None)
    };
    let a = &p.config.audit;
    // the whole domain contains K; no clearance applies
    let k = match a.subdomain {
        Region::Whole => None,
        _ => p.spec.degeneracy(),
    };
    let subdomain = subdomain_diagnostics(&traj, &a.subdomain, k, a.clearance)?;
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(store::DIAGNOSTICS), traj.diagnostics_csv())?;
        fs::write(dir.join(store::REACTION), store::reaction_csv(&traj))?;
        store::write_manifest(dir, "sweep-member", p, run_summary(&traj))?;
    }
    Ok(Member {
        traj,
        subdomain: Some(subdomain),
        min_eig,
        reg_distance,
    })
}

/// Runs the schedule along `axis` on `workers` threads and tabulates Cauchy distances.
pub fn sweep(
    base: &Prepared,
    axis: Axis,
    factor: f64,
    count: usize,
    workers: usize,
    out: Option<&Path>,
) -> Result<SweepReport, CliError> {
    let variants = sweep_variants(&base.config, axis, factor, count)?;
    let prepared: Vec<Prepared> = variants.iter().map(RunConfig::prepare).collect::<Result<_, _>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<Member, CliError>> = pool.install(|| {
        prepared
            .par_iter()
            .enumerate()
            .map(|(j, p)| sweep_member(p, out.map(|o| o.join(format!("run_{j:02}"))).as_deref()))
            .collect()
    });

    let mut rows: Vec<SweepRow> = prepared
        .iter()
        .zip(&results)
        .map(|(p, r)| {
            let dt = p.solver.dt.expect("checked");
            let h = p.domain.max_spacing();
            let value = match axis {
                Axis::Eps => p.solver.eps,
                Axis::Dt => dt,
                Axis::H => h,
            };
            let (subdomain, min_eig, reg_distance, error) = match r {
                Ok(m) => (m.subdomain.clone(), m.min_eig, m.reg_distance, None),
                Err(e) => (None, None, None, Some(e.to_string())),
            };
            SweepRow {
                value,
                eps: p.solver.eps,
                dt,
                h,
                distance: None,
                ratio: None,
                subdomain,
                min_eig,
                reg_distance,
                error,
            }
        })
        .collect();
    for j in 0..rows.len() - 1 {
        if let (Ok(a), Ok(b)) = (&results[j], &results[j + 1]) {
            let dist = if axis == Axis::H {
                nlad_core::weakform::eps_cauchy(&a.traj, &restrict_trajectory(&b.traj, &a.traj.domain)?)?
            } else {
                nlad_core::weakform::eps_cauchy(&a.traj, &b.traj)?
            };
            rows[j].distance = Some(dist);
        }
    }
    for j in 1..rows.len() {
        if let (Some(a), Some(b)) = (rows[j - 1].distance, rows[j].distance) {
            rows[j].ratio = Some(a / b);
        }
    }

    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let dists: Vec<Option<f64>> = rows[..rows.len() - 1].iter().map(|r| r.distance).collect();
    let decreasing = dists.iter().all(Option::is_some) && dists.windows(2).all(|w| w[1] < w[0]);
    let h1_spread = spread(rows.iter().filter_map(|r| r.subdomain.as_ref().map(|s| s.h1_sq)));
    let lrp1_spread = spread(rows.iter().filter_map(|r| r.subdomain.as_ref().map(|s| s.lrp1)));
    let bounded = h1_spread <= SPREAD_LIMIT && lrp1_spread <= SPREAD_LIMIT;
    let passed = failed == 0 && decreasing && bounded;

    let mut table = String::from("index,value,eps,dt,h,distance,ratio,h1_B,lrp1_B,min_eig,reg_distance,status\n");
    for (j, r) in rows.iter().enumerate() {
        let _ = writeln!(
            table,
            "{j},{},{},{},{},{},{},{},{},{},{},{}",
            r.value,
            r.eps,
            r.dt,
            r.h,
            opt(r.distance),
            opt(r.ratio),
            opt(r.subdomain.as_ref().map(|s| s.h1_sq)),
            opt(r.subdomain.as_ref().map(|s| s.lrp1)),
            opt(r.min_eig),
            opt(r.reg_distance),
            r.error.as_deref().map_or("ok".to_string(), |e| format!("\"{}\"", e.replace('"', "'"))),
        );
    }
    let lines = vec![
        format!("{} runs completed: {}/{}", verdict(failed == 0), rows.len() - failed, rows.len()),
        format!("{} distance column strictly decreasing", verdict(decreasing)),
        format!(
            "{} subdomain diagnostics bounded: spreads {h1_spread:.3} (H1) and {lrp1_spread:.3} (L^(r+1)), limit {SPREAD_LIMIT}",
            verdict(bounded)
        ),
    ];
    let summary = json!({
        "axis": axis,
        "factor": factor,
        "rows": rows,
        "decreasing": decreasing,
        "h1_spread": h1_spread,
        "lrp1_spread": lrp1_spread,
        "passed": passed,
    });
    let report = Report {
        passed,
        table,
        lines,
        summary,
    };
    if let Some(dir) = out {
        report.write(dir, "sweep", base)?;
    }
    Ok(SweepReport {
        axis,
        rows,
        decreasing,
        h1_spread,
        lrp1_spread,
        report,
    })
}

fn audit_set(p: &Prepared) -> Result<CompactSet<f64>, CliError> {
    p.config
        .audit_set(&p.spec)
        .ok_or_else(|| CliError::Config("no audit.set and the tensor has no degeneracy set".into()))
}

/// Box-counting table and dimension estimate of the audit set.
pub fn dim(p: &Prepared) -> Result<Report, CliError> {
    let set = audit_set(p)?;
    let schedule = p
        .config
        .audit
        .delta_schedule
        .unwrap_or(DeltaSchedule { k_min: 1, k_max: 8 })
        .deltas();
    let est = upper_box_dim(&set, &schedule)?;
    let cond = dim_condition(est.estimate, p.domain.dim(), p.solver.r);
    let mut table = String::from("delta,count,ratio\n");
    for s in &est.scales {
        let _ = writeln!(table, "{},{},{}", s.delta, s.count, s.ratio);
    }
    let mut lines = vec![format!("estimate {:.4} for {} set", est.estimate, set.kind())];
    let passed = match p.config.audit.expected_dim {
        Some(e) => {
            let ok = (est.estimate - e.value).abs() <= e.tolerance;
            lines.push(format!("{} estimate within {} ± {}", verdict(ok), e.value, e.tolerance));
            ok
        }
        None => {
            let failed: Vec<String> = cond.failed.iter().map(ToString::to_string).collect();
            lines.push(format!(
                "{} admissible for d = {}, r = {} (threshold {:.4}){}",
                verdict(cond.admissible),
                p.domain.dim(),
                p.solver.r,
                cond.threshold,
                if failed.is_empty() {
                    String::new()
                } else {
                    format!("; failed: {}", failed.join(", "))
                }
            ));
            cond.admissible
        }
    };
    Ok(Report {
        passed,
        table,
        lines,
        summary: json!({ "estimate": est, "condition": cond, "passed": passed }),
    })
}

/// Property table of the lattice cutoff family around the audit set.
pub fn cutoff(p: &Prepared, seed: u64) -> Result<Report, CliError> {
    let set = audit_set(p)?;
    let schedule = p
        .config
        .audit
        .delta_schedule
        .unwrap_or(DeltaSchedule { k_min: 3, k_max: 7 })
        .deltas();
    let opts = CutoffCheckOptions {
        seed,
        ..CutoffCheckOptions::default()
    };
    let rep = verify_cutoff(&set, p.solver.r, &schedule, &opts)?;
    let mut table = String::from(
        "delta,range_ok,plateau_ok,support_ok,grad_scaled,hess_scaled,support_measure,key_limit,max_terms,min_denominator\n",
    );
    for r in &rep.rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{}",
            r.delta,
            r.range_ok,
            r.plateau_ok,
            r.support_ok,
            r.grad_scaled,
            r.hess_scaled,
            r.support_measure,
            r.key_limit,
            r.max_terms,
            r.min_denominator
        );
    }
    let lines = vec![
        format!("{} range, plateau and support on all samples", verdict(rep.exact_properties_ok())),
        format!(
            "{} scaled derivatives stable: ratios {:.3} (gradient), {:.3} (Hessian)",
            verdict(rep.derivatives_stable),
            rep.grad_ratio,
            rep.hess_ratio
        ),
        format!("{} key-limit column strictly decreasing", verdict(rep.key_limit_decreasing)),
        format!("{} at most {} active lattice terms", verdict(rep.locality_ok), rep.locality_bound),
        format!("{} denominators at least 1", verdict(rep.denominators_ok)),
        format!("{} pointwise decay off the set", verdict(rep.decay_ok)),
    ];
    Ok(Report {
        passed: rep.passed(),
        table,
        lines,
        summary: json!({ "report": rep, "passed": rep.passed() }),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorRow {
    pub eps: f64,
    pub sup_d: f64,
    pub sup_d_eps: f64,
    pub bound_ok: bool,
    pub min_eig: f64,
    pub elliptic_ok: bool,
    pub distance: f64,
    pub div_sup: f64,
}

/// Regularization guarantees over the ε schedule.
pub fn tensor_check(p: &Prepared) -> Result<Report, CliError> {
    let eps = p.config.eps_values(3, 2.0);
    if eps.iter().any(|&e| !(e > 0.0)) {
        return Err(CliError::Config("tensor-check needs positive eps values".into()));
    }
    let d = evaluate(&p.spec, &p.domain)?;
    let k = p.spec.degeneracy();
    let clearance = p.config.audit.clearance;
    let mut rows = Vec::with_capacity(eps.len());
    for &e in &eps {
        let de = regularize(&p.spec, &p.domain, e)?;
        let rep = check_regularization(&d, &de, e)?;
        let div_sup = divergence_sup(&de, |x| k.map_or(true, |k| k.distance(x) >= clearance))?;
        rows.push(TensorRow {
            eps: e,
            sup_d: rep.sup_d,
            sup_d_eps: rep.sup_d_eps,
            bound_ok: rep.bound_ok,
            min_eig: rep.min_eig,
            elliptic_ok: rep.elliptic_ok,
            distance: rep.distance,
            div_sup,
        });
    }
    let mut table = String::from("eps,sup_D,sup_D_eps,bound_ok,min_eig,elliptic_ok,distance,div_sup\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{}",
            r.eps, r.sup_d, r.sup_d_eps, r.bound_ok, r.min_eig, r.elliptic_ok, r.distance, r.div_sup
        );
    }
    let elliptic = rows.iter().all(|r| r.elliptic_ok);
    let bound = rows.iter().all(|r| r.bound_ok);
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let decreasing = sorted.windows(2).all(|w| w[1].distance < w[0].distance);
    let div_ratio = spread(rows.iter().map(|r| r.div_sup));
    let div_ok = div_ratio <= SPREAD_LIMIT;
    let passed = elliptic && bound && decreasing && div_ok;
    let lines = vec![
        format!("{} min-eig(D_eps) >= eps - 1e-10", verdict(elliptic)),
        format!("{} |D_eps| <= eps + |D| + 1e-10", verdict(bound)),
        format!("{} |D_eps - D| strictly decreasing in eps", verdict(decreasing)),
        format!(
            "{} divergence bound uniform: max/min {div_ratio:.3} on cells at least {clearance} from K",
            verdict(div_ok)
        ),
    ];
    Ok(Report {
        passed,
        table,
        lines,
        summary: json!({ "rows": rows, "div_ratio": div_ratio, "passed": passed }),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualRow {
    pub h: f64,
    pub dt: f64,
    pub eps: f64,
    pub mode: TestMode,
    /// `D` (limiting tensor) or `D_eps`.
    pub tensor: &'static str,
    pub stride: usize,
    pub residual: f64,
}

/// Mass-law comparison for the constant test function.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MassCheck {
    pub weak: f64,
    pub mass_identity: f64,
    pub tolerance: f64,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct ResidualSet {
    pub rows: Vec<ResidualRow>,
    pub mass: Option<MassCheck>,
}

impl ResidualSet {
    pub fn get(&self, mode: TestMode, tensor: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.tensor == tensor)
            .map(|r| r.residual)
    }
}

/// Weak residuals of a stored run for every configured mode, against both `D` and `D_ε`.
pub fn residuals(p: &Prepared, traj: &Trajectory<f64>, modes: &[TestMode]) -> Result<ResidualSet, CliError> {
    let dom = &traj.domain;
    let support = p.config.audit.eta_support.unwrap_or_else(|| traj.t_final());
    let kernel = build_kernel(p.config.force, dom)?;
    let d = evaluate(&p.spec, dom)?;
    let d_eps = if p.solver.eps > 0.0 {
        Some(regularize(&p.spec, dom, p.solver.eps)?)
    } else {
        None
    };
    let half_side = dom.extent().iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    let margin = p.margin.min(half_side);
    let mut jobs: Vec<(TestMode, &'static str)> = Vec::new();
    for &m in modes {
        jobs.push((m, "D"));
        if d_eps.is_some() {
            jobs.push((m, "D_eps"));
        }
    }
    let (mu, r) = (p.solver.mu, p.solver.r);
    let rows = jobs
        .par_iter()
        .map(|&(mode, which)| {
            let eta = make_test_function(mode, support, dom, margin)?;
            let tensor = if which == "D" { &d } else { d_eps.as_ref().expect("job exists") };
            let w = weak_residual(traj, &eta, tensor, &kernel, mu, r)?;
            Ok(ResidualRow {
                h: dom.max_spacing(),
                dt: traj.max_dt(),
                eps: p.solver.eps,
                mode,
                tensor: which,
                stride: w.stride,
                residual: w.absolute,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mass = if modes.contains(&TestMode::Constant) {
        let m = integrated_mass_residual(traj, support)?;
        let weak = rows
            .iter()
            .find(|r| r.mode == TestMode::Constant && r.tensor == "D")
            .expect("constant row")
            .residual;
        Some(MassCheck {
            weak,
            mass_identity: m.residual,
            tolerance: m.quadrature_tolerance,
            ok: (weak - m.residual).abs() <= m.quadrature_tolerance,
        })
    } else {
        None
    };
    Ok(ResidualSet { rows, mass })
}

fn mode_name(m: TestMode) -> &'static str {
    match m {
        TestMode::Constant => "constant",
        TestMode::CollarBump => "collar-bump",
        TestMode::PolynomialInterior => "polynomial-interior",
    }
}

pub fn weak_residual_report(set: &ResidualSet) -> Report {
    let mut table = String::from("h,dt,eps,mode,tensor,stride,residual\n");
    for r in &set.rows {
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            r.h,
            r.dt,
            r.eps,
            mode_name(r.mode),
            r.tensor,
            r.stride,
            r.residual
        );
    }
    let mut lines = Vec::new();
    if let Some(m) = set.mass {
        lines.push(format!(
            "{} constant-eta residual {:.3e} vs integrated mass residual {:.3e}: gap {:.3e}, quadrature tolerance {:.3e}",
            verdict(m.ok),
            m.weak,
            m.mass_identity,
            (m.weak - m.mass_identity).abs(),
            m.tolerance
        ));
    }
    let passed = set.mass.map_or(true, |m| m.ok);
    Report {
        passed,
        table,
        lines,
        summary: json!({ "rows": set.rows, "mass": set.mass, "passed": passed }),
    }
}

/// Residuals of a stored trajectory, or of a fresh run of the config when none is given.
pub fn weak_residual_cmd(config: Option<&Prepared>, trajectory: Option<&Path>) -> Result<(Prepared, Report), CliError> {
    let (p, traj) = match (trajectory, config) {
        (Some(dir), _) => store::read_trajectory(dir)?,
        (None, Some(p)) => (p.clone(), solve(p)?.1),
        (None, None) => return Err(CliError::Config("weak-residual needs --config or --trajectory".into())),
    };
    let set = residuals(&p, &traj, &p.config.audit.eta_modes)?;
    Ok((p, weak_residual_report(&set)))
}
