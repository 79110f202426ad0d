//! Conservative finite-volume integrator for
//!
//! ```text
//! ∂t c = ∇·G + μ c (1 − c₊^{r−1}),   G = ∇·(D_ε c) − c A c,   G·ν = 0 on ∂Ω
//! ```
//!
//! Each cell stores the total flux through its high face along every axis; the divergence is
//! the difference of high and low face values, so interior contributions telescope and the
//! boundary faces carry exactly zero flux. Time stepping is two-stage SSP Runge–Kutta.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adhesion::{build_kernel, AdhesionForce, AdhesionKernel, AdhesionOperator, Strategy};
use crate::fields::{integrate_values, BoxDomain, ScalarField, SymTensorField};
use crate::fractal::{dim_condition, upper_box_dim, dyadic_schedule, CompactSet};
use crate::linalg::{packed_index, packed_len};
use crate::num::Real;
use crate::tensor::{evaluate, regularize, TensorSpec};
use crate::{Error, Result};

/// Blow-up guard: abort once `‖c‖_∞` exceeds this multiple of `‖c₀‖_∞`.
pub const BLOW_UP_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvectionScheme {
    Centered,
    #[default]
    Upwind,
}

/// Subdomain `B` for the localized diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Region<T> {
    #[default]
    Whole,
    Box { lo: Vec<T>, hi: Vec<T> },
    Ball { center: Vec<T>, radius: T },
}

impl<T: Real> Region<T> {
    pub fn contains(&self, x: &[T]) -> bool {
        match self {
            Region::Whole => true,
            Region::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(&v, (&a, &b))| v >= a && v <= b),
            Region::Ball { center, radius } => {
                x.iter().zip(center).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() <= *radius * *radius
            }
        }
    }

    /// Cell mask of the region on `dom`.
    pub fn mask(&self, dom: &BoxDomain<T>) -> Vec<bool> {
        let mut x = vec![T::zero(); dom.dim()];
        (0..dom.len())
            .map(|c| {
                dom.center_into(c, &mut x);
                self.contains(&x)
            })
            .collect()
    }

    /// Smallest distance from a selected cell center to `K`.
    pub fn distance_to(&self, dom: &BoxDomain<T>, set: &CompactSet<T>) -> Result<T> {
        let mask = self.mask(dom);
        let mut x = vec![T::zero(); dom.dim()];
        let mut best: Option<T> = None;
        for (c, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            dom.center_into(c, &mut x);
            let v = set.distance(&x);
            best = Some(best.map_or(v, |b: T| b.min(v)));
        }
        best.ok_or(Error::EmptyMask)
    }
}

/// Parameters of the approximate problem and of its time integration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig<T> {
    /// Regularization scale; `0` runs the degenerate tensor directly.
    pub eps: T,
    pub mu: T,
    pub r: T,
    pub cfl: T,
    pub t_final: T,
    /// Steps between stored snapshots.
    pub snapshot_stride: usize,
    #[serde(default)]
    pub advection: AdvectionScheme,
    /// Fixed step; adaptive (`cfl` times the stability bound) when absent.
    #[serde(default)]
    pub dt: Option<T>,
    /// Accept a fixed step above the stability bound.
    #[serde(default)]
    pub allow_unstable: bool,
    /// Subdomain `B` of the localized diagnostics.
    #[serde(default)]
    pub region: Region<T>,
}

impl<T: Real> SolverConfig<T> {
    pub fn new(eps: T, mu: T, r: T, t_final: T) -> Self {
        Self {
            eps,
            mu,
            r,
            cfl: T::lit(0.5),
            t_final,
            snapshot_stride: 10,
            advection: AdvectionScheme::Upwind,
            dt: None,
            allow_unstable: false,
            region: Region::Whole,
        }
    }

    /// `μ ≥ 0` is accepted (`μ = 0` switches the reaction off); `r ≥ 2`, `cfl ∈ (0, 1]`,
    /// `T > 0`, `ε ≥ 0`.
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Err(Error::param(name, reason.to_string()));
        if !(self.mu >= T::zero()) || !self.mu.is_finite() {
            return bad("mu", "growth rate must be finite and nonnegative");
        }
        if !(self.r >= T::lit(2.0)) || !self.r.is_finite() {
            return bad("r", "reaction exponent must satisfy r >= 2");
        }
        if !(self.cfl > T::zero() && self.cfl <= T::one()) {
            return bad("cfl", "must lie in (0, 1]");
        }
        if !(self.t_final > T::zero()) || !self.t_final.is_finite() {
            return bad("t_final", "must be positive");
        }
        if !(self.eps >= T::zero()) || !self.eps.is_finite() {
            return bad("eps", "must be nonnegative");
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride", "must be at least 1");
        }
        if let Some(dt) = self.dt {
            if !(dt > T::zero()) || !dt.is_finite() {
                return bad("dt", "must be positive");
            }
        }
        Ok(())
    }

    /// Regime warnings: the admissibility gates on `(d, r, dim K)`, `ε = 0` and `μ = 0`.
    pub fn admissibility_warnings(&self, d: usize, degeneracy: Option<&CompactSet<T>>) -> Vec<String> {
        let mut out = Vec::new();
        let estimate = match degeneracy {
            None => T::zero(),
            Some(k) if k.finite_points().is_some() => T::zero(),
            Some(k) => match upper_box_dim(k, &dyadic_schedule::<T>(1, 8)) {
                Ok(e) => e.estimate,
                Err(e) => {
                    out.push(format!("dimension of the degeneracy set not estimated: {e}"));
                    T::zero()
                }
            },
        };
        let cond = dim_condition(estimate, d, self.r);
        for gate in &cond.failed {
            out.push(format!("admissibility: {gate} (d = {d}, r = {}, threshold {})", self.r, cond.threshold));
        }
        if self.eps == T::zero() {
            out.push("ε = 0: degenerate tensor used directly".into());
        }
        if self.mu == T::zero() {
            out.push("μ = 0: reaction switched off".into());
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State<T> {
    pub c: ScalarField<T>,
    pub t: T,
}

/// Neighbor tables; `NONE` marks a missing neighbor across a no-flux face.
#[derive(Clone, Debug)]
struct Stencil {
    plus: Vec<Vec<usize>>,
    minus: Vec<Vec<usize>>,
}

const NONE: usize = usize::MAX;

impl Stencil {
    fn new<T: Real>(dom: &BoxDomain<T>) -> Self {
        let d = dom.dim();
        let table = |off| {
            (0..d)
                .map(|k| (0..dom.len()).map(|c| dom.neighbor(c, k, off).unwrap_or(NONE)).collect())
                .collect()
        };
        Self {
            plus: table(1),
            minus: table(-1),
        }
    }
}

/// Face fluxes: `flux[k][cell]` is the flux through the high face of `cell` along axis `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceFlux<T> {
    domain: BoxDomain<T>,
    pub flux: Vec<Vec<T>>,
}

impl<T: Real> FaceFlux<T> {
    /// Cellwise `Σ_k (F_k(i) − F_k(i − e_k)) / h_k`.
    pub fn divergence(&self) -> ScalarField<T> {
        let stencil = Stencil::new(&self.domain);
        let mut out = vec![T::zero(); self.domain.len()];
        divergence_into(&self.domain, &stencil, &self.flux, &mut out);
        ScalarField::new(self.domain.clone(), out).expect("finite fluxes")
    }
}

fn divergence_into<T: Real>(dom: &BoxDomain<T>, stencil: &Stencil, flux: &[Vec<T>], out: &mut [T]) {
    let h = dom.spacing();
    out.iter_mut().for_each(|v| *v = T::zero());
    for (k, fk) in flux.iter().enumerate() {
        let inv = T::one() / h[k];
        for (i, o) in out.iter_mut().enumerate() {
            let m = stencil.minus[k][i];
            let low = if m == NONE { T::zero() } else { fk[m] };
            *o += (fk[i] - low) * inv;
        }
    }
}

/// Centered difference of `p` at cell `m` along axis `j`, one-sided at no-flux boundaries.
#[inline]
fn cross_diff<T: Real>(p: &[T], stencil: &Stencil, m: usize, j: usize, h: T) -> T {
    match (stencil.plus[j][m], stencil.minus[j][m]) {
        (NONE, NONE) => T::zero(),
        (NONE, q) => (p[m] - p[q]) / h,
        (q, NONE) => (p[q] - p[m]) / h,
        (a, b) => (p[a] - p[b]) / (T::lit(2.0) * h),
    }
}

/// Diffusive face fluxes `J_k = Σ_j ∂_j(d_kj c)` into `flux`, given the cell products
/// `prod[q] = (D c)` in packed order.
fn myopic_into<T: Real>(
    dom: &BoxDomain<T>,
    stencil: &Stencil,
    prod: &[Vec<T>],
    diagonal: bool,
    flux: &mut [Vec<T>],
) {
    let d = dom.dim();
    let h = dom.spacing();
    for k in 0..d {
        let pkk = &prod[packed_index(d, k, k)];
        let fk = &mut flux[k];
        for i in 0..dom.len() {
            let ip = stencil.plus[k][i];
            if ip == NONE {
                fk[i] = T::zero();
                continue;
            }
            let mut j = (pkk[ip] - pkk[i]) / h[k];
            if !diagonal {
                for t in (0..d).filter(|&t| t != k) {
                    let p = &prod[packed_index(d, k, t)];
                    j += T::lit(0.5) * (cross_diff(p, stencil, i, t, h[t]) + cross_diff(p, stencil, ip, t, h[t]));
                }
            }
            fk[i] = j;
        }
    }
}

fn products_into<T: Real>(d_eps: &SymTensorField<T>, c: &[T], diagonal: bool, prod: &mut [Vec<T>]) {
    let d = d_eps.domain().dim();
    let p = packed_len(d);
    for (q, out) in prod.iter_mut().enumerate() {
        if diagonal && !(0..d).any(|i| packed_index(d, i, i) == q) {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = d_eps.values()[i * p + q] * c[i];
        }
    }
}

/// Diffusive part of the conserved flux at every face; zero on no-flux boundary faces.
pub fn myopic_face_flux<T: Real>(c: &ScalarField<T>, d_eps: &SymTensorField<T>) -> Result<FaceFlux<T>> {
    let dom = c.domain();
    if !dom.same_grid(d_eps.domain()) {
        return Err(Error::DomainMismatch);
    }
    let stencil = Stencil::new(dom);
    let diagonal = d_eps.is_diagonal();
    let mut prod = vec![vec![T::zero(); dom.len()]; packed_len(dom.dim())];
    products_into(d_eps, c.values(), diagonal, &mut prod);
    let mut flux = vec![vec![T::zero(); dom.len()]; dom.dim()];
    myopic_into(dom, &stencil, &prod, diagonal, &mut flux);
    Ok(FaceFlux {
        domain: dom.clone(),
        flux,
    })
}

/// `μ c (1 − c₊^{r−1})`
#[inline]
fn reaction<T: Real>(c: T, mu: T, rm1: T, int_power: Option<i32>) -> T {
    let cp = c.max(T::zero());
    let pw = match int_power {
        Some(k) => cp.powi(k),
        None => cp.powf(rm1),
    };
    mu * c * (T::one() - pw)
}

fn integer_power<T: Real>(rm1: T) -> Option<i32> {
    (rm1.fract() == T::zero() && rm1.abs() < T::lit(64.0)).then(|| rm1.to_i32().unwrap_or(1))
}

struct Workspace<T> {
    prod: Vec<Vec<T>>,
    adv: Vec<T>,
    flux: Vec<Vec<T>>,
}

/// Per-stage quantities needed by the stability bound.
#[derive(Clone, Copy, Debug)]
struct StageInfo<T> {
    max_adv: T,
    max_c: T,
}

/// Discretized right-hand side on a fixed grid with precomputed `D_ε` and adhesion operator.
pub struct Solver<T: Real> {
    domain: BoxDomain<T>,
    d_eps: SymTensorField<T>,
    adhesion: AdhesionOperator<T>,
    cfg: SolverConfig<T>,
    stencil: Stencil,
    diagonal: bool,
    lambda_max: T,
    warnings: Vec<String>,
}

impl<T: Real> Solver<T> {
    pub fn new(d_eps: SymTensorField<T>, adhesion: AdhesionOperator<T>, cfg: SolverConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let domain = d_eps.domain().clone();
        if !domain.same_grid(adhesion.kernel().domain()) {
            return Err(Error::DomainMismatch);
        }
        let diagonal = d_eps.is_diagonal();
        let lambda_max = d_eps.max_eigenvalue().max(T::zero());
        Ok(Self {
            stencil: Stencil::new(&domain),
            domain,
            d_eps,
            adhesion,
            cfg,
            diagonal,
            lambda_max,
            warnings: Vec::new(),
        })
    }

    /// Assembles `D_ε` (or `D` when `ε = 0`) and the adhesion operator from their
    /// descriptions.
    pub fn from_spec(
        dom: &BoxDomain<T>,
        spec: &TensorSpec<T>,
        force: AdhesionForce<T>,
        cfg: SolverConfig<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d_eps = if cfg.eps == T::zero() {
            evaluate(spec, dom)?
        } else {
            regularize(spec, dom, cfg.eps)?
        };
        let kernel = build_kernel(force, dom)?;
        let warnings = cfg.admissibility_warnings(dom.dim(), spec.degeneracy());
        let mut solver = Self::new(d_eps, AdhesionOperator::new(kernel, Strategy::Auto), cfg)?;
        solver.warnings = warnings;
        Ok(solver)
    }

    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }

    pub fn config(&self) -> &SolverConfig<T> {
        &self.cfg
    }

    pub fn tensor(&self) -> &SymTensorField<T> {
        &self.d_eps
    }

    pub fn kernel(&self) -> &AdhesionKernel<T> {
        self.adhesion.kernel()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn workspace(&self) -> Workspace<T> {
        let n = self.domain.len();
        let d = self.domain.dim();
        Workspace {
            prod: vec![vec![T::zero(); n]; packed_len(d)],
            adv: vec![T::zero(); n * d],
            flux: vec![vec![T::zero(); n]; d],
        }
    }

    fn rhs_into(&self, c: &[T], out: &mut [T], ws: &mut Workspace<T>) -> Result<StageInfo<T>> {
        let d = self.domain.dim();
        let half = T::lit(0.5);
        products_into(&self.d_eps, c, self.diagonal, &mut ws.prod);
        myopic_into(&self.domain, &self.stencil, &ws.prod, self.diagonal, &mut ws.flux);
        self.adhesion.apply_into(c, &mut ws.adv);
        let mut max_adv = T::zero();
        for v in &ws.adv {
            max_adv = max_adv.max(v.abs());
        }
        let upwind = self.cfg.advection == AdvectionScheme::Upwind;
        for k in 0..d {
            let fk = &mut ws.flux[k];
            for i in 0..self.domain.len() {
                let ip = self.stencil.plus[k][i];
                if ip == NONE {
                    continue;
                }
                let v = half * (ws.adv[i * d + k] + ws.adv[ip * d + k]);
                let cf = if upwind {
                    if v > T::zero() {
                        c[i]
                    } else {
                        c[ip]
                    }
                } else {
                    half * (c[i] + c[ip])
                };
                fk[i] -= v * cf;
            }
        }
        divergence_into(&self.domain, &self.stencil, &ws.flux, out);
        let rm1 = self.cfg.r - T::one();
        let ip = integer_power(rm1);
        let mut max_c = T::zero();
        for (i, o) in out.iter_mut().enumerate() {
            *o += reaction(c[i], self.cfg.mu, rm1, ip);
            max_c = max_c.max(c[i].abs());
            if !o.is_finite() {
                return Err(Error::NonFinite { what: "rhs", cell: i });
            }
        }
        Ok(StageInfo { max_adv, max_c })
    }

    /// The semi-discrete right-hand side at `c`.
    pub fn rhs(&self, c: &ScalarField<T>) -> Result<ScalarField<T>> {
        if !self.domain.same_grid(c.domain()) {
            return Err(Error::DomainMismatch);
        }
        let mut out = vec![T::zero(); self.domain.len()];
        self.rhs_into(c.values(), &mut out, &mut self.workspace())?;
        ScalarField::new(self.domain.clone(), out)
    }

    fn bound_from(&self, info: StageInfo<T>) -> T {
        let h = self.domain.min_spacing();
        let d = T::from_usize_lossy(self.domain.dim());
        let two = T::lit(2.0);
        let diff = if self.lambda_max > T::zero() {
            h * h / (two * d * self.lambda_max)
        } else {
            T::infinity()
        };
        let adv = if info.max_adv > T::zero() {
            h / (d * info.max_adv)
        } else {
            T::infinity()
        };
        let growth = info.max_c.powf(self.cfg.r - T::one()).max(T::one());
        let reac = if self.cfg.mu > T::zero() {
            T::one() / (self.cfg.mu * self.cfg.r * growth)
        } else {
            T::infinity()
        };
        self.cfg.cfl * diff.min(adv).min(reac)
    }

    /// `cfl · min(h²/(2d λ_max), h/(d max|A c|), 1/(μ r max(‖c‖_∞^{r−1}, 1)))`.
    pub fn stability_bound(&self, c: &ScalarField<T>) -> Result<T> {
        let mut out = vec![T::zero(); self.domain.len()];
        let info = self.rhs_into(c.values(), &mut out, &mut self.workspace())?;
        Ok(self.bound_from(info))
    }

    /// One SSP-RK2 step; refuses a step above the stability bound unless overridden.
    pub fn step(&self, state: &State<T>, dt: T) -> Result<State<T>> {
        let mut ws = self.workspace();
        let mut c = state.c.values().to_vec();
        let mut k = vec![T::zero(); c.len()];
        let mut stage = vec![T::zero(); c.len()];
        self.advance(&mut c, dt, &mut k, &mut stage, &mut ws, true)?;
        Ok(State {
            c: ScalarField::new(self.domain.clone(), c)?,
            t: state.t + dt,
        })
    }

    /// In-place RK2 update; returns the stability bound at the start of the step.
    fn advance(
        &self,
        c: &mut [T],
        dt: T,
        k: &mut [T],
        stage: &mut [T],
        ws: &mut Workspace<T>,
        check: bool,
    ) -> Result<T> {
        let info = self.rhs_into(c, k, ws)?;
        let bound = self.bound_from(info);
        if check && dt > bound * (T::one() + T::lit(1e-12)) && !self.cfg.allow_unstable {
            return Err(Error::StabilityViolated {
                dt: dt.as_f64(),
                bound: bound.as_f64(),
            });
        }
        for ((s, &ci), &ki) in stage.iter_mut().zip(c.iter()).zip(k.iter()) {
            *s = ci + dt * ki;
        }
        self.rhs_into(stage, k, ws)?;
        let half = T::lit(0.5);
        for ((ci, &si), &ki) in c.iter_mut().zip(stage.iter()).zip(k.iter()) {
            *ci = half * *ci + half * (si + dt * ki);
        }
        Ok(bound)
    }

    /// Integrates from `c₀` to `T`, recording diagnostics every step.
    pub fn run(&self, c0: &ScalarField<T>) -> Result<Trajectory<T>> {
        if !self.domain.same_grid(c0.domain()) {
            return Err(Error::DomainMismatch);
        }
        if let Some(cell) = c0.values().iter().position(|&v| v < T::zero()) {
            return Err(Error::param("c0", format!("initial density negative at cell {cell}")));
        }
        let cfg = &self.cfg;
        let limit = T::lit(BLOW_UP_FACTOR) * c0.max_abs();
        let region_mask = cfg.region.mask(&self.domain);
        let diag = |step: usize, t: T, c: &[T]| {
            DiagnosticRow::compute(&self.domain, &self.stencil, &region_mask, step, t, c, cfg.r)
        };

        let mut ws = self.workspace();
        let mut c = c0.values().to_vec();
        let mut k = vec![T::zero(); c.len()];
        let mut stage = vec![T::zero(); c.len()];
        let mut traj = Trajectory {
            domain: self.domain.clone(),
            config: cfg.clone(),
            snapshots: vec![Snapshot {
                step: 0,
                t: T::zero(),
                c: c0.clone(),
            }],
            rows: vec![diag(0, T::zero(), &c)],
            warnings: self.warnings.clone(),
        };

        let fixed_steps = cfg.dt.map(|dt| {
            let n = (cfg.t_final / dt).round();
            let n = if (n * dt - cfg.t_final).abs() <= T::lit(1e-9) * cfg.t_final {
                n
            } else {
                (cfg.t_final / dt).ceil()
            };
            n.to_usize().unwrap_or(usize::MAX)
        });
        let mut t = T::zero();
        let mut step = 0usize;
        loop {
            let remaining = cfg.t_final - t;
            let done = match fixed_steps {
                Some(n) => step >= n,
                None => remaining <= cfg.t_final * T::lit(1e-12),
            };
            if done {
                break;
            }
            let dt = match cfg.dt {
                Some(dt) => dt.min(remaining),
                None => {
                    let info = self.rhs_into(&c, &mut k, &mut ws)?;
                    let b = self.bound_from(info);
                    if remaining <= b {
                        remaining
                    } else {
                        // avoid a sliver as the final step
                        let n = (remaining / b).ceil();
                        remaining / n
                    }
                }
            };
            self.advance(&mut c, dt, &mut k, &mut stage, &mut ws, cfg.dt.is_some())?;
            step += 1;
            t = match (cfg.dt, fixed_steps) {
                (Some(_), Some(n)) if step == n => cfg.t_final,
                (Some(h), _) => T::from_usize_lossy(step) * h,
                (None, _) => t + dt,
            };
            let max = c.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            if max > limit || !max.is_finite() {
                return Err(Error::BlowUp {
                    t: t.as_f64(),
                    max: max.as_f64(),
                    limit: limit.as_f64(),
                });
            }
            let mut row = diag(step, t, &c);
            let prev = traj.rows.last().expect("initial row");
            row.mass_residual = step_mass_residual(prev, &row, cfg.mu);
            traj.rows.push(row);
            if step % cfg.snapshot_stride == 0 {
                traj.snapshots.push(Snapshot {
                    step,
                    t,
                    c: ScalarField::new(self.domain.clone(), c.clone())?,
                });
            }
        }
        if traj.snapshots.last().map(|s| s.step) != Some(step) {
            traj.snapshots.push(Snapshot {
                step,
                t,
                c: ScalarField::new(self.domain.clone(), c)?,
            });
        }
        Ok(traj)
    }
}

/// `|Δm − (μΔt/2)(R_n + R_{n+1})|`
fn step_mass_residual<T: Real>(prev: &DiagnosticRow<T>, next: &DiagnosticRow<T>, mu: T) -> T {
    let dt = next.t - prev.t;
    ((next.mass - prev.mass) - mu * dt * T::lit(0.5) * (prev.reaction + next.reaction)).abs()
}

/// Builds `D_ε`, the adhesion operator and integrates.
pub fn run<T: Real>(
    c0: &ScalarField<T>,
    spec: &TensorSpec<T>,
    force: AdhesionForce<T>,
    cfg: SolverConfig<T>,
) -> Result<Trajectory<T>> {
    Solver::from_spec(c0.domain(), spec, force, cfg)?.run(c0)
}

/// One-off right-hand side with direct adhesion summation.
pub fn rhs<T: Real>(
    state: &State<T>,
    d_eps: &SymTensorField<T>,
    kernel: &AdhesionKernel<T>,
    cfg: &SolverConfig<T>,
) -> Result<ScalarField<T>> {
    let solver = Solver::new(d_eps.clone(), AdhesionOperator::new(kernel.clone(), Strategy::Direct), cfg.clone())?;
    solver.rhs(&state.c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub step: usize,
    pub t: T,
    pub c: ScalarField<T>,
}

/// Per-step diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticRow<T> {
    pub step: usize,
    pub t: T,
    /// `∫ c`
    pub mass: T,
    /// `‖c‖_{L¹}`
    pub l1: T,
    /// `‖c‖_{L^r}`
    pub lr: T,
    pub minc: T,
    /// `∫_B |∇c|²`
    pub h1_b: T,
    /// `∫_B |c|^{r+1}`
    pub lrp1_b: T,
    /// Mass balance defect of the step ending here (zero on the initial row).
    pub mass_residual: T,
    /// `∫ c (1 − c₊^{r−1})`
    pub reaction: T,
}

/// `(∫_B |∇c|², ∫_B c², ∫_B |c|^{r+1})` with centered differences (one-sided at no-flux
/// faces).
fn region_integrals<T: Real>(dom: &BoxDomain<T>, stencil: &Stencil, mask: &[bool], c: &[T], r: T) -> (T, T, T) {
    let h = dom.spacing();
    let vol = dom.cell_volume();
    let rp1 = r + T::one();
    let mut g2 = T::zero();
    let mut l2 = T::zero();
    let mut lp = T::zero();
    for i in (0..c.len()).filter(|&i| mask[i]) {
        for k in 0..dom.dim() {
            let g = cross_diff(c, stencil, i, k, h[k]);
            g2 += g * g;
        }
        l2 += c[i] * c[i];
        lp += c[i].abs().powf(rp1);
    }
    (g2 * vol, l2 * vol, lp * vol)
}

impl<T: Real> DiagnosticRow<T> {
    fn compute(
        dom: &BoxDomain<T>,
        stencil: &Stencil,
        mask: &[bool],
        step: usize,
        t: T,
        c: &[T],
        r: T,
    ) -> Self {
        let rm1 = r - T::one();
        let ip = integer_power(rm1);
        let vol = dom.cell_volume();
        let mut l1 = T::zero();
        let mut lr = T::zero();
        let mut reac = T::zero();
        let mut minc = T::infinity();
        for &v in c {
            l1 += v.abs();
            lr += v.abs().powf(r);
            reac += reaction(v, T::one(), rm1, ip);
            minc = minc.min(v);
        }
        let (h1_b, _, lrp1_b) = region_integrals(dom, stencil, mask, c, r);
        Self {
            step,
            t,
            mass: integrate_values(dom, c),
            l1: l1 * vol,
            lr: (lr * vol).powf(T::one() / r),
            minc,
            h1_b,
            lrp1_b,
            mass_residual: T::zero(),
            reaction: reac * vol,
        }
    }
}

/// Time-stamped snapshots plus per-step diagnostics of one run.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub domain: BoxDomain<T>,
    pub config: SolverConfig<T>,
    /// Every `snapshot_stride` steps, always including the initial and final states.
    pub snapshots: Vec<Snapshot<T>>,
    pub rows: Vec<DiagnosticRow<T>>,
    pub warnings: Vec<String>,
}

pub const DIAGNOSTICS_HEADER: &str = "step,t,mass,l1,lr,minc,h1_B,lrp1_B,mass_residual";

impl<T: Real> Trajectory<T> {
    pub fn initial(&self) -> &ScalarField<T> {
        &self.snapshots[0].c
    }

    pub fn final_state(&self) -> &ScalarField<T> {
        &self.snapshots.last().expect("nonempty").c
    }

    pub fn t_final(&self) -> T {
        self.snapshots.last().expect("nonempty").t
    }

    pub fn steps(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn snapshot_times(&self) -> Vec<T> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// Largest gap, in steps, between consecutive snapshots.
    pub fn max_stride(&self) -> usize {
        self.snapshots.windows(2).map(|w| w[1].step - w[0].step).max().unwrap_or(0)
    }

    /// Largest time step taken.
    pub fn max_dt(&self) -> T {
        self.rows.windows(2).map(|w| w[1].t - w[0].t).fold(T::zero(), T::max)
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut s = String::from(DIAGNOSTICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.step, r.t, r.mass, r.l1, r.lr, r.minc, r.h1_b, r.lrp1_b, r.mass_residual
            );
        }
        s
    }
}

/// Per-step `|Δ∫c − ∫_step μ ∫(c − c₊^{r−1}c)|` (trapezoid in time), one entry per step.
pub fn mass_balance_residual<T: Real>(traj: &Trajectory<T>) -> Result<Vec<T>> {
    if traj.rows.len() < 2 {
        return Err(Error::TrajectoryMismatch("need at least one step".into()));
    }
    Ok(traj
        .rows
        .windows(2)
        .map(|w| step_mass_residual(&w[0], &w[1], traj.config.mu))
        .collect())
}

/// Time-integrated localized norms on `B`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubdomainDiagnostics<T> {
    /// `∫₀ᵀ ∫_B |∇c|²`
    pub h1_seminorm_sq: T,
    /// `∫₀ᵀ ‖c‖²_{H¹(B)}`
    pub h1_sq: T,
    /// `‖c‖_{L^{r+1}(B × (0,T))}`
    pub lrp1: T,
    /// `min_{x ∈ B} dist(x, K)`
    pub clearance: T,
}

/// Trapezoid-in-time localized norms over the stored snapshots. `B` must keep at least
/// `clearance` away from the degeneracy set.
pub fn subdomain_diagnostics<T: Real>(
    traj: &Trajectory<T>,
    region: &Region<T>,
    degeneracy: Option<&CompactSet<T>>,
    clearance: T,
) -> Result<SubdomainDiagnostics<T>> {
    let dom = &traj.domain;
    let dist = match degeneracy {
        Some(k) => region.distance_to(dom, k)?,
        None => T::infinity(),
    };
    if !(dist >= clearance) {
        return Err(Error::RegionTooClose(format!(
            "subdomain comes within {dist} of the degeneracy set (need {clearance})"
        )));
    }
    let mask = region.mask(dom);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let stencil = Stencil::new(dom);
    let r = traj.config.r;
    let vals: Vec<(T, T, T)> = traj
        .snapshots
        .iter()
        .map(|s| region_integrals(dom, &stencil, &mask, s.c.values(), r))
        .collect();
    let times = traj.snapshot_times();
    let trap = |f: &dyn Fn(&(T, T, T)) -> T| {
        let mut acc = T::zero();
        for i in 1..vals.len() {
            acc += (times[i] - times[i - 1]) * T::lit(0.5) * (f(&vals[i - 1]) + f(&vals[i]));
        }
        acc
    };
    let g2 = trap(&|v| v.0);
    let l2 = trap(&|v| v.1);
    let lp = trap(&|v| v.2);
    Ok(SubdomainDiagnostics {
        h1_seminorm_sq: g2,
        h1_sq: g2 + l2,
        lrp1: lp.powf(T::one() / (r + T::one())),
        clearance: dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::BoundaryMode;
    use crate::linalg::SymMat;
    use rand::{Rng, SeedableRng};

    fn periodic_cube(n: usize, l: f64) -> BoxDomain<f64> {
        BoxDomain::cube(3, l, n, BoundaryMode::Periodic).unwrap()
    }

    fn zero_adhesion(dom: &BoxDomain<f64>) -> AdhesionOperator<f64> {
        AdhesionOperator::new(build_kernel(AdhesionForce::Constant { f0: 0.0 }, dom).unwrap(), Strategy::Direct)
    }

    #[test]
    fn constant_products_have_no_flux() {
        let dom = BoxDomain::new(vec![1.0, 1.2, 0.8], vec![5, 6, 4], BoundaryMode::NoFlux).unwrap();
        let m = SymMat::from_packed(3, vec![2.0, 0.3, 0.1, 1.5, -0.2, 1.0]);
        let d = SymTensorField::constant(&dom, &m);
        let f = myopic_face_flux(&ScalarField::constant(&dom, 0.7), &d).unwrap();
        assert!(f.flux.iter().flatten().all(|v: &f64| v.abs() < 1e-12));
    }

    #[test]
    fn linear_coefficient_is_differenced_exactly() {
        // D = diag(1 + x₁, 1, 1), c ≡ 1: ∇∇:(Dc) = ∂₁₁(1 + x₁) = 0 away from the wrap
        let dom = BoxDomain::cube(3, 1.0, 8, BoundaryMode::NoFlux).unwrap();
        let d = SymTensorField::from_fn(&dom, |x: &[f64]| SymMat::diagonal(&[1.0 + x[0], 1.0, 1.0])).unwrap();
        let div = myopic_face_flux(&ScalarField::constant(&dom, 1.0), &d).unwrap().divergence();
        let mut idx = [0usize; 3];
        for c in 0..dom.len() {
            dom.multi_index(c, &mut idx);
            if idx[0] > 0 && idx[0] < 7 {
                assert!(div.values()[c].abs() < 1e-10f64);
            }
        }
    }

    #[test]
    fn rhs_of_zero_is_zero() {
        let dom = BoxDomain::cube(3, 2.0, 6, BoundaryMode::NoFlux).unwrap();
        let d = SymTensorField::constant(&dom, &SymMat::identity(3));
        let k = build_kernel(AdhesionForce::Hat { f0: 1.0 }, &dom).unwrap();
        let cfg = SolverConfig::new(0.0, 1.0, 4.0, 1.0);
        let st = State { c: ScalarField::zeros(&dom), t: 0.0 };
        assert!(rhs(&st, &d, &k, &cfg).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spatially_constant_periodic_state_only_reacts() {
        let dom = periodic_cube(6, 3.0);
        let m = SymMat::from_packed(3, vec![2.0, 0.3, 0.1, 1.5, -0.2, 1.0]);
        let d = SymTensorField::constant(&dom, &m);
        let k = build_kernel(AdhesionForce::Hat { f0: 2.0 }, &dom).unwrap();
        let cfg = SolverConfig::new(0.0, 1.3, 3.0, 1.0);
        let c0 = 0.8;
        let st = State { c: ScalarField::constant(&dom, c0), t: 0.0 };
        let out = rhs(&st, &d, &k, &cfg).unwrap();
        let expect = 1.3 * c0 * (1.0 - c0 * c0);
        assert!(out.values().iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn transport_telescopes_on_random_data() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for mode in [BoundaryMode::NoFlux, BoundaryMode::Periodic] {
            for scheme in [AdvectionScheme::Centered, AdvectionScheme::Upwind] {
                let dom = BoxDomain::new(vec![2.0, 2.4, 1.6], vec![8, 9, 7], mode).unwrap();
                let d = SymTensorField::from_fn(&dom, |x| {
                    let a = 1.0 + x[0] * x[1];
                    SymMat::from_packed(3, vec![a, 0.2 * x[2], 0.1, 1.0 + x[1], 0.05 * x[0], 2.0])
                })
                .unwrap();
                let k = build_kernel(AdhesionForce::Hat { f0: 3.0 }, &dom).unwrap();
                let mut cfg = SolverConfig::new(0.01, 0.0, 2.0, 1.0);
                cfg.advection = scheme;
                let c = ScalarField::new(dom.clone(), (0..dom.len()).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
                let out = rhs(&State { c: c.clone(), t: 0.0 }, &d, &k, &cfg).unwrap();
                let scale = out.values().iter().fold(0.0f64, |m, v: &f64| m.max(v.abs())) * dom.volume();
                assert!(out.integrate().abs() <= 1e-12 * scale.max(1.0), "{mode:?} {scheme:?}");
            }
        }
    }

    #[test]
    fn zero_rhs_leaves_state_unchanged() {
        let dom = periodic_cube(5, 2.0);
        let solver = Solver::new(
            SymTensorField::constant(&dom, &SymMat::identity(3)),
            zero_adhesion(&dom),
            SolverConfig::new(0.0, 0.0, 2.0, 1.0),
        )
        .unwrap();
        let st = State { c: ScalarField::constant(&dom, 0.4), t: 0.25 };
        let next = solver.step(&st, 0.01).unwrap();
        assert_eq!(next.c, st.c);
    }

    #[test]
    fn oversized_fixed_step_is_refused() {
        let dom = periodic_cube(8, 1.0);
        let mut cfg = SolverConfig::new(0.0, 0.0, 2.0, 0.1);
        let solver = Solver::new(SymTensorField::constant(&dom, &SymMat::identity(3)), zero_adhesion(&dom), cfg.clone()).unwrap();
        let st = State { c: ScalarField::constant(&dom, 1.0), t: 0.0 };
        assert!(matches!(solver.step(&st, 0.1), Err(Error::StabilityViolated { .. })));
        cfg.allow_unstable = true;
        let solver = Solver::new(SymTensorField::constant(&dom, &SymMat::identity(3)), zero_adhesion(&dom), cfg).unwrap();
        assert!(solver.step(&st, 0.1).is_ok());
    }

    #[test]
    fn blow_up_guard_fires() {
        let dom = BoxDomain::cube(3, 1.0, 8, BoundaryMode::Periodic).unwrap();
        let mut cfg = SolverConfig::new(0.0, 0.0, 2.0, 1.0);
        cfg.dt = Some(0.05);
        cfg.allow_unstable = true;
        let solver = Solver::new(SymTensorField::constant(&dom, &SymMat::identity(3)), zero_adhesion(&dom), cfg).unwrap();
        let c0 = ScalarField::from_fn(&dom, |x| 1.0 + 0.1 * (8.0 * std::f64::consts::PI * x[0]).cos()).unwrap();
        assert!(matches!(solver.run(&c0), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn config_validation() {
        let ok = SolverConfig::new(0.01, 1.0, 4.0, 0.5);
        assert!(ok.validate().is_ok());
        for bad in [
            SolverConfig { mu: -1.0, ..ok.clone() },
            SolverConfig { r: 1.5, ..ok.clone() },
            SolverConfig { cfl: 1.5, ..ok.clone() },
            SolverConfig { t_final: 0.0, ..ok.clone() },
            SolverConfig { snapshot_stride: 0, ..ok.clone() },
            SolverConfig { eps: -0.1, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        let w = SolverConfig::new(0.0, 1.0, 3.0, 1.0).admissibility_warnings(3, None);
        assert!(w.iter().any(|s| s.contains("r ≤ d/(d−2)")));
        assert!(w.iter().any(|s| s.contains("ε = 0")));
    }

    #[test]
    fn region_masks() {
        let dom = BoxDomain::cube(3, 1.0, 4, BoundaryMode::NoFlux).unwrap();
        assert_eq!(Region::Whole.mask(&dom).iter().filter(|&&m| m).count(), 64);
        let b = Region::Box { lo: vec![0.0, 0.0, 0.0], hi: vec![0.5, 0.5, 0.5] };
        assert_eq!(b.mask(&dom).iter().filter(|&&m| m).count(), 8);
        let k = CompactSet::single_point(vec![0.9, 0.9, 0.9]).unwrap();
        assert!((b.distance_to(&dom, &k).unwrap() - (3.0f64 * 0.525 * 0.525).sqrt()).abs() < 1e-12);
    }
}
