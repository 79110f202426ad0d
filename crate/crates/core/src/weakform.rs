//! Very weak residual of computed trajectories:
//!
//! ```text
//! −∫∫ c ∂tη − ∫ c₀ η(·,0) = ∫∫ c D:D²η + ∫∫ c (A c)·∇η + μ ∫∫ c (1 − c₊^{r−1}) η
//! ```
//!
//! Test functions are finite sums of products `η₁(x) η₂(t)` whose spatial parts are constant on
//! the boundary collar `{dist(x, ∂Ω) < a/4}`, so `∇η·(Dν) = 0` for every tensor `D`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::adhesion::{AdhesionKernel, AdhesionOperator, Strategy};
use crate::fields::{BoxDomain, SymTensorField};
use crate::linalg::{packed_index, packed_len};
use crate::num::{smoothstep, smoothstep_d1, smoothstep_d2, Real};
use crate::solver::Trajectory;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMode {
    /// `η₁ ≡ 1`
    Constant,
    /// Product of per-axis ramps: `0` on the collar, `1` beyond `a/2` from the boundary.
    CollarBump,
    /// The collar bump times `x₁x₂` (`x₁²` when `d = 1`).
    PolynomialInterior,
}

/// Value, gradient and packed Hessian at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub hess: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
struct Term<T> {
    coef: T,
    mode: TestMode,
    support: T,
}

/// `η(x, t) = Σ coef · η₁(x) η₂(t)` with `η₂(t) = (1 − t/T_s)₊³`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction<T> {
    dim: usize,
    extent: Vec<T>,
    collar: T,
    terms: Vec<Term<T>>,
}

/// `η₂(t) = (1 − t/T_s)³` on `[0, T_s)`, zero afterwards.
pub fn temporal<T: Real>(t: T, support: T) -> (T, T) {
    if t >= support {
        return (T::zero(), T::zero());
    }
    let s = T::one() - t / support;
    (s * s * s, -T::lit(3.0) * s * s / support)
}

/// One factor of the collar bump along an axis of length `l`, with its first two derivatives.
fn ramp<T: Real>(x: T, l: T, a: T) -> (T, T, T) {
    let w = a / T::lit(4.0);
    let lo = x;
    let hi = l - x;
    let (u, sign) = if lo <= hi { (lo, T::one()) } else { (hi, -T::one()) };
    if u <= w {
        (T::zero(), T::zero(), T::zero())
    } else if u >= T::lit(2.0) * w {
        (T::one(), T::zero(), T::zero())
    } else {
        let s = (u - w) / w;
        (smoothstep(s), sign * smoothstep_d1(s) / w, smoothstep_d2(s) / (w * w))
    }
}

impl<T: Real> TestFunction<T> {
    /// Ramps over `[a/4, a/2]` from each face; `a` is the boundary margin of the run.
    pub fn new(mode: TestMode, support: T, dom: &BoxDomain<T>, margin: T) -> Result<Self> {
        if !(support > T::zero()) {
            return Err(Error::param("support", "temporal support must be positive"));
        }
        let min_l = dom.extent().iter().copied().fold(T::infinity(), T::min);
        if !(margin > T::zero() && margin <= min_l / T::lit(2.0)) {
            return Err(Error::param("margin", format!("must lie in (0, {min_l}/2]")));
        }
        Ok(Self {
            dim: dom.dim(),
            extent: dom.extent().to_vec(),
            collar: margin,
            terms: vec![Term {
                coef: T::one(),
                mode,
                support,
            }],
        })
    }

    /// `α·self + β·other`; both must share domain and collar.
    pub fn combine(&self, alpha: T, other: &Self, beta: T) -> Result<Self> {
        if self.extent != other.extent || self.collar != other.collar {
            return Err(Error::param("test function", "combined functions live on different collars"));
        }
        let mut terms: Vec<Term<T>> = self.terms.iter().map(|t| Term { coef: alpha * t.coef, ..t.clone() }).collect();
        terms.extend(other.terms.iter().map(|t| Term { coef: beta * t.coef, ..t.clone() }));
        Ok(Self { terms, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest temporal support among the terms.
    pub fn support(&self) -> T {
        self.terms.iter().map(|t| t.support).fold(T::zero(), T::max)
    }

    /// Width of the collar on which `∇η₁ ≡ 0`.
    pub fn collar_width(&self) -> T {
        self.collar / T::lit(4.0)
    }

    fn spatial_term(&self, mode: TestMode, x: &[T]) -> Jet<T> {
        let d = self.dim;
        let mut jet = Jet {
            value: T::one(),
            grad: vec![T::zero(); d],
            hess: vec![T::zero(); packed_len(d)],
        };
        if mode == TestMode::Constant {
            return jet;
        }
        let r: Vec<(T, T, T)> = (0..d).map(|k| ramp(x[k], self.extent[k], self.collar)).collect();
        // product rule over the per-axis factors
        let prod_except = |skip: &[usize]| {
            (0..d)
                .filter(|k| !skip.contains(k))
                .map(|k| r[k].0)
                .fold(T::one(), |a, b| a * b)
        };
        let mut b = Jet {
            value: prod_except(&[]),
            grad: (0..d).map(|k| r[k].1 * prod_except(&[k])).collect(),
            hess: vec![T::zero(); packed_len(d)],
        };
        for i in 0..d {
            for j in i..d {
                b.hess[packed_index(d, i, j)] = if i == j {
                    r[i].2 * prod_except(&[i])
                } else {
                    r[i].1 * r[j].1 * prod_except(&[i, j])
                };
            }
        }
        if mode == TestMode::CollarBump {
            return b;
        }
        // p = x₁x₂ (x₁² in one dimension)
        let (p, gp, hp) = if d == 1 {
            (x[0] * x[0], vec![T::lit(2.0) * x[0]], vec![T::lit(2.0)])
        } else {
            let mut g = vec![T::zero(); d];
            g[0] = x[1];
            g[1] = x[0];
            let mut h = vec![T::zero(); packed_len(d)];
            h[packed_index(d, 0, 1)] = T::one();
            (x[0] * x[1], g, h)
        };
        jet.value = b.value * p;
        for i in 0..d {
            jet.grad[i] = b.grad[i] * p + b.value * gp[i];
            for j in i..d {
                let q = packed_index(d, i, j);
                jet.hess[q] = b.hess[q] * p + b.grad[i] * gp[j] + b.grad[j] * gp[i] + b.value * hp[q];
            }
        }
        jet
    }

    /// Spatial jet of term `k`.
    pub fn spatial(&self, k: usize, x: &[T]) -> Jet<T> {
        self.spatial_term(self.terms[k].mode, x)
    }

    /// `(η, ∇η, D²η, ∂tη)` at `(x, t)`.
    pub fn eval(&self, x: &[T], t: T) -> (Jet<T>, T) {
        let d = self.dim;
        let mut jet = Jet {
            value: T::zero(),
            grad: vec![T::zero(); d],
            hess: vec![T::zero(); packed_len(d)],
        };
        let mut dt = T::zero();
        for term in &self.terms {
            let s = self.spatial_term(term.mode, x);
            let (e2, de2) = temporal(t, term.support);
            jet.value += term.coef * s.value * e2;
            for (g, v) in jet.grad.iter_mut().zip(&s.grad) {
                *g += term.coef * *v * e2;
            }
            for (h, v) in jet.hess.iter_mut().zip(&s.hess) {
                *h += term.coef * *v * e2;
            }
            dt += term.coef * s.value * de2;
        }
        (jet, dt)
    }
}

/// Test function for the chosen mode.
pub fn make_test_function<T: Real>(mode: TestMode, support: T, dom: &BoxDomain<T>, margin: T) -> Result<TestFunction<T>> {
    TestFunction::new(mode, support, dom, margin)
}

/// Largest `|∇η₁|` over `samples` random points of the boundary collar.
pub fn collar_gradient_max<T: Real>(eta: &TestFunction<T>, samples: usize, seed: u64) -> T {
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let d = eta.dim;
    let w = eta.collar_width().as_f64();
    let mut worst = T::zero();
    let mut x = vec![T::zero(); d];
    for _ in 0..samples {
        let face = rng.gen_range(0..d);
        for k in 0..d {
            let l = eta.extent[k].as_f64();
            x[k] = T::lit(rng.gen_range(0.0..l));
        }
        let depth = rng.gen_range(0.0..w);
        let l = eta.extent[face].as_f64();
        x[face] = T::lit(if rng.gen_bool(0.5) { depth } else { l - depth });
        for k in 0..eta.terms.len() {
            let g = eta.spatial(k, &x).grad;
            worst = worst.max(g.iter().map(|v| *v * *v).sum::<T>().sqrt());
        }
    }
    worst
}

/// Terms of the identity and the resulting residual.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakResidual<T> {
    /// `−∫∫ c ∂tη`
    pub time: T,
    /// `−∫ c₀ η(·,0)`
    pub initial: T,
    /// `∫∫ c D:D²η`
    pub diffusion: T,
    /// `∫∫ c (A c)·∇η`
    pub adhesion: T,
    /// `μ ∫∫ c (1 − c₊^{r−1}) η`
    pub reaction: T,
    /// Left minus right side.
    pub signed: T,
    pub absolute: T,
    /// Largest snapshot stride, in steps.
    pub stride: usize,
}

/// Residual over the stored snapshots: midpoint rule in space, trapezoid in time.
pub fn weak_residual<T: Real>(
    traj: &Trajectory<T>,
    eta: &TestFunction<T>,
    d: &SymTensorField<T>,
    kernel: &AdhesionKernel<T>,
    mu: T,
    r: T,
) -> Result<WeakResidual<T>> {
    let dom = &traj.domain;
    if !dom.same_grid(d.domain()) || !dom.same_grid(kernel.domain()) || eta.dim != dom.dim() {
        return Err(Error::DomainMismatch);
    }
    let horizon = traj.t_final();
    if eta.support() > horizon {
        return Err(Error::SupportBeyondHorizon {
            support: eta.support().as_f64(),
            horizon: horizon.as_f64(),
        });
    }
    let n = dom.len();
    let dim = dom.dim();
    let p = packed_len(dim);
    let vol = dom.cell_volume();
    let op = AdhesionOperator::new(kernel.clone(), Strategy::Auto);

    // spatial jets per term, contracted with D once
    let mut x = vec![T::zero(); dim];
    let jets: Vec<Vec<Jet<T>>> = (0..eta.terms.len())
        .map(|k| {
            (0..n)
                .map(|c| {
                    dom.center_into(c, &mut x);
                    eta.spatial(k, &x)
                })
                .collect()
        })
        .collect();
    let contract = |c: usize, h: &[T]| {
        let dv = &d.values()[c * p..(c + 1) * p];
        let mut s = T::zero();
        for i in 0..dim {
            for j in i..dim {
                let q = packed_index(dim, i, j);
                let w = if i == j { T::one() } else { T::lit(2.0) };
                s += w * dv[q] * h[q];
            }
        }
        s
    };
    let ddh: Vec<Vec<T>> = jets.iter().map(|js| (0..n).map(|c| contract(c, &js[c].hess)).collect()).collect();

    let rm1 = r - T::one();
    let mut adv = vec![T::zero(); n * dim];
    // per-snapshot integrands (time, diffusion, adhesion, reaction)
    let mut per = Vec::with_capacity(traj.snapshots.len());
    for snap in &traj.snapshots {
        let c = snap.c.values();
        op.apply_into(c, &mut adv);
        let (mut it, mut idf, mut iad, mut ire) = (T::zero(), T::zero(), T::zero(), T::zero());
        for (k, term) in eta.terms.iter().enumerate() {
            let (e2, de2) = temporal(snap.t, term.support);
            if e2 == T::zero() && de2 == T::zero() {
                continue;
            }
            let (mut a, mut b, mut g, mut q) = (T::zero(), T::zero(), T::zero(), T::zero());
            for i in 0..n {
                let j = &jets[k][i];
                a += c[i] * j.value;
                b += c[i] * ddh[k][i];
                let mut dot = T::zero();
                for m in 0..dim {
                    dot += adv[i * dim + m] * j.grad[m];
                }
                g += c[i] * dot;
                q += c[i] * (T::one() - c[i].max(T::zero()).powf(rm1)) * j.value;
            }
            it += -term.coef * de2 * a * vol;
            idf += term.coef * e2 * b * vol;
            iad += term.coef * e2 * g * vol;
            ire += mu * term.coef * e2 * q * vol;
        }
        per.push([it, idf, iad, ire]);
    }
    let mut tot = [T::zero(); 4];
    for w in 1..per.len() {
        let dt = traj.snapshots[w].t - traj.snapshots[w - 1].t;
        for q in 0..4 {
            tot[q] += T::lit(0.5) * dt * (per[w - 1][q] + per[w][q]);
        }
    }
    let c0 = traj.initial().values();
    let mut initial = T::zero();
    for (k, term) in eta.terms.iter().enumerate() {
        let (e2, _) = temporal(T::zero(), term.support);
        let s: T = (0..n).map(|i| c0[i] * jets[k][i].value).sum();
        initial -= term.coef * e2 * s * vol;
    }
    let signed = tot[0] + initial - tot[1] - tot[2] - tot[3];
    Ok(WeakResidual {
        time: tot[0],
        initial,
        diffusion: tot[1],
        adhesion: tot[2],
        reaction: tot[3],
        signed,
        absolute: signed.abs(),
        stride: traj.max_stride(),
    })
}

/// The spatially constant identity evaluated with every step of the run instead of the
/// snapshots, together with an estimate of the snapshot trapezoid error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MassIdentity<T> {
    /// `|−∫ m ∂tη₂ − m₀ η₂(0) − μ ∫ R η₂|` with per-step trapezoid
    pub residual: T,
    /// `(Δs²/12) ∫ |f''|` for the snapshot spacing `Δs`
    pub quadrature_tolerance: T,
}

/// Mass-law counterpart of the constant-η residual for `η₂` with support `support`.
pub fn integrated_mass_residual<T: Real>(traj: &Trajectory<T>, support: T) -> Result<MassIdentity<T>> {
    let mu = traj.config.mu;
    let rows = &traj.rows;
    if rows.len() < 3 {
        return Err(Error::TrajectoryMismatch("need at least two steps".into()));
    }
    let f: Vec<T> = rows
        .iter()
        .map(|r| {
            let (e2, de2) = temporal(r.t, support);
            -r.mass * de2 - mu * r.reaction * e2
        })
        .collect();
    let mut integral = T::zero();
    for w in 1..rows.len() {
        integral += T::lit(0.5) * (rows[w].t - rows[w - 1].t) * (f[w - 1] + f[w]);
    }
    let (e0, _) = temporal(T::zero(), support);
    let residual = (integral - rows[0].mass * e0).abs();
    // second derivative of the integrand by divided differences on the step grid
    let mut curv = T::zero();
    for w in 1..rows.len() - 1 {
        let (t0, t1, t2) = (rows[w - 1].t, rows[w].t, rows[w + 1].t);
        let d1 = (f[w] - f[w - 1]) / (t1 - t0);
        let d2 = (f[w + 1] - f[w]) / (t2 - t1);
        let fpp = T::lit(2.0) * (d2 - d1) / (t2 - t0);
        curv += fpp.abs() * T::lit(0.5) * (t2 - t0);
    }
    let times = traj.snapshot_times();
    let ds = times.windows(2).map(|w| w[1] - w[0]).fold(T::zero(), T::max);
    Ok(MassIdentity {
        residual,
        quadrature_tolerance: ds * ds / T::lit(12.0) * curv,
    })
}

/// `‖c_a − c_b‖_{L¹(Ω×(0,T))}` over matching snapshots.
pub fn eps_cauchy<T: Real>(a: &Trajectory<T>, b: &Trajectory<T>) -> Result<T> {
    if !a.domain.same_grid(&b.domain) {
        return Err(Error::DomainMismatch);
    }
    if a.snapshots.len() != b.snapshots.len() {
        return Err(Error::TrajectoryMismatch(format!(
            "{} vs {} snapshots",
            a.snapshots.len(),
            b.snapshots.len()
        )));
    }
    let tol = T::lit(1e-9) * a.t_final().abs().max(T::one());
    let mut l1 = Vec::with_capacity(a.snapshots.len());
    for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
        if (sa.t - sb.t).abs() > tol {
            return Err(Error::TrajectoryMismatch(format!("snapshot times {} and {} differ", sa.t, sb.t)));
        }
        let s: T = sa.c.values().iter().zip(sb.c.values()).map(|(&u, &v)| (u - v).abs()).sum();
        l1.push(s * a.domain.cell_volume());
    }
    let mut acc = T::zero();
    for w in 1..l1.len() {
        acc += T::lit(0.5) * (a.snapshots[w].t - a.snapshots[w - 1].t) * (l1[w - 1] + l1[w]);
    }
    Ok(acc)
}
