//! Diffusion tensors with explicit degeneracy sets and their regularization
//!
//! ```text
//! D_ε(x) = ε I + Σ_s ψ_s(x) (η_ε ∗ D)(x + ε z_s)
//! ```
//!
//! `{ψ_s}` is a tensor-product partition of unity: per axis a low-face ramp, a high-face ramp
//! and the interior remainder, so there are `3^d` pieces. `z_s` is the sum of the inward
//! normals of the faces a piece is attached to; the interior piece has `z = 0`. On the
//! support of `ψ_s` the shifted ball `B_ε(x + ε z_s)` stays inside `Ω̄`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::fields::{BoxDomain, SymTensorField};
use crate::fractal::CompactSet;
use crate::linalg::{packed_len, SymMat};
use crate::num::{smoothstep, Real};
use crate::{Error, Result};

/// Tolerance for symmetry of closure output, relative to the entry scale.
const SYMMETRY_TOL: f64 = 1e-12;

type Closure<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;

/// Declarative tensor description, as found in run configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TensorKind<T> {
    /// `D ≡ M`, `M` symmetric positive definite.
    Constant { matrix: Vec<Vec<T>> },
    /// `D = φ I` with `φ(x) = Π_p min(1, |x − p|²)`.
    ScalarIsotropic { points: Vec<Vec<T>> },
    /// `D = φ M`.
    AnisotropicProduct { points: Vec<Vec<T>>, matrix: Vec<Vec<T>> },
}

#[derive(Clone)]
enum Form<T> {
    Constant(SymMat<T>),
    ScalarIsotropic(Vec<Vec<T>>),
    AnisotropicProduct(Vec<Vec<T>>, SymMat<T>),
    /// Full row-major `d × d` output.
    Custom(Closure<T>),
}

/// Analytic diffusion tensor `x ↦ D(x)` with its degeneracy set `K = {D ≯ 0}`.
#[derive(Clone)]
pub struct TensorSpec<T> {
    dim: usize,
    name: String,
    form: Form<T>,
    degeneracy: Option<CompactSet<T>>,
    margin: Option<T>,
}

impl<T: Real> fmt::Debug for TensorSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorSpec")
            .field("dim", &self.dim)
            .field("name", &self.name)
            .field("degeneracy", &self.degeneracy)
            .field("margin", &self.margin)
            .finish()
    }
}

fn sym_from_rows<T: Real>(rows: &[Vec<T>], dim: usize) -> Result<SymMat<T>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::param("matrix", format!("expected a {dim}x{dim} matrix")));
    }
    let full: Vec<T> = rows.iter().flatten().copied().collect();
    if full.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("matrix", "entries must be finite"));
    }
    let (m, gap) = SymMat::from_full(dim, &full);
    if gap > T::zero() {
        return Err(Error::Asymmetric { cell: 0, gap: gap.as_f64() });
    }
    if !(m.min_eigenvalue() > T::zero()) {
        return Err(Error::param("matrix", "must be positive definite"));
    }
    Ok(m)
}

fn check_points<T: Real>(points: &[Vec<T>], dim: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::param("points", "degeneracy set is empty"));
    }
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::param("points", format!("points must be finite and {dim}-dimensional")));
    }
    Ok(())
}

/// `Π_p min(1, |x − p|²)`
#[inline]
fn point_weight<T: Real>(points: &[Vec<T>], x: &[T]) -> T {
    points.iter().fold(T::one(), |acc, p| {
        let r2: T = p.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum();
        acc * r2.min(T::one())
    })
}

impl<T: Real> TensorSpec<T> {
    pub fn constant(m: SymMat<T>) -> Result<Self> {
        if !m.is_finite() || !(m.min_eigenvalue() > T::zero()) {
            return Err(Error::param("matrix", "must be finite and positive definite"));
        }
        Ok(Self {
            dim: m.dim(),
            name: "constant".into(),
            form: Form::Constant(m),
            degeneracy: None,
            margin: None,
        })
    }

    pub fn scalar_isotropic(points: Vec<Vec<T>>) -> Result<Self> {
        let dim = points.first().map_or(0, Vec::len);
        check_points(&points, dim)?;
        Ok(Self {
            dim,
            name: "scalar-isotropic".into(),
            degeneracy: Some(CompactSet::points(points.clone())?),
            form: Form::ScalarIsotropic(points),
            margin: None,
        })
    }

    pub fn anisotropic_product(points: Vec<Vec<T>>, m: SymMat<T>) -> Result<Self> {
        let dim = m.dim();
        check_points(&points, dim)?;
        if !m.is_finite() || !(m.min_eigenvalue() > T::zero()) {
            return Err(Error::param("matrix", "must be finite and positive definite"));
        }
        Ok(Self {
            dim,
            name: "anisotropic-product".into(),
            degeneracy: Some(CompactSet::points(points.clone())?),
            form: Form::AnisotropicProduct(points, m),
            margin: None,
        })
    }

    /// Arbitrary closure returning the full row-major matrix; asymmetric output is rejected
    /// at evaluation. `degeneracy` must be exactly the set where the tensor is singular.
    pub fn custom(
        dim: usize,
        name: impl Into<String>,
        degeneracy: Option<CompactSet<T>>,
        f: impl Fn(&[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Result<Self> {
        if let Some(k) = &degeneracy {
            if k.dim() != dim {
                return Err(Error::param("degeneracy", "dimension mismatch"));
            }
        }
        Ok(Self {
            dim,
            name: name.into(),
            form: Form::Custom(Arc::new(f)),
            degeneracy,
            margin: None,
        })
    }

    pub fn from_kind(kind: &TensorKind<T>, dim: usize) -> Result<Self> {
        let spec = match kind {
            TensorKind::Constant { matrix } => Self::constant(sym_from_rows(matrix, dim)?)?,
            TensorKind::ScalarIsotropic { points } => {
                check_points(points, dim)?;
                Self::scalar_isotropic(points.clone())?
            }
            TensorKind::AnisotropicProduct { points, matrix } => {
                Self::anisotropic_product(points.clone(), sym_from_rows(matrix, dim)?)?
            }
        };
        Ok(spec)
    }

    /// Declares the margin `a`; [`TensorSpec::margin`] checks it against `dist(K, ∂Ω)`.
    pub fn with_margin(mut self, a: T) -> Self {
        self.margin = Some(a);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `K = {D ≯ 0}`; `None` for uniformly elliptic tensors.
    pub fn degeneracy(&self) -> Option<&CompactSet<T>> {
        self.degeneracy.as_ref()
    }

    /// Whether every value is a diagonal matrix.
    pub fn is_diagonal(&self) -> bool {
        match &self.form {
            Form::Constant(m) | Form::AnisotropicProduct(_, m) => m.is_diagonal(),
            Form::ScalarIsotropic(_) => true,
            Form::Custom(_) => false,
        }
    }

    /// The verified margin `a`: the declared value if any, otherwise `dist(K, ∂Ω)`; half the
    /// shortest side when `K` is empty.
    pub fn margin(&self, dom: &BoxDomain<T>) -> Result<T> {
        if dom.dim() != self.dim {
            return Err(Error::DomainMismatch);
        }
        let half_side = dom.extent().iter().fold(T::infinity(), |m, &l| m.min(l)) * T::lit(0.5);
        let actual = match &self.degeneracy {
            Some(k) => k.distance_to_boundary(dom),
            None => half_side,
        };
        if !(actual > T::zero()) {
            return Err(Error::MarginViolated(format!(
                "degeneracy set reaches the boundary (distance {actual})"
            )));
        }
        match self.margin {
            Some(a) if !(a > T::zero()) => Err(Error::param("margin", "must be positive")),
            Some(a) if a > actual => Err(Error::MarginViolated(format!(
                "declared margin {a} exceeds dist(K, ∂Ω) = {actual}"
            ))),
            Some(a) => Ok(a),
            None => Ok(actual.min(half_side)),
        }
    }

    /// `D(x)`; non-finite or asymmetric closure output is an error.
    pub fn eval(&self, x: &[T]) -> Result<SymMat<T>> {
        let mut out = vec![T::zero(); packed_len(self.dim)];
        self.eval_packed(x, &mut out)?;
        Ok(SymMat::from_packed(self.dim, out))
    }

    fn eval_packed(&self, x: &[T], out: &mut [T]) -> Result<()> {
        match &self.form {
            Form::Constant(m) => out.copy_from_slice(m.packed()),
            Form::ScalarIsotropic(points) => {
                let w = point_weight(points, x);
                out.iter_mut().for_each(|v| *v = T::zero());
                for i in 0..self.dim {
                    out[crate::linalg::packed_index(self.dim, i, i)] = w;
                }
            }
            Form::AnisotropicProduct(points, m) => {
                let w = point_weight(points, x);
                for (o, &v) in out.iter_mut().zip(m.packed()) {
                    *o = w * v;
                }
            }
            Form::Custom(f) => {
                let full = f(x);
                if full.len() != self.dim * self.dim {
                    return Err(Error::param("tensor", format!("closure returned {} entries", full.len())));
                }
                if full.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: "tensor", cell: 0 });
                }
                let (m, gap) = SymMat::from_full(self.dim, &full);
                let scale = full.iter().fold(T::one(), |s, v| s.max(v.abs()));
                if gap > T::lit(SYMMETRY_TOL) * scale {
                    return Err(Error::Asymmetric { cell: 0, gap: gap.as_f64() });
                }
                out.copy_from_slice(m.packed());
            }
        }
        Ok(())
    }

    /// Scalar profile `φ` when `D = φ M` with constant `M` (mollification then reduces to a
    /// scalar convolution).
    fn scalar_factor(&self) -> Option<(&[Vec<T>], SymMat<T>)> {
        match &self.form {
            Form::ScalarIsotropic(p) => Some((p, SymMat::identity(self.dim))),
            Form::AnisotropicProduct(p, m) => Some((p, m.clone())),
            _ => None,
        }
    }
}

/// Cellwise samples of `D` at cell centers.
pub fn evaluate<T: Real>(spec: &TensorSpec<T>, dom: &BoxDomain<T>) -> Result<SymTensorField<T>> {
    if dom.dim() != spec.dim() {
        return Err(Error::DomainMismatch);
    }
    let p = packed_len(dom.dim());
    let mut values = vec![T::zero(); dom.len() * p];
    let mut x = vec![T::zero(); dom.dim()];
    for (cell, out) in values.chunks_exact_mut(p).enumerate() {
        dom.center_into(cell, &mut x);
        spec.eval_packed(&x, out).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, cell },
            Error::Asymmetric { gap, .. } => Error::Asymmetric { cell, gap },
            e => e,
        })?;
    }
    SymTensorField::new(dom.clone(), values)
}

/// Discrete standard mollifier `η_ε`: sub-lattice nodes strictly inside the ε-ball,
/// weights `exp(1/(|y/ε|² − 1))` normalized to unit sum.
#[derive(Clone, Debug)]
pub struct Mollifier<T> {
    eps: T,
    spacing: T,
    offsets: Vec<T>,
    weights: Vec<T>,
    dim: usize,
}

impl<T: Real> Mollifier<T> {
    /// Sub-lattice spacing `min(min_i h_i / 2, ε/4)`.
    pub fn new(dom: &BoxDomain<T>, eps: T) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(Error::param("eps", "must be positive"));
        }
        let spacing = (dom.min_spacing() * T::lit(0.5)).min(eps * T::lit(0.25));
        Ok(Self::with_spacing(dom.dim(), eps, spacing))
    }

    pub fn with_spacing(dim: usize, eps: T, spacing: T) -> Self {
        let reach = (eps / spacing).ceil().to_isize().unwrap_or(0);
        let mut k = vec![-reach; dim];
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        loop {
            let y: Vec<T> = k.iter().map(|&v| T::from_isize_lossy(v) * spacing).collect();
            let u2 = y.iter().map(|&v| v * v).sum::<T>() / (eps * eps);
            let w = if u2 < T::one() { (T::one() / (u2 - T::one())).exp() } else { T::zero() };
            // nodes on the sphere itself can land inside by rounding; their weight underflows
            if w > T::zero() {
                offsets.extend_from_slice(&y);
                weights.push(w);
            }
            let mut a = dim;
            loop {
                if a == 0 {
                    let total: T = weights.iter().copied().sum();
                    weights.iter_mut().for_each(|w| *w = *w / total);
                    return Self {
                        eps,
                        spacing,
                        offsets,
                        weights,
                        dim,
                    };
                }
                a -= 1;
                if k[a] < reach {
                    k[a] += 1;
                    break;
                }
                k[a] = -reach;
            }
        }
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offset(&self, k: usize) -> &[T] {
        &self.offsets[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }
}

/// Per-axis partition weights `(low ramp, interior, high ramp)` at coordinate `x` on `[0, l]`
/// with collar `[a/4, a/2]`.
#[inline]
fn axis_partition<T: Real>(x: T, l: T, a: T) -> [T; 3] {
    let q = a * T::lit(0.25);
    let lo = T::one() - smoothstep((x - q) / q);
    let hi = T::one() - smoothstep((l - x - q) / q);
    [lo, T::one() - lo - hi, hi]
}

/// Tensor-product partition of unity attached to the box faces.
#[derive(Clone, Debug)]
pub struct FacePartition<T> {
    extent: Vec<T>,
    margin: T,
}

impl<T: Real> FacePartition<T> {
    pub fn new(dom: &BoxDomain<T>, margin: T) -> Result<Self> {
        if !(margin > T::zero()) || dom.extent().iter().any(|&l| margin > l) {
            return Err(Error::param("margin", "need 0 < a <= min_i L_i"));
        }
        Ok(Self {
            extent: dom.extent().to_vec(),
            margin,
        })
    }

    pub fn pieces(&self) -> usize {
        3usize.pow(self.extent.len() as u32)
    }

    /// `(ψ_s(x), z_s)` for piece `s` (base-3 digits: 0 low face, 1 interior, 2 high face).
    pub fn piece(&self, s: usize, x: &[T]) -> (T, Vec<T>) {
        let d = self.extent.len();
        let mut w = T::one();
        let mut z = vec![T::zero(); d];
        let mut rest = s;
        for a in (0..d).rev() {
            let digit = rest % 3;
            rest /= 3;
            w = w * axis_partition(x[a], self.extent[a], self.margin)[digit];
            z[a] = match digit {
                0 => T::one(),
                2 => -T::one(),
                _ => T::zero(),
            };
        }
        (w, z)
    }

    /// Index of the interior piece `ψ₀`.
    pub fn interior(&self) -> usize {
        (0..self.extent.len()).fold(0, |s, _| s * 3 + 1)
    }
}

fn eps_cap<T: Real>(spec: &TensorSpec<T>, dom: &BoxDomain<T>) -> Result<(T, Option<T>)> {
    let side = dom.extent().iter().fold(T::infinity(), |m, &l| m.min(l)) / T::lit(8.0);
    if dom.is_periodic() {
        return Ok((side, None));
    }
    let a = spec.margin(dom)?;
    Ok((side.min(a * T::lit(0.25)), Some(a)))
}

/// Largest admissible `ε` (exclusive) for `spec` on `dom`.
pub fn eps_limit<T: Real>(spec: &TensorSpec<T>, dom: &BoxDomain<T>) -> Result<T> {
    Ok(eps_cap(spec, dom)?.0)
}

/// Wraps (periodic) or clamps (no-flux) a sample point into `Ω̄`.
#[inline]
fn fold_into<T: Real>(x: &mut [T], extent: &[T], periodic: bool) {
    for (v, &l) in x.iter_mut().zip(extent) {
        if periodic {
            *v = *v - l * (*v / l).floor();
        } else {
            *v = v.max(T::zero()).min(l);
        }
    }
}

/// `D_ε` at cell centers.
pub fn regularize<T: Real>(spec: &TensorSpec<T>, dom: &BoxDomain<T>, eps: T) -> Result<SymTensorField<T>> {
    if dom.dim() != spec.dim() {
        return Err(Error::DomainMismatch);
    }
    let (cap, margin) = eps_cap(spec, dom)?;
    if !(eps > T::zero() && eps < cap) {
        return Err(Error::param("eps", format!("must lie in (0, {cap}), got {eps}")));
    }
    let d = dom.dim();
    let p = packed_len(d);
    let moll = Mollifier::new(dom, eps)?;
    let partition = margin.map(|a| FacePartition::new(dom, a)).transpose()?;
    let periodic = dom.is_periodic();
    let scalar = spec.scalar_factor();

    let mut values = vec![T::zero(); dom.len() * p];
    let mut x = vec![T::zero(); d];
    let mut y = vec![T::zero(); d];
    let mut sample = vec![T::zero(); p];
    let mut conv = vec![T::zero(); p];

    // (η_ε ∗ D)(c) into `conv`
    let mut mollify = |c: &[T], conv: &mut [T]| -> Result<()> {
        conv.iter_mut().for_each(|v| *v = T::zero());
        if let Form::Constant(m) = &spec.form {
            conv.copy_from_slice(m.packed());
            return Ok(());
        }
        if let Some((points, m)) = &scalar {
            let mut acc = T::zero();
            for (k, &w) in moll.weights().iter().enumerate() {
                for a in 0..d {
                    y[a] = c[a] + moll.offset(k)[a];
                }
                fold_into(&mut y, dom.extent(), periodic);
                acc += w * point_weight(points, &y);
            }
            for (o, &v) in conv.iter_mut().zip(m.packed()) {
                *o = acc * v;
            }
            return Ok(());
        }
        for (k, &w) in moll.weights().iter().enumerate() {
            for a in 0..d {
                y[a] = c[a] + moll.offset(k)[a];
            }
            fold_into(&mut y, dom.extent(), periodic);
            spec.eval_packed(&y, &mut sample)?;
            for (o, &v) in conv.iter_mut().zip(&sample) {
                *o += w * v;
            }
        }
        Ok(())
    };

    let mut shifted = vec![T::zero(); d];
    for (cell, out) in values.chunks_exact_mut(p).enumerate() {
        dom.center_into(cell, &mut x);
        match &partition {
            None => {
                mollify(&x, &mut conv)?;
                out.copy_from_slice(&conv);
            }
            Some(part) => {
                for s in 0..part.pieces() {
                    let (w, z) = part.piece(s, &x);
                    if w == T::zero() {
                        continue;
                    }
                    for a in 0..d {
                        shifted[a] = x[a] + eps * z[a];
                    }
                    mollify(&shifted, &mut conv)?;
                    for (o, &v) in out.iter_mut().zip(&conv) {
                        *o += w * v;
                    }
                }
            }
        }
        for i in 0..d {
            out[crate::linalg::packed_index(d, i, i)] += eps;
        }
    }
    SymTensorField::new(dom.clone(), values)
}

/// Outcome of the three regularization guarantees.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularizationReport<T> {
    pub eps: T,
    /// `max ‖D‖` (spectral, cellwise)
    pub sup_d: T,
    /// `max ‖D_ε‖`
    pub sup_d_eps: T,
    /// `‖D_ε‖_∞ ≤ ε + ‖D‖_∞ + 1e−10`
    pub bound_ok: bool,
    /// `min_x min-eig D_ε(x)`
    pub min_eig: T,
    /// `min-eig ≥ ε − 1e−10`
    pub elliptic_ok: bool,
    /// `max_x ‖D_ε(x) − D(x)‖`
    pub distance: T,
}

impl<T: Real> RegularizationReport<T> {
    pub fn passed(&self) -> bool {
        self.bound_ok && self.elliptic_ok
    }
}

pub fn check_regularization<T: Real>(
    d: &SymTensorField<T>,
    d_eps: &SymTensorField<T>,
    eps: T,
) -> Result<RegularizationReport<T>> {
    if !d.domain().same_grid(d_eps.domain()) {
        return Err(Error::DomainMismatch);
    }
    let tol = T::lit(1e-10);
    let sup_d = d.max_spectral_norm();
    let sup_d_eps = d_eps.max_spectral_norm();
    let min_eig = crate::fields::min_eigenvalue_field(d_eps).min_value();
    Ok(RegularizationReport {
        eps,
        sup_d,
        sup_d_eps,
        bound_ok: sup_d_eps <= eps + sup_d + tol,
        min_eig,
        elliptic_ok: min_eig >= eps - tol,
        distance: d.max_distance(d_eps)?,
    })
}

/// `max |∇·D|` (Euclidean norm of the row-wise centered-difference divergence) over cells
/// selected by `mask` that have a full centered stencil.
pub fn divergence_sup<T: Real>(t: &SymTensorField<T>, mask: impl Fn(&[T]) -> bool) -> Result<T> {
    let dom = t.domain();
    let d = dom.dim();
    let h = dom.spacing();
    let mut x = vec![T::zero(); d];
    let mut best: Option<T> = None;
    'cells: for cell in 0..dom.len() {
        dom.center_into(cell, &mut x);
        if !mask(&x) {
            continue;
        }
        let mut nb = Vec::with_capacity(d);
        for j in 0..d {
            match (dom.neighbor(cell, j, 1), dom.neighbor(cell, j, -1)) {
                (Some(p), Some(m)) => nb.push((p, m)),
                _ => continue 'cells,
            }
        }
        let mut norm2 = T::zero();
        for i in 0..d {
            let mut div = T::zero();
            for (j, &(p, m)) in nb.iter().enumerate() {
                let k = crate::linalg::packed_index(d, i, j);
                div += (t.packed_at(p)[k] - t.packed_at(m)[k]) / (T::lit(2.0) * h[j]);
            }
            norm2 += div * div;
        }
        let v = norm2.sqrt();
        best = Some(best.map_or(v, |b: T| b.max(v)));
    }
    best.ok_or(Error::EmptyMask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{min_eigenvalue_field, BoundaryMode};

    fn unit_cube(n: usize) -> BoxDomain<f64> {
        BoxDomain::cube(3, 1.0, n, BoundaryMode::NoFlux).unwrap()
    }

    #[test]
    fn constant_identity_evaluates_everywhere() {
        let dom = unit_cube(5);
        let t = evaluate(&TensorSpec::constant(SymMat::identity(3)).unwrap(), &dom).unwrap();
        for c in 0..dom.len() {
            assert_eq!(t.at(c), SymMat::identity(3));
        }
    }

    #[test]
    fn isotropic_spec_vanishes_at_its_point() {
        let dom = unit_cube(9);
        let spec = TensorSpec::scalar_isotropic(vec![vec![0.5, 0.5, 0.5]]).unwrap();
        let ev = min_eigenvalue_field(&evaluate(&spec, &dom).unwrap());
        let h = 1.0 / 9.0;
        assert!(ev.values()[dom.cell_containing(&[0.5, 0.5, 0.5])] <= h * h * 3.0 / 4.0);
        assert!(ev.min_value() >= 0.0);
    }

    #[test]
    fn product_spec_scales_eigenvalues() {
        let dom = unit_cube(6);
        let spec = TensorSpec::anisotropic_product(vec![vec![0.4, 0.5, 0.6]], SymMat::diagonal(&[1.0, 2.0, 3.0])).unwrap();
        let t = evaluate(&spec, &dom).unwrap();
        for c in 0..dom.len() {
            let x = dom.center(c);
            let phi = x.iter().zip([0.4, 0.5, 0.6]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().min(1.0);
            let ev = t.at(c).eigenvalues();
            for (k, e) in ev.iter().enumerate() {
                assert!((e - phi * (k + 1) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn custom_closures_are_checked() {
        let dom = unit_cube(4);
        let skew = TensorSpec::custom(2, "skew", None, |_x: &[f64]| vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        let dom2 = BoxDomain::cube(2, 1.0, 4, BoundaryMode::NoFlux).unwrap();
        assert!(matches!(evaluate(&skew, &dom2), Err(Error::Asymmetric { .. })));
        let nan = TensorSpec::custom(3, "nan", None, |x: &[f64]| {
            let mut m = vec![0.0; 9];
            m[0] = if x[0] > 0.5 { f64::NAN } else { 1.0 };
            m
        })
        .unwrap();
        assert!(matches!(evaluate(&nan, &dom), Err(Error::NonFinite { .. })));
        assert!(matches!(evaluate(&skew, &dom), Err(Error::DomainMismatch)));
    }

    #[test]
    fn config_kinds_build_specs() {
        let k: TensorKind<f64> = serde_json::from_str(
            r#"{"kind":"anisotropic-product","points":[[0.5,0.5,0.5]],"matrix":[[1,0,0],[0,2,0],[0,0,3]]}"#,
        )
        .unwrap();
        let s = TensorSpec::from_kind(&k, 3).unwrap();
        assert!(s.is_diagonal());
        assert!(s.degeneracy().is_some());
        let bad: TensorKind<f64> = serde_json::from_str(r#"{"kind":"constant","matrix":[[1,0],[0,-1]]}"#).unwrap();
        assert!(TensorSpec::from_kind(&bad, 2).is_err());
    }

    #[test]
    fn margin_checks() {
        let dom = unit_cube(8);
        let spec = TensorSpec::scalar_isotropic(vec![vec![0.3, 0.5, 0.5]]).unwrap();
        assert!((spec.margin(&dom).unwrap() - 0.3).abs() < 1e-15);
        assert!(spec.clone().with_margin(0.4).margin(&dom).is_err());
        assert_eq!(spec.clone().with_margin(0.2).margin(&dom).unwrap(), 0.2);
        let edge = TensorSpec::scalar_isotropic(vec![vec![0.0, 0.5, 0.5]]).unwrap();
        assert!(matches!(edge.margin(&dom), Err(Error::MarginViolated(_))));
        assert!(matches!(regularize(&edge, &dom, 0.01), Err(Error::MarginViolated(_))));
    }

    #[test]
    fn mollifier_has_unit_mass_and_compact_support() {
        let m = Mollifier::with_spacing(3, 0.1, 0.02);
        let total: f64 = m.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for k in 0..m.len() {
            let r: f64 = m.offset(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r <= 0.1);
            assert!(m.weights()[k] > 0.0);
        }
    }

    #[test]
    fn partition_sums_to_one() {
        let dom = BoxDomain::new(vec![1.0, 1.5, 2.0], vec![10, 15, 20], BoundaryMode::NoFlux).unwrap();
        let part = FacePartition::new(&dom, 0.6).unwrap();
        for c in 0..dom.len() {
            let x = dom.center(c);
            let mut sum = 0.0f64;
            for s in 0..part.pieces() {
                let (w, _) = part.piece(s, &x);
                assert!((0.0..=1.0).contains(&w));
                sum += w;
            }
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let deep = [0.5, 0.75, 1.0];
        assert_eq!(part.piece(part.interior(), &deep).0, 1.0);
    }

    #[test]
    fn shifted_balls_stay_inside() {
        let dom = BoxDomain::new(vec![1.0, 1.2, 0.9], vec![18, 20, 16], BoundaryMode::NoFlux).unwrap();
        let a = 0.4;
        let eps = 0.099;
        let part = FacePartition::new(&dom, a).unwrap();
        for c in 0..dom.len() {
            let x = dom.center(c);
            for s in 0..part.pieces() {
                let (w, z) = part.piece(s, &x);
                if w == 0.0 {
                    continue;
                }
                for k in 0..3 {
                    let lo = x[k] + eps * z[k] - eps;
                    let hi = x[k] + eps * z[k] + eps;
                    assert!(lo >= -1e-15 && hi <= dom.extent()[k] + 1e-15, "cell {c} piece {s}");
                }
            }
        }
    }

    #[test]
    fn identity_regularizes_to_shifted_identity() {
        let dom = unit_cube(8);
        let spec = TensorSpec::constant(SymMat::identity(3)).unwrap();
        for eps in [0.1, 0.03] {
            let t = regularize(&spec, &dom, eps).unwrap();
            for c in 0..dom.len() {
                let m = t.at(c);
                for i in 0..3 {
                    for j in 0..3 {
                        let expect = if i == j { 1.0 + eps } else { 0.0 };
                        assert!((m.get(i, j) - expect).abs() < 1e-10);
                    }
                }
            }
            let rep = check_regularization(&evaluate(&spec, &dom).unwrap(), &t, eps).unwrap();
            assert!(rep.passed());
            assert!((rep.distance - eps).abs() < 1e-10);
        }
    }

    #[test]
    fn eps_range_is_enforced() {
        let dom = unit_cube(8);
        let spec = TensorSpec::scalar_isotropic(vec![vec![0.5, 0.5, 0.5]]).unwrap();
        // a = 0.5, cap = min(a/4, 1/8) = 0.125
        assert!((eps_limit(&spec, &dom).unwrap() - 0.125).abs() < 1e-15);
        assert!(regularize(&spec, &dom, 0.125).is_err());
        assert!(regularize(&spec, &dom, 0.0).is_err());
        assert!(regularize(&spec, &dom, 0.12).is_ok());
    }

    #[test]
    fn lowered_ellipticity_is_flagged() {
        let dom = unit_cube(4);
        let d = evaluate(&TensorSpec::constant(SymMat::identity(3)).unwrap(), &dom).unwrap();
        let mut d_eps = SymTensorField::constant(&dom, &SymMat::scaled_identity(3, 1.05));
        d_eps.values_mut()[0] = 0.01;
        let rep = check_regularization(&d, &d_eps, 0.05).unwrap();
        assert!(!rep.elliptic_ok);
        assert!(rep.bound_ok);
    }

    #[test]
    fn divergence_of_linear_tensor() {
        let dom = unit_cube(10);
        let c = SymTensorField::constant(&dom, &SymMat::scaled_identity(3, 2.0));
        assert!(divergence_sup(&c, |_| true).unwrap().abs() < 1e-10);
        let lin = SymTensorField::from_fn(&dom, |x| SymMat::scaled_identity(3, 1.0 + x[0])).unwrap();
        // ∇·((1+x₁)I) = e₁
        assert!((divergence_sup(&lin, |_| true).unwrap() - 1.0).abs() < 1e-8);
        assert!(matches!(divergence_sup(&lin, |_| false), Err(Error::EmptyMask)));
    }

    #[test]
    fn periodic_regularization_needs_no_margin() {
        let dom = BoxDomain::cube(3, 1.0, 8, BoundaryMode::Periodic).unwrap();
        let spec = TensorSpec::scalar_isotropic(vec![vec![0.05, 0.5, 0.5]]).unwrap();
        let t = regularize(&spec, &dom, 0.05).unwrap();
        let rep = check_regularization(&evaluate(&spec, &dom).unwrap(), &t, 0.05).unwrap();
        assert!(rep.passed());
    }
}
