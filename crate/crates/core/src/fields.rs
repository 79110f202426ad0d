//! Box grids and cell-centered fields.
//!
//! Lengths are in sensing-radius units: the adhesion integration ball has radius 1.
//! Values are stored row-major (last axis fastest). Integrals use the midpoint rule,
//! i.e. `Σ f_cell · Π h_i`.

use serde::{Deserialize, Serialize};

use crate::linalg::{packed_len, SymMat};
use crate::num::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    NoFlux,
    Periodic,
}

impl BoundaryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryMode::NoFlux => "no-flux",
            BoundaryMode::Periodic => "periodic",
        }
    }
}

/// Axis-aligned box `Π (0, L_i)` split into `Π n_i` equal cells.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain<T> {
    extent: Vec<T>,
    cells: Vec<usize>,
    spacing: Vec<T>,
    strides: Vec<usize>,
    boundary: BoundaryMode,
}

impl<T: Real> BoxDomain<T> {
    pub fn new(extent: Vec<T>, cells: Vec<usize>, boundary: BoundaryMode) -> Result<Self> {
        if extent.is_empty() {
            return Err(Error::InvalidDomain("dimension must be at least 1".into()));
        }
        if extent.len() != cells.len() {
            return Err(Error::InvalidDomain(format!(
                "{} extents for {} cell counts",
                extent.len(),
                cells.len()
            )));
        }
        if let Some(n) = cells.iter().find(|&&n| n < 3) {
            return Err(Error::InvalidDomain(format!("cell count {n} < 3")));
        }
        if extent.iter().any(|l| !(l.is_finite() && *l > T::zero())) {
            return Err(Error::InvalidDomain("extents must be positive and finite".into()));
        }
        let spacing: Vec<T> = extent
            .iter()
            .zip(&cells)
            .map(|(&l, &n)| l / T::from_usize_lossy(n))
            .collect();
        let mut strides = vec![1; cells.len()];
        for k in (0..cells.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * cells[k + 1];
        }
        Ok(Self {
            extent,
            cells,
            spacing,
            strides,
            boundary,
        })
    }

    /// Cube `(0, length)^dim` with `n` cells per axis.
    pub fn cube(dim: usize, length: T, n: usize, boundary: BoundaryMode) -> Result<Self> {
        Self::new(vec![length; dim], vec![n; dim], boundary)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.cells.len()
    }
    #[inline]
    pub fn extent(&self) -> &[T] {
        &self.extent
    }
    #[inline]
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
    #[inline]
    pub fn spacing(&self) -> &[T] {
        &self.spacing
    }
    #[inline]
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }
    #[inline]
    pub fn boundary(&self) -> BoundaryMode {
        self.boundary
    }
    #[inline]
    pub fn is_periodic(&self) -> bool {
        self.boundary == BoundaryMode::Periodic
    }

    /// Total number of cells.
    #[inline]
    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> T {
        self.spacing.iter().fold(T::one(), |acc, &h| acc * h)
    }

    pub fn volume(&self) -> T {
        self.extent.iter().fold(T::one(), |acc, &l| acc * l)
    }

    pub fn min_spacing(&self) -> T {
        self.spacing.iter().fold(T::infinity(), |m, &h| m.min(h))
    }

    pub fn max_spacing(&self) -> T {
        self.spacing.iter().fold(T::zero(), |m, &h| m.max(h))
    }

    /// Same cells, extents and boundary treatment.
    pub fn same_grid(&self, other: &Self) -> bool {
        self == other
    }

    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    #[inline]
    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for k in 0..self.dim() {
            out[k] = flat / self.strides[k];
            flat %= self.strides[k];
        }
    }

    /// Center of cell `flat` written into `x`.
    #[inline]
    pub fn center_into(&self, flat: usize, x: &mut [T]) {
        let mut rem = flat;
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            x[k] = (T::from_usize_lossy(i) + T::lit(0.5)) * self.spacing[k];
        }
    }

    pub fn center(&self, flat: usize) -> Vec<T> {
        let mut x = vec![T::zero(); self.dim()];
        self.center_into(flat, &mut x);
        x
    }

    /// Neighbor along `axis` shifted by `offset` cells; wraps in periodic mode and
    /// returns `None` outside the box otherwise.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, offset: isize) -> Option<usize> {
        let n = self.cells[axis] as isize;
        let i = ((flat / self.strides[axis]) % self.cells[axis]) as isize;
        let j = i + offset;
        let j = if (0..n).contains(&j) {
            j
        } else if self.is_periodic() {
            j.rem_euclid(n)
        } else {
            return None;
        };
        Some((flat as isize + (j - i) * self.strides[axis] as isize) as usize)
    }

    /// Cell containing `x` (clamped onto the grid).
    pub fn cell_containing(&self, x: &[T]) -> usize {
        let mut flat = 0;
        for k in 0..self.dim() {
            let i = (x[k] / self.spacing[k]).floor().to_isize().unwrap_or(0);
            let i = i.clamp(0, self.cells[k] as isize - 1) as usize;
            flat += i * self.strides[k];
        }
        flat
    }

    /// Euclidean distance from `x` to the box boundary `∂Ω`.
    pub fn distance_to_boundary(&self, x: &[T]) -> T {
        x.iter()
            .zip(&self.extent)
            .map(|(&xi, &l)| xi.min(l - xi))
            .fold(T::infinity(), T::min)
    }

    /// Domain with every axis refined by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(
            self.extent.clone(),
            self.cells.iter().map(|n| n * factor).collect(),
            self.boundary,
        )
    }
}

fn check_finite<T: Real>(values: &[T], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite { what, cell: i }),
        None => Ok(()),
    }
}

/// One value per cell center.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    domain: BoxDomain<T>,
    values: Vec<T>,
}

impl<T: Real> ScalarField<T> {
    pub fn new(domain: BoxDomain<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidDomain(format!(
                "{} values for {} cells",
                values.len(),
                domain.len()
            )));
        }
        check_finite(&values, "scalar value")?;
        Ok(Self { domain, values })
    }

    pub fn zeros(domain: &BoxDomain<T>) -> Self {
        Self::constant(domain, T::zero())
    }

    pub fn constant(domain: &BoxDomain<T>, v: T) -> Self {
        Self {
            values: vec![v; domain.len()],
            domain: domain.clone(),
        }
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(domain: &BoxDomain<T>, mut f: impl FnMut(&[T]) -> T) -> Result<Self> {
        let mut x = vec![T::zero(); domain.dim()];
        let values = (0..domain.len())
            .map(|i| {
                domain.center_into(i, &mut x);
                f(&x)
            })
            .collect();
        Self::new(domain.clone(), values)
    }

    #[inline]
    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }
    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }
    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            domain: self.domain.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `α·self + β·other`
    pub fn lin_comb(&self, alpha: T, other: &Self, beta: T) -> Result<Self> {
        if !self.domain.same_grid(&other.domain) {
            return Err(Error::DomainMismatch);
        }
        Ok(Self {
            domain: self.domain.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| alpha * a + beta * b)
                .collect(),
        })
    }

    /// Midpoint quadrature `Σ f · Π h_i`.
    pub fn integrate(&self) -> T {
        integrate_values(&self.domain, &self.values)
    }

    /// `(∫|f|^p)^{1/p}`, or `max |f|` for `p = ∞`.
    pub fn lp_norm(&self, p: T) -> Result<T> {
        lp_norm_values(&self.domain, &self.values, p)
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> T {
        self.values.iter().fold(T::infinity(), |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> T {
        self.values.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
    }

    /// Average of `2^d` children onto a grid coarser by a factor 2 per axis.
    pub fn restrict_to(&self, coarse: &BoxDomain<T>) -> Result<Self> {
        let d = coarse.dim();
        if d != self.domain.dim()
            || coarse.boundary() != self.domain.boundary()
            || coarse
                .cells()
                .iter()
                .zip(self.domain.cells())
                .any(|(c, f)| 2 * c != *f)
        {
            return Err(Error::DomainMismatch);
        }
        let mut out = vec![T::zero(); coarse.len()];
        let mut idx = vec![0; d];
        for (f, &v) in self.values.iter().enumerate() {
            self.domain.multi_index(f, &mut idx);
            for i in idx.iter_mut() {
                *i /= 2;
            }
            out[coarse.flat_index(&idx)] += v;
        }
        let w = T::one() / T::from_usize_lossy(1 << d);
        for v in out.iter_mut() {
            *v *= w;
        }
        ScalarField::new(coarse.clone(), out)
    }
}

pub(crate) fn integrate_values<T: Real>(domain: &BoxDomain<T>, values: &[T]) -> T {
    let mut acc = T::zero();
    for &v in values {
        acc += v;
    }
    acc * domain.cell_volume()
}

pub(crate) fn lp_norm_values<T: Real>(domain: &BoxDomain<T>, values: &[T], p: T) -> Result<T> {
    if p.is_nan() || p < T::one() {
        return Err(Error::param("p", format!("L^p exponent must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(T::zero(), |m, v| m.max(v.abs())));
    }
    let mut acc = T::zero();
    if p == T::one() {
        for v in values {
            acc += v.abs();
        }
        return Ok(acc * domain.cell_volume());
    }
    for v in values {
        acc += v.abs().powf(p);
    }
    Ok((acc * domain.cell_volume()).powf(T::one() / p))
}

/// `d` values per cell center, interleaved (`values[cell·d + k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    domain: BoxDomain<T>,
    values: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn new(domain: BoxDomain<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != domain.len() * domain.dim() {
            return Err(Error::InvalidDomain(format!(
                "{} components for {} cells in dimension {}",
                values.len(),
                domain.len(),
                domain.dim()
            )));
        }
        check_finite(&values, "vector component")?;
        Ok(Self { domain, values })
    }

    pub fn zeros(domain: &BoxDomain<T>) -> Self {
        Self {
            values: vec![T::zero(); domain.len() * domain.dim()],
            domain: domain.clone(),
        }
    }

    #[inline]
    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }
    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }
    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, cell: usize) -> &[T] {
        let d = self.domain.dim();
        &self.values[cell * d..(cell + 1) * d]
    }

    /// Largest Euclidean norm over cells.
    pub fn max_norm(&self) -> T {
        let d = self.domain.dim();
        self.values
            .chunks_exact(d)
            .map(|v| v.iter().map(|&x| x * x).sum::<T>().sqrt())
            .fold(T::zero(), T::max)
    }

    /// Largest componentwise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if !self.domain.same_grid(&other.domain) {
            return Err(Error::DomainMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }
}

/// Symmetric `d × d` matrix per cell in packed upper-triangle storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField<T> {
    domain: BoxDomain<T>,
    values: Vec<T>,
}

impl<T: Real> SymTensorField<T> {
    pub fn new(domain: BoxDomain<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != domain.len() * packed_len(domain.dim()) {
            return Err(Error::InvalidDomain(format!(
                "{} tensor entries for {} cells",
                values.len(),
                domain.len()
            )));
        }
        check_finite(&values, "tensor entry")?;
        Ok(Self { domain, values })
    }

    pub fn from_fn(domain: &BoxDomain<T>, mut f: impl FnMut(&[T]) -> SymMat<T>) -> Result<Self> {
        let p = packed_len(domain.dim());
        let mut values = Vec::with_capacity(domain.len() * p);
        let mut x = vec![T::zero(); domain.dim()];
        for i in 0..domain.len() {
            domain.center_into(i, &mut x);
            let m = f(&x);
            if m.dim() != domain.dim() {
                return Err(Error::InvalidDomain("tensor dimension differs from grid".into()));
            }
            values.extend_from_slice(m.packed());
        }
        Self::new(domain.clone(), values)
    }

    pub fn constant(domain: &BoxDomain<T>, m: &SymMat<T>) -> Self {
        let mut values = Vec::with_capacity(domain.len() * m.packed().len());
        for _ in 0..domain.len() {
            values.extend_from_slice(m.packed());
        }
        Self {
            domain: domain.clone(),
            values,
        }
    }

    #[inline]
    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }
    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }
    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn packed_at(&self, cell: usize) -> &[T] {
        let p = packed_len(self.domain.dim());
        &self.values[cell * p..(cell + 1) * p]
    }

    pub fn at(&self, cell: usize) -> SymMat<T> {
        SymMat::from_packed(self.domain.dim(), self.packed_at(cell).to_vec())
    }

    /// Entry `(i, j)` at every cell, as a scalar field.
    pub fn component(&self, i: usize, j: usize) -> ScalarField<T> {
        let d = self.domain.dim();
        let k = crate::linalg::packed_index(d, i, j);
        let p = packed_len(d);
        ScalarField {
            domain: self.domain.clone(),
            values: (0..self.domain.len()).map(|c| self.values[c * p + k]).collect(),
        }
    }

    /// True when every off-diagonal entry is exactly zero.
    pub fn is_diagonal(&self) -> bool {
        let d = self.domain.dim();
        let p = packed_len(d);
        let offdiag: Vec<usize> = (0..d)
            .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
            .map(|(i, j)| crate::linalg::packed_index(d, i, j))
            .collect();
        self.values
            .chunks_exact(p)
            .all(|m| offdiag.iter().all(|&k| m[k] == T::zero()))
    }

    /// Largest cellwise spectral norm.
    pub fn max_spectral_norm(&self) -> T {
        (0..self.domain.len())
            .map(|c| self.at(c).spectral_norm())
            .fold(T::zero(), T::max)
    }

    pub fn max_eigenvalue(&self) -> T {
        (0..self.domain.len())
            .map(|c| self.at(c).max_eigenvalue())
            .fold(T::neg_infinity(), T::max)
    }

    /// Largest cellwise spectral norm of `self − other`.
    pub fn max_distance(&self, other: &Self) -> Result<T> {
        if !self.domain.same_grid(&other.domain) {
            return Err(Error::DomainMismatch);
        }
        Ok((0..self.domain.len())
            .map(|c| self.at(c).sub(&other.at(c)).spectral_norm())
            .fold(T::zero(), T::max))
    }
}

/// Cellwise smallest eigenvalue.
pub fn min_eigenvalue_field<T: Real>(t: &SymTensorField<T>) -> ScalarField<T> {
    let values = (0..t.domain().len()).map(|c| t.at(c).min_eigenvalue()).collect();
    ScalarField {
        domain: t.domain().clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_cube(n: usize) -> BoxDomain<f64> {
        BoxDomain::cube(3, 1.0, n, BoundaryMode::NoFlux).unwrap()
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(BoxDomain::<f64>::new(vec![1.0], vec![2], BoundaryMode::NoFlux).is_err());
        assert!(BoxDomain::<f64>::new(vec![0.0], vec![4], BoundaryMode::NoFlux).is_err());
        assert!(BoxDomain::<f64>::new(vec![1.0, 1.0], vec![4], BoundaryMode::NoFlux).is_err());
    }

    #[test]
    fn integrate_examples() {
        let dom = unit_cube(8);
        assert_eq!(ScalarField::zeros(&dom).integrate(), 0.0);
        assert!((ScalarField::constant(&dom, 1.0).integrate() - 1.0).abs() < 1e-12);
        let dom = unit_cube(16);
        let f = ScalarField::from_fn(&dom, |x| x[0]).unwrap();
        assert!((f.integrate() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lp_norm_examples() {
        let dom = unit_cube(8);
        let one = ScalarField::constant(&dom, 1.0);
        assert!((one.lp_norm(7.0).unwrap() - 1.0).abs() < 1e-12);
        let m2 = ScalarField::constant(&dom, -2.0);
        assert!((m2.lp_norm(1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(m2.lp_norm(f64::INFINITY).unwrap(), 2.0);
        assert!(one.lp_norm(0.5).is_err());

        let per = BoxDomain::cube(3, 1.0, 64, BoundaryMode::Periodic).unwrap();
        let s = ScalarField::from_fn(&per, |x| (2.0 * std::f64::consts::PI * x[0]).sin()).unwrap();
        assert!((s.lp_norm(2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn min_eigenvalue_examples() {
        let dom = unit_cube(4);
        let id = SymTensorField::constant(&dom, &SymMat::identity(3));
        assert!(min_eigenvalue_field(&id).values().iter().all(|&v| v == 1.0));
        let dg = SymTensorField::constant(&dom, &SymMat::diagonal(&[2.0, 0.0, 1.0]));
        assert!(min_eigenvalue_field(&dg).values().iter().all(|&v| v == 0.0));

        let dom = unit_cube(9);
        let x0 = [0.5, 0.5, 0.5];
        let t = SymTensorField::from_fn(&dom, |x| {
            let r2: f64 = x.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum();
            SymMat::scaled_identity(3, r2)
        })
        .unwrap();
        let ev = min_eigenvalue_field(&t);
        let center = dom.cell_containing(&x0);
        let h = dom.spacing()[0];
        assert!(ev.values()[center] <= h * h);
    }

    #[test]
    fn neighbors_wrap_only_when_periodic() {
        let nf = unit_cube(4);
        assert_eq!(nf.neighbor(0, 0, -1), None);
        assert_eq!(nf.neighbor(0, 2, 1), Some(1));
        let per = BoxDomain::cube(3, 1.0, 4, BoundaryMode::Periodic).unwrap();
        assert_eq!(per.neighbor(0, 2, -1), Some(3));
        assert_eq!(per.neighbor(0, 0, -1), Some(48));
    }

    #[test]
    fn restriction_preserves_integral() {
        let fine = unit_cube(8);
        let coarse = unit_cube(4);
        let f = ScalarField::from_fn(&fine, |x| x[0] * x[1] + x[2].sin()).unwrap();
        let r = f.restrict_to(&coarse).unwrap();
        assert!((r.integrate() - f.integrate()).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn integrate_is_linear(
            a in -3.0f64..3.0, b in -3.0f64..3.0,
            f in prop::collection::vec(-10.0f64..10.0, 64),
            g in prop::collection::vec(-10.0f64..10.0, 64),
        ) {
            let dom = BoxDomain::cube(3, 2.0, 4, BoundaryMode::NoFlux).unwrap();
            let f = ScalarField::new(dom.clone(), f).unwrap();
            let g = ScalarField::new(dom, g).unwrap();
            let lhs = f.lin_comb(a, &g, b).unwrap().integrate();
            let rhs = a * f.integrate() + b * g.integrate();
            let scale = f.lp_norm(1.0).unwrap() * a.abs() + g.lp_norm(1.0).unwrap() * b.abs();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1e-300));
        }

        #[test]
        fn lp_norm_triangle_inequality(
            p in 1.0f64..8.0,
            f in prop::collection::vec(-10.0f64..10.0, 27),
            g in prop::collection::vec(-10.0f64..10.0, 27),
        ) {
            let dom = BoxDomain::cube(3, 1.0, 3, BoundaryMode::Periodic).unwrap();
            let f = ScalarField::new(dom.clone(), f).unwrap();
            let g = ScalarField::new(dom, g).unwrap();
            let s = f.lin_comb(1.0, &g, 1.0).unwrap();
            let lhs = s.lp_norm(p).unwrap();
            let rhs = f.lp_norm(p).unwrap() + g.lp_norm(p).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }

        #[test]
        fn min_eigenvalue_below_diagonal(entries in prop::collection::vec(-5.0f64..5.0, 6 * 27)) {
            let dom = BoxDomain::cube(3, 1.0, 3, BoundaryMode::NoFlux).unwrap();
            let t = SymTensorField::new(dom, entries).unwrap();
            let ev = min_eigenvalue_field(&t);
            for c in 0..27 {
                let m = t.at(c);
                for i in 0..3 {
                    prop_assert!(ev.values()[c] <= m.get(i, i) + 1e-12);
                }
            }
        }
    }
}
