//! Small symmetric matrices in packed upper-triangle storage.

use crate::num::Real;

/// Number of packed entries of a symmetric `d × d` matrix.
#[inline]
pub const fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of `(i, j)` in row-major upper-triangle storage.
#[inline]
pub fn packed_index(d: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // rows 0..i contribute d + (d-1) + ... + (d-i+1) entries
    i * d - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Symmetric matrix, upper triangle stored row by row:
/// `(0,0) (0,1) … (0,d−1) (1,1) … (d−1,d−1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat<T> {
    dim: usize,
    packed: Vec<T>,
}

impl<T: Real> SymMat<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            packed: vec![T::zero(); packed_len(dim)],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, T::one())
    }

    pub fn scaled_identity(dim: usize, s: T) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, s);
        }
        m
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Wraps packed storage; panics on a length mismatch.
    pub fn from_packed(dim: usize, packed: Vec<T>) -> Self {
        assert_eq!(packed.len(), packed_len(dim), "packed length");
        Self { dim, packed }
    }

    /// Builds from a full row-major matrix, returning the largest asymmetry `|a_ij − a_ji|`
    /// alongside the symmetrized result.
    pub fn from_full(dim: usize, full: &[T]) -> (Self, T) {
        assert_eq!(full.len(), dim * dim, "full matrix length");
        let mut m = Self::zeros(dim);
        let mut gap = T::zero();
        for i in 0..dim {
            for j in i..dim {
                let a = full[i * dim + j];
                let b = full[j * dim + i];
                gap = gap.max((a - b).abs());
                m.set(i, j, (a + b) * T::lit(0.5));
            }
        }
        (m, gap)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn packed(&self) -> &[T] {
        &self.packed
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.packed[packed_index(self.dim, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = packed_index(self.dim, i, j);
        self.packed[k] = v;
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            dim: self.dim,
            packed: self.packed.iter().map(|&v| v * s).collect(),
        }
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, &b) in self.packed.iter_mut().zip(&other.packed) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_scaled(-T::one(), other);
        out
    }

    /// Frobenius product `A : B`.
    pub fn frobenius_dot(&self, other: &Self) -> T {
        let d = self.dim;
        let mut acc = T::zero();
        for i in 0..d {
            acc += self.get(i, i) * other.get(i, i);
            for j in i + 1..d {
                acc += T::lit(2.0) * self.get(i, j) * other.get(i, j);
            }
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        self.packed.iter().all(|v| v.is_finite())
    }

    /// Eigenvalues in ascending order (cyclic Jacobi; converges to working precision).
    pub fn eigenvalues(&self) -> Vec<T> {
        let d = self.dim;
        let mut a = vec![T::zero(); d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = self.get(i, j);
            }
        }
        jacobi_eigenvalues(&mut a, d);
        let mut ev: Vec<T> = (0..d).map(|i| a[i * d + i]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }

    pub fn min_eigenvalue(&self) -> T {
        if self.dim == 1 {
            return self.packed[0];
        }
        if self.is_diagonal() {
            return (0..self.dim).map(|i| self.get(i, i)).fold(T::infinity(), T::min);
        }
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> T {
        if self.dim == 1 {
            return self.packed[0];
        }
        if self.is_diagonal() {
            return (0..self.dim).map(|i| self.get(i, i)).fold(T::neg_infinity(), T::max);
        }
        *self.eigenvalues().last().expect("dim >= 1")
    }

    /// Spectral norm, i.e. the largest eigenvalue modulus.
    pub fn spectral_norm(&self) -> T {
        if self.is_diagonal() {
            return (0..self.dim).map(|i| self.get(i, i).abs()).fold(T::zero(), T::max);
        }
        self.eigenvalues().iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| (i + 1..d).all(|j| self.get(i, j) == T::zero()))
    }
}

fn jacobi_eigenvalues<T: Real>(a: &mut [T], d: usize) {
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() {
        return;
    }
    let tiny = T::epsilon() * T::epsilon() * scale * scale;
    for _sweep in 0..64 {
        let mut off = T::zero();
        for i in 0..d {
            for j in i + 1..d {
                off += a[i * d + j] * a[i * d + j];
            }
        }
        if off <= tiny {
            return;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let t = if theta == T::zero() { T::one() } else { t };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                a[p * d + q] = T::zero();
                a[q * d + p] = T::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_layout_is_row_major_upper_triangle() {
        let d = 4;
        let mut expect = 0;
        for i in 0..d {
            for j in i..d {
                assert_eq!(packed_index(d, i, j), expect);
                assert_eq!(packed_index(d, j, i), expect);
                expect += 1;
            }
        }
        assert_eq!(expect, packed_len(d));
    }

    #[test]
    fn eigenvalues_of_known_matrices() {
        let m = SymMat::diagonal(&[2.0, 0.0, 1.0]);
        assert_eq!(m.min_eigenvalue(), 0.0);
        // [[2,1],[1,2]] -> {1, 3}
        let m = SymMat::<f64>::from_packed(2, vec![2.0, 1.0, 2.0]);
        let ev = m.eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
        // 3x3 with known spectrum {1, 2, 4}: rotate diag by a Householder reflector
        let v = [1.0f64 / 3.0f64.sqrt(); 3];
        let diag = [1.0, 2.0, 4.0];
        let mut full = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                // Q = I - 2 v v^T, A = Q diag Q
                let mut acc = 0.0;
                for k in 0..3 {
                    let qik = if i == k { 1.0 } else { 0.0 } - 2.0 * v[i] * v[k];
                    let qkj = if k == j { 1.0 } else { 0.0 } - 2.0 * v[k] * v[j];
                    acc += qik * diag[k] * qkj;
                }
                full[i * 3 + j] = acc;
            }
        }
        let (m, gap) = SymMat::from_full(3, &full);
        assert!(gap < 1e-15);
        let ev = m.eigenvalues();
        for (a, b) in ev.iter().zip(diag) {
            assert!((a - b).abs() < 1e-13 * 4.0, "{ev:?}");
        }
        assert!((m.spectral_norm() - 4.0).abs() < 1e-13);
    }

    #[test]
    fn frobenius_product_counts_off_diagonals_twice() {
        let a = SymMat::from_packed(2, vec![1.0, 2.0, 3.0]);
        let b = SymMat::from_packed(2, vec![4.0, 5.0, 6.0]);
        assert_eq!(a.frobenius_dot(&b), 4.0 + 2.0 * 10.0 + 18.0);
    }
}
