//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar usable throughout the crate (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + FftNum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("integer representable")
    }

    #[inline]
    fn from_isize_lossy(n: isize) -> Self {
        Self::from_isize(n).expect("integer representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Lebesgue measure of the unit ball in `R^d`.
pub fn unit_ball_volume<T: Real>(d: usize) -> T {
    // V_0 = 1, V_1 = 2, V_d = V_{d-2} 2π/d
    let mut v = if d % 2 == 0 { T::one() } else { T::lit(2.0) };
    let mut k = if d % 2 == 0 { 2 } else { 3 };
    while k <= d {
        v = v * T::lit(2.0) * T::PI() / T::from_usize_lossy(k);
        k += 2;
    }
    v
}

/// Surface measure of the unit sphere `S^{d-1}`.
pub fn unit_sphere_area<T: Real>(d: usize) -> T {
    unit_ball_volume::<T>(d) * T::from_usize_lossy(d)
}

/// Quintic smoothstep `6u⁵ − 15u⁴ + 10u³` clamped to `[0, 1]` (C² at both ends).
#[inline]
pub fn smoothstep<T: Real>(u: T) -> T {
    if u <= T::zero() {
        T::zero()
    } else if u >= T::one() {
        T::one()
    } else {
        u * u * u * (T::lit(10.0) + u * (T::lit(-15.0) + T::lit(6.0) * u))
    }
}

#[inline]
pub fn smoothstep_d1<T: Real>(u: T) -> T {
    if u <= T::zero() || u >= T::one() {
        T::zero()
    } else {
        let w = u * (T::one() - u);
        T::lit(30.0) * w * w
    }
}

#[inline]
pub fn smoothstep_d2<T: Real>(u: T) -> T {
    if u <= T::zero() || u >= T::one() {
        T::zero()
    } else {
        T::lit(60.0) * u * (T::one() - u) * (T::one() - T::lit(2.0) * u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume::<f64>(1) - 2.0).abs() < 1e-15);
        assert!((unit_ball_volume::<f64>(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume::<f64>(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume::<f64>(4) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn smoothstep_derivatives_match_differences() {
        let h = 1e-6;
        for i in 1..20 {
            let u = i as f64 / 20.0;
            let fd1 = (smoothstep(u + h) - smoothstep(u - h)) / (2.0 * h);
            let fd2 = (smoothstep_d1(u + h) - smoothstep_d1(u - h)) / (2.0 * h);
            assert!((fd1 - smoothstep_d1(u)).abs() < 1e-8);
            assert!((fd2 - smoothstep_d2(u)).abs() < 1e-7);
        }
        assert_eq!(smoothstep(0.0f64), 0.0);
        assert_eq!(smoothstep(1.0f64), 1.0);
    }
}
