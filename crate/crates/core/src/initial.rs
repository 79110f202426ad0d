//! Initial densities.

use serde::{Deserialize, Serialize};

use crate::fields::{BoxDomain, ScalarField};
use crate::num::{smoothstep, Real};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition<T> {
    Constant {
        value: T,
    },
    /// `A · (1 + cos(π|x − x₀|/R))/2` inside `B_R(x₀)`, zero outside.
    CosineBump {
        center: Vec<T>,
        radius: T,
        amplitude: T,
    },
    /// `b + A · exp(−|x − x₀|²/(2w²))`
    Gaussian {
        center: Vec<T>,
        width: T,
        amplitude: T,
        #[serde(default)]
        background: T,
    },
    /// `A · Π_i s((x_i − lo_i)/w + 1/2) · s((hi_i − x_i)/w + 1/2)` with a quintic step `s`.
    SmoothedIndicator {
        lo: Vec<T>,
        hi: Vec<T>,
        width: T,
        amplitude: T,
    },
    /// `b + A sin(2π k x_axis / L_axis)`
    SineMode {
        base: T,
        amplitude: T,
        axis: usize,
        wavenumber: u32,
    },
}

impl<T: Real> InitialCondition<T> {
    pub fn name(&self) -> &'static str {
        match self {
            InitialCondition::Constant { .. } => "constant",
            InitialCondition::CosineBump { .. } => "cosine-bump",
            InitialCondition::Gaussian { .. } => "gaussian",
            InitialCondition::SmoothedIndicator { .. } => "smoothed-indicator",
            InitialCondition::SineMode { .. } => "sine-mode",
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        let ok = match self {
            InitialCondition::Constant { .. } => true,
            InitialCondition::CosineBump { center, .. } | InitialCondition::Gaussian { center, .. } => center.len() == d,
            InitialCondition::SmoothedIndicator { lo, hi, .. } => lo.len() == d && hi.len() == d,
            InitialCondition::SineMode { axis, .. } => *axis < d,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("initial", format!("does not match dimension {d}")))
        }
    }

    /// Samples at cell centers; rejects negative values.
    pub fn sample(&self, dom: &BoxDomain<T>) -> Result<ScalarField<T>> {
        self.check_dim(dom.dim())?;
        let half = T::lit(0.5);
        let f = ScalarField::from_fn(dom, |x| match self {
            InitialCondition::Constant { value } => *value,
            InitialCondition::CosineBump { center, radius, amplitude } => {
                let r = dist(x, center);
                if r < *radius {
                    *amplitude * half * (T::one() + (T::PI() * r / *radius).cos())
                } else {
                    T::zero()
                }
            }
            InitialCondition::Gaussian {
                center,
                width,
                amplitude,
                background,
            } => {
                let r = dist(x, center);
                *background + *amplitude * (-(r * r) / (T::lit(2.0) * *width * *width)).exp()
            }
            InitialCondition::SmoothedIndicator { lo, hi, width, amplitude } => {
                let mut v = *amplitude;
                for k in 0..x.len() {
                    v = v * smoothstep((x[k] - lo[k]) / *width + half) * smoothstep((hi[k] - x[k]) / *width + half);
                }
                v
            }
            InitialCondition::SineMode {
                base,
                amplitude,
                axis,
                wavenumber,
            } => {
                let l = dom.extent()[*axis];
                *base + *amplitude * (T::TAU() * T::lit(*wavenumber as f64) * x[*axis] / l).sin()
            }
        })?;
        if let Some(cell) = f.values().iter().position(|&v| v < T::zero()) {
            return Err(Error::param("initial", format!("negative density at cell {cell}")));
        }
        Ok(f)
    }
}

fn dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum::<T>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::BoundaryMode;

    #[test]
    fn shapes() {
        let dom = BoxDomain::cube(3, 2.0, 8, BoundaryMode::NoFlux).unwrap();
        let bump = InitialCondition::CosineBump {
            center: vec![1.0; 3],
            radius: 0.5,
            amplitude: 2.0,
        };
        let f = bump.sample(&dom).unwrap();
        assert!(f.max_value() <= 2.0 && f.min_value() == 0.0);
        let sine = InitialCondition::SineMode {
            base: 0.5,
            amplitude: 0.75,
            axis: 0,
            wavenumber: 1,
        };
        assert!(sine.sample(&dom).is_err());
        let ind = InitialCondition::SmoothedIndicator {
            lo: vec![0.5; 3],
            hi: vec![1.5; 3],
            width: 0.25,
            amplitude: 1.0,
        };
        let f = ind.sample(&dom).unwrap();
        assert_eq!(f.values()[dom.cell_containing(&[1.0, 1.0, 1.0])], 1.0);
        assert_eq!(f.values()[0], 0.0);
        let bad = InitialCondition::Gaussian {
            center: vec![1.0; 2],
            width: 0.3,
            amplitude: 1.0,
            background: 0.0,
        };
        assert!(bad.sample(&dom).is_err());
    }
}
