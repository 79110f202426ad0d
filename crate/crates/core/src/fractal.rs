//! Compact sets, lattice box counting, upper box dimension and the lattice cutoff family
//!
//! ```text
//! Z_δ(K) = { b ∈ δℤ^d : |x − b|_∞ ≤ δ/2 for some x ∈ K }
//! dim(K) = lim sup_{δ→0} log₂|Z_δ(K)| / log₂ δ⁻¹
//! φ_δ(x) = Σ_{z ∈ δℤ^d ∩ O_{3δ√d}(K)} η̂(|x−z|/(δ√d)) / Σ_{z ∈ δℤ^d} η̂(|x−z|/(δ√d))
//! ```

use std::collections::HashSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::fields::{BoxDomain, ScalarField};
use crate::linalg::SymMat;
use crate::num::{smoothstep, Real};
use crate::{Error, Result};

/// Upper bound on lattice nodes visited by a single box count.
pub const DEFAULT_BUDGET: u64 = 200_000_000;

/// Bounded closed subset of `ℝ^d` with an exact distance oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CompactSet<T> {
    FinitePoints { points: Vec<Vec<T>> },
    /// Closed segment `[start, end]`.
    Segment { start: Vec<T>, end: Vec<T> },
    /// The `2^depth` closed intervals of the middle-thirds construction of
    /// `origin + [0, length]·e_axis`.
    Cantor { origin: Vec<T>, axis: usize, length: T, depth: u32 },
    /// Axis-aligned box `[lo, hi]`; degenerate axes give lower-dimensional patches.
    Patch { lo: Vec<T>, hi: Vec<T> },
}

fn finite_vec<T: Real>(name: &'static str, v: &[T]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::param(name, "coordinates must be finite and nonempty"));
    }
    Ok(())
}

impl<T: Real> CompactSet<T> {
    pub fn points(points: Vec<Vec<T>>) -> Result<Self> {
        let s = CompactSet::FinitePoints { points };
        s.validate()?;
        Ok(s)
    }

    pub fn single_point(p: Vec<T>) -> Result<Self> {
        Self::points(vec![p])
    }

    pub fn segment(start: Vec<T>, end: Vec<T>) -> Result<Self> {
        let s = CompactSet::Segment { start, end };
        s.validate()?;
        Ok(s)
    }

    pub fn cantor(origin: Vec<T>, axis: usize, length: T, depth: u32) -> Result<Self> {
        let s = CompactSet::Cantor { origin, axis, length, depth };
        s.validate()?;
        Ok(s)
    }

    pub fn patch(lo: Vec<T>, hi: Vec<T>) -> Result<Self> {
        let s = CompactSet::Patch { lo, hi };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CompactSet::FinitePoints { points } => {
                let first = points.first().ok_or_else(|| Error::param("points", "set is empty"))?;
                for p in points {
                    finite_vec("points", p)?;
                    if p.len() != first.len() {
                        return Err(Error::param("points", "points differ in dimension"));
                    }
                }
            }
            CompactSet::Segment { start, end } => {
                finite_vec("start", start)?;
                finite_vec("end", end)?;
                if start.len() != end.len() {
                    return Err(Error::param("end", "endpoints differ in dimension"));
                }
            }
            CompactSet::Cantor { origin, axis, length, depth } => {
                finite_vec("origin", origin)?;
                if *axis >= origin.len() {
                    return Err(Error::param("axis", format!("axis {axis} out of range")));
                }
                if !length.is_finite() || *length <= T::zero() {
                    return Err(Error::param("length", "must be finite and positive"));
                }
                if *depth > 24 {
                    return Err(Error::param("depth", "at most 24"));
                }
            }
            CompactSet::Patch { lo, hi } => {
                finite_vec("lo", lo)?;
                finite_vec("hi", hi)?;
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| a > b) {
                    return Err(Error::param("hi", "need lo <= hi componentwise"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            CompactSet::FinitePoints { points } => points[0].len(),
            CompactSet::Segment { start, .. } => start.len(),
            CompactSet::Cantor { origin, .. } => origin.len(),
            CompactSet::Patch { lo, .. } => lo.len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CompactSet::FinitePoints { .. } => "finite-points",
            CompactSet::Segment { .. } => "segment",
            CompactSet::Cantor { .. } => "cantor",
            CompactSet::Patch { .. } => "patch",
        }
    }

    /// The point list of a finite set.
    pub fn finite_points(&self) -> Option<&[Vec<T>]> {
        match self {
            CompactSet::FinitePoints { points } => Some(points),
            _ => None,
        }
    }

    /// Closed intervals `[a, b]` along the Cantor axis, in absolute coordinates, ascending.
    fn cantor_intervals(origin: T, length: T, depth: u32) -> Vec<(T, T)> {
        let third = T::one() / T::lit(3.0);
        let w = length * third.powi(depth as i32);
        (0..1u64 << depth)
            .map(|bits| {
                let mut s = T::zero();
                let mut scale = length * T::lit(2.0) * third;
                for k in (0..depth).rev() {
                    if bits >> k & 1 == 1 {
                        s += scale;
                    }
                    scale = scale * third;
                }
                (origin + s, origin + s + w)
            })
            .collect()
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: &[T]) -> T {
        match self {
            CompactSet::FinitePoints { points } => points
                .iter()
                .map(|p| dist2(p, x))
                .fold(T::infinity(), T::min)
                .sqrt(),
            CompactSet::Segment { start, end } => {
                let mut dd = T::zero();
                let mut dx = T::zero();
                for k in 0..x.len() {
                    let e = end[k] - start[k];
                    dd += e * e;
                    dx += e * (x[k] - start[k]);
                }
                let t = if dd > T::zero() {
                    (dx / dd).max(T::zero()).min(T::one())
                } else {
                    T::zero()
                };
                let mut r2 = T::zero();
                for k in 0..x.len() {
                    let v = x[k] - (start[k] + t * (end[k] - start[k]));
                    r2 += v * v;
                }
                r2.sqrt()
            }
            CompactSet::Cantor { origin, axis, length, depth } => {
                let mut r2 = T::zero();
                for k in 0..x.len() {
                    if k != *axis {
                        r2 += (x[k] - origin[k]) * (x[k] - origin[k]);
                    }
                }
                let xa = x[*axis];
                let along = Self::cantor_intervals(origin[*axis], *length, *depth)
                    .into_iter()
                    .map(|(a, b)| if xa < a { a - xa } else if xa > b { xa - b } else { T::zero() })
                    .fold(T::infinity(), T::min);
                (r2 + along * along).sqrt()
            }
            CompactSet::Patch { lo, hi } => {
                let mut r2 = T::zero();
                for k in 0..x.len() {
                    let v = if x[k] < lo[k] {
                        lo[k] - x[k]
                    } else if x[k] > hi[k] {
                        x[k] - hi[k]
                    } else {
                        T::zero()
                    };
                    r2 += v * v;
                }
                r2.sqrt()
            }
        }
    }

    /// Smallest axis-aligned box containing the set.
    pub fn bounding_box(&self) -> (Vec<T>, Vec<T>) {
        let pts = self.extreme_points();
        let d = self.dim();
        let mut lo = vec![T::infinity(); d];
        let mut hi = vec![T::neg_infinity(); d];
        for p in &pts {
            for k in 0..d {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }

    /// Points of the set whose convex hull contains it. Concave functions (such as the
    /// distance to a box boundary) attain their minimum over the set at one of these.
    pub fn extreme_points(&self) -> Vec<Vec<T>> {
        match self {
            CompactSet::FinitePoints { points } => points.clone(),
            CompactSet::Segment { start, end } => vec![start.clone(), end.clone()],
            CompactSet::Cantor { origin, axis, length, .. } => {
                let mut b = origin.clone();
                b[*axis] += *length;
                vec![origin.clone(), b]
            }
            CompactSet::Patch { lo, hi } => {
                let d = lo.len();
                (0..1usize << d)
                    .map(|mask| (0..d).map(|k| if mask >> k & 1 == 1 { hi[k] } else { lo[k] }).collect())
                    .collect()
            }
        }
    }

    /// `dist(K, ∂Ω)` for a set inside the box; negative if some point lies outside.
    pub fn distance_to_boundary(&self, dom: &BoxDomain<T>) -> T {
        self.extreme_points()
            .iter()
            .map(|p| dom.distance_to_boundary(p))
            .fold(T::infinity(), T::min)
    }
}

#[inline]
fn dist2<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum()
}

/// Lattice indices `k` with `|x − kδ| ≤ δ/2`.
#[inline]
fn hit_range<T: Real>(x: T, delta: T) -> (i64, i64) {
    let u = x / delta;
    let half = T::lit(0.5);
    (
        (u - half).ceil().to_i64().unwrap_or(i64::MIN),
        (u + half).floor().to_i64().unwrap_or(i64::MAX),
    )
}

#[inline]
fn range_len(r: (i64, i64)) -> u64 {
    if r.1 >= r.0 {
        (r.1 - r.0 + 1) as u64
    } else {
        0
    }
}

struct Budget {
    left: u64,
}

impl Budget {
    fn spend(&mut self, n: u64) -> Result<()> {
        if n > self.left {
            return Err(Error::BudgetExceeded(
                "box count exceeds the lattice enumeration budget".into(),
            ));
        }
        self.left -= n;
        Ok(())
    }
}

/// `|Z_δ(K)|`, closed cubes (ties counted inclusively).
pub fn box_count<T: Real>(set: &CompactSet<T>, delta: T) -> Result<u64> {
    box_count_with_budget(set, delta, DEFAULT_BUDGET)
}

pub fn box_count_with_budget<T: Real>(set: &CompactSet<T>, delta: T, budget: u64) -> Result<u64> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::param("delta", format!("must be positive, got {delta}")));
    }
    set.validate()?;
    let mut budget = Budget { left: budget };
    let d = set.dim();
    match set {
        CompactSet::FinitePoints { points } => {
            let mut hit: HashSet<Vec<i64>> = HashSet::new();
            for p in points {
                let ranges: Vec<(i64, i64)> = p.iter().map(|&x| hit_range(x, delta)).collect();
                let n: u64 = ranges.iter().map(|&r| range_len(r)).product();
                budget.spend(n)?;
                let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
                'odo: loop {
                    hit.insert(k.clone());
                    let mut a = d;
                    loop {
                        if a == 0 {
                            break 'odo;
                        }
                        a -= 1;
                        if k[a] < ranges[a].1 {
                            k[a] += 1;
                            break;
                        }
                        k[a] = ranges[a].0;
                    }
                }
            }
            Ok(hit.len() as u64)
        }
        CompactSet::Segment { start, end } => {
            let dir: Vec<T> = start.iter().zip(end).map(|(&a, &b)| b - a).collect();
            let mut count = 0u64;
            segment_boxes(start, &dir, delta, 0, T::zero(), T::one(), &mut count, &mut budget)?;
            Ok(count)
        }
        CompactSet::Cantor { origin, axis, length, depth } => {
            let mut transverse = 1u64;
            for (k, &x) in origin.iter().enumerate() {
                if k != *axis {
                    transverse *= range_len(hit_range(x, delta));
                }
            }
            // union of index ranges along the axis; intervals are sorted
            let mut along = 0u64;
            let mut last = i64::MIN;
            for (a, b) in CompactSet::cantor_intervals(origin[*axis], *length, *depth) {
                budget.spend(1)?;
                let lo = hit_range(a, delta).0.max(last.saturating_add(1));
                let hi = hit_range(b, delta).1;
                if hi >= lo {
                    along += (hi - lo + 1) as u64;
                    last = hi;
                }
            }
            Ok(along * transverse)
        }
        CompactSet::Patch { lo, hi } => Ok(lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| range_len((hit_range(a, delta).0, hit_range(b, delta).1)))
            .product()),
    }
}

/// Recursive slab clipping of the parametrized segment `start + t·dir`, `t ∈ [t0, t1]`.
#[allow(clippy::too_many_arguments)]
fn segment_boxes<T: Real>(
    start: &[T],
    dir: &[T],
    delta: T,
    axis: usize,
    t0: T,
    t1: T,
    count: &mut u64,
    budget: &mut Budget,
) -> Result<()> {
    if axis == start.len() {
        *count += 1;
        return Ok(());
    }
    let a = start[axis] + t0 * dir[axis];
    let b = start[axis] + t1 * dir[axis];
    let (lo, hi) = (hit_range(a.min(b), delta).0, hit_range(a.max(b), delta).1);
    budget.spend(range_len((lo, hi)))?;
    let half = delta * T::lit(0.5);
    for k in lo..=hi {
        let c = T::lit(k as f64) * delta;
        let (s0, s1) = if dir[axis] == T::zero() {
            if (start[axis] - c).abs() <= half {
                (t0, t1)
            } else {
                continue;
            }
        } else {
            let p = (c - half - start[axis]) / dir[axis];
            let q = (c + half - start[axis]) / dir[axis];
            (t0.max(p.min(q)), t1.min(p.max(q)))
        };
        if s0 <= s1 {
            segment_boxes(start, dir, delta, axis + 1, s0, s1, count, budget)?;
        }
    }
    Ok(())
}

/// `δ = 2^{−k}` for `k = k_min..=k_max`, coarsest first.
pub fn dyadic_schedule<T: Real>(k_min: i32, k_max: i32) -> Vec<T> {
    (k_min..=k_max).map(|k| T::lit(2.0).powi(-k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleCount<T> {
    pub delta: T,
    pub count: u64,
    /// `log₂|Z_δ| / log₂ δ⁻¹`
    pub ratio: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxDimEstimate<T> {
    /// Coarsest scale first.
    pub scales: Vec<ScaleCount<T>>,
    /// Least-squares slope of `log₂|Z_δ|` against `log₂ δ⁻¹` over the finest half of the
    /// schedule.
    pub estimate: T,
}

/// Finite-scale surrogate for the upper box dimension.
pub fn upper_box_dim<T: Real>(set: &CompactSet<T>, schedule: &[T]) -> Result<BoxDimEstimate<T>> {
    if schedule.len() < 4 {
        return Err(Error::param("schedule", format!("need at least 4 scales, got {}", schedule.len())));
    }
    if schedule.iter().any(|&s| !(s > T::zero() && s < T::one())) {
        return Err(Error::param("schedule", "scales must lie in (0, 1)"));
    }
    let mut deltas = schedule.to_vec();
    deltas.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut scales = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let count = box_count(set, delta)?;
        let lx = -delta.log2();
        let ly = T::from_u64(count).unwrap_or(T::max_value()).log2();
        scales.push(ScaleCount { delta, count, ratio: ly / lx });
    }
    let fine = &scales[scales.len() - scales.len().div_ceil(2)..];
    let xs: Vec<T> = fine.iter().map(|s| -s.delta.log2()).collect();
    let ys: Vec<T> = fine
        .iter()
        .map(|s| T::from_u64(s.count).unwrap_or(T::max_value()).log2())
        .collect();
    Ok(BoxDimEstimate {
        estimate: ls_slope(&xs, &ys),
        scales,
    })
}

fn ls_slope<T: Real>(xs: &[T], ys: &[T]) -> T {
    let n = T::from_usize_lossy(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

/// Reasons a dimension/exponent combination falls outside the admissible regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimGate {
    /// `d < 3`
    SpaceDimension,
    /// `r < 2`
    ExponentBelowTwo,
    /// `r ≤ d/(d−2)`
    ExponentNotSupercritical,
    /// `dim ≥ d − 2r/(r−1)`
    SetTooLarge,
}

impl fmt::Display for DimGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DimGate::SpaceDimension => "d < 3",
            DimGate::ExponentBelowTwo => "r < 2",
            DimGate::ExponentNotSupercritical => "r ≤ d/(d−2)",
            DimGate::SetTooLarge => "dim ≥ d − 2r/(r−1)",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimCondition<T> {
    /// `d − 2r/(r−1)`
    pub threshold: T,
    pub admissible: bool,
    pub failed: Vec<DimGate>,
}

/// Admissibility of a degeneracy set of (estimated) dimension `estimate` for exponent `r`
/// in dimension `d`: `d ≥ 3`, `r ≥ 2`, `r > d/(d−2)` and `estimate < d − 2r/(r−1)`.
pub fn dim_condition<T: Real>(estimate: T, d: usize, r: T) -> DimCondition<T> {
    let dt = T::from_usize_lossy(d);
    let two = T::lit(2.0);
    let threshold = if r > T::one() {
        dt - two * r / (r - T::one())
    } else {
        T::neg_infinity()
    };
    let mut failed = Vec::new();
    if d < 3 {
        failed.push(DimGate::SpaceDimension);
    }
    if !(r >= two) {
        failed.push(DimGate::ExponentBelowTwo);
    }
    if d <= 2 || !(r > dt / (dt - two)) {
        failed.push(DimGate::ExponentNotSupercritical);
    }
    if !(estimate < threshold) {
        failed.push(DimGate::SetTooLarge);
    }
    DimCondition {
        threshold,
        admissible: failed.is_empty(),
        failed,
    }
}

/// Transition profile: 1 on `[0, 1]`, 0 on `[2, ∞)`, quintic in between (C²).
#[inline]
pub fn transition<T: Real>(s: T) -> T {
    T::one() - smoothstep(s - T::one())
}

/// Dense boolean mask of lattice nodes `δℤ^d ∩ O_{3δ√d}(K)`.
#[derive(Clone, Debug)]
struct ActiveLattice {
    lo: Vec<i64>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    mask: Vec<bool>,
    count: usize,
}

/// `φ_δ` for a fixed scale.
#[derive(Clone, Debug)]
pub struct CutoffFamily<T> {
    delta: T,
    set: CompactSet<T>,
    /// `δ√d`
    unit: T,
    active: ActiveLattice,
}

/// Per-evaluation breakdown of `φ_δ(x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffParts<T> {
    pub numerator: T,
    pub denominator: T,
    /// Lattice nodes with nonzero bump.
    pub terms: usize,
}

impl<T: Real> CutoffParts<T> {
    pub fn value(&self) -> T {
        self.numerator / self.denominator
    }
}

/// Builds `φ_δ` for `K`; precomputes the active lattice nodes `dist(z, K) < 3δ√d`.
pub fn build_cutoff<T: Real>(set: &CompactSet<T>, delta: T) -> Result<CutoffFamily<T>> {
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::param("delta", format!("must lie in (0, 1), got {delta}")));
    }
    set.validate()?;
    let d = set.dim();
    let unit = delta * T::from_usize_lossy(d).sqrt();
    let reach = T::lit(3.0) * unit;
    let (blo, bhi) = set.bounding_box();
    let lo: Vec<i64> = blo
        .iter()
        .map(|&x| ((x - reach) / delta).floor().to_i64().unwrap_or(0))
        .collect();
    let hi: Vec<i64> = bhi
        .iter()
        .map(|&x| ((x + reach) / delta).ceil().to_i64().unwrap_or(0))
        .collect();
    let shape: Vec<usize> = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1) as usize).collect();
    let total = shape.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let total = match total {
        Some(t) if (t as u64) <= DEFAULT_BUDGET => t,
        _ => {
            return Err(Error::BudgetExceeded(
                "active lattice of the cutoff exceeds the enumeration budget".into(),
            ))
        }
    };
    let mut strides = vec![1usize; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    let mut mask = vec![false; total];
    let mut z = vec![T::zero(); d];
    let mut idx = vec![0usize; d];
    let mut count = 0;
    for (flat, m) in mask.iter_mut().enumerate() {
        let mut rem = flat;
        for a in 0..d {
            idx[a] = rem / strides[a];
            rem %= strides[a];
            z[a] = T::lit((lo[a] + idx[a] as i64) as f64) * delta;
        }
        if set.distance(&z) < reach {
            *m = true;
            count += 1;
        }
    }
    Ok(CutoffFamily {
        delta,
        set: set.clone(),
        unit,
        active: ActiveLattice {
            lo,
            shape,
            strides,
            mask,
            count,
        },
    })
}

impl<T: Real> CutoffFamily<T> {
    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn set(&self) -> &CompactSet<T> {
        &self.set
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    /// Number of lattice nodes in `O_{3δ√d}(K)`.
    pub fn active_nodes(&self) -> usize {
        self.active.count
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.parts(x).value()
    }

    /// Numerator and denominator summed over the same lattice loop, so `φ = 1` exactly where
    /// every contributing node is active.
    pub fn parts(&self, x: &[T]) -> CutoffParts<T> {
        let mut acc = CutoffParts {
            numerator: T::zero(),
            denominator: T::zero(),
            terms: 0,
        };
        let r2 = T::lit(4.0) * self.unit * self.unit;
        self.visit(x, 0, T::zero(), Some(0), r2, &mut acc);
        acc
    }

    fn visit(&self, x: &[T], axis: usize, partial: T, mask_at: Option<usize>, r2: T, acc: &mut CutoffParts<T>) {
        if axis == x.len() {
            let b = transition(partial.sqrt() / self.unit);
            if b > T::zero() {
                acc.denominator += b;
                acc.terms += 1;
                if mask_at.is_some_and(|m| self.active.mask[m]) {
                    acc.numerator += b;
                }
            }
            return;
        }
        let reach = T::lit(2.0) * self.unit;
        let lo = ((x[axis] - reach) / self.delta).ceil().to_i64().unwrap_or(0);
        let hi = ((x[axis] + reach) / self.delta).floor().to_i64().unwrap_or(0);
        for k in lo..=hi {
            let diff = x[axis] - T::lit(k as f64) * self.delta;
            let p = partial + diff * diff;
            if p >= r2 {
                continue;
            }
            let rel = k - self.active.lo[axis];
            let next = match mask_at {
                Some(m) if rel >= 0 && (rel as usize) < self.active.shape[axis] => {
                    Some(m + rel as usize * self.active.strides[axis])
                }
                _ => None,
            };
            self.visit(x, axis + 1, p, next, r2, acc);
        }
    }

    /// `φ_δ` at the cell centers of `dom`.
    pub fn sample_on(&self, dom: &BoxDomain<T>) -> Result<ScalarField<T>> {
        if dom.dim() != self.dim() {
            return Err(Error::DomainMismatch);
        }
        ScalarField::from_fn(dom, |x| self.eval(x))
    }

    /// Central finite-difference gradient and Hessian with step `s`.
    pub fn fd_derivatives(&self, x: &[T], s: T) -> (Vec<T>, SymMat<T>) {
        let d = x.len();
        let mut y = x.to_vec();
        let f0 = self.eval(x);
        let mut grad = vec![T::zero(); d];
        let mut hess = SymMat::zeros(d);
        let two = T::lit(2.0);
        for i in 0..d {
            y[i] = x[i] + s;
            let fp = self.eval(&y);
            y[i] = x[i] - s;
            let fm = self.eval(&y);
            y[i] = x[i];
            grad[i] = (fp - fm) / (two * s);
            hess.set(i, i, (fp - two * f0 + fm) / (s * s));
            for j in i + 1..d {
                let mut corner = |si: T, sj: T| {
                    y[i] = x[i] + si;
                    y[j] = x[j] + sj;
                    let v = self.eval(&y);
                    y[i] = x[i];
                    y[j] = x[j];
                    v
                };
                let v = corner(s, s) - corner(s, -s) - corner(-s, s) + corner(-s, -s);
                hess.set(i, j, v / (T::lit(4.0) * s * s));
            }
        }
        (grad, hess)
    }
}

/// `|B(0, 3√d) ∩ ℤ^d|`, the per-evaluation bound on contributing lattice nodes.
pub fn locality_bound(d: usize) -> usize {
    let r2 = 9 * d as i64;
    let r = (r2 as f64).sqrt().floor() as i64;
    let mut k = vec![-r; d];
    let mut count = 0;
    loop {
        if k.iter().map(|v| v * v).sum::<i64>() <= r2 {
            count += 1;
        }
        let mut a = d;
        loop {
            if a == 0 {
                return count;
            }
            a -= 1;
            if k[a] < r {
                k[a] += 1;
                break;
            }
            k[a] = -r;
        }
    }
}

/// Knobs of [`verify_cutoff`]; spacings are in units of `δ`.
#[derive(Clone, Debug)]
pub struct CutoffCheckOptions<T> {
    /// Spacing of the probe lattice for range, plateau, support and derivative checks.
    pub sample_spacing: T,
    /// Finite-difference step.
    pub fd_step: T,
    /// Cells per `δ` of the support quadrature grid.
    pub support_resolution: usize,
    /// Random points for the denominator bound.
    pub denominator_samples: usize,
    /// Distances from `K` of the fixed decay probes.
    pub probe_distances: Vec<T>,
    pub seed: u64,
    /// Largest acceptable max/min ratio of the scaled derivative columns.
    pub derivative_ratio_limit: T,
}

impl<T: Real> Default for CutoffCheckOptions<T> {
    fn default() -> Self {
        Self {
            sample_spacing: T::lit(0.5),
            fd_step: T::lit(1.0 / 64.0),
            support_resolution: 4,
            denominator_samples: 100_000,
            probe_distances: vec![T::lit(0.1), T::lit(0.2), T::lit(0.4)],
            seed: 0x5eed,
            derivative_ratio_limit: T::lit(3.0),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CutoffRow<T> {
    pub delta: T,
    /// `0 ≤ φ ≤ 1` at every sample
    pub range_ok: bool,
    /// `φ = 1` wherever `dist(x, K) < δ√d`
    pub plateau_ok: bool,
    /// `φ = 0` wherever `dist(x, K) ≥ 5δ√d`
    pub support_ok: bool,
    /// `sup|∇φ_δ|·δ`
    pub grad_scaled: T,
    /// `sup|D²φ_δ|·δ²` (spectral norm)
    pub hess_scaled: T,
    /// `|{φ_δ ≠ 0}|` by grid quadrature
    pub support_measure: T,
    /// `δ^{−2r/(r−1)}·|{φ_δ ≠ 0}|`
    pub key_limit: T,
    pub max_terms: usize,
    pub min_denominator: T,
    /// `φ_δ` at the fixed decay probes
    pub probes: Vec<T>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CutoffReport<T> {
    pub r: T,
    /// Finest scale last.
    pub rows: Vec<CutoffRow<T>>,
    pub probe_distances: Vec<T>,
    pub locality_bound: usize,
    pub grad_ratio: T,
    pub hess_ratio: T,
    pub derivatives_stable: bool,
    pub key_limit_decreasing: bool,
    pub locality_ok: bool,
    pub denominators_ok: bool,
    pub decay_ok: bool,
}

impl<T: Real> CutoffReport<T> {
    pub fn exact_properties_ok(&self) -> bool {
        self.rows.iter().all(|r| r.range_ok && r.plateau_ok && r.support_ok)
    }

    pub fn passed(&self) -> bool {
        self.exact_properties_ok()
            && self.derivatives_stable
            && self.key_limit_decreasing
            && self.locality_ok
            && self.denominators_ok
            && self.decay_ok
    }
}

fn grid_points<T: Real>(lo: &[T], hi: &[T], step: T, half_offset: bool, budget: usize) -> Result<Vec<Vec<T>>> {
    let d = lo.len();
    let counts: Vec<usize> = lo
        .iter()
        .zip(hi)
        .map(|(&a, &b)| {
            let n = ((b - a) / step).floor().to_usize().unwrap_or(0);
            if half_offset {
                n.max(1)
            } else {
                n + 1
            }
        })
        .collect();
    let total = counts.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
    let total = match total {
        Some(t) if t <= budget => t,
        _ => return Err(Error::BudgetExceeded("cutoff sample grid too large".into())),
    };
    let shift = if half_offset { T::lit(0.5) } else { T::zero() };
    let mut out = Vec::with_capacity(total);
    let mut k = vec![0usize; d];
    for _ in 0..total {
        out.push((0..d).map(|a| lo[a] + (T::from_usize_lossy(k[a]) + shift) * step).collect());
        let mut a = d;
        while a > 0 {
            a -= 1;
            k[a] += 1;
            if k[a] < counts[a] {
                break;
            }
            k[a] = 0;
        }
    }
    Ok(out)
}

/// Checks the cutoff properties over a schedule of scales (coarsest first in the report).
pub fn verify_cutoff<T: Real>(
    set: &CompactSet<T>,
    r: T,
    schedule: &[T],
    opts: &CutoffCheckOptions<T>,
) -> Result<CutoffReport<T>> {
    if schedule.is_empty() {
        return Err(Error::param("schedule", "empty"));
    }
    if !(r > T::one()) {
        return Err(Error::param("r", format!("need r > 1, got {r}")));
    }
    let d = set.dim();
    let sqrt_d = T::from_usize_lossy(d).sqrt();
    let exponent = T::lit(2.0) * r / (r - T::one());
    let bound = locality_bound(d);
    let (blo, bhi) = set.bounding_box();
    let mut deltas = schedule.to_vec();
    deltas.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));

    let probes: Vec<Vec<T>> = opts
        .probe_distances
        .iter()
        .map(|&rho| bhi.iter().map(|&x| x + rho / sqrt_d).collect())
        .collect();
    let probe_dist: Vec<T> = probes.iter().map(|p| set.distance(p)).collect();
    let mut rng = rand::rngs::StdRng::seed_from_u64(opts.seed);

    let mut rows = Vec::with_capacity(deltas.len());
    for &delta in &deltas {
        let phi = build_cutoff(set, delta)?;
        let unit = delta * sqrt_d;
        let mut row = CutoffRow {
            delta,
            range_ok: true,
            plateau_ok: true,
            support_ok: true,
            grad_scaled: T::zero(),
            hess_scaled: T::zero(),
            support_measure: T::zero(),
            key_limit: T::zero(),
            max_terms: 0,
            min_denominator: T::infinity(),
            probes: Vec::new(),
        };

        let pad = T::lit(6.0) * unit;
        let lo: Vec<T> = blo.iter().map(|&x| x - pad).collect();
        let hi: Vec<T> = bhi.iter().map(|&x| x + pad).collect();
        for x in grid_points(&lo, &hi, opts.sample_spacing * delta, false, 20_000_000)? {
            let parts = phi.parts(&x);
            let v = parts.value();
            row.max_terms = row.max_terms.max(parts.terms);
            if !(v >= T::zero() && v <= T::one()) {
                row.range_ok = false;
            }
            let dist = set.distance(&x);
            if dist < unit {
                row.plateau_ok &= v == T::one();
            } else if dist >= T::lit(5.0) * unit {
                row.support_ok &= v == T::zero();
            } else {
                let (g, h) = phi.fd_derivatives(&x, opts.fd_step * delta);
                let gn = g.iter().map(|&v| v * v).sum::<T>().sqrt();
                row.grad_scaled = row.grad_scaled.max(gn * delta);
                row.hess_scaled = row.hess_scaled.max(h.spectral_norm() * delta * delta);
            }
        }

        let cell = delta / T::from_usize_lossy(opts.support_resolution);
        let pad = T::lit(5.0) * unit;
        let lo: Vec<T> = blo.iter().map(|&x| x - pad).collect();
        let hi: Vec<T> = bhi.iter().map(|&x| x + pad).collect();
        let cells = grid_points(&lo, &hi, cell, true, 50_000_000)?;
        let nonzero = cells.iter().filter(|x| phi.parts(x).numerator > T::zero()).count();
        row.support_measure = T::from_usize_lossy(nonzero) * cell.powi(d as i32);
        row.key_limit = delta.powf(-exponent) * row.support_measure;

        let pad = T::lit(6.0) * unit;
        for _ in 0..opts.denominator_samples {
            let x: Vec<T> = (0..d)
                .map(|a| {
                    let u = T::lit(rng.gen::<f64>());
                    blo[a] - pad + u * (bhi[a] - blo[a] + T::lit(2.0) * pad)
                })
                .collect();
            let parts = phi.parts(&x);
            row.min_denominator = row.min_denominator.min(parts.denominator);
            row.max_terms = row.max_terms.max(parts.terms);
        }
        row.probes = probes.iter().map(|p| phi.eval(p)).collect();
        rows.push(row);
    }

    let ratio = |f: &dyn Fn(&CutoffRow<T>) -> T| {
        let max = rows.iter().map(f).fold(T::neg_infinity(), T::max);
        let min = rows.iter().map(f).fold(T::infinity(), T::min);
        max / min
    };
    let grad_ratio = ratio(&|r| r.grad_scaled);
    let hess_ratio = ratio(&|r| r.hess_scaled);
    let key_limit_decreasing = rows.windows(2).all(|w| w[1].key_limit < w[0].key_limit);
    let decay_ok = rows.iter().all(|row| {
        row.probes
            .iter()
            .zip(&probe_dist)
            .all(|(&v, &dist)| dist < T::lit(5.0) * row.delta * sqrt_d || v == T::zero())
    });
    Ok(CutoffReport {
        r,
        locality_ok: rows.iter().all(|r| r.max_terms <= bound),
        denominators_ok: rows.iter().all(|r| r.min_denominator >= T::one()),
        derivatives_stable: grad_ratio <= opts.derivative_ratio_limit && hess_ratio <= opts.derivative_ratio_limit,
        grad_ratio,
        hess_ratio,
        key_limit_decreasing,
        decay_ok,
        probe_distances: probe_dist,
        locality_bound: bound,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_count(points: &[Vec<f64>], delta: f64) -> usize {
        // all lattice nodes in the bounding box, tested against the ∞-norm condition
        let d = points[0].len();
        let mut hit = HashSet::new();
        for p in points {
            let lo: Vec<i64> = p.iter().map(|x| (x / delta).floor() as i64 - 2).collect();
            let mut k = lo.clone();
            loop {
                if (0..d).all(|a| (p[a] - k[a] as f64 * delta).abs() <= delta / 2.0) {
                    hit.insert(k.clone());
                }
                let mut a = d;
                let mut done = true;
                while a > 0 {
                    a -= 1;
                    if k[a] < lo[a] + 4 {
                        k[a] += 1;
                        done = false;
                        break;
                    }
                    k[a] = lo[a];
                }
                if done {
                    break;
                }
            }
        }
        hit.len()
    }

    #[test]
    fn single_generic_point_hits_one_box() {
        let k = CompactSet::single_point(vec![0.37, 0.51, 0.23]).unwrap();
        assert_eq!(box_count(&k, 0.1).unwrap(), 1);
        assert_eq!(brute_count(&[vec![0.37, 0.51, 0.23]], 0.1), 1);
    }

    #[test]
    fn tie_points_count_inclusively() {
        // x = 0.25 with δ = 0.5 is equidistant to 0 and 0.5
        let k = CompactSet::single_point(vec![0.25, 0.1]).unwrap();
        assert_eq!(box_count(&k, 0.5).unwrap(), 2);
    }

    #[test]
    fn finite_sets_match_brute_force_and_twice_n() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..25).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let k = CompactSet::points(pts.clone()).unwrap();
        for delta in [0.25, 0.1, 1.0 / 64.0, 1e-3] {
            let c = box_count(&k, delta).unwrap();
            assert_eq!(c as usize, brute_count(&pts, delta));
            if delta <= 1.0 / 64.0 {
                assert_eq!(c, 25);
            }
            assert!(c <= 2 * 25 || delta > 0.05);
        }
    }

    #[test]
    fn unit_segment_count() {
        let k = CompactSet::segment(vec![0.0, 0.3, 0.7], vec![1.0, 0.3, 0.7]).unwrap();
        let c = box_count(&k, 1.0 / 32.0).unwrap();
        assert!((33..=68).contains(&c), "{c}");
        let c_fine = box_count(&k, 1.0 / 1024.0).unwrap() as f64 / 1024.0;
        assert!((c_fine - 1.0).abs() < 0.01);
    }

    #[test]
    fn diagonal_segment_matches_sampled_cover() {
        // dense sampling of the segment, each sample's hit boxes, gives a lower bound that
        // converges to the exact count
        let a = [0.11, 0.23, 0.05];
        let b = [0.87, 0.61, 0.93];
        let k = CompactSet::segment(a.to_vec(), b.to_vec()).unwrap();
        let delta = 1.0 / 16.0;
        let samples: Vec<Vec<f64>> = (0..=20000)
            .map(|i| {
                let t = i as f64 / 20000.0;
                (0..3).map(|j| a[j] + t * (b[j] - a[j])).collect()
            })
            .collect();
        let sampled = CompactSet::points(samples).unwrap();
        assert_eq!(box_count(&k, delta).unwrap(), box_count(&sampled, delta).unwrap());
    }

    #[test]
    fn cantor_count_matches_sampled_endpoints() {
        let k = CompactSet::cantor(vec![0.0, 0.4, 0.6], 0, 1.0, 6).unwrap();
        let CompactSet::Cantor { origin, axis, length, depth } = &k else { unreachable!() };
        let ivs = CompactSet::cantor_intervals(origin[*axis], *length, *depth);
        assert_eq!(ivs.len(), 64);
        for delta in [1.0 / 8.0, 1.0 / 64.0, 1.0 / 512.0, 1.0 / 4096.0] {
            let mut pts = Vec::new();
            for &(a, b) in &ivs {
                for i in 0..=50 {
                    pts.push(vec![a + (b - a) * i as f64 / 50.0, 0.4, 0.6]);
                }
            }
            let sampled = CompactSet::points(pts).unwrap();
            assert_eq!(box_count(&k, delta).unwrap(), box_count(&sampled, delta).unwrap(), "δ={delta}");
        }
    }

    #[test]
    fn dimension_estimates() {
        let sched = dyadic_schedule::<f64>(1, 8);
        let p = CompactSet::single_point(vec![0.37, 0.51, 0.23]).unwrap();
        let s = CompactSet::segment(vec![0.0, 0.3, 0.7], vec![1.0, 0.3, 0.7]).unwrap();
        let q = CompactSet::patch(vec![0.0, 0.0, 0.5], vec![1.0, 1.0, 0.5]).unwrap();
        let c = CompactSet::cantor(vec![0.0, 0.3, 0.7], 0, 1.0, 8).unwrap();
        let ep = upper_box_dim(&p, &sched).unwrap().estimate;
        let es = upper_box_dim(&s, &sched).unwrap().estimate;
        let eq = upper_box_dim(&q, &sched).unwrap().estimate;
        let ec = upper_box_dim(&c, &sched).unwrap().estimate;
        assert!(ep <= 0.05);
        assert!((es - 1.0).abs() <= 0.15);
        assert!((eq - 2.0).abs() <= 0.15);
        assert!((ec - 2f64.ln() / 3f64.ln()).abs() <= 0.1, "{ec}");
        assert!(ep < es && es < eq);
    }

    #[test]
    fn schedule_validation() {
        let p = CompactSet::single_point(vec![0.5, 0.5]).unwrap();
        assert!(upper_box_dim(&p, &dyadic_schedule::<f64>(1, 3)).is_err());
        assert!(upper_box_dim(&p, &[1.0, 0.5, 0.25, 0.125]).is_err());
        assert!(box_count(&p, 0.0).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let q = CompactSet::segment(vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(box_count_with_budget(&q, 1e-3, 100), Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn admissibility_gate_arithmetic() {
        let c = dim_condition(0.0f64, 3, 4.0);
        assert!((c.threshold - 1.0 / 3.0).abs() < 1e-15);
        assert!(c.admissible);
        let c = dim_condition(0.0, 3, 3.0);
        assert!(!c.admissible);
        // threshold 0 here, so the strict inequality fails as well
        assert!(c.failed.contains(&DimGate::ExponentNotSupercritical));
        assert_eq!(dim_condition(-1.0, 3, 3.0).failed, vec![DimGate::ExponentNotSupercritical]);
        let c = dim_condition(1.0, 5, 2.0);
        assert_eq!(c.threshold, 1.0);
        assert!(!c.admissible);
        assert_eq!(c.failed, vec![DimGate::SetTooLarge]);
        assert!(dim_condition(0.0, 2, 4.0).failed.contains(&DimGate::SpaceDimension));
        assert!(dim_condition(0.0, 4, 1.5).failed.contains(&DimGate::ExponentBelowTwo));
    }

    #[test]
    fn distance_oracles() {
        let s = CompactSet::<f64>::segment(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!((s.distance(&[0.5, 0.3]) - 0.3).abs() < 1e-15);
        assert!((s.distance(&[-0.3, 0.4]) - 0.5).abs() < 1e-15);
        let c = CompactSet::<f64>::cantor(vec![0.0, 0.0], 0, 1.0, 1).unwrap();
        assert!((c.distance(&[0.5, 0.0]) - 1.0 / 6.0).abs() < 1e-15);
        let q = CompactSet::patch(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!((q.distance(&[2.0, 1.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cutoff_plateau_and_support() {
        let k = CompactSet::single_point(vec![0.37, 0.51, 0.23]).unwrap();
        let delta = 1.0 / 16.0;
        let phi = build_cutoff(&k, delta).unwrap();
        assert_eq!(phi.eval(&[0.37, 0.51, 0.23]), 1.0);
        let unit = delta * 3f64.sqrt();
        assert_eq!(phi.eval(&[0.37 + 5.0 * unit, 0.51, 0.23]), 0.0);
        assert!(build_cutoff(&k, 1.0).is_err());
        assert!(build_cutoff(&k, 0.0).is_err());
    }

    #[test]
    fn locality_constant() {
        // |B(0,3) ∩ ℤ| = 7
        assert_eq!(locality_bound(1), 7);
        assert!(locality_bound(3) > 500);
    }

    #[test]
    fn transition_profile() {
        assert_eq!(transition(0.5), 1.0);
        assert_eq!(transition(1.0), 1.0);
        assert_eq!(transition(2.0), 0.0);
        assert_eq!(transition(7.0), 0.0);
        assert!((transition(1.5f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn set_config_round_trip() {
        let k = CompactSet::points(vec![vec![0.5, 0.5, 0.5]]).unwrap();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(s, r#"{"kind":"finite-points","points":[[0.5,0.5,0.5]]}"#);
        let back: CompactSet<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
        assert!(serde_json::from_str::<CompactSet<f64>>(r#"{"kind":"segment","start":[0],"end":[1],"x":1}"#).is_err());
    }
}
