//! Nonlocal adhesion operator
//!
//! ```text
//! A u(x) = 1/|B₁| ∫_{B₁} u(x + ξ) ξ/|ξ| F(|ξ|) dξ
//! ```
//!
//! discretized by the midpoint rule over cell-center offsets `ξ = m ⊙ h` inside the closed
//! unit ball. Outside `Ω̄` the density is extended by zero (no-flux grids) or periodically.
//!
//! Two independent factorizations of the same quadrature are provided: a precomputed
//! antisymmetric [`AdhesionKernel`] applied by direct summation, and the pairwise sum against
//! the interaction potential gradient ([`PotentialGradient`]). [`AdhesionOperator`] adds an
//! FFT convolution path for repeated application inside the time integrator.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::fields::{BoxDomain, ScalarField, VectorField};
use crate::num::{unit_ball_volume, Real};
use crate::{Error, Result};

/// Relative slack for "inside the closed unit ball" so offsets landing on the sphere in
/// exact arithmetic are kept despite rounding in `m·h`.
const BALL_SLACK: f64 = 1e-12;

#[inline]
fn in_closed_unit_ball<T: Real>(r2: T) -> bool {
    r2 <= T::one() + T::lit(BALL_SLACK)
}

/// Radial adhesion strength `F : [0, 1] → [0, ∞)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AdhesionForce<T> {
    /// `F(s) = f0`
    Constant { f0: T },
    /// `F(s) = f0 · s`
    Linear { f0: T },
    /// `F(s) = f0 · s (1 − s)`
    Hat { f0: T },
}

impl<T: Real> AdhesionForce<T> {
    pub fn validate(&self) -> Result<()> {
        let f0 = self.strength();
        if !f0.is_finite() || f0 < T::zero() {
            return Err(Error::param("f0", format!("adhesion strength must be finite and >= 0, got {f0}")));
        }
        Ok(())
    }

    pub fn strength(&self) -> T {
        match *self {
            AdhesionForce::Constant { f0 } | AdhesionForce::Linear { f0 } | AdhesionForce::Hat { f0 } => f0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdhesionForce::Constant { .. } => "constant",
            AdhesionForce::Linear { .. } => "linear",
            AdhesionForce::Hat { .. } => "hat",
        }
    }

    /// `F(s)` with `s` clamped into `[0, 1]`.
    #[inline]
    pub fn eval(&self, s: T) -> T {
        let s = s.max(T::zero()).min(T::one());
        match *self {
            AdhesionForce::Constant { f0 } => f0,
            AdhesionForce::Linear { f0 } => f0 * s,
            AdhesionForce::Hat { f0 } => f0 * s * (T::one() - s),
        }
    }

    /// `max_{[0,1]} F`
    pub fn max_value(&self) -> T {
        match *self {
            AdhesionForce::Constant { f0 } | AdhesionForce::Linear { f0 } => f0,
            AdhesionForce::Hat { f0 } => f0 * T::lit(0.25),
        }
    }
}

/// Precomputed midpoint weights of the adhesion integrand at cell offsets.
#[derive(Clone, Debug)]
pub struct AdhesionKernel<T> {
    domain: BoxDomain<T>,
    force: AdhesionForce<T>,
    /// `d` integers per offset
    offsets: Vec<isize>,
    /// `d` weights per offset
    weights: Vec<T>,
}

/// Builds the kernel `w(m) = (1/|B₁|) (ξ/|ξ|) F(|ξ|) Π h_i` with `ξ = m ⊙ h`, `|ξ| ≤ 1`.
///
/// The zero offset is kept with a zero weight. Requires at least two cells per sensing
/// radius along every axis.
pub fn build_kernel<T: Real>(force: AdhesionForce<T>, domain: &BoxDomain<T>) -> Result<AdhesionKernel<T>> {
    force.validate()?;
    let d = domain.dim();
    let h = domain.spacing();
    if let Some((k, hk)) = h.iter().enumerate().find(|(_, &hk)| T::one() / hk < T::lit(2.0)) {
        return Err(Error::GridTooCoarse(format!(
            "axis {k} has spacing {hk} > 1/2 (sensing radius must span two cells)"
        )));
    }
    let radius: Vec<isize> = h
        .iter()
        .map(|&hk| (T::one() / hk).floor().to_isize().unwrap_or(0) + 1)
        .collect();
    let scale = domain.cell_volume() / unit_ball_volume::<T>(d);

    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    let mut m: Vec<isize> = radius.iter().map(|r| -r).collect();
    let mut xi = vec![T::zero(); d];
    loop {
        let mut r2 = T::zero();
        for k in 0..d {
            xi[k] = T::from_isize_lossy(m[k]) * h[k];
            r2 += xi[k] * xi[k];
        }
        if in_closed_unit_ball(r2) {
            offsets.extend_from_slice(&m);
            weights.extend(integrand(&force, &xi, r2, scale));
        }
        // odometer
        let mut k = d;
        loop {
            if k == 0 {
                return Ok(AdhesionKernel {
                    domain: domain.clone(),
                    force,
                    offsets,
                    weights,
                });
            }
            k -= 1;
            if m[k] < radius[k] {
                m[k] += 1;
                break;
            }
            m[k] = -radius[k];
        }
    }
}

/// `(ξ/|ξ|) F(|ξ|) · scale`, zero at the origin.
#[inline]
fn integrand<'a, T: Real>(force: &AdhesionForce<T>, xi: &'a [T], r2: T, scale: T) -> impl Iterator<Item = T> + 'a {
    let (inv_r, f) = if r2 > T::zero() {
        let r = r2.sqrt();
        (T::one() / r, force.eval(r))
    } else {
        (T::zero(), T::zero())
    };
    let s = f * scale;
    xi.iter().map(move |&x| (x * inv_r) * s)
}

impl<T: Real> AdhesionKernel<T> {
    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }

    pub fn force(&self) -> &AdhesionForce<T> {
        &self.force
    }

    pub fn len(&self) -> usize {
        self.weights.len() / self.domain.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn offset(&self, k: usize) -> &[isize] {
        let d = self.domain.dim();
        &self.offsets[k * d..(k + 1) * d]
    }

    pub fn weight(&self, k: usize) -> &[T] {
        let d = self.domain.dim();
        &self.weights[k * d..(k + 1) * d]
    }

    pub fn weight_mut(&mut self, k: usize) -> &mut [T] {
        let d = self.domain.dim();
        &mut self.weights[k * d..(k + 1) * d]
    }

    /// All weights vanish (e.g. `F ≡ 0`).
    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == T::zero())
    }

    /// `Σ_k |w_k|` (Euclidean norm of each weight vector).
    pub fn total_weight(&self) -> T {
        let d = self.domain.dim();
        self.weights
            .chunks_exact(d)
            .map(|w| w.iter().map(|&x| x * x).sum::<T>().sqrt())
            .sum()
    }

    fn nonzero_offsets(&self) -> usize {
        let d = self.domain.dim();
        self.weights
            .chunks_exact(d)
            .filter(|w| w.iter().any(|&x| x != T::zero()))
            .count()
    }
}

/// One contiguous stretch of target cells `i..i+len` reading source cells `j..j+len`.
#[derive(Clone, Copy, Debug)]
struct Run {
    i: usize,
    j: usize,
    len: usize,
}

fn axis_runs(n: usize, m: isize, periodic: bool) -> Vec<Run> {
    let ni = n as isize;
    if periodic {
        let s = m.rem_euclid(ni) as usize;
        let mut runs = vec![Run { i: 0, j: s, len: n - s }];
        if s > 0 {
            runs.push(Run { i: n - s, j: 0, len: s });
        }
        runs
    } else {
        let lo = (-m).max(0);
        let hi = (ni - m).min(ni);
        if lo >= hi {
            Vec::new()
        } else {
            vec![Run {
                i: lo as usize,
                j: (lo + m) as usize,
                len: (hi - lo) as usize,
            }]
        }
    }
}

/// Visits every product of per-axis runs; `f(target_base, source_base, len)` covers the
/// innermost axis, whose stride is 1.
fn for_each_run(runs: &[Vec<Run>], strides: &[usize], f: &mut impl FnMut(usize, usize, usize)) {
    fn rec(
        runs: &[Vec<Run>],
        strides: &[usize],
        axis: usize,
        bi: usize,
        bj: usize,
        f: &mut impl FnMut(usize, usize, usize),
    ) {
        let last = runs.len() - 1;
        for r in &runs[axis] {
            if axis == last {
                f(bi + r.i, bj + r.j, r.len);
            } else {
                for t in 0..r.len {
                    rec(
                        runs,
                        strides,
                        axis + 1,
                        bi + (r.i + t) * strides[axis],
                        bj + (r.j + t) * strides[axis],
                        f,
                    );
                }
            }
        }
    }
    rec(runs, strides, 0, 0, 0, f);
}

/// Direct summation `(A c)(x) = Σ_k w_k c(x + m_k)`.
pub fn apply_adhesion<T: Real>(kernel: &AdhesionKernel<T>, c: &ScalarField<T>) -> Result<VectorField<T>> {
    let dom = kernel.domain();
    if !dom.same_grid(c.domain()) {
        return Err(Error::DomainMismatch);
    }
    let mut out = VectorField::zeros(dom);
    apply_direct_into(kernel, c.values(), out.values_mut());
    Ok(out)
}

fn apply_direct_into<T: Real>(kernel: &AdhesionKernel<T>, c: &[T], out: &mut [T]) {
    let dom = kernel.domain();
    let d = dom.dim();
    let periodic = dom.is_periodic();
    out.iter_mut().for_each(|v| *v = T::zero());
    let mut runs = vec![Vec::new(); d];
    for k in 0..kernel.len() {
        let w = kernel.weight(k);
        if w.iter().all(|&x| x == T::zero()) {
            continue;
        }
        let m = kernel.offset(k);
        for a in 0..d {
            runs[a] = axis_runs(dom.cells()[a], m[a], periodic);
        }
        if runs.iter().any(|r| r.is_empty()) {
            continue;
        }
        for_each_run(&runs, dom.strides(), &mut |bi, bj, len| {
            for t in 0..len {
                let cj = c[bj + t];
                let o = &mut out[(bi + t) * d..(bi + t + 1) * d];
                for a in 0..d {
                    o[a] += w[a] * cj;
                }
            }
        });
    }
}

/// `(A c)` at a single cell by direct summation.
pub fn adhesion_at<T: Real>(kernel: &AdhesionKernel<T>, c: &ScalarField<T>, cell: usize) -> Result<Vec<T>> {
    let dom = kernel.domain();
    if !dom.same_grid(c.domain()) {
        return Err(Error::DomainMismatch);
    }
    let d = dom.dim();
    let mut acc = vec![T::zero(); d];
    'offsets: for k in 0..kernel.len() {
        let mut j = cell;
        for (a, &m) in kernel.offset(k).iter().enumerate() {
            match dom.neighbor(j, a, m) {
                Some(n) => j = n,
                None => continue 'offsets,
            }
        }
        let cj = c.values()[j];
        for (acc, &w) in acc.iter_mut().zip(kernel.weight(k)) {
            *acc += w * cj;
        }
    }
    Ok(acc)
}

/// Gradient of the interaction potential `H(x) = 1/|B₁| ∫_{min(|x|,1)}^1 F`:
/// `∇H(x) = −(1/|B₁|)(x/|x|) F(|x|)` on `B₁ ∖ {0}`, zero elsewhere.
#[derive(Clone, Copy, Debug)]
pub struct PotentialGradient<T> {
    force: AdhesionForce<T>,
    dim: usize,
}

impl<T: Real> PotentialGradient<T> {
    pub fn new(force: AdhesionForce<T>, dim: usize) -> Self {
        Self { force, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `∇H(x)` into `out`.
    pub fn eval_into(&self, x: &[T], out: &mut [T]) {
        let r2: T = x.iter().map(|&v| v * v).sum();
        if r2 == T::zero() || !in_closed_unit_ball(r2) {
            out.iter_mut().for_each(|v| *v = T::zero());
            return;
        }
        let inv_vol = T::one() / unit_ball_volume::<T>(self.dim);
        for (o, v) in out.iter_mut().zip(integrand(&self.force, x, r2, inv_vol)) {
            *o = -v;
        }
    }

    pub fn eval(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.eval_into(x, &mut out);
        out
    }
}

/// The same quadrature summed pairwise against the potential gradient:
/// `(A c)(x) = Σ_y ∇H(x − y) c(y) Π h_i`, with all periodic images in periodic mode.
///
/// `O(N²)`; meant as the oracle for [`apply_adhesion`].
pub fn adhesion_via_potential<T: Real>(
    grad: &PotentialGradient<T>,
    c: &ScalarField<T>,
) -> Result<VectorField<T>> {
    let dom = c.domain();
    let d = dom.dim();
    if grad.dim() != d {
        return Err(Error::DomainMismatch);
    }
    let h = dom.spacing();
    let n = dom.cells();
    let strides = dom.strides();
    let vol = dom.cell_volume();
    let inv_vol = T::one() / unit_ball_volume::<T>(d);
    let reach: Vec<isize> = h
        .iter()
        .map(|&ha| (T::one() / ha).floor().to_isize().unwrap_or(0) + 1)
        .collect();
    let mut out = VectorField::zeros(dom);
    let mut ix = vec![0usize; d];
    // per axis: (source offset along the axis, y_a − x_a) for every source cell and periodic image
    let mut lists: Vec<Vec<(usize, isize)>> = vec![Vec::new(); d];
    let mut pick = vec![0usize; d];
    let mut z = vec![T::zero(); d];
    let mut g = vec![T::zero(); d];
    for x in 0..dom.len() {
        dom.multi_index(x, &mut ix);
        for a in 0..d {
            lists[a].clear();
            let (na, xa) = (n[a] as isize, ix[a] as isize);
            for ya in 0..na {
                let base = ya - xa;
                if dom.is_periodic() {
                    let pmax = reach[a] / na + 1;
                    for p in -pmax..=pmax {
                        let m = base + p * na;
                        if m.abs() <= reach[a] {
                            lists[a].push((ya as usize * strides[a], m));
                        }
                    }
                } else if base.abs() <= reach[a] {
                    lists[a].push((ya as usize * strides[a], base));
                }
            }
        }
        if lists.iter().any(|v| v.is_empty()) {
            continue;
        }
        let acc = &mut out.values_mut()[x * d..(x + 1) * d];
        pick.iter_mut().for_each(|p| *p = 0);
        'pairs: loop {
            let mut y = 0;
            let mut r2 = T::zero();
            for a in 0..d {
                let (off, m) = lists[a][pick[a]];
                y += off;
                // z = x − y = −ξ
                let xi = T::from_isize_lossy(m) * h[a];
                z[a] = -xi;
                r2 += xi * xi;
            }
            let cy = c.values()[y];
            if cy != T::zero() && r2 > T::zero() && in_closed_unit_ball(r2) {
                for (o, v) in g.iter_mut().zip(integrand(&grad.force, &z, r2, inv_vol)) {
                    *o = -v;
                }
                for a in 0..d {
                    acc[a] += (g[a] * vol) * cy;
                }
            }
            let mut a = d;
            loop {
                if a == 0 {
                    break 'pairs;
                }
                a -= 1;
                pick[a] += 1;
                if pick[a] < lists[a].len() {
                    break;
                }
                pick[a] = 0;
            }
        }
    }
    Ok(out)
}

/// How [`AdhesionOperator`] evaluates the convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Direct,
    Fft,
    /// FFT when its estimated cost is lower.
    Auto,
}

/// Kernel plus an optional FFT plan; the solver's entry point for `A c`.
#[derive(Clone)]
pub struct AdhesionOperator<T: Real> {
    kernel: AdhesionKernel<T>,
    fft: Option<Arc<FftConvolver<T>>>,
}

impl<T: Real> AdhesionOperator<T> {
    pub fn new(kernel: AdhesionKernel<T>, strategy: Strategy) -> Self {
        let use_fft = match strategy {
            Strategy::Direct => false,
            Strategy::Fft => !kernel.is_zero(),
            Strategy::Auto => {
                !kernel.is_zero() && {
                    let direct = (kernel.nonzero_offsets() * kernel.domain().len()) as f64;
                    FftConvolver::estimated_cost(&kernel) < direct
                }
            }
        };
        let fft = use_fft.then(|| Arc::new(FftConvolver::new(&kernel)));
        Self { kernel, fft }
    }

    pub fn kernel(&self) -> &AdhesionKernel<T> {
        &self.kernel
    }

    pub fn uses_fft(&self) -> bool {
        self.fft.is_some()
    }

    pub fn apply(&self, c: &ScalarField<T>) -> Result<VectorField<T>> {
        if !self.kernel.domain().same_grid(c.domain()) {
            return Err(Error::DomainMismatch);
        }
        let mut out = VectorField::zeros(c.domain());
        self.apply_into(c.values(), out.values_mut());
        Ok(out)
    }

    /// Writes `A c` (interleaved components) into `out`.
    pub fn apply_into(&self, c: &[T], out: &mut [T]) {
        if self.kernel.is_zero() {
            out.iter_mut().for_each(|v| *v = T::zero());
            return;
        }
        match &self.fft {
            Some(f) => f.apply_into(c, out),
            None => apply_direct_into(&self.kernel, c, out),
        }
    }
}

fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Convolution by FFT on a zero-padded (no-flux) or exactly periodic grid. Component pairs
/// share one inverse transform: both results are real, so `IFFT(ĉ (ŵ_a + i ŵ_b))` carries
/// them in its real and imaginary parts.
struct FftConvolver<T: Real> {
    cells: Vec<usize>,
    padded: Vec<usize>,
    pstrides: Vec<usize>,
    forward: Vec<Arc<dyn Fft<T>>>,
    inverse: Vec<Arc<dyn Fft<T>>>,
    /// spectra of `w_a + i w_b` for component pairs `(0,1), (2,3), …`
    spectra: Vec<Vec<Complex<T>>>,
}

impl<T: Real> FftConvolver<T> {
    fn padded_sizes(kernel: &AdhesionKernel<T>) -> Vec<usize> {
        let dom = kernel.domain();
        let d = dom.dim();
        (0..d)
            .map(|a| {
                let n = dom.cells()[a];
                if dom.is_periodic() {
                    n
                } else {
                    let reach = (0..kernel.len()).map(|k| kernel.offset(k)[a].unsigned_abs()).max().unwrap_or(0);
                    next_fast_len(n + reach)
                }
            })
            .collect()
    }

    fn estimated_cost(kernel: &AdhesionKernel<T>) -> f64 {
        let p = Self::padded_sizes(kernel);
        let total: f64 = p.iter().map(|&x| x as f64).product();
        let logs: f64 = p.iter().map(|&x| (x as f64).log2()).sum();
        let transforms = 1.0 + kernel.domain().dim().div_ceil(2) as f64;
        // rough constant covering gather/scatter and complex arithmetic
        6.0 * transforms * total * logs
    }

    fn new(kernel: &AdhesionKernel<T>) -> Self {
        let dom = kernel.domain();
        let d = dom.dim();
        let padded = Self::padded_sizes(kernel);
        let mut pstrides = vec![1; d];
        for a in (0..d.saturating_sub(1)).rev() {
            pstrides[a] = pstrides[a + 1] * padded[a + 1];
        }
        let total: usize = padded.iter().product();
        let mut planner = FftPlanner::<T>::new();
        let forward: Vec<_> = padded.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse: Vec<_> = padded.iter().map(|&n| planner.plan_fft_inverse(n)).collect();

        let mut conv = Self {
            cells: dom.cells().to_vec(),
            padded,
            pstrides,
            forward,
            inverse,
            spectra: Vec::new(),
        };
        for pair in (0..d).step_by(2) {
            let mut buf = vec![Complex::new(T::zero(), T::zero()); total];
            for k in 0..kernel.len() {
                let w = kernel.weight(k);
                let m = kernel.offset(k);
                // out[i] = Σ_m w(m) c[i+m]  ==  (c ∗ g)[i] with g[-m] = w(m)
                let idx: usize = (0..d)
                    .map(|a| ((-m[a]).rem_euclid(conv.padded[a] as isize) as usize) * conv.pstrides[a])
                    .sum();
                buf[idx].re += w[pair];
                if pair + 1 < d {
                    buf[idx].im += w[pair + 1];
                }
            }
            conv.transform(&mut buf, false);
            conv.spectra.push(buf);
        }
        conv
    }

    fn transform(&self, buf: &mut [Complex<T>], inverse: bool) {
        let d = self.padded.len();
        let plans = if inverse { &self.inverse } else { &self.forward };
        for a in 0..d {
            let n = self.padded[a];
            let plan = &plans[a];
            let mut scratch = vec![Complex::new(T::zero(), T::zero()); plan.get_inplace_scratch_len()];
            let stride = self.pstrides[a];
            if stride == 1 {
                plan.process_with_scratch(buf, &mut scratch);
                continue;
            }
            let block = n * stride;
            let mut line = vec![Complex::new(T::zero(), T::zero()); n];
            for base in (0..buf.len()).step_by(block) {
                for inner in 0..stride {
                    for t in 0..n {
                        line[t] = buf[base + t * stride + inner];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for t in 0..n {
                        buf[base + t * stride + inner] = line[t];
                    }
                }
            }
        }
    }

    /// Visits `(grid flat index, padded flat index)` for every grid cell.
    fn for_each_cell(&self, mut f: impl FnMut(usize, usize)) {
        let d = self.cells.len();
        let total: usize = self.cells.iter().product();
        let mut idx = vec![0usize; d];
        for flat in 0..total {
            let p: usize = (0..d).map(|a| idx[a] * self.pstrides[a]).sum();
            f(flat, p);
            let mut a = d;
            while a > 0 {
                a -= 1;
                idx[a] += 1;
                if idx[a] < self.cells[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    fn apply_into(&self, c: &[T], out: &mut [T]) {
        let d = self.cells.len();
        let total: usize = self.padded.iter().product();
        let zero = Complex::new(T::zero(), T::zero());
        let mut spec = vec![zero; total];
        self.for_each_cell(|flat, p| spec[p] = Complex::new(c[flat], T::zero()));
        self.transform(&mut spec, false);
        let norm = T::one() / T::from_usize_lossy(total);
        let mut work = vec![zero; total];
        for (pair, kspec) in self.spectra.iter().enumerate() {
            for ((w, &s), &k) in work.iter_mut().zip(&spec).zip(kspec) {
                *w = s * k;
            }
            self.transform(&mut work, true);
            let a = 2 * pair;
            self.for_each_cell(|flat, p| {
                out[flat * d + a] = work[p].re * norm;
                if a + 1 < d {
                    out[flat * d + a + 1] = work[p].im * norm;
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::BoundaryMode;
    use rand::{Rng, SeedableRng};

    fn random_field(dom: &BoxDomain<f64>, seed: u64) -> ScalarField<f64> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let v = (0..dom.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        ScalarField::new(dom.clone(), v).unwrap()
    }

    #[test]
    fn kernel_is_exactly_antisymmetric() {
        let dom = BoxDomain::new(vec![1.0, 1.5, 0.9], vec![8, 11, 7], BoundaryMode::NoFlux).unwrap();
        for force in [
            AdhesionForce::Constant { f0: 1.3 },
            AdhesionForce::Linear { f0: 0.7 },
            AdhesionForce::Hat { f0: 2.0 },
        ] {
            let k = build_kernel(force, &dom).unwrap();
            let mut saw_origin = false;
            for a in 0..k.len() {
                let neg: Vec<isize> = k.offset(a).iter().map(|m| -m).collect();
                let b = (0..k.len()).find(|&b| k.offset(b) == neg.as_slice()).expect("mirror offset");
                for (wa, wb) in k.weight(a).iter().zip(k.weight(b)) {
                    assert_eq!(*wa, -*wb);
                }
                if k.offset(a).iter().all(|&m| m == 0) {
                    saw_origin = true;
                    assert!(k.weight(a).iter().all(|&w| w == 0.0));
                }
                let r2: f64 = k.offset(a).iter().zip(dom.spacing()).map(|(&m, h)| (m as f64 * h).powi(2)).sum();
                assert!(r2 <= 1.0 + 1e-12);
            }
            assert!(saw_origin);
        }
    }

    #[test]
    fn zero_force_gives_zero_kernel() {
        let dom = BoxDomain::cube(3, 1.0, 6, BoundaryMode::NoFlux).unwrap();
        let k = build_kernel(AdhesionForce::Constant { f0: 0.0 }, &dom).unwrap();
        assert!(k.is_zero());
    }

    #[test]
    fn rejects_coarse_grids() {
        let dom = BoxDomain::cube(2, 4.0, 6, BoundaryMode::NoFlux).unwrap();
        assert!(matches!(
            build_kernel(AdhesionForce::Constant { f0: 1.0 }, &dom),
            Err(Error::GridTooCoarse(_))
        ));
        let dom = BoxDomain::cube(2, 3.0, 6, BoundaryMode::NoFlux).unwrap();
        assert!(build_kernel(AdhesionForce::Constant { f0: 1.0 }, &dom).is_ok());
    }

    #[test]
    fn total_weight_matches_ball_quadrature() {
        // (1/|B₁|) ∫_{B₁} |ξ/|ξ|| dξ = 1; brute force: fine lattice count of the unit ball
        let fine = 96i64;
        let mut count = 0i64;
        for i in -fine..=fine {
            for j in -fine..=fine {
                for k in -fine..=fine {
                    if (i * i + j * j + k * k) as f64 <= (fine * fine) as f64 {
                        count += 1;
                    }
                }
            }
        }
        let oracle = count as f64 / (fine as f64).powi(3) / unit_ball_volume::<f64>(3);
        assert!((oracle - 1.0).abs() < 0.01);

        let dom = BoxDomain::cube(3, 1.0, 8, BoundaryMode::NoFlux).unwrap();
        let k = build_kernel(AdhesionForce::Constant { f0: 1.0 }, &dom).unwrap();
        assert!((k.total_weight() - oracle).abs() < 0.05 * oracle, "{}", k.total_weight());
    }

    #[test]
    fn zero_density_gives_zero_field() {
        let dom = BoxDomain::cube(3, 1.0, 4, BoundaryMode::NoFlux).unwrap();
        let k = build_kernel(AdhesionForce::Hat { f0: 1.0 }, &dom).unwrap();
        let a = apply_adhesion(&k, &ScalarField::zeros(&dom)).unwrap();
        assert!(a.values().iter().all(|&v| v == 0.0));
        let p = adhesion_via_potential(&PotentialGradient::new(AdhesionForce::Hat { f0: 1.0 }, 3), &ScalarField::zeros(&dom)).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn radially_symmetric_density_has_no_pull_at_center() {
        let dom = BoxDomain::cube(3, 3.0, 15, BoundaryMode::NoFlux).unwrap();
        let x0 = [1.5, 1.5, 1.5];
        let c = ScalarField::from_fn(&dom, |x| {
            let r2: f64 = x.iter().zip(&x0).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 < 0.8 {
                (1.0 - r2 / 0.8).powi(2)
            } else {
                0.0
            }
        })
        .unwrap();
        let k = build_kernel(AdhesionForce::Linear { f0: 1.0 }, &dom).unwrap();
        let a = adhesion_at(&k, &c, dom.cell_containing(&x0)).unwrap();
        assert!(a.iter().all(|v| v.abs() < 1e-12), "{a:?}");
    }

    #[test]
    fn potential_route_matches_kernel_route() {
        for mode in [BoundaryMode::NoFlux, BoundaryMode::Periodic] {
            let dom = BoxDomain::new(vec![1.0, 1.2, 0.8], vec![6, 7, 5], mode).unwrap();
            let f = AdhesionForce::Hat { f0: 1.7 };
            let k = build_kernel(f, &dom).unwrap();
            let c = random_field(&dom, 7);
            let a = apply_adhesion(&k, &c).unwrap();
            let b = adhesion_via_potential(&PotentialGradient::new(f, 3), &c).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() <= 1e-12 * c.max_abs(), "{mode:?}");
            // not trivially zero
            assert!(a.max_norm() > 1e-3);
        }
    }

    #[test]
    fn point_mass_pulls_toward_itself() {
        let dom = BoxDomain::cube(3, 2.0, 10, BoundaryMode::NoFlux).unwrap();
        let mass_cell = dom.flat_index(&[5, 4, 6]);
        let mut c = ScalarField::zeros(&dom);
        c.values_mut()[mass_cell] = 1.0 / dom.cell_volume();
        let f = AdhesionForce::Constant { f0: 1.0 };
        let k = build_kernel(f, &dom).unwrap();
        let a = apply_adhesion(&k, &c).unwrap();
        let g = PotentialGradient::new(f, 3);
        let y = dom.center(mass_cell);
        let inv_vol = 1.0 / unit_ball_volume::<f64>(3);
        for x in 0..dom.len() {
            let xc = dom.center(x);
            let r: Vec<f64> = y.iter().zip(&xc).map(|(a, b)| a - b).collect();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn == 0.0 || rn >= 1.0 {
                continue;
            }
            // A c(x) = (1/|B₁|) r/|r| = −∇H(r), r pointing from x to the mass
            let grad = g.eval(&r);
            for k in 0..3 {
                let expect = inv_vol * r[k] / rn;
                assert!((a.at(x)[k] - expect).abs() < 1e-12);
                assert!((a.at(x)[k] + grad[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn potential_gradient_is_odd_and_bounded() {
        let f = AdhesionForce::Hat { f0: 3.0 };
        let g = PotentialGradient::new(f, 3);
        let bound = f.max_value() / unit_ball_volume::<f64>(3);
        let mut rng = rand::rngs::StdRng::seed_from_u64(1);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let nx: Vec<f64> = x.iter().map(|v| -v).collect();
            let a = g.eval(&x);
            let b = g.eval(&nx);
            let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n <= bound * (1.0 + 1e-14));
            for k in 0..3 {
                assert_eq!(a[k], -b[k]);
            }
        }
        assert_eq!(g.eval(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        assert_eq!(g.eval(&[1.1, 0.0, 0.0]), vec![0.0; 3]);
    }

    #[test]
    fn fft_path_reproduces_direct_summation() {
        for mode in [BoundaryMode::NoFlux, BoundaryMode::Periodic] {
            for dims in [vec![9usize, 10, 7], vec![12, 6], vec![5, 6, 4, 5]] {
                let d = dims.len();
                let ext: Vec<f64> = dims.iter().map(|&n| n as f64 * 0.2).collect();
                let dom = BoxDomain::new(ext, dims, mode).unwrap();
                let k = build_kernel(AdhesionForce::Hat { f0: 2.0 }, &dom).unwrap();
                let c = random_field(&dom, 3);
                let direct = apply_adhesion(&k, &c).unwrap();
                let op = AdhesionOperator::new(k, Strategy::Fft);
                assert!(op.uses_fft());
                let fast = op.apply(&c).unwrap();
                let diff = direct.max_abs_diff(&fast).unwrap();
                assert!(diff <= 1e-10 * direct.max_norm().max(1e-300), "{mode:?} d={d}: {diff:e}");
            }
        }
    }
}
