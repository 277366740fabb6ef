//! Uniform-grid functions of locally bounded variation and their
//! Lebesgue-Stieltjes convolution calculus.
//!
//! A [`GridFunction`] stores samples `f(k h)` for consecutive node indices
//! `k = origin, origin+1, ...` together with the constant value taken on
//! `(-inf, origin h)`. Functions vanish on the negative half-line unless the
//! origin offset says otherwise; the offset participates in equality.
//!
//! Convolution pairs point values of the left factor with measure increments
//! of the right factor:
//!
//! ```text
//! (u * v)(k h) = sum_i u((k - i) h) dv(i h),   dv(i h) = v(i h) - v((i-1) h)
//! ```
//!
//! The jump of `v` at its first stored node is taken against `left_value`.
//! Mass of `v` beyond its stored range is truncated; for probability grids
//! the tail is visible through [`GridFunction::cdf_tail_mass`].
//!
//! Direct `O(n^2)` summation is the reference (and only) evaluation path,
//! parallelised over output nodes.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative tolerance used to decide that two grid steps agree and that a
/// query point sits on a node.
const ALIGN_TOL: f64 = 1e-9;

/// A right-continuous function sampled on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    h: f64,
    origin: i64,
    values: Vec<f64>,
    left_value: f64,
    monotone: bool,
}

impl GridFunction {
    /// Function on `[0, (len-1) h]` vanishing on the negative half-line.
    pub fn new(h: f64, values: Vec<f64>) -> Result<Self> {
        Self::with_origin(h, 0, values, 0.0)
    }

    /// Function whose first stored node is `origin * h` and whose value on
    /// `(-inf, origin h)` is `left_value`.
    pub fn with_origin(h: f64, origin: i64, values: Vec<f64>, left_value: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid("h", format!("grid step must be positive, got {h}")));
        }
        if values.is_empty() {
            return Err(Error::invalid("values", "at least one node is required"));
        }
        let monotone = is_nondecreasing(left_value, &values);
        Ok(GridFunction { h, origin, values, left_value, monotone })
    }

    /// Samples `f` at the nodes `(origin + k) h`, `k = 0..len`.
    pub fn from_fn(h: f64, origin: i64, len: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..len).map(|k| f((origin + k as i64) as f64 * h)).collect();
        Self::with_origin(h, origin, values, 0.0)
    }

    /// The unit step `1_{[0, inf)}` sampled on `len` nodes.
    pub fn heaviside(h: f64, len: usize) -> Result<Self> {
        Self::new(h, vec![1.0; len])
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the first stored node.
    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// Value on `(-inf, origin h)`.
    pub fn left_value(&self) -> f64 {
        self.left_value
    }

    /// Whether the sampled data is nondecreasing (including the left value).
    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Time of the first stored node.
    pub fn t_start(&self) -> f64 {
        self.origin as f64 * self.h
    }

    /// Time of the last stored node.
    pub fn t_end(&self) -> f64 {
        (self.origin + self.values.len() as i64 - 1) as f64 * self.h
    }

    /// Value at absolute node index, using `left_value` below the range.
    ///
    /// Panics above the stored range.
    pub fn at_index(&self, index: i64) -> f64 {
        if index < self.origin {
            self.left_value
        } else {
            self.values[(index - self.origin) as usize]
        }
    }

    /// Absolute node index of `t`, which must sit on the grid within range.
    pub fn index_of(&self, t: f64) -> Result<i64> {
        let k = (t / self.h).round() as i64;
        if (t - k as f64 * self.h).abs() > ALIGN_TOL * t.abs().max(1.0) {
            return Err(Error::Misaligned(t, self.h));
        }
        if k < self.origin || k >= self.origin + self.values.len() as i64 {
            return Err(Error::OutOfRange { point: t, lo: self.t_start(), hi: self.t_end() });
        }
        Ok(k)
    }

    /// Value at a grid-aligned time, using `left_value` below the range.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        match self.index_of(t) {
            Ok(k) => Ok(self.at_index(k)),
            Err(Error::OutOfRange { .. }) if t < self.t_start() => Ok(self.left_value),
            Err(e) => Err(e),
        }
    }

    /// Measure increments at the stored nodes; the first is the jump against
    /// `left_value`.
    pub fn increments(&self) -> Vec<f64> {
        let mut dv = Vec::with_capacity(self.values.len());
        let mut prev = self.left_value;
        for &x in &self.values {
            dv.push(x - prev);
            prev = x;
        }
        dv
    }

    /// Mass missing from a CDF grid beyond its last node.
    pub fn cdf_tail_mass(&self) -> f64 {
        (1.0 - *self.values.last().expect("nonempty")).max(0.0)
    }

    /// Iterator over `(t, value)` pairs, in node order.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = self.h;
        let origin = self.origin;
        self.values.iter().enumerate().map(move |(k, &v)| ((origin + k as i64) as f64 * h, v))
    }

    fn check_same_step(&self, other: &GridFunction) -> Result<()> {
        if (self.h - other.h).abs() > ALIGN_TOL * self.h {
            return Err(Error::GridStepMismatch(self.h, other.h));
        }
        Ok(())
    }
}

fn is_nondecreasing(left: f64, values: &[f64]) -> bool {
    let mut prev = left;
    for &x in values {
        if x < prev {
            return false;
        }
        prev = x;
    }
    true
}

/// Dot product of two equal-length contiguous slices, four-lane unrolled so
/// the compiler can vectorise it.
///
/// The summation order is fixed, so results are identical across runs and
/// thread counts.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let m = a.len();
    let (mut s0, mut s1, mut s2, mut s3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let chunks = m / 4;
    {
        let (a4, b4) = (&a[..chunks * 4], &b[..chunks * 4]);
        for i in 0..chunks {
            s0 += a4[4 * i] * b4[4 * i];
            s1 += a4[4 * i + 1] * b4[4 * i + 1];
            s2 += a4[4 * i + 2] * b4[4 * i + 2];
            s3 += a4[4 * i + 3] * b4[4 * i + 3];
        }
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for i in chunks * 4..m {
        s += a[i] * b[i];
    }
    s
}

/// Lebesgue-Stieltjes convolution `(u * v)(t) = int u(t - y) dv(y)`.
///
/// Point values come from `u`, measure increments from `v`. The result has
/// origin `u.origin + v.origin` and `min(u.len, v.len)` nodes; measure of `v`
/// beyond its stored range is truncated.
pub fn stieltjes_convolve(u: &GridFunction, v: &GridFunction) -> Result<GridFunction> {
    u.check_same_step(v)?;
    let n = u.values.len().min(v.values.len());
    let dv = v.increments();
    // Mass at v-nodes i > k pairs with u below its origin. That term only
    // matters when u.left_value != 0.
    let left_tail: Option<Vec<f64>> = if u.left_value != 0.0 {
        let mut suffix = vec![0.0; v.values.len() + 1];
        for i in (0..v.values.len()).rev() {
            suffix[i] = suffix[i + 1] + dv[i];
        }
        Some(suffix)
    } else {
        None
    };

    // reversed copy makes every output node a contiguous dot product
    let u_rev: Vec<f64> = u.values.iter().rev().copied().collect();
    let un = u_rev.len();
    let mut values = vec![0.0f64; n];
    values
        .par_chunks_mut(2048)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let base = chunk_idx * 2048;
            for (off, slot) in chunk.iter_mut().enumerate() {
                let k = base + off;
                // n <= min(len), so i = 0..=k stays inside both slices.
                let mut s = dot(&u_rev[un - 1 - k..un], &dv[..=k]);
                if let Some(suffix) = &left_tail {
                    if k + 1 < suffix.len() {
                        s += u.left_value * suffix[k + 1];
                    }
                }
                *slot = s;
            }
        });

    let mut out = GridFunction::with_origin(u.h, u.origin + v.origin, values, 0.0)?;
    // Propagate the flag: monotone * monotone stays monotone; rounding can
    // leave ulp-scale dips that the data scan would reject.
    out.monotone = u.monotone && v.monotone;
    Ok(out)
}

/// `v^{*(j)}` by left-fold; `j = 0` is the unit step at the origin.
pub fn convolution_power(v: &GridFunction, j: u32) -> Result<GridFunction> {
    if j == 0 {
        return GridFunction::heaviside(v.h, v.values.len());
    }
    Ok(convolution_powers(v, j)?.pop().expect("j >= 1"))
}

/// All powers `v^{*(1)}, ..., v^{*(jmax)}`; the fold keeps every intermediate
/// because consumers need the whole ladder of generations.
pub fn convolution_powers(v: &GridFunction, jmax: u32) -> Result<Vec<GridFunction>> {
    if jmax == 0 {
        return Err(Error::invalid("jmax", "need jmax >= 1"));
    }
    let mut out = Vec::with_capacity(jmax as usize);
    out.push(v.clone());
    for _ in 1..jmax {
        let next = stieltjes_convolve(out.last().expect("nonempty"), v)?;
        out.push(next);
    }
    Ok(out)
}

/// Total variation of `u` over `(lo, hi]`, summing `|du|` at grid nodes.
pub fn total_variation(u: &GridFunction, lo: f64, hi: f64) -> Result<f64> {
    if lo > hi {
        return Err(Error::invalid("range", format!("lo = {lo} > hi = {hi}")));
    }
    let tol = ALIGN_TOL * hi.abs().max(1.0);
    if lo < u.t_start() - tol || hi > u.t_end() + tol {
        return Err(Error::OutOfRange { point: lo.min(hi), lo: u.t_start(), hi: u.t_end() });
    }
    let i_lo = (lo / u.h + tol / u.h).floor() as i64; // exclusive
    let i_hi = (hi / u.h + tol / u.h).floor() as i64; // inclusive
    let mut tv = 0.0;
    for i in i_lo + 1..=i_hi {
        if i < u.origin {
            continue;
        }
        let prev = u.at_index(i - 1);
        tv += (u.at_index(i) - prev).abs();
    }
    Ok(tv)
}

/// `int_{[0, t]} f(t - y) dv(y)` for a compactly supported grid function `f`.
///
/// `f` is zero outside its stored range (the directly-Riemann-integrable
/// surrogate); `t` must be a grid node of `v`.
pub fn convolve_dri(f: &GridFunction, v: &GridFunction, t: f64) -> Result<f64> {
    f.check_same_step(v)?;
    if f.left_value != 0.0 {
        return Err(Error::invalid("f", "compactly supported f must vanish on the left"));
    }
    let k = v.index_of(t)?;
    let dv = v.increments();
    let f_lo = f.origin;
    let f_hi = f.origin + f.values.len() as i64 - 1;
    let mut acc = 0.0;
    for (off, &m) in dv.iter().enumerate() {
        let i = v.origin + off as i64;
        if i > k {
            break;
        }
        let arg = k - i;
        if arg >= f_lo && arg <= f_hi {
            acc += f.values[(arg - f_lo) as usize] * m;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity(h: f64, len: usize) -> GridFunction {
        GridFunction::from_fn(h, 0, len, |t| t).unwrap()
    }

    #[test]
    fn convolution_with_unit_step_is_identity() {
        let h = 0.01;
        let u = GridFunction::from_fn(h, 0, 300, |t| (t * 1.3).sin().abs() + t).unwrap();
        let step = GridFunction::heaviside(h, 300).unwrap();
        let w = stieltjes_convolve(&u, &step).unwrap();
        assert_eq!(w.values(), u.values());
    }

    #[test]
    fn id_convolved_with_id_is_half_t_squared() {
        let h = 1e-3;
        let id = identity(h, 2001);
        let w = stieltjes_convolve(&id, &id).unwrap();
        let at2 = w.value_at(2.0).unwrap();
        assert!((at2 - 2.0).abs() <= 2e-3, "got {at2}");
    }

    #[test]
    fn id_third_power_matches_cube_over_six() {
        let h = 1e-3;
        let id = identity(h, 2001);
        let w = convolution_power(&id, 3).unwrap();
        let got = w.value_at(2.0).unwrap();
        assert_relative_eq!(got, 8.0 / 6.0, max_relative = 0.01);
    }

    #[test]
    fn power_zero_is_heaviside() {
        let v = identity(0.5, 8);
        let w = convolution_power(&v, 0).unwrap();
        assert_eq!(w.values(), &[1.0; 8]);
        assert_eq!(w.origin(), 0);
    }

    #[test]
    fn ell_square_matches_closed_form() {
        // ell(t) = (t - 1)_+ ; ell^{*(2)}(3) = (3 - 2)^2 / 2 = 0.5
        let h = 1e-3;
        let ell = GridFunction::from_fn(h, 0, 4001, |t| (t - 1.0).max(0.0)).unwrap();
        let w = convolution_power(&ell, 2).unwrap();
        let got = w.value_at(3.0).unwrap();
        assert_relative_eq!(got, 0.5, max_relative = 0.01);
    }

    #[test]
    fn negative_origin_convolution_shifts_support() {
        // ell(t) = (t + 0.5)_+ sampled from t = -1; square has origin -2h-ish
        let h = 0.25;
        let ell = GridFunction::from_fn(h, -4, 40, |t| (t + 0.5).max(0.0)).unwrap();
        let w = stieltjes_convolve(&ell, &ell).unwrap();
        assert_eq!(w.origin(), -8);
        // (t + 1)^2/2 at t = 2: 4.5
        assert_relative_eq!(w.value_at(2.0).unwrap(), 4.5, max_relative = 0.2);
    }

    #[test]
    fn total_variation_of_monotone_function_is_range() {
        let u = GridFunction::from_fn(0.01, 0, 501, |t| t * t).unwrap();
        let tv = total_variation(&u, 0.0, 5.0).unwrap();
        assert_relative_eq!(tv, 25.0, max_relative = 1e-12);
    }

    #[test]
    fn total_variation_of_zero_function_is_zero() {
        // GEM first generation: V(t) - t vanishes identically.
        let eps = GridFunction::new(0.01, vec![0.0; 100]).unwrap();
        assert_eq!(total_variation(&eps, 0.0, 0.99).unwrap(), 0.0);
    }

    #[test]
    fn total_variation_counts_down_jumps() {
        // Id minus a unit step at t = 1: slope mass 2 plus jump mass 1.
        let h = 1e-3;
        let u = GridFunction::from_fn(h, 0, 2001, |t| t - if t >= 1.0 { 1.0 } else { 0.0 }).unwrap();
        let tv = total_variation(&u, 0.0, 2.0).unwrap();
        assert!((tv - 3.0).abs() <= 3.0 * h, "got {tv}");
    }

    #[test]
    fn total_variation_outside_grid_errors() {
        let u = identity(0.1, 11);
        assert!(matches!(total_variation(&u, 0.0, 2.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn mismatched_steps_error() {
        let a = identity(0.1, 10);
        let b = identity(0.2, 10);
        assert!(matches!(stieltjes_convolve(&a, &b), Err(Error::GridStepMismatch(_, _))));
    }

    #[test]
    fn dri_indicator_gives_window_increment() {
        let h = 0.01;
        let v = GridFunction::from_fn(h, 0, 501, |t| t + (t * 3.0).sin() * 0.1 + 0.5).unwrap();
        // indicator of [0, 0.1): ten nodes
        let f = GridFunction::new(h, vec![1.0; 10]).unwrap();
        let got = convolve_dri(&f, &v, 3.0).unwrap();
        let expect = v.value_at(3.0).unwrap() - v.value_at(2.9).unwrap();
        assert_relative_eq!(got, expect, max_relative = 1e-10);
    }

    #[test]
    fn dri_zero_function_gives_zero() {
        let h = 0.01;
        let v = identity(h, 101);
        let f = GridFunction::new(h, vec![0.0; 5]).unwrap();
        assert_eq!(convolve_dri(&f, &v, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn dri_outside_grid_errors() {
        let v = identity(0.01, 101);
        let f = GridFunction::new(0.01, vec![1.0; 5]).unwrap();
        assert!(convolve_dri(&f, &v, 2.0).is_err());
    }

    #[test]
    fn monotone_flag_propagates_through_convolution() {
        let h = 0.05;
        let a = GridFunction::from_fn(h, 0, 100, |t| t.sqrt()).unwrap();
        let b = GridFunction::from_fn(h, 0, 100, |t| t * 0.5).unwrap();
        assert!(a.is_monotone() && b.is_monotone());
        let w = stieltjes_convolve(&a, &b).unwrap();
        assert!(w.is_monotone());
        assert!(is_nondecreasing(w.left_value(), w.values()));

        let wiggle = GridFunction::from_fn(h, 0, 100, |t| (t * 5.0).sin()).unwrap();
        assert!(!wiggle.is_monotone());
        assert!(!stieltjes_convolve(&wiggle, &b).unwrap().is_monotone());
    }

    #[test]
    fn orientation_agrees_on_grid() {
        // u values against dv vs v values against du.
        let h = 0.02;
        let u = GridFunction::from_fn(h, 0, 400, |t| 1.0 - (-t).exp()).unwrap();
        let v = GridFunction::from_fn(h, 0, 400, |t| t / (1.0 + t) * 2.0).unwrap();
        let a = stieltjes_convolve(&u, &v).unwrap();
        let b = stieltjes_convolve(&v, &u).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_relative_eq!(x, y, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn repeated_convolution_is_bitwise_deterministic() {
        let h = 0.02;
        let u = GridFunction::from_fn(h, 0, 256, |t| 1.0 - (-t).exp()).unwrap();
        let v = GridFunction::from_fn(h, 0, 256, |t| t.min(3.0)).unwrap();
        let a = stieltjes_convolve(&u, &v).unwrap();
        let b = stieltjes_convolve(&u, &v).unwrap();
        assert_eq!(a, b);
    }
}
