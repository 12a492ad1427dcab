//! Clamped uniform B-spline bases.
//!
//! A [`SplineGrid`] of order `k` over `G` interior intervals carries the knot
//! vector
//!
//! ```text
//! [lo; k] ++ linspace(lo, hi, G + 1) ++ [hi; k]      (length G + 2k + 1)
//! ```
//!
//! which yields `G + k` basis functions of degree `k`. Inputs are clamped to
//! `[lo, hi]` before evaluation, so the basis is total over the reals and
//! forms a partition of unity everywhere.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Largest supported spline degree.
pub const MAX_ORDER: usize = 10;

/// Knot vector and degree shared by every edge function of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    order: usize,
    intervals: usize,
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
}

impl Default for SplineGrid {
    /// Cubic splines over five intervals on `[-1, 1]`.
    fn default() -> Self {
        SplineGrid::new(3, 5, -1.0, 1.0).expect("default grid is valid")
    }
}

impl SplineGrid {
    pub fn new(order: usize, intervals: usize, lo: f64, hi: f64) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            bail!(Config, "spline order must be in 1..={MAX_ORDER}, got {order}");
        }
        if intervals == 0 {
            bail!(Config, "spline grid needs at least one interval");
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            bail!(Config, "spline domain [{lo}, {hi}] is not a finite increasing interval");
        }
        let step = (hi - lo) / intervals as f64;
        let mut knots = Vec::with_capacity(intervals + 2 * order + 1);
        knots.extend(core::iter::repeat_n(lo, order));
        for i in 0..=intervals {
            knots.push(if i == intervals { hi } else { lo + step * i as f64 });
        }
        knots.extend(core::iter::repeat_n(hi, order));
        Ok(SplineGrid { order, intervals, lo, hi, knots })
    }

    /// Spline degree `k`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of interior intervals `G`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `G + k`.
    pub fn basis_count(&self) -> usize {
        self.intervals + self.order
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Knot span `s` with `knots[s] <= x < knots[s + 1]`; the right end of
    /// the domain belongs to the last non-empty span.
    fn span(&self, x: f64) -> usize {
        let k = self.order;
        let last = k + self.intervals - 1;
        if x >= self.hi {
            return last;
        }
        let cell = ((x - self.lo) / (self.hi - self.lo) * self.intervals as f64) as usize;
        let mut s = (k + cell).min(last);
        // Correct for rounding at cell borders.
        while s > k && x < self.knots[s] {
            s -= 1;
        }
        while s < last && x >= self.knots[s + 1] {
            s += 1;
        }
        s
    }

    /// Evaluates the `k + 1` basis functions that are non-zero at an
    /// already clamped `x`, writing them to `values[..=k]` and, if
    /// requested, their derivatives to `derivs[..=k]`. Returns the global
    /// index of the first of them.
    pub fn local_basis(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) -> usize {
        let k = self.order;
        let s = self.span(x);
        let t = &self.knots;
        let mut left = [0.0f64; MAX_ORDER + 1];
        let mut right = [0.0f64; MAX_ORDER + 1];
        let n = &mut values[..=k];
        n[0] = 1.0;
        let mut lower = [0.0f64; MAX_ORDER + 1];
        for j in 1..=k {
            if j == k {
                lower[..k].copy_from_slice(&n[..k]);
            }
            left[j] = x - t[s + 1 - j];
            right[j] = t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        if let Some(d) = derivs {
            // dB_{i,k} = k·B_{i,k-1}/(t_{i+k} − t_i) − k·B_{i+1,k-1}/(t_{i+k+1} − t_{i+1})
            let kf = k as f64;
            let first = s - k;
            for r in 0..=k {
                let i = first + r;
                let mut v = 0.0;
                if r >= 1 {
                    let den = t[i + k] - t[i];
                    if den > 0.0 {
                        v += kf * lower[r - 1] / den;
                    }
                }
                if r < k {
                    let den = t[i + k + 1] - t[i + 1];
                    if den > 0.0 {
                        v -= kf * lower[r] / den;
                    }
                }
                d[r] = v;
            }
        }
        s - k
    }

    /// All `G + k` basis values at `x` (clamped to the domain).
    pub fn basis_eval(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            bail!(Domain, "basis evaluation at non-finite x = {x}");
        }
        let mut out = vec![0.0; self.basis_count()];
        let mut local = [0.0; MAX_ORDER + 1];
        let first = self.local_basis(self.clamp(x), &mut local, None);
        out[first..=first + self.order].copy_from_slice(&local[..=self.order]);
        Ok(out)
    }

    /// Derivatives `dB_i/dx` of every basis function at the clamped `x`.
    pub fn basis_eval_deriv(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            bail!(Domain, "basis derivative at non-finite x = {x}");
        }
        let mut out = vec![0.0; self.basis_count()];
        let mut local = [0.0; MAX_ORDER + 1];
        let mut dlocal = [0.0; MAX_ORDER + 1];
        let first = self.local_basis(self.clamp(x), &mut local, Some(&mut dlocal));
        out[first..=first + self.order].copy_from_slice(&dlocal[..=self.order]);
        Ok(out)
    }

    /// Least-squares spline coefficients approximating `f` at `samples`.
    ///
    /// Solves the normal equations by Cholesky; the sample set must make the
    /// collocation matrix full column rank.
    pub fn fit_coefficients(&self, samples: &[f64], f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let n = self.basis_count();
        let mut ata = vec![0.0; n * n];
        let mut atb = vec![0.0; n];
        for &x in samples {
            let b = self.basis_eval(x)?;
            let y = f(x);
            for i in 0..n {
                atb[i] += b[i] * y;
                for j in 0..n {
                    ata[i * n + j] += b[i] * b[j];
                }
            }
        }
        crate::linalg::cholesky_solve(&mut ata, &mut atb, n)?;
        Ok(atb)
    }
}
