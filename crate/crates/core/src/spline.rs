//! Per-axis cubic smoothing splines over keypoint windows.
//!
//! Each axis of a keypoint window is fit independently with a cubic spline
//! minimizing
//!
//! ```text
//! sum_i (s(t_i) - y_i)^2 + lambda * integral s''(t)^2 dt
//! ```
//!
//! The spline space uses breakpoints at the sample times with the second and
//! second-to-last knots removed (the classic not-a-knot reduction), which
//! makes the basis dimension equal to the sample count. With `lambda = 0`
//! the fit is the interpolating cubic spline of that space and reproduces
//! cubic polynomials exactly; any polynomial wrist model of degree <= 3 is
//! therefore recovered along with its first two derivatives.
//!
//! Evaluation outside the fitted window is an error, never extrapolation.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Keypoint3D;
use crate::real::Real;

const DEGREE: usize = 3;

/// Window length, smoothing weight, and release-scan grid spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig<T> {
    /// Number of most-recent valid keypoints fitted per window (N >= 4).
    pub window_len: usize,
    /// Smoothing factor applied per axis (0 = interpolation).
    pub lambda: T,
    /// Spacing of the release-candidate scan grid, seconds.
    pub eval_grid_dt: T,
}

impl<T: Real> Default for SplineConfig<T> {
    fn default() -> Self {
        Self {
            window_len: 8,
            lambda: T::real(1e-4),
            eval_grid_dt: T::real(5e-3),
        }
    }
}

impl<T: Real> SplineConfig<T> {
    pub fn validate(&self) -> Result<(), SplineError> {
        if self.window_len < 4 {
            return Err(SplineError::TooFewPoints { got: self.window_len });
        }
        if self.lambda < T::zero() {
            return Err(SplineError::NegativeSmoothing);
        }
        if self.eval_grid_dt <= T::zero() {
            return Err(SplineError::InvalidGrid);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SplineError {
    #[error("spline fit needs at least 4 points, got {got}")]
    TooFewPoints { got: usize },
    #[error("timestamps must be strictly increasing")]
    NonMonotoneTimestamps,
    #[error("smoothing factor must be >= 0")]
    NegativeSmoothing,
    #[error("scan grid spacing must be > 0")]
    InvalidGrid,
    #[error("query time {t:.6} outside fitted domain [{min:.6}, {max:.6}]")]
    OutOfDomain { t: f64, min: f64, max: f64 },
    #[error("spline system is singular")]
    SingularFit,
}

/// One-dimensional cubic smoothing spline.
#[derive(Debug, Clone)]
pub struct SmoothingSpline<T: Real> {
    knots: Vec<T>,
    coeffs: Vec<T>,
    coeffs_d1: Vec<T>,
    coeffs_d2: Vec<T>,
}

impl<T: Real> SmoothingSpline<T> {
    /// Fits the penalized least-squares cubic spline through `(ts, ys)`.
    pub fn fit(ts: &[T], ys: &[T], lambda: T) -> Result<Self, SplineError> {
        let n = ts.len();
        if n < 4 {
            return Err(SplineError::TooFewPoints { got: n });
        }
        assert_eq!(ts.len(), ys.len());
        if lambda < T::zero() {
            return Err(SplineError::NegativeSmoothing);
        }
        if ts.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SplineError::NonMonotoneTimestamps);
        }

        let knots = not_a_knot_vector(ts);
        let collocation = collocation_matrix(&knots, ts);
        let rhs = DVector::from_column_slice(ys);

        let coeffs = if lambda == T::zero() {
            collocation
                .lu()
                .solve(&rhs)
                .ok_or(SplineError::SingularFit)?
        } else {
            let omega = roughness_matrix(&knots, n);
            let gram = collocation.transpose() * &collocation + omega * lambda;
            let atb = collocation.transpose() * rhs;
            gram.cholesky()
                .map(|ch| ch.solve(&atb))
                .ok_or(SplineError::SingularFit)?
        };

        let coeffs: Vec<T> = coeffs.iter().copied().collect();
        let (knots_d1, coeffs_d1) = derivative_coeffs(&knots, &coeffs, DEGREE);
        let (_, coeffs_d2) = derivative_coeffs(&knots_d1, &coeffs_d1, DEGREE - 1);

        Ok(Self {
            knots,
            coeffs,
            coeffs_d1,
            coeffs_d2,
        })
    }

    pub fn domain(&self) -> (T, T) {
        (self.knots[DEGREE], self.knots[self.knots.len() - 1 - DEGREE])
    }

    fn check_domain(&self, t: T) -> Result<(), SplineError> {
        let (lo, hi) = self.domain();
        if t < lo || t > hi {
            return Err(SplineError::OutOfDomain {
                t: t.to_f64_lossy(),
                min: lo.to_f64_lossy(),
                max: hi.to_f64_lossy(),
            });
        }
        Ok(())
    }

    /// Evaluates the spline or one of its first two derivatives.
    pub fn eval(&self, t: T, order: usize) -> Result<T, SplineError> {
        self.check_domain(t)?;
        Ok(match order {
            0 => eval_bspline(&self.knots, &self.coeffs, DEGREE, t),
            1 => eval_bspline(&self.knots[1..self.knots.len() - 1], &self.coeffs_d1, 2, t),
            2 => eval_bspline(&self.knots[2..self.knots.len() - 2], &self.coeffs_d2, 1, t),
            _ => panic!("smoothing spline exposes derivatives up to order 2"),
        })
    }

    /// Integral of the squared second derivative over the fitted domain.
    pub fn roughness(&self) -> T {
        let omega = roughness_matrix(&self.knots, self.coeffs.len());
        let c = DVector::from_column_slice(&self.coeffs);
        (c.transpose() * omega * c)[(0, 0)]
    }
}

/// Clamped cubic knot vector with interior knots at `ts[2..n-2]`.
fn not_a_knot_vector<T: Real>(ts: &[T]) -> Vec<T> {
    let n = ts.len();
    let mut knots = Vec::with_capacity(n + 4);
    knots.extend(std::iter::repeat_n(ts[0], DEGREE + 1));
    knots.extend_from_slice(&ts[2..n - 2]);
    knots.extend(std::iter::repeat_n(ts[n - 1], DEGREE + 1));
    knots
}

fn collocation_matrix<T: Real>(knots: &[T], ts: &[T]) -> DMatrix<T> {
    let n = ts.len();
    let mut matrix = DMatrix::zeros(n, n);
    for (row, &t) in ts.iter().enumerate() {
        let span = find_span(knots, DEGREE, n, t);
        let basis = basis_funs(knots, span, DEGREE, t);
        for (j, &value) in basis.iter().enumerate() {
            matrix[(row, span - DEGREE + j)] = value;
        }
    }
    matrix
}

/// Gram matrix of second derivatives, `Omega[i][j] = integral B_i'' B_j''`.
///
/// Second derivatives of cubic B-splines are piecewise linear, so two-point
/// Gauss-Legendre quadrature per span is exact.
fn roughness_matrix<T: Real>(knots: &[T], n: usize) -> DMatrix<T> {
    let mut omega = DMatrix::zeros(n, n);
    let inv_sqrt3 = T::real(1.0 / 3.0f64.sqrt());
    for span in DEGREE..n {
        let lo = knots[span];
        let hi = knots[span + 1];
        if hi <= lo {
            continue;
        }
        let mid = (lo + hi) * T::half();
        let half = (hi - lo) * T::half();
        for &sign in &[-T::one(), T::one()] {
            let t = mid + half * inv_sqrt3 * sign;
            let ders = ders_basis_funs(knots, span, DEGREE, t, 2);
            for a in 0..=DEGREE {
                for b in 0..=DEGREE {
                    let ia = span - DEGREE + a;
                    let ib = span - DEGREE + b;
                    omega[(ia, ib)] += half * ders[2][a] * ders[2][b];
                }
            }
        }
    }
    omega
}

/// Control coefficients of the derivative spline (degree drops by one, the
/// first and last knots fall away).
fn derivative_coeffs<T: Real>(knots: &[T], coeffs: &[T], degree: usize) -> (Vec<T>, Vec<T>) {
    let scale = T::real(degree as f64);
    let mut out = Vec::with_capacity(coeffs.len() - 1);
    for j in 0..coeffs.len() - 1 {
        let span = knots[j + degree + 1] - knots[j + 1];
        out.push(scale * (coeffs[j + 1] - coeffs[j]) / span);
    }
    (knots[1..knots.len() - 1].to_vec(), out)
}

fn eval_bspline<T: Real>(knots: &[T], coeffs: &[T], degree: usize, t: T) -> T {
    let span = find_span(knots, degree, coeffs.len(), t);
    let basis = basis_funs(knots, span, degree, t);
    let mut acc = T::zero();
    for (j, &b) in basis.iter().enumerate() {
        acc += b * coeffs[span - degree + j];
    }
    acc
}

/// Index of the knot span containing `t`, clamped to the last nonempty span.
fn find_span<T: Real>(knots: &[T], degree: usize, n: usize, t: T) -> usize {
    if t >= knots[n] {
        return n - 1;
    }
    if t <= knots[degree] {
        return degree;
    }
    let mut lo = degree;
    let mut hi = n;
    let mut mid = (lo + hi) / 2;
    while t < knots[mid] || t >= knots[mid + 1] {
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// Nonzero basis functions `B_{span-degree..=span}` at `t`.
fn basis_funs<T: Real>(knots: &[T], span: usize, degree: usize, t: T) -> Vec<T> {
    let mut basis = vec![T::zero(); degree + 1];
    let mut left = vec![T::zero(); degree + 1];
    let mut right = vec![T::zero(); degree + 1];
    basis[0] = T::one();
    for j in 1..=degree {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = T::zero();
        for r in 0..j {
            let temp = basis[r] / (right[r + 1] + left[j - r]);
            basis[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        basis[j] = saved;
    }
    basis
}

/// Nonzero basis functions and their derivatives up to `max_der` at `t`.
/// Standard triangular-table algorithm over the local knot differences.
fn ders_basis_funs<T: Real>(
    knots: &[T],
    span: usize,
    degree: usize,
    t: T,
    max_der: usize,
) -> Vec<Vec<T>> {
    let p = degree;
    let mut ndu = vec![vec![T::zero(); p + 1]; p + 1];
    let mut left = vec![T::zero(); p + 1];
    let mut right = vec![T::zero(); p + 1];
    ndu[0][0] = T::one();
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = T::zero();
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = vec![vec![T::zero(); p + 1]; max_der + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![T::zero(); p + 1]; 2];
    for r in 0..=p {
        let mut s1 = 0usize;
        let mut s2 = 1usize;
        a[0][0] = T::one();
        for k in 1..=max_der.min(p) {
            let mut d = T::zero();
            let rk = r as isize - k as isize;
            let pk = (p - k) as isize;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk { k - 1 } else { p - r };
            for j in j1..=j2 {
                a[s2][j] =
                    (a[s1][j] - a[s1][j - 1]) / ndu[(pk + 1) as usize][(rk + j as isize) as usize];
                d += a[s2][j] * ndu[(rk + j as isize) as usize][pk as usize];
            }
            if r as isize <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[(pk + 1) as usize][r];
                d += a[s2][k] * ndu[r][pk as usize];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = T::real(p as f64);
    for k in 1..=max_der.min(p) {
        for j in 0..=p {
            ders[k][j] *= factor;
        }
        factor *= T::real((p - k) as f64);
    }
    ders
}

/// Three independent per-axis smoothing splines over one keypoint window.
#[derive(Debug, Clone)]
pub struct KeypointSpline<T: Real> {
    axes: [SmoothingSpline<T>; 3],
    t_min: T,
    t_max: T,
}

impl<T: Real> KeypointSpline<T> {
    /// Fits the window (newest-last, strictly increasing timestamps).
    pub fn fit(window: &[Keypoint3D<T>], cfg: &SplineConfig<T>) -> Result<Self, SplineError> {
        if window.len() < 4 {
            return Err(SplineError::TooFewPoints { got: window.len() });
        }
        let ts: Vec<T> = window.iter().map(|k| k.timestamp).collect();
        let fit_axis = |axis: usize| -> Result<SmoothingSpline<T>, SplineError> {
            let ys: Vec<T> = window.iter().map(|k| k.position[axis]).collect();
            SmoothingSpline::fit(&ts, &ys, cfg.lambda)
        };
        let axes = [fit_axis(0)?, fit_axis(1)?, fit_axis(2)?];
        let (t_min, t_max) = axes[0].domain();
        Ok(Self { axes, t_min, t_max })
    }

    pub fn domain(&self) -> (T, T) {
        (self.t_min, self.t_max)
    }

    /// Smoothed position, velocity, and acceleration at `t`.
    pub fn eval(&self, t: T) -> Result<(Vector3<T>, Vector3<T>, Vector3<T>), SplineError> {
        let mut state = [[T::zero(); 3]; 3];
        for (axis, spline) in self.axes.iter().enumerate() {
            for (order, row) in state.iter_mut().enumerate() {
                row[axis] = spline.eval(t, order)?;
            }
        }
        Ok((
            Vector3::from_row_slice(&state[0]),
            Vector3::from_row_slice(&state[1]),
            Vector3::from_row_slice(&state[2]),
        ))
    }

    pub fn axis(&self, axis: usize) -> &SmoothingSpline<T> {
        &self.axes[axis]
    }
}
