//! Minimum-jerk piecewise-quintic trajectories parameterized by waypoints
//! and segment durations (the MINCO class).
//!
//! A trajectory of `M` quintic segments is uniquely determined by the start
//! and end states (position/velocity/acceleration), the `M - 1` interior
//! waypoints `q`, and the segment durations `T`: the polynomial coefficients
//! solve a banded linear system `M(T) c = b(q, boundary)` expressing the
//! boundary conditions, the waypoint interpolation, and C^4 continuity at
//! every junction. That solution is the unique minimizer of the jerk
//! integral among piecewise quintics satisfying boundary, waypoint, and C^2
//! junction constraints.
//!
//! Cost gradients over coefficients and durations pull back to `(q, T)`
//! through the adjoint of the same banded system: solve `M(T)^T lam = dF/dc`,
//! then `dJ/dq` reads off the waypoint rows of `lam` and
//! `dJ/dT_i = dF/dT_i - lam^T (dM/dT_i) c`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

/// Position/velocity/acceleration triple pinning one trajectory end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryState<T: Real> {
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
    pub acceleration: Vector3<T>,
}

impl<T: Real> BoundaryState<T> {
    pub fn at_rest(position: Vector3<T>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MincoError {
    #[error("segment durations must be positive")]
    NonPositiveDuration,
    #[error("expected {expected} waypoints for {segments} segments, got {got}")]
    WaypointCountMismatch {
        expected: usize,
        segments: usize,
        got: usize,
    },
    #[error("banded system is singular (internal fault)")]
    SingularSystem,
    #[error("time {t:.6} outside trajectory range [0, {total:.6}]")]
    OutOfRange { t: f64, total: f64 },
    #[error("derivative order {order} not supported (quintic segments)")]
    UnsupportedOrder { order: usize },
    #[error("gradient shape mismatch: expected {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
}

/// Per-segment quintic coefficients for the local monomial basis
/// `1, t, t^2, t^3, t^4, t^5`; one 3-vector per power.
pub type SegmentCoeffs<T> = [Vector3<T>; 6];

/// Piecewise-quintic trajectory with coefficients tied to `(q, T)` by the
/// banded mapping. Immutable after construction.
#[derive(Debug, Clone)]
pub struct MincoTrajectory<T: Real> {
    start: BoundaryState<T>,
    end: BoundaryState<T>,
    waypoints: Vec<Vector3<T>>,
    durations: Vec<T>,
    coeffs: Vec<SegmentCoeffs<T>>,
    solver: BandedLu<T>,
}

impl<T: Real> MincoTrajectory<T> {
    /// Solves the banded system for the segment coefficients.
    pub fn construct(
        waypoints: &[Vector3<T>],
        durations: &[T],
        start: &BoundaryState<T>,
        end: &BoundaryState<T>,
    ) -> Result<Self, MincoError> {
        let segments = durations.len();
        if segments == 0 || durations.iter().any(|&t| t <= T::zero()) {
            return Err(MincoError::NonPositiveDuration);
        }
        if waypoints.len() != segments - 1 {
            return Err(MincoError::WaypointCountMismatch {
                expected: segments - 1,
                segments,
                got: waypoints.len(),
            });
        }

        let n = 6 * segments;
        let band = if segments == 1 { 5 } else { 6 };
        let mut system = BandedLu::new(n, band);
        let mut rhs = vec![Vector3::zeros(); n];

        // Start boundary: p, v, a of segment 0 at local time 0.
        system.set(0, 0, T::one());
        system.set(1, 1, T::one());
        system.set(2, 2, T::two());
        rhs[0] = start.position;
        rhs[1] = start.velocity;
        rhs[2] = start.acceleration;

        for (i, &t) in durations.iter().enumerate().take(segments - 1) {
            let base = 6 * i;
            let row = base + 3;
            let t2 = t * t;
            let t3 = t2 * t;
            let t4 = t3 * t;
            let t5 = t4 * t;

            // Jerk continuity.
            system.set(row, base + 3, T::real(6.0));
            system.set(row, base + 4, T::real(24.0) * t);
            system.set(row, base + 5, T::real(60.0) * t2);
            system.set(row, base + 9, T::real(-6.0));
            // Snap continuity.
            system.set(row + 1, base + 4, T::real(24.0));
            system.set(row + 1, base + 5, T::real(120.0) * t);
            system.set(row + 1, base + 10, T::real(-24.0));
            // Waypoint interpolation.
            system.set(row + 2, base, T::one());
            system.set(row + 2, base + 1, t);
            system.set(row + 2, base + 2, t2);
            system.set(row + 2, base + 3, t3);
            system.set(row + 2, base + 4, t4);
            system.set(row + 2, base + 5, t5);
            rhs[row + 2] = waypoints[i];
            // Position continuity.
            system.set(row + 3, base, T::one());
            system.set(row + 3, base + 1, t);
            system.set(row + 3, base + 2, t2);
            system.set(row + 3, base + 3, t3);
            system.set(row + 3, base + 4, t4);
            system.set(row + 3, base + 5, t5);
            system.set(row + 3, base + 6, -T::one());
            // Velocity continuity.
            system.set(row + 4, base + 1, T::one());
            system.set(row + 4, base + 2, T::two() * t);
            system.set(row + 4, base + 3, T::real(3.0) * t2);
            system.set(row + 4, base + 4, T::real(4.0) * t3);
            system.set(row + 4, base + 5, T::real(5.0) * t4);
            system.set(row + 4, base + 7, -T::one());
            // Acceleration continuity.
            system.set(row + 5, base + 2, T::two());
            system.set(row + 5, base + 3, T::real(6.0) * t);
            system.set(row + 5, base + 4, T::real(12.0) * t2);
            system.set(row + 5, base + 5, T::real(20.0) * t3);
            system.set(row + 5, base + 8, -T::two());
        }

        // End boundary: p, v, a of the last segment at its local duration.
        let base = 6 * (segments - 1);
        let t = durations[segments - 1];
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        system.set(n - 3, base, T::one());
        system.set(n - 3, base + 1, t);
        system.set(n - 3, base + 2, t2);
        system.set(n - 3, base + 3, t3);
        system.set(n - 3, base + 4, t4);
        system.set(n - 3, base + 5, t5);
        system.set(n - 2, base + 1, T::one());
        system.set(n - 2, base + 2, T::two() * t);
        system.set(n - 2, base + 3, T::real(3.0) * t2);
        system.set(n - 2, base + 4, T::real(4.0) * t3);
        system.set(n - 2, base + 5, T::real(5.0) * t4);
        system.set(n - 1, base + 2, T::two());
        system.set(n - 1, base + 3, T::real(6.0) * t);
        system.set(n - 1, base + 4, T::real(12.0) * t2);
        system.set(n - 1, base + 5, T::real(20.0) * t3);
        rhs[n - 3] = end.position;
        rhs[n - 2] = end.velocity;
        rhs[n - 1] = end.acceleration;

        system.factorize()?;
        system.solve(&mut rhs);

        let coeffs: Vec<SegmentCoeffs<T>> = (0..segments)
            .map(|i| {
                let r = 6 * i;
                [rhs[r], rhs[r + 1], rhs[r + 2], rhs[r + 3], rhs[r + 4], rhs[r + 5]]
            })
            .collect();

        Ok(Self {
            start: *start,
            end: *end,
            waypoints: waypoints.to_vec(),
            durations: durations.to_vec(),
            coeffs,
            solver: system,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[T] {
        &self.durations
    }

    pub fn waypoints(&self) -> &[Vector3<T>] {
        &self.waypoints
    }

    pub fn coefficients(&self) -> &[SegmentCoeffs<T>] {
        &self.coeffs
    }

    pub fn start(&self) -> &BoundaryState<T> {
        &self.start
    }

    pub fn end(&self) -> &BoundaryState<T> {
        &self.end
    }

    pub fn total_duration(&self) -> T {
        self.durations.iter().fold(T::zero(), |acc, &t| acc + t)
    }

    /// Segment index and local time for a global time in `[0, T_u]`.
    fn locate(&self, t: T) -> (usize, T) {
        let mut remaining = t;
        for (i, &duration) in self.durations.iter().enumerate() {
            if remaining < duration || i == self.durations.len() - 1 {
                return (i, remaining);
            }
            remaining -= duration;
        }
        unreachable!("durations are nonempty")
    }

    /// Evaluates the trajectory or a derivative (order 0..=5) at global `t`.
    pub fn eval(&self, t: T, order: usize) -> Result<Vector3<T>, MincoError> {
        if order > 5 {
            return Err(MincoError::UnsupportedOrder { order });
        }
        let total = self.total_duration();
        if t < T::zero() || t > total {
            return Err(MincoError::OutOfRange {
                t: t.to_f64_lossy(),
                total: total.to_f64_lossy(),
            });
        }
        let (segment, local) = self.locate(t);
        Ok(self.eval_segment(segment, local, order))
    }

    /// Evaluates one segment's polynomial (or derivative) at local time.
    pub fn eval_segment(&self, segment: usize, local: T, order: usize) -> Vector3<T> {
        let coeffs = &self.coeffs[segment];
        let mut acc = Vector3::zeros();
        // Horner over powers j = order..=5 with falling-factorial factors.
        for j in (order..6).rev() {
            let mut factor = T::one();
            for k in 0..order {
                factor *= T::real((j - k) as f64);
            }
            acc = acc * local + coeffs[j] * factor;
        }
        acc
    }

    /// Pulls gradients over coefficients and durations back to the waypoint
    /// and duration parameters through the adjoint banded solve.
    pub fn propagate_gradients(
        &self,
        d_cost_d_coeffs: &[SegmentCoeffs<T>],
        d_cost_d_durations: &[T],
    ) -> Result<(Vec<Vector3<T>>, Vec<T>), MincoError> {
        let segments = self.segment_count();
        if d_cost_d_coeffs.len() != segments {
            return Err(MincoError::ShapeMismatch {
                expected: segments,
                got: d_cost_d_coeffs.len(),
            });
        }
        if d_cost_d_durations.len() != segments {
            return Err(MincoError::ShapeMismatch {
                expected: segments,
                got: d_cost_d_durations.len(),
            });
        }

        let n = 6 * segments;
        let mut adjoint: Vec<Vector3<T>> = Vec::with_capacity(n);
        for seg in d_cost_d_coeffs {
            adjoint.extend_from_slice(seg);
        }
        self.solver.solve_transpose(&mut adjoint);

        let waypoint_grad: Vec<Vector3<T>> =
            (0..segments - 1).map(|i| adjoint[6 * i + 5]).collect();

        let mut duration_grad = Vec::with_capacity(segments);
        for i in 0..segments {
            let t = self.durations[i];
            // lam^T (dM/dT_i) c: each constraint row differentiates to the
            // next-higher derivative of segment i at its end time.
            let coupling = if i + 1 < segments {
                let r = 6 * i + 3;
                adjoint[r].dot(&self.eval_segment(i, t, 4))
                    + adjoint[r + 1].dot(&self.eval_segment(i, t, 5))
                    + (adjoint[r + 2] + adjoint[r + 3]).dot(&self.eval_segment(i, t, 1))
                    + adjoint[r + 4].dot(&self.eval_segment(i, t, 2))
                    + adjoint[r + 5].dot(&self.eval_segment(i, t, 3))
            } else {
                adjoint[n - 3].dot(&self.eval_segment(i, t, 1))
                    + adjoint[n - 2].dot(&self.eval_segment(i, t, 2))
                    + adjoint[n - 1].dot(&self.eval_segment(i, t, 3))
            };
            duration_grad.push(d_cost_d_durations[i] - coupling);
        }
        Ok((waypoint_grad, duration_grad))
    }

    /// Closed-form jerk integral over the whole trajectory.
    pub fn jerk_integral(&self) -> T {
        let mut total = T::zero();
        for (seg, &t) in self.durations.iter().enumerate() {
            let c3 = self.coeffs[seg][3];
            let c4 = self.coeffs[seg][4];
            let c5 = self.coeffs[seg][5];
            let t2 = t * t;
            let t3 = t2 * t;
            let t4 = t3 * t;
            let t5 = t4 * t;
            total += T::real(36.0) * c3.norm_squared() * t
                + T::real(144.0) * c3.dot(&c4) * t2
                + (T::real(192.0) * c4.norm_squared() + T::real(240.0) * c3.dot(&c5)) * t3
                + T::real(720.0) * c4.dot(&c5) * t4
                + T::real(720.0) * c5.norm_squared() * t5;
        }
        total
    }
}

/// Row-major banded matrix with equal lower/upper bandwidth and an in-place
/// LU factorization without pivoting. The trajectory system is assembled in
/// an order that keeps the elimination pivot-free for positive durations.
#[derive(Debug, Clone)]
struct BandedLu<T> {
    n: usize,
    band: usize,
    data: Vec<T>,
}

impl<T: Real> BandedLu<T> {
    fn new(n: usize, band: usize) -> Self {
        Self {
            n,
            band,
            data: vec![T::zero(); n * (2 * band + 1)],
        }
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n && col < self.n);
        debug_assert!(col + self.band >= row && col <= row + self.band);
        row * (2 * self.band + 1) + (col + self.band - row)
    }

    #[inline]
    fn get(&self, row: usize, col: usize) -> T {
        self.data[self.idx(row, col)]
    }

    #[inline]
    fn set(&mut self, row: usize, col: usize, value: T) {
        let i = self.idx(row, col);
        self.data[i] = value;
    }

    fn factorize(&mut self) -> Result<(), MincoError> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.get(k, k);
            if pivot == T::zero() || !pivot.is_finite() {
                return Err(MincoError::SingularSystem);
            }
            let hi = (k + self.band).min(n - 1);
            for i in k + 1..=hi {
                let factor = self.get(i, k) / pivot;
                self.set(i, k, factor);
                for j in k + 1..=hi {
                    let updated = self.get(i, j) - factor * self.get(k, j);
                    self.set(i, j, updated);
                }
            }
        }
        Ok(())
    }

    /// Solves `A x = b` in place after factorization (unit-diagonal L).
    fn solve(&self, rhs: &mut [Vector3<T>]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.band);
            for j in lo..i {
                let l = self.get(i, j);
                let term = rhs[j] * l;
                rhs[i] -= term;
            }
        }
        for i in (0..n).rev() {
            let hi = (i + self.band).min(n - 1);
            for j in i + 1..=hi {
                let u = self.get(i, j);
                let term = rhs[j] * u;
                rhs[i] -= term;
            }
            rhs[i] /= self.get(i, i);
        }
    }

    /// Solves `A^T x = b` in place using the same factors (`A^T = U^T L^T`).
    fn solve_transpose(&self, rhs: &mut [Vector3<T>]) {
        let n = self.n;
        for i in 0..n {
            let lo = i.saturating_sub(self.band);
            for j in lo..i {
                let u = self.get(j, i);
                let term = rhs[j] * u;
                rhs[i] -= term;
            }
            rhs[i] /= self.get(i, i);
        }
        for i in (0..n).rev() {
            let hi = (i + self.band).min(n - 1);
            for j in i + 1..=hi {
                let l = self.get(j, i);
                let term = rhs[j] * l;
                rhs[i] -= term;
            }
        }
    }
}
