//! Conservative release detection and closed-form ballistic prediction.
//!
//! A grid instant is a release candidate when the smoothed wrist
//! acceleration magnitude exceeds a threshold while acceleration and
//! velocity point the same way (positive dot product). Each candidate seeds
//! a drag-free ballistic trajectory from the spline state at that instant:
//!
//! ```text
//! v(tau) = v0 + g * tau
//! p(tau) = p0 + v0 * tau + g * tau^2 / 2,     g = (0, 0, -g)
//! ```

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::spline::KeypointSpline;

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Threshold configuration for the release detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseDetectorConfig<T> {
    /// Acceleration magnitude threshold, m/s^2.
    pub accel_threshold: T,
}

impl<T: Real> Default for ReleaseDetectorConfig<T> {
    fn default() -> Self {
        Self {
            accel_threshold: T::real(25.0),
        }
    }
}

/// A potential release instant with the smoothed wrist state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseCandidate<T: Real> {
    pub time: T,
    pub position: Vector3<T>,
    pub velocity: Vector3<T>,
}

/// Scans an absolute time grid for release candidates.
///
/// The grid is anchored at t = 0 with spacing `grid_dt`, so candidate
/// instants are identical across windows; a cursor remembers the last
/// scanned index, which guarantees each wall-clock instant is emitted at
/// most once over the stream's lifetime.
#[derive(Debug, Clone)]
pub struct ReleaseDetector<T: Real> {
    cfg: ReleaseDetectorConfig<T>,
    grid_dt: T,
    next_index: Option<i64>,
}

impl<T: Real> ReleaseDetector<T> {
    pub fn new(cfg: ReleaseDetectorConfig<T>, grid_dt: T) -> Self {
        assert!(grid_dt > T::zero(), "scan grid spacing must be positive");
        Self {
            cfg,
            grid_dt,
            next_index: None,
        }
    }

    /// Scans grid instants in `(window_start, window_end]` against a freshly
    /// fitted spline. Instants already scanned by earlier calls are skipped.
    pub fn scan(
        &mut self,
        spline: &KeypointSpline<T>,
        window_start: T,
        window_end: T,
    ) -> Vec<ReleaseCandidate<T>> {
        let dt = self.grid_dt.to_f64_lossy();
        let first_after = |t: T| -> i64 {
            let k = (t.to_f64_lossy() / dt).floor() as i64;
            // Step past instants <= t (floating roundoff keeps this a loop).
            let mut k = k;
            while T::real(k as f64) * self.grid_dt <= t {
                k += 1;
            }
            while k > 0 && T::real((k - 1) as f64) * self.grid_dt > t {
                k -= 1;
            }
            k
        };
        let start_index = match self.next_index {
            Some(next) => next.max(first_after(window_start)),
            None => first_after(window_start),
        };
        let mut candidates = Vec::new();
        let mut k = start_index;
        loop {
            let t = T::real(k as f64) * self.grid_dt;
            if t > window_end {
                break;
            }
            if let Ok((position, velocity, acceleration)) = spline.eval(t) {
                let consistent = acceleration.dot(&velocity) > T::zero();
                if acceleration.norm() > self.cfg.accel_threshold && consistent {
                    candidates.push(ReleaseCandidate {
                        time: t,
                        position,
                        velocity,
                    });
                }
            }
            k += 1;
        }
        self.next_index = Some(k.max(self.next_index.unwrap_or(i64::MIN)));
        candidates
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum BallisticError {
    #[error("time since release must be >= 0, got {tau:.6}")]
    NegativeTau { tau: f64 },
}

/// Drag-free projectile motion from a candidate release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallisticTrajectory<T: Real> {
    /// Absolute release time, seconds.
    pub release_time: T,
    /// Release position, meters.
    pub position: Vector3<T>,
    /// Release velocity, m/s.
    pub velocity: Vector3<T>,
    /// Gravity magnitude (acts along -z), m/s^2.
    pub gravity: T,
}

impl<T: Real> BallisticTrajectory<T> {
    pub fn from_candidate(candidate: &ReleaseCandidate<T>, gravity: T) -> Self {
        Self {
            release_time: candidate.time,
            position: candidate.position,
            velocity: candidate.velocity,
            gravity,
        }
    }

    /// Position and velocity `tau` seconds after release.
    pub fn eval(&self, tau: T) -> Result<(Vector3<T>, Vector3<T>), BallisticError> {
        if tau < T::zero() {
            return Err(BallisticError::NegativeTau {
                tau: tau.to_f64_lossy(),
            });
        }
        Ok(self.eval_unchecked(tau))
    }

    /// Same as [`BallisticTrajectory::eval`] without the sign check; used on
    /// hot paths where `tau >= 0` is structural.
    #[inline]
    pub fn eval_unchecked(&self, tau: T) -> (Vector3<T>, Vector3<T>) {
        let g = Vector3::new(T::zero(), T::zero(), -self.gravity);
        let position = self.position + self.velocity * tau + g * (tau * tau * T::half());
        let velocity = self.velocity + g * tau;
        (position, velocity)
    }
}
