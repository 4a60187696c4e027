//! Expanding uncertainty envelopes around predicted ballistic trajectories.
//!
//! Each surviving prediction is wrapped in a ball of radius
//!
//! ```text
//! R(t) = alpha * t^2 + beta * t + gamma
//! ```
//!
//! growing with time since release: the quadratic term absorbs aerodynamic
//! model error, the linear and constant terms absorb release-state estimation
//! error. A prediction survives from its release instant until its ballistic
//! arc reaches the ground (`t < t_L + T_s`); dead trajectories are
//! non-threatening and pruned.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minco::MincoTrajectory;
use crate::real::Real;
use crate::release::BallisticTrajectory;

/// Coefficients of the time-expanding uncertainty radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyParams<T> {
    /// Quadratic growth, m/s^2-equivalent (aerodynamic effects).
    pub alpha: T,
    /// Linear growth, m/s (initial velocity error).
    pub beta: T,
    /// Base radius, m (initial position error); must be positive.
    pub gamma: T,
}

impl<T: Real> Default for UncertaintyParams<T> {
    fn default() -> Self {
        Self {
            alpha: T::real(0.2),
            beta: T::real(0.1),
            gamma: T::real(0.05),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum UncertaintyError {
    #[error("invalid uncertainty parameters (need alpha >= 0, beta >= 0, gamma > 0)")]
    InvalidParams,
    #[error("time since release must be >= 0, got {t:.6}")]
    NegativeTime { t: f64 },
    #[error("time {t:.6} outside survival window [0, {survival:.6}]")]
    OutsideSurvivalWindow { t: f64, survival: f64 },
    #[error("release point is at or below the ground plane")]
    ReleaseBelowGround,
}

impl<T: Real> UncertaintyParams<T> {
    pub fn validate(&self) -> Result<(), UncertaintyError> {
        if self.alpha >= T::zero() && self.beta >= T::zero() && self.gamma > T::zero() {
            Ok(())
        } else {
            Err(UncertaintyError::InvalidParams)
        }
    }

    /// Uncertainty radius `t` seconds after release.
    pub fn radius(&self, t: T) -> Result<T, UncertaintyError> {
        if t < T::zero() {
            return Err(UncertaintyError::NegativeTime { t: t.to_f64_lossy() });
        }
        Ok(self.radius_unchecked(t))
    }

    #[inline]
    pub fn radius_unchecked(&self, t: T) -> T {
        (self.alpha * t + self.beta) * t + self.gamma
    }

    /// Derivative dR/dt, used by the planner gradients.
    #[inline]
    pub fn radius_rate(&self, t: T) -> T {
        self.alpha * t * T::two() + self.beta
    }
}

/// Time from release until the drag-free arc crosses `z_ground`, i.e. the
/// positive root of `p_z + v_z t - g t^2 / 2 = z_ground`.
pub fn survival_duration<T: Real>(
    trajectory: &BallisticTrajectory<T>,
    z_ground: T,
) -> Result<T, UncertaintyError> {
    let height = trajectory.position.z - z_ground;
    if height <= T::zero() {
        return Err(UncertaintyError::ReleaseBelowGround);
    }
    let vz = trajectory.velocity.z;
    let g = trajectory.gravity;
    let disc = vz * vz + T::two() * g * height;
    Ok((vz + disc.sqrt()) / g)
}

/// A ballistic prediction wrapped in its uncertainty envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivingTrajectory<T: Real> {
    pub ballistic: BallisticTrajectory<T>,
    /// Survival duration T_s, seconds after release.
    pub survival: T,
    pub params: UncertaintyParams<T>,
}

impl<T: Real> SurvivingTrajectory<T> {
    /// Builds the envelope, computing the survival duration from the arc.
    pub fn new(
        ballistic: BallisticTrajectory<T>,
        z_ground: T,
        params: UncertaintyParams<T>,
    ) -> Result<Self, UncertaintyError> {
        params.validate()?;
        let survival = survival_duration(&ballistic, z_ground)?;
        Ok(Self {
            ballistic,
            survival,
            params,
        })
    }

    /// Absolute expiry instant `t_L + T_s`.
    pub fn expires_at(&self) -> T {
        self.ballistic.release_time + self.survival
    }

    /// Whether `point` lies inside the envelope `t` seconds after release.
    pub fn contains(&self, t: T, point: &Vector3<T>) -> Result<bool, UncertaintyError> {
        if t < T::zero() || t > self.survival {
            return Err(UncertaintyError::OutsideSurvivalWindow {
                t: t.to_f64_lossy(),
                survival: self.survival.to_f64_lossy(),
            });
        }
        let (center, _) = self.ballistic.eval_unchecked(t);
        let radius = self.params.radius_unchecked(t);
        Ok((point - center).norm_squared() <= radius * radius)
    }
}

/// Ordered collection of surviving predictions with a capacity cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivingSet<T: Real> {
    members: Vec<SurvivingTrajectory<T>>,
    capacity: usize,
}

impl<T: Real> SurvivingSet<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "surviving set capacity must be positive");
        Self {
            members: Vec::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SurvivingTrajectory<T>> {
        self.members.iter()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts a prediction, evicting the oldest release when full.
    pub fn push(&mut self, trajectory: SurvivingTrajectory<T>) {
        self.members.push(trajectory);
        while self.members.len() > self.capacity {
            let oldest = self
                .members
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    a.ballistic
                        .release_time
                        .partial_cmp(&b.ballistic.release_time)
                        .expect("release times are finite")
                })
                .map(|(i, _)| i)
                .expect("set is nonempty");
            self.members.remove(oldest);
        }
    }

    /// Drops every member whose survival window has closed (`t_now >= t_L + T_s`,
    /// the survival condition being strict). Order of the rest is preserved.
    pub fn prune(&mut self, t_now: T) {
        self.members.retain(|m| t_now < m.expires_at());
    }

    /// Pure variant of [`SurvivingSet::prune`].
    pub fn pruned(&self, t_now: T) -> Self {
        let mut out = self.clone();
        out.prune(t_now);
        out
    }

    /// Member with the latest release time, if any.
    pub fn most_recent(&self) -> Option<&SurvivingTrajectory<T>> {
        self.members.iter().max_by(|a, b| {
            a.ballistic
                .release_time
                .partial_cmp(&b.ballistic.release_time)
                .expect("release times are finite")
        })
    }

    /// Copy holding only the most recent release (temporal-ablation view).
    pub fn most_recent_only(&self) -> Self {
        let mut out = Self::new(self.capacity);
        if let Some(m) = self.most_recent() {
            out.push(*m);
        }
        out
    }

    /// True when the UAV position, or any sample of the planned trajectory
    /// on the planner's tau grid, lies inside a member envelope inflated by
    /// `safety_radius`. The set must already be pruned at `t_now`.
    pub fn risk_check(
        &self,
        uav_position: &Vector3<T>,
        plan: Option<(&MincoTrajectory<T>, T)>,
        t_now: T,
        safety_radius: T,
        samples_per_segment: usize,
    ) -> bool {
        if self.is_empty() {
            return false;
        }
        let inside = |member: &SurvivingTrajectory<T>, elapsed: T, point: &Vector3<T>| {
            if elapsed < T::zero() || elapsed > member.survival {
                return false;
            }
            let (center, _) = member.ballistic.eval_unchecked(elapsed);
            let radius = member.params.radius_unchecked(elapsed) + safety_radius;
            (point - center).norm_squared() <= radius * radius
        };
        for member in &self.members {
            if inside(member, t_now - member.ballistic.release_time, uav_position) {
                return true;
            }
            if let Some((trajectory, planned_at)) = plan {
                let k_per = T::real(samples_per_segment as f64);
                let mut offset = T::zero();
                for (seg, &duration) in trajectory.durations().iter().enumerate() {
                    for k in 0..samples_per_segment {
                        let local = duration * T::real(k as f64) / k_per;
                        let point = trajectory.eval_segment(seg, local, 0);
                        let sample_abs = planned_at + offset + local;
                        if inside(member, sample_abs - member.ballistic.release_time, &point) {
                            return true;
                        }
                    }
                    offset += duration;
                }
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::release::STANDARD_GRAVITY;
    use approx::assert_relative_eq;

    fn arc(release_time: f64, vz: f64, z0: f64) -> BallisticTrajectory<f64> {
        BallisticTrajectory {
            release_time,
            position: Vector3::new(0.0, 0.0, z0),
            velocity: Vector3::new(6.0, 0.0, vz),
            gravity: STANDARD_GRAVITY,
        }
    }

    #[test]
    fn radius_examples() {
        let params = UncertaintyParams::<f64>::default();
        assert_relative_eq!(params.radius(0.0).unwrap(), 0.05, epsilon = 1e-15);
        assert_relative_eq!(params.radius(1.0).unwrap(), 0.35, epsilon = 1e-15);
        assert!(params.radius(-0.1).is_err());
    }

    #[test]
    fn radius_nondecreasing() {
        let params = UncertaintyParams {
            alpha: 0.3,
            beta: 0.0,
            gamma: 0.02,
        };
        let mut prev = 0.0;
        for i in 0..100 {
            let r = params.radius(i as f64 * 0.02).unwrap();
            assert!(r >= prev);
            assert!(r >= params.gamma);
            prev = r;
        }
    }

    #[test]
    fn drop_survival_time() {
        // v_z = 0 and a 4.905 m drop takes exactly one second at g = 9.81.
        let t = survival_duration(&arc(0.0, 0.0, 4.905), 0.0).unwrap();
        assert_relative_eq!(t, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_formula_survival() {
        // v_z = 3, height 1.5, g = 9.81: (3 + sqrt(9 + 2*9.81*1.5)) / 9.81.
        let t = survival_duration(&arc(0.0, 3.0, 1.5), 0.0).unwrap();
        let expected = (3.0 + (9.0f64 + 2.0 * 9.81 * 1.5).sqrt()) / 9.81;
        assert_relative_eq!(t, expected, epsilon = 1e-12);
        assert_relative_eq!(t, 0.937736, epsilon = 1e-6);
    }

    #[test]
    fn survival_lands_on_ground() {
        for (vz, z0, zg) in [(3.0, 1.5, 0.0), (-1.0, 2.0, 0.3), (8.0, 0.5, 0.0)] {
            let traj = arc(0.0, vz, z0);
            let ts = survival_duration(&traj, zg).unwrap();
            let (p, _) = traj.eval(ts).unwrap();
            assert!((p.z - zg).abs() < 1e-9, "landing residual {}", p.z - zg);
        }
    }

    #[test]
    fn release_below_ground_errors() {
        assert!(matches!(
            survival_duration(&arc(0.0, 1.0, -0.1), 0.0),
            Err(UncertaintyError::ReleaseBelowGround)
        ));
    }

    #[test]
    fn containment_center_and_boundary() {
        let st =
            SurvivingTrajectory::new(arc(0.0, 3.0, 1.5), 0.0, UncertaintyParams::default())
                .unwrap();
        let t = 0.4;
        let (center, _) = st.ballistic.eval(t).unwrap();
        assert!(st.contains(t, &center).unwrap());
        let r = st.params.radius(t).unwrap();
        for axis in 0..3 {
            let mut outside = center;
            outside[axis] += r + 1e-6;
            assert!(!st.contains(t, &outside).unwrap());
            let mut inside = center;
            inside[axis] += r - 1e-6;
            assert!(st.contains(t, &inside).unwrap());
        }
        assert!(st.contains(st.survival + 0.1, &center).is_err());
    }

    #[test]
    fn envelope_grows_with_parameters() {
        let st =
            SurvivingTrajectory::new(arc(0.0, 3.0, 1.5), 0.0, UncertaintyParams::default())
                .unwrap();
        let bigger = SurvivingTrajectory {
            params: UncertaintyParams {
                alpha: st.params.alpha + 0.1,
                beta: st.params.beta + 0.1,
                gamma: st.params.gamma + 0.1,
            },
            ..st
        };
        let t = 0.5;
        let (center, _) = st.ballistic.eval(t).unwrap();
        let r = st.params.radius(t).unwrap();
        // Points on the smaller boundary stay inside the larger envelope.
        for axis in 0..3 {
            let mut point = center;
            point[axis] += r;
            assert!(st.contains(t, &point).unwrap());
            assert!(bigger.contains(t, &point).unwrap());
        }
    }

    #[test]
    fn prune_drops_dead_trajectories() {
        let mut set = SurvivingSet::new(8);
        set.prune(10.0);
        assert!(set.is_empty());

        let st =
            SurvivingTrajectory::new(arc(0.0, 3.0, 1.5), 0.0, UncertaintyParams::default())
                .unwrap();
        set.push(st);
        let mut after = set.clone();
        after.prune(1.0); // past T_s ~ 0.938
        assert!(after.is_empty());

        // Expiry boundary is strict: at exactly t_L + T_s the member dies.
        let mut boundary = set.clone();
        let expiry = st.expires_at();
        boundary.prune(expiry);
        assert!(boundary.is_empty());
        let mut just_before = set.clone();
        just_before.prune(expiry - 1e-9);
        assert_eq!(just_before.len(), 1);
    }

    #[test]
    fn prune_is_idempotent_and_order_preserving() {
        let mut set = SurvivingSet::new(8);
        for i in 0..5 {
            let st = SurvivingTrajectory::new(
                arc(0.1 * i as f64, 3.0, 1.5),
                0.0,
                UncertaintyParams::default(),
            )
            .unwrap();
            set.push(st);
        }
        let once = set.pruned(0.25);
        let twice = once.pruned(0.25);
        assert_eq!(once, twice);
        let times: Vec<f64> = once.iter().map(|m| m.ballistic.release_time).collect();
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(times, sorted, "insertion order must be preserved");
    }

    #[test]
    fn capacity_evicts_oldest_release() {
        let mut set = SurvivingSet::new(3);
        for i in 0..5 {
            let st = SurvivingTrajectory::new(
                arc(0.01 * i as f64, 5.0, 1.5),
                0.0,
                UncertaintyParams::default(),
            )
            .unwrap();
            set.push(st);
        }
        assert_eq!(set.len(), 3);
        let times: Vec<f64> = set.iter().map(|m| m.ballistic.release_time).collect();
        assert_eq!(times, vec![0.02, 0.03, 0.04]);
    }

    #[test]
    fn risk_check_empty_set_is_false() {
        let set = SurvivingSet::<f64>::new(4);
        assert!(!set.risk_check(&Vector3::zeros(), None, 0.0, 0.4, 8));
    }

    #[test]
    fn risk_check_center_and_clear_positions() {
        let mut set = SurvivingSet::new(4);
        let st =
            SurvivingTrajectory::new(arc(0.0, 3.0, 1.5), 0.0, UncertaintyParams::default())
                .unwrap();
        set.push(st);
        let t_now = 0.3;
        let (center, _) = st.ballistic.eval(t_now).unwrap();
        assert!(set.risk_check(&center, None, t_now, 0.4, 8));

        // Far away from the whole arc: no risk.
        let far = Vector3::new(100.0, 100.0, 50.0);
        assert!(!set.risk_check(&far, None, t_now, 0.4, 8));

        // Just outside the inflated envelope at the query time.
        let r = st.params.radius(t_now).unwrap() + 0.4 + 0.01;
        let offset = center + Vector3::new(0.0, r, 0.0);
        // The y offset keeps the point clear of every other instant of this
        // arc too (the arc stays in the y = 0 plane).
        assert!(!set.risk_check(&offset, None, t_now, 0.4, 8));
    }
}
