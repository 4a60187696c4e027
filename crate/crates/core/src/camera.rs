//! Pinhole camera geometry and depth-patch filtering.
//!
//! Converts noisy (pixel, depth) observations of a tracked joint into
//! world-frame 3D keypoints:
//!
//! ```text
//! p_world = T_WC * (d * K^-1 * [u, v, 1]^T)
//! ```
//!
//! Depth readings are cleaned in two stages before back-projection: a
//! spatial median/MAD outlier rejection over a small patch around the
//! keypoint pixel, then a temporal jump check against the previous
//! accepted depth. Frames failing either stage are dropped.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

/// Body joint tracked by the perception stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JointId {
    RightWrist,
    LeftWrist,
}

/// Calibrated pinhole camera with a rigid camera-to-world transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
    /// Rotation part of T_WC (camera axes expressed in the world frame).
    pub rotation_wc: Matrix3<T>,
    /// Translation part of T_WC (camera origin in the world frame).
    pub translation_wc: Vector3<T>,
    pub depth_min: T,
    pub depth_max: T,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CameraError {
    #[error("invalid camera parameter: {0}")]
    InvalidParameter(String),
    #[error("rotation is not a proper orthonormal matrix (residual {residual:.3e})")]
    ImproperRotation { residual: f64 },
    #[error("depth {depth:.3} m outside valid range [{min:.3}, {max:.3}] m")]
    DepthOutOfRange { depth: f64, min: f64, max: f64 },
}

impl<T: Real> Camera<T> {
    /// Builds and validates a camera model.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: u32,
        height: u32,
        rotation_wc: Matrix3<T>,
        translation_wc: Vector3<T>,
        depth_min: T,
        depth_max: T,
    ) -> Result<Self, CameraError> {
        if fx <= T::zero() || fy <= T::zero() {
            return Err(CameraError::InvalidParameter(
                "focal lengths must be positive".into(),
            ));
        }
        if cx < T::zero() || cx >= T::real(width as f64) {
            return Err(CameraError::InvalidParameter(
                "principal point cx outside image".into(),
            ));
        }
        if cy < T::zero() || cy >= T::real(height as f64) {
            return Err(CameraError::InvalidParameter(
                "principal point cy outside image".into(),
            ));
        }
        if !(T::zero() < depth_min && depth_min < depth_max) {
            return Err(CameraError::InvalidParameter(
                "require 0 < depth_min < depth_max".into(),
            ));
        }
        let residual = rotation_residual(&rotation_wc);
        if residual > 1e-9 {
            return Err(CameraError::ImproperRotation { residual });
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation_wc,
            translation_wc,
            depth_min,
            depth_max,
        })
    }

    /// Back-projects a pixel observation with an accepted depth into the
    /// world frame, carrying the timestamp and joint id through.
    pub fn backproject(
        &self,
        obs: &PixelObservation<T>,
        depth: T,
    ) -> Result<Keypoint3D<T>, CameraError> {
        if depth < self.depth_min || depth > self.depth_max {
            return Err(CameraError::DepthOutOfRange {
                depth: depth.to_f64_lossy(),
                min: self.depth_min.to_f64_lossy(),
                max: self.depth_max.to_f64_lossy(),
            });
        }
        let ray = Vector3::new(
            (obs.u - self.cx) / self.fx,
            (obs.v - self.cy) / self.fy,
            T::one(),
        );
        let camera_point = ray * depth;
        let position = self.rotation_wc * camera_point + self.translation_wc;
        Ok(Keypoint3D {
            position,
            timestamp: obs.timestamp,
            joint_id: obs.joint_id,
        })
    }

    /// Projects a world point into the image. Returns `None` when the point
    /// lies at or behind the camera plane (depth <= 0); pixel bounds are not
    /// checked here, see [`Camera::in_frustum`].
    pub fn project(&self, world: &Vector3<T>) -> Option<(T, T, T)> {
        let camera_point = self.rotation_wc.transpose() * (world - self.translation_wc);
        let depth = camera_point.z;
        if depth <= T::zero() {
            return None;
        }
        let u = self.fx * camera_point.x / depth + self.cx;
        let v = self.fy * camera_point.y / depth + self.cy;
        Some((u, v, depth))
    }

    /// True when the pixel lies inside the image and the depth is in range.
    pub fn in_frustum(&self, u: T, v: T, depth: T) -> bool {
        u >= T::zero()
            && u < T::real(self.width as f64)
            && v >= T::zero()
            && v < T::real(self.height as f64)
            && depth >= self.depth_min
            && depth <= self.depth_max
    }
}

fn rotation_residual<T: Real>(rotation: &Matrix3<T>) -> f64 {
    let gram = rotation.transpose() * rotation;
    let ortho = (gram - Matrix3::identity()).norm().to_f64_lossy();
    let det = (rotation.determinant() - T::one()).abs().to_f64_lossy();
    ortho.max(det)
}

/// Square patch of depth samples centered on the (rounded) keypoint pixel.
/// `None` entries mark invalid sensor readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthPatch<T> {
    pub half_size: u32,
    pub samples: Vec<Option<T>>,
}

impl<T: Real> DepthPatch<T> {
    pub fn new(half_size: u32, samples: Vec<Option<T>>) -> Self {
        let side = 2 * half_size as usize + 1;
        assert_eq!(
            samples.len(),
            side * side,
            "depth patch must contain (2w+1)^2 samples"
        );
        Self { half_size, samples }
    }

    /// Patch filled with one constant depth.
    pub fn constant(half_size: u32, depth: T) -> Self {
        let side = 2 * half_size as usize + 1;
        Self {
            half_size,
            samples: vec![Some(depth); side * side],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One raw 2D keypoint observation with its local depth patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelObservation<T: Real> {
    pub u: T,
    pub v: T,
    pub depth_patch: DepthPatch<T>,
    pub timestamp: T,
    pub joint_id: JointId,
}

/// Thresholds for the spatial/temporal depth consistency checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFilterConfig<T> {
    /// Patch half width `w`; the patch has side `2w + 1`.
    pub window_half_size: u32,
    /// Samples farther than `outlier_k * MAD` from the patch median are dropped.
    pub outlier_k: T,
    /// Minimum fraction of the full patch that must survive outlier removal.
    pub min_valid_fraction: T,
    /// Maximum allowed jump from the previous accepted depth, in meters.
    pub temporal_jump_max: T,
}

impl<T: Real> Default for DepthFilterConfig<T> {
    fn default() -> Self {
        Self {
            window_half_size: 2,
            outlier_k: T::real(3.0),
            min_valid_fraction: T::half(),
            temporal_jump_max: T::half(),
        }
    }
}

impl<T: Real> DepthFilterConfig<T> {
    pub fn validate(&self) -> Result<(), CameraError> {
        if self.outlier_k <= T::zero() {
            return Err(CameraError::InvalidParameter("outlier_k must be > 0".into()));
        }
        if self.min_valid_fraction <= T::zero() || self.min_valid_fraction > T::one() {
            return Err(CameraError::InvalidParameter(
                "min_valid_fraction must be in (0, 1]".into(),
            ));
        }
        if self.temporal_jump_max <= T::zero() {
            return Err(CameraError::InvalidParameter(
                "temporal_jump_max must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Why a frame's depth reading was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DepthRejection {
    #[error("all depth samples in the patch are invalid")]
    AllInvalid,
    #[error("too few samples survived outlier removal")]
    TooFewSurvivors,
    #[error("depth jumped more than the temporal threshold")]
    TemporalJump,
}

/// Filters one depth patch. Returns the accepted depth or the discard reason.
///
/// Spatial stage: invalid samples are dropped, then samples farther than
/// `outlier_k * MAD` from the median. If fewer than `min_valid_fraction` of
/// the full patch survives the frame is rejected; otherwise the survivor
/// mean is the depth estimate. Temporal stage: the estimate must lie within
/// `temporal_jump_max` of the previous accepted depth, when one exists.
pub fn filter_depth<T: Real>(
    obs: &PixelObservation<T>,
    cfg: &DepthFilterConfig<T>,
    previous: Option<(T, T)>,
) -> Result<T, DepthRejection> {
    let mut valid: Vec<T> = obs.depth_patch.samples.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(DepthRejection::AllInvalid);
    }
    let med = median(&mut valid);
    let mut deviations: Vec<T> = valid.iter().map(|&d| (d - med).abs()).collect();
    let mad = median(&mut deviations);
    let limit = cfg.outlier_k * mad;
    let survivors: Vec<T> = valid
        .iter()
        .copied()
        .filter(|&d| (d - med).abs() <= limit)
        .collect();

    let total = T::real(obs.depth_patch.len() as f64);
    let kept = T::real(survivors.len() as f64);
    if kept < cfg.min_valid_fraction * total {
        return Err(DepthRejection::TooFewSurvivors);
    }

    let mean = survivors.iter().fold(T::zero(), |acc, &d| acc + d) / kept;

    if let Some((prev_depth, _prev_time)) = previous {
        if (mean - prev_depth).abs() > cfg.temporal_jump_max {
            return Err(DepthRejection::TemporalJump);
        }
    }
    Ok(mean)
}

/// Median over a scratch slice (sorted in place).
fn median<T: Real>(values: &mut [T]) -> T {
    debug_assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("depth samples must be ordered"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) * T::half()
    }
}

/// Timestamped world-frame 3D keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint3D<T: Real> {
    pub position: Vector3<T>,
    pub timestamp: T,
    pub joint_id: JointId,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_camera() -> Camera<f64> {
        Camera::new(
            390.0,
            390.0,
            320.0,
            240.0,
            640,
            480,
            Matrix3::identity(),
            Vector3::zeros(),
            0.4,
            6.0,
        )
        .unwrap()
    }

    fn obs_at(u: f64, v: f64, patch: DepthPatch<f64>) -> PixelObservation<f64> {
        PixelObservation {
            u,
            v,
            depth_patch: patch,
            timestamp: 0.0,
            joint_id: JointId::RightWrist,
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let r = Camera::new(
            -1.0,
            390.0,
            320.0,
            240.0,
            640,
            480,
            Matrix3::<f64>::identity(),
            Vector3::zeros(),
            0.4,
            6.0,
        );
        assert!(matches!(r, Err(CameraError::InvalidParameter(_))));

        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let r = Camera::new(
            390.0,
            390.0,
            320.0,
            240.0,
            640,
            480,
            skewed,
            Vector3::zeros(),
            0.4,
            6.0,
        );
        assert!(matches!(r, Err(CameraError::ImproperRotation { .. })));
    }

    #[test]
    fn principal_point_ray() {
        let cam = test_camera();
        let obs = obs_at(320.0, 240.0, DepthPatch::constant(2, 2.0));
        let kp = cam.backproject(&obs, 2.0).unwrap();
        assert_relative_eq!(kp.position, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
    }

    #[test]
    fn unit_slope_ray() {
        let cam = test_camera();
        let obs = obs_at(320.0 + 390.0, 240.0, DepthPatch::constant(2, 1.0));
        let kp = cam.backproject(&obs, 1.0).unwrap();
        assert_relative_eq!(kp.position, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_depth_errors() {
        let cam = test_camera();
        let obs = obs_at(320.0, 240.0, DepthPatch::constant(2, 8.0));
        assert!(matches!(
            cam.backproject(&obs, 8.0),
            Err(CameraError::DepthOutOfRange { .. })
        ));
    }

    #[test]
    fn project_principal_point_and_behind() {
        let cam = test_camera();
        let (u, v, d) = cam.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_relative_eq!(u, 320.0, epsilon = 1e-12);
        assert_relative_eq!(v, 240.0, epsilon = 1e-12);
        assert_relative_eq!(d, 2.0, epsilon = 1e-12);
        assert!(cam.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    fn random_rigid_camera(rng: &mut ChaCha8Rng) -> Camera<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.0..3.0);
        let rotation = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        );
        let translation = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        Camera::new(
            390.0,
            410.0,
            321.5,
            239.5,
            640,
            480,
            rotation.into_inner(),
            translation,
            0.4,
            6.0,
        )
        .unwrap()
    }

    #[test]
    fn backproject_project_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let cam = random_rigid_camera(&mut rng);
            let u = rng.random_range(0.0..640.0);
            let v = rng.random_range(0.0..480.0);
            let d = rng.random_range(0.5..5.5);
            let obs = obs_at(u, v, DepthPatch::constant(0, d));
            let kp = cam.backproject(&obs, d).unwrap();
            let (u2, v2, d2) = cam.project(&kp.position).unwrap();
            assert!((u - u2).abs() < 1e-9, "u mismatch: {u} vs {u2}");
            assert!((v - v2).abs() < 1e-9, "v mismatch: {v} vs {v2}");
            assert!((d - d2).abs() < 1e-9, "d mismatch: {d} vs {d2}");
        }
    }

    #[test]
    fn constant_patch_accepted() {
        let cfg = DepthFilterConfig::default();
        let obs = obs_at(100.0, 100.0, DepthPatch::constant(2, 2.0));
        assert_eq!(filter_depth(&obs, &cfg, None), Ok(2.0));
    }

    #[test]
    fn single_outlier_removed() {
        // 24 samples at 2.0 m plus one at 9.9 m: median 2.0, MAD 0, so only
        // exact-median samples survive and the mean is exactly 2.0.
        let cfg = DepthFilterConfig::default();
        let mut samples = vec![Some(2.0); 25];
        samples[7] = Some(9.9);
        let obs = obs_at(100.0, 100.0, DepthPatch::new(2, samples));
        assert_eq!(filter_depth(&obs, &cfg, None), Ok(2.0));
    }

    #[test]
    fn hand_computed_median_mad_patch() {
        // Patch of 9: [1.9, 1.95, 2.0, 2.0, 2.0, 2.05, 2.1, 2.6, invalid].
        // Valid sorted: 1.9 1.95 2.0 2.0 2.0 2.05 2.1 2.6 -> median 2.0.
        // |dev| sorted: 0 0 0 0.05 0.05 0.1 0.1 0.6 -> MAD 0.05.
        // limit = 3 * 0.05 = 0.15, so 2.6 drops; survivors sum 14.0, mean 2.0.
        let cfg = DepthFilterConfig {
            window_half_size: 1,
            ..DepthFilterConfig::default()
        };
        let samples = vec![
            Some(1.9),
            Some(1.95),
            Some(2.0),
            Some(2.0),
            Some(2.0),
            Some(2.05),
            Some(2.1),
            Some(2.6),
            None,
        ];
        let obs = obs_at(50.0, 50.0, DepthPatch::new(1, samples));
        let got = filter_depth(&obs, &cfg, None).unwrap();
        assert_relative_eq!(got, 14.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn all_invalid_rejected() {
        let cfg = DepthFilterConfig::default();
        let obs = obs_at(1.0, 1.0, DepthPatch::new(1, vec![None; 9]));
        assert_eq!(filter_depth(&obs, &cfg, None), Err(DepthRejection::AllInvalid));
    }

    #[test]
    fn too_few_survivors_rejected() {
        // 3 of 9 valid entries is below the 0.5 patch fraction even before
        // outlier removal.
        let cfg = DepthFilterConfig {
            window_half_size: 1,
            ..DepthFilterConfig::default()
        };
        let mut samples = vec![None; 9];
        samples[0] = Some(2.0);
        samples[1] = Some(2.0);
        samples[2] = Some(2.0);
        let obs = obs_at(1.0, 1.0, DepthPatch::new(1, samples));
        assert_eq!(
            filter_depth(&obs, &cfg, None),
            Err(DepthRejection::TooFewSurvivors)
        );
    }

    #[test]
    fn temporal_jump_rejected() {
        let cfg = DepthFilterConfig::default();
        let obs = obs_at(1.0, 1.0, DepthPatch::constant(2, 2.8));
        assert_eq!(
            filter_depth(&obs, &cfg, Some((2.0, 0.0))),
            Err(DepthRejection::TemporalJump)
        );
        // 0.3 m jump stays within the 0.5 m default.
        let obs = obs_at(1.0, 1.0, DepthPatch::constant(2, 2.3));
        assert_eq!(filter_depth(&obs, &cfg, Some((2.0, 0.0))), Ok(2.3));
    }

    #[test]
    fn permutation_invariant_and_bounded() {
        let cfg = DepthFilterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut samples: Vec<Option<f64>> = (0..25)
                .map(|_| {
                    if rng.random_bool(0.9) {
                        Some(rng.random_range(1.5..2.5))
                    } else {
                        None
                    }
                })
                .collect();
            let baseline = filter_depth(
                &obs_at(1.0, 1.0, DepthPatch::new(2, samples.clone())),
                &cfg,
                None,
            );
            for _ in 0..5 {
                // Fisher-Yates shuffle with the seeded rng.
                for i in (1..samples.len()).rev() {
                    let j = rng.random_range(0..=i);
                    samples.swap(i, j);
                }
                let shuffled = filter_depth(
                    &obs_at(1.0, 1.0, DepthPatch::new(2, samples.clone())),
                    &cfg,
                    None,
                );
                assert_eq!(baseline, shuffled);
            }
            if let Ok(depth) = baseline {
                let valid: Vec<f64> = samples.iter().flatten().copied().collect();
                let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(depth >= lo && depth <= hi);
            }
        }
    }

    #[test]
    fn shrinking_temporal_threshold_never_accepts_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let depth = rng.random_range(1.0..3.0);
            let prev = rng.random_range(1.0..3.0);
            let loose = DepthFilterConfig {
                temporal_jump_max: rng.random_range(0.1..1.0),
                ..DepthFilterConfig::default()
            };
            let tight = DepthFilterConfig {
                temporal_jump_max: loose.temporal_jump_max * rng.random_range(0.1..1.0),
                ..loose
            };
            let obs = obs_at(1.0, 1.0, DepthPatch::constant(2, depth));
            let loose_ok = filter_depth(&obs, &loose, Some((prev, 0.0))).is_ok();
            let tight_ok = filter_depth(&obs, &tight, Some((prev, 0.0))).is_ok();
            assert!(!tight_ok || loose_ok, "tightening must not accept more");
        }
    }
}
