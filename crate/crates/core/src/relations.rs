//! Pairwise spatial relations between grounded objects.
//!
//! A relation `(r_x, r_z, r_theta)` locates a target object relative to a source
//! object, either in the camera's frame (camera-centered) or in the source object's
//! own frame (object-centered). The angular component is the relative pose, or, in
//! elongation mode, the relative orientation of the objects' long axes modulo π.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::{fold_pi, wrap_angle, yaw_rotate};
use crate::geometry::Object3D;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RelationError {
    #[error("need at least two objects, got {0}")]
    TooFewObjects(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    #[serde(rename = "cc")]
    CameraCentered,
    #[serde(rename = "oc")]
    ObjectCentered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseMode {
    #[serde(rename = "full")]
    FullPose,
    Elongation,
}

impl PoseMode {
    /// Period of the angular relation component: 2π for full poses, π for elongation.
    pub fn period(self) -> f64 {
        match self {
            PoseMode::FullPose => std::f64::consts::TAU,
            PoseMode::Elongation => std::f64::consts::PI,
        }
    }

    /// Maps an angle into this mode's canonical range: `(-π, π]` or `[0, π)`.
    pub fn wrap(self, theta: f64) -> f64 {
        match self {
            PoseMode::FullPose => wrap_angle(theta),
            PoseMode::Elongation => fold_pi(theta),
        }
    }

    pub fn contains(self, theta: f64) -> bool {
        use std::f64::consts::PI;
        match self {
            PoseMode::FullPose => theta > -PI && theta <= PI,
            PoseMode::Elongation => (0.0..PI).contains(&theta),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoseMode::FullPose => "full",
            PoseMode::Elongation => "elongation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(PoseMode::FullPose),
            "elongation" => Some(PoseMode::Elongation),
            _ => None,
        }
    }
}

impl Frame {
    pub fn as_str(self) -> &'static str {
        match self {
            Frame::CameraCentered => "cc",
            Frame::ObjectCentered => "oc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cc" => Some(Frame::CameraCentered),
            "oc" => Some(Frame::ObjectCentered),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationConfig {
    pub frame: Frame,
    pub pose_mode: PoseMode,
}

/// Relative location `(r_x, r_z)` in meters and relative orientation `r_theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRelation {
    pub r_x: f64,
    pub r_z: f64,
    pub r_theta: f64,
}

/// Heading folded modulo π.
pub fn elongation_fold(theta: f64) -> f64 {
    fold_pi(theta)
}

/// Relation of `dst` as seen from `src`.
pub fn compute_pairwise(src: &Object3D, dst: &Object3D, cfg: RelationConfig) -> PairwiseRelation {
    let (s, d) = (&src.bbox, &dst.bbox);
    let (dx, dz) = (d.x - s.x, d.z - s.z);
    let (r_x, r_z) = match cfg.frame {
        Frame::CameraCentered => (dx, dz),
        Frame::ObjectCentered => yaw_rotate(dx, dz, -s.theta),
    };
    let r_theta = match cfg.pose_mode {
        PoseMode::FullPose => wrap_angle(d.theta - s.theta),
        PoseMode::Elongation => fold_pi(elongation_fold(d.theta) - elongation_fold(s.theta)),
    };
    PairwiseRelation { r_x, r_z, r_theta }
}

/// Target location and heading implied by applying `rel` to a source object at
/// `(x, z)` with heading `theta`. Inverse of [`compute_pairwise`] in the location
/// components; the heading is exact for full poses and correct modulo π for elongation.
pub fn apply_relation(
    x: f64,
    z: f64,
    theta: f64,
    rel: &PairwiseRelation,
    cfg: RelationConfig,
) -> (f64, f64, f64) {
    let (dx, dz) = match cfg.frame {
        Frame::CameraCentered => (rel.r_x, rel.r_z),
        Frame::ObjectCentered => yaw_rotate(rel.r_x, rel.r_z, theta),
    };
    let target_theta = match cfg.pose_mode {
        PoseMode::FullPose => wrap_angle(theta + rel.r_theta),
        PoseMode::Elongation => fold_pi(elongation_fold(theta) + rel.r_theta),
    };
    (x + dx, z + dz, target_theta)
}

/// All ordered-pair relations in a scene, tagged with the source index, in
/// `(source, target)` lexicographic order.
pub fn scene_relations(
    objects: &[Object3D],
    cfg: RelationConfig,
) -> Result<Vec<(usize, PairwiseRelation)>, RelationError> {
    if objects.len() < 2 {
        return Err(RelationError::TooFewObjects(objects.len()));
    }
    let mut out = Vec::with_capacity(objects.len() * (objects.len() - 1));
    for (i, src) in objects.iter().enumerate() {
        for (j, dst) in objects.iter().enumerate() {
            if i != j {
                out.push((i, compute_pairwise(src, dst, cfg)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Box3D, ObjectSize};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const CC_FULL: RelationConfig = RelationConfig {
        frame: Frame::CameraCentered,
        pose_mode: PoseMode::FullPose,
    };
    const OC_FULL: RelationConfig = RelationConfig {
        frame: Frame::ObjectCentered,
        pose_mode: PoseMode::FullPose,
    };

    fn obj(x: f64, z: f64, theta: f64) -> Object3D {
        let size = ObjectSize {
            l: 4.0,
            w: 1.6,
            h: 1.5,
        };
        Object3D {
            bbox: Box3D::new(x, z, size, theta),
            score: 1.0,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn elongation_fold_examples() {
        assert_eq!(elongation_fold(0.0), 0.0);
        assert!(elongation_fold(PI).abs() < 1e-12);
        assert!(close(elongation_fold(5.0 * PI / 4.0), PI / 4.0));
    }

    #[test]
    fn camera_centered_differences() {
        let r = compute_pairwise(&obj(0.0, 5.0, 0.0), &obj(2.0, 9.0, PI / 2.0), CC_FULL);
        assert_eq!((r.r_x, r.r_z), (2.0, 4.0));
        assert!(close(r.r_theta, PI / 2.0));
    }

    #[test]
    fn object_centered_identity_and_half_turn() {
        let (a, b) = (obj(1.0, 5.0, 0.0), obj(-2.0, 11.0, 0.3));
        assert_eq!(
            compute_pairwise(&a, &b, OC_FULL),
            compute_pairwise(&a, &b, CC_FULL)
        );

        let a = obj(1.0, 5.0, PI);
        let r = compute_pairwise(&a, &b, OC_FULL);
        assert!(close(r.r_x, 3.0) && close(r.r_z, -6.0));
        assert!(close(r.r_theta, wrap_angle(0.3 - PI)));
    }

    #[test]
    fn object_centered_places_heading_on_x() {
        // target one meter straight ahead of the source's heading
        let theta = 0.7;
        let (hx, hz) = yaw_rotate(1.0, 0.0, theta);
        let r = compute_pairwise(
            &obj(3.0, 10.0, theta),
            &obj(3.0 + hx, 10.0 + hz, theta),
            OC_FULL,
        );
        assert!(close(r.r_x, 1.0) && close(r.r_z, 0.0) && close(r.r_theta, 0.0));
    }

    #[test]
    fn elongation_relative_angle() {
        let cfg = RelationConfig {
            frame: Frame::CameraCentered,
            pose_mode: PoseMode::Elongation,
        };
        let r = compute_pairwise(&obj(0.0, 5.0, 0.1), &obj(0.0, 9.0, 0.1 + PI), cfg);
        assert!(r.r_theta.abs() < 1e-9 || (r.r_theta - PI).abs() < 1e-9);
        let r = compute_pairwise(&obj(0.0, 5.0, 3.0), &obj(0.0, 9.0, 0.2), cfg);
        assert!((0.0..PI).contains(&r.r_theta));
        assert!(close(r.r_theta, fold_pi(0.2 - 3.0)));
    }

    #[test]
    fn scene_relation_counts() {
        let two = [obj(0.0, 5.0, 0.0), obj(1.0, 6.0, 0.0)];
        assert_eq!(scene_relations(&two, CC_FULL).unwrap().len(), 2);
        let five: Vec<Object3D> = (0..5).map(|i| obj(i as f64, 5.0 + i as f64, 0.0)).collect();
        let rels = scene_relations(&five, CC_FULL).unwrap();
        assert_eq!(rels.len(), 20);
        assert_eq!(rels.iter().filter(|(s, _)| *s == 2).count(), 4);
        assert_eq!(
            scene_relations(&two[..1], CC_FULL),
            Err(RelationError::TooFewObjects(1))
        );
    }

    fn any_object() -> impl Strategy<Value = Object3D> {
        (-30.0..30.0f64, 1.0..60.0f64, -PI..PI).prop_map(|(x, z, t)| obj(x, z, t))
    }

    proptest! {
        #[test]
        fn cc_is_translation_covariant(a in any_object(), b in any_object(), tx in -10.0..10.0f64, tz in -10.0..10.0f64) {
            let r = compute_pairwise(&a, &b, CC_FULL);
            let shift = |o: &Object3D| obj(o.bbox.x + tx, o.bbox.z + tz, o.bbox.theta);
            let s = compute_pairwise(&shift(&a), &shift(&b), CC_FULL);
            prop_assert!((r.r_x - s.r_x).abs() < 1e-9 && (r.r_z - s.r_z).abs() < 1e-9);
        }

        #[test]
        fn cc_reverse_negates_location(a in any_object(), b in any_object()) {
            let ab = compute_pairwise(&a, &b, CC_FULL);
            let ba = compute_pairwise(&b, &a, CC_FULL);
            prop_assert!((ab.r_x + ba.r_x).abs() < 1e-12 && (ab.r_z + ba.r_z).abs() < 1e-12);
        }

        #[test]
        fn oc_is_rigid_motion_invariant(a in any_object(), b in any_object(), phi in -PI..PI, tx in -10.0..10.0f64, tz in -10.0..10.0f64) {
            let move_obj = |o: &Object3D| {
                let (x, z) = yaw_rotate(o.bbox.x, o.bbox.z, phi);
                obj(x + tx, z + tz, wrap_angle(o.bbox.theta + phi))
            };
            for mode in [PoseMode::FullPose, PoseMode::Elongation] {
                let cfg = RelationConfig { frame: Frame::ObjectCentered, pose_mode: mode };
                let r = compute_pairwise(&a, &b, cfg);
                let s = compute_pairwise(&move_obj(&a), &move_obj(&b), cfg);
                prop_assert!((r.r_x - s.r_x).abs() < 1e-9 && (r.r_z - s.r_z).abs() < 1e-9);
                let dtheta = (r.r_theta - s.r_theta).rem_euclid(mode.period());
                prop_assert!(dtheta < 1e-9 || mode.period() - dtheta < 1e-9);
            }
        }

        #[test]
        fn fold_is_idempotent_and_pi_periodic(t in -20.0..20.0f64) {
            let f = elongation_fold(t);
            prop_assert!((0.0..PI).contains(&f));
            prop_assert_eq!(elongation_fold(f), f);
            let g = elongation_fold(t + PI);
            prop_assert!((f - g).abs() < 1e-9 || (f - g).abs() > PI - 1e-9);
        }

        #[test]
        fn apply_inverts_compute(a in any_object(), b in any_object(), oc in any::<bool>()) {
            let cfg = RelationConfig {
                frame: if oc { Frame::ObjectCentered } else { Frame::CameraCentered },
                pose_mode: PoseMode::FullPose,
            };
            let r = compute_pairwise(&a, &b, cfg);
            let (x, z, t) = apply_relation(a.bbox.x, a.bbox.z, a.bbox.theta, &r, cfg);
            prop_assert!((x - b.bbox.x).abs() < 1e-9 && (z - b.bbox.z).abs() < 1e-9);
            let dt = wrap_angle(t - b.bbox.theta).abs();
            prop_assert!(dt < 1e-9 || (dt - 2.0 * PI).abs() < 1e-9);
        }
    }
}
