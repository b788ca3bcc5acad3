use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Annotation, DatasetError, SceneRecord, CAR};
use crate::geometry::{
    pose_to_viewpoint, project_box, Box3D, CameraModel, Detection2D, ObjectSize,
};

/// Which annotations are copied into the detection list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedPick {
    /// The car closest to the camera.
    #[default]
    Nearest,
    All,
    None,
}

/// Lane scenes: cars on parallel lane centerlines with jittered gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_scenes: usize,
    pub lanes: usize,
    /// The default puts lane centers on the 0.5 m proposal lattice.
    pub lane_width: f64,
    pub slots_per_lane: usize,
    /// Depth of the first slot of every lane.
    pub start_z: f64,
    /// Each scene is shifted in depth by one uniform draw from `[0, start_jitter)`,
    /// shared by all lanes.
    pub start_jitter: f64,
    pub spacing_mean: f64,
    pub spacing_sd: f64,
    /// Heading of lane `i` is `heading_set[i % len]`.
    pub heading_set: Vec<f64>,
    pub occupancy: f64,
    pub car_size: ObjectSize,
    pub seed_pick: SeedPick,
    pub rng_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_scenes: 200,
            lanes: 2,
            lane_width: 4.0,
            slots_per_lane: 4,
            start_z: 8.0,
            start_jitter: 4.0,
            spacing_mean: 9.0,
            spacing_sd: 1.0,
            heading_set: vec![-FRAC_PI_2, FRAC_PI_2],
            occupancy: 0.8,
            car_size: ObjectSize {
                l: 3.9,
                w: 1.6,
                h: 1.5,
            },
            seed_pick: SeedPick::Nearest,
            rng_seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSpec(m.to_string()));
        if self.lanes == 0 || self.slots_per_lane == 0 {
            return bad("lanes and slots_per_lane must be at least 1");
        }
        if !(self.lane_width > 0.0) {
            return bad("lane_width must be positive");
        }
        if !(0.0..=1.0).contains(&self.occupancy) {
            return bad("occupancy must lie in [0, 1]");
        }
        if !(self.spacing_sd >= 0.0 && self.start_jitter >= 0.0 && self.spacing_mean.is_finite()) {
            return bad("spacing_sd and start_jitter must be non-negative");
        }
        if self.heading_set.is_empty() {
            return bad("heading_set is empty");
        }
        if !self.car_size.is_valid() {
            return bad("car_size must be positive");
        }
        Ok(())
    }
}

/// KITTI-like left color camera: no skew, no translation, 1.65 m above the road.
pub fn synthetic_camera() -> CameraModel {
    CameraModel::from_intrinsics(721.5377, 609.5593, 172.854, 1242.0, 375.0)
        .expect("constant intrinsics are valid")
}

/// Generates `num_scenes` scenes with ids `000000`, `000001`, ...
///
/// Cars whose projection misses the image are dropped, so every annotation's image box
/// is the projection of its ground box.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<SceneRecord>, DatasetError> {
    spec.validate()?;
    let camera = synthetic_camera();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut scenes = Vec::with_capacity(spec.num_scenes);
    for i in 0..spec.num_scenes {
        let mut annotations = Vec::new();
        let shift = if spec.start_jitter > 0.0 {
            rng.gen_range(0.0..spec.start_jitter)
        } else {
            0.0
        };
        for lane in 0..spec.lanes {
            let x = (lane as f64 - (spec.lanes - 1) as f64 / 2.0) * spec.lane_width;
            let theta = spec.heading_set[lane % spec.heading_set.len()];
            let mut z = spec.start_z + shift;
            for slot in 0..spec.slots_per_lane {
                if slot > 0 {
                    let noise: f64 = rng.sample(StandardNormal);
                    z += spec.spacing_mean + spec.spacing_sd * noise;
                }
                if !rng.gen_bool(spec.occupancy) {
                    continue;
                }
                let box3d = Box3D::new(x, z, spec.car_size, theta);
                if let Ok(bbox) = project_box(&box3d, &camera) {
                    annotations.push(Annotation {
                        class: CAR.to_string(),
                        bbox,
                        box3d,
                    });
                }
            }
        }
        let as_detection = |a: &Annotation| Detection2D {
            bbox: a.bbox,
            viewpoint_alpha: pose_to_viewpoint(a.box3d.theta, a.box3d.x, a.box3d.z),
            score: 1.0,
        };
        let detections = match spec.seed_pick {
            SeedPick::Nearest => annotations
                .iter()
                .min_by(|a, b| {
                    let d = |a: &Annotation| a.box3d.x.hypot(a.box3d.z);
                    d(a).total_cmp(&d(b))
                })
                .map(as_detection)
                .into_iter()
                .collect(),
            SeedPick::All => annotations.iter().map(as_detection).collect(),
            SeedPick::None => Vec::new(),
        };
        scenes.push(SceneRecord {
            image_id: format!("{i:06}"),
            timestamp: None,
            camera: camera.clone(),
            annotations,
            detections,
        });
    }
    Ok(scenes)
}
