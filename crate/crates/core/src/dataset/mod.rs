//! Scene records, KITTI-layout file I/O, dataset splits and synthetic lane scenes.
//!
//! A dataset directory holds one file per image in each of
//!
//! * `label_2/<id>.txt`: annotations, one object per line in the KITTI label layout,
//! * `calib/<id>.txt`: calibration with a `P2:` projection matrix,
//! * `detections/<id>.txt` (optional): detector output, label layout plus a score.
//!
//! An optional `timestamps.txt` maps `image_id timestamp` per line.

mod kitti;
mod split;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::{Box2D, Box3D, CameraModel, Detection2D};

pub use kitti::{
    format_calibration, format_label_file, load_dataset, parse_calibration, parse_detection_file,
    parse_label_file, write_dataset, LabelRecord, DEFAULT_IMAGE_SIZE,
};
pub use split::{split_dataset, OrderingKey, SplitSpec};
pub use synth::{generate_synthetic, synthetic_camera, SeedPick, SynthSpec};

/// Object class used by the experiments.
pub const CAR: &str = "Car";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}, field {field}: {msg}")]
    MalformedLine {
        line: usize,
        field: usize,
        msg: String,
    },
    #[error("calibration has no P2 projection matrix")]
    MissingMatrix,
    #[error("malformed calibration matrix: {0}")]
    MalformedMatrix(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    InFile { path: PathBuf, msg: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

impl DatasetError {
    pub(crate) fn in_file(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        DatasetError::InFile {
            path: path.into(),
            msg: err.to_string(),
        }
    }
}

/// An annotated object: image box plus its footprint-centered 3D box.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub class: String,
    pub bbox: Box2D,
    pub box3d: Box3D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub image_id: String,
    pub timestamp: Option<f64>,
    pub camera: CameraModel,
    pub annotations: Vec<Annotation>,
    /// Raw detections of the class of interest, before any score threshold.
    pub detections: Vec<Detection2D>,
}

impl SceneRecord {
    pub fn count_class(&self, class: &str) -> usize {
        self.annotations.iter().filter(|a| a.class == class).count()
    }

    pub fn boxes_of(&self, class: &str) -> Vec<Box2D> {
        self.annotations
            .iter()
            .filter(|a| a.class == class)
            .map(|a| a.bbox)
            .collect()
    }
}
