use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Annotation, DatasetError, SceneRecord, CAR};
use crate::geometry::{pose_to_viewpoint, Box2D, Box3D, CameraModel, Detection2D};

/// Image size assumed when a calibration file does not state one.
pub const DEFAULT_IMAGE_SIZE: (f64, f64) = (1242.0, 375.0);

const LABEL_FIELDS: usize = 15;
const DONT_CARE: &str = "DontCare";

/// One line of a label or detection file, fields kept as written.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// `x1 y1 x2 y2`, pixels.
    pub bbox: [f64; 4],
    /// `h w l`, meters.
    pub dimensions: [f64; 3],
    /// Bottom center `x y z` in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    pub fn box2d(&self) -> Option<Box2D> {
        let [x1, y1, x2, y2] = self.bbox;
        Box2D::new(x1, y1, x2, y2)
    }

    /// Footprint-centered ground box; `None` for don't-care regions and records without
    /// 3D extent (e.g. 2D-only detector output).
    pub fn box3d(&self) -> Option<Box3D> {
        let [h, w, l] = self.dimensions;
        if self.class == DONT_CARE || !(h > 0.0 && w > 0.0 && l > 0.0) {
            return None;
        }
        let b = Box3D {
            x: self.location[0],
            z: self.location[2],
            l,
            w,
            h,
            theta: self.rotation_y,
        };
        b.is_valid().then_some(b)
    }

    pub fn to_detection(&self) -> Option<Detection2D> {
        Some(Detection2D {
            bbox: self.box2d()?,
            viewpoint_alpha: self.alpha,
            score: self.score.unwrap_or(1.0),
        })
    }

    /// Record for an annotated ground box; `y` is the ground plane below a camera at
    /// `camera_height`.
    pub fn from_annotation(a: &Annotation, camera_height: f64) -> Self {
        let b = &a.box3d;
        Self {
            class: a.class.clone(),
            truncated: 0.0,
            occluded: 0,
            alpha: pose_to_viewpoint(b.theta, b.x, b.z),
            bbox: [a.bbox.x1, a.bbox.y1, a.bbox.x2, a.bbox.y2],
            dimensions: [b.h, b.w, b.l],
            location: [b.x, camera_height, b.z],
            rotation_y: b.theta,
            score: None,
        }
    }

    /// Detector-output record with the 3D fields set to the devkit's "unknown" values.
    pub fn from_detection(d: &Detection2D, class: &str) -> Self {
        Self {
            class: class.to_string(),
            truncated: -1.0,
            occluded: -1,
            alpha: d.viewpoint_alpha,
            bbox: [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2],
            dimensions: [-1.0, -1.0, -1.0],
            location: [-1000.0, -1000.0, -1000.0],
            rotation_y: -10.0,
            score: Some(d.score),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{} {} {} {}",
            self.class, self.truncated, self.occluded, self.alpha
        );
        for v in self
            .bbox
            .iter()
            .chain(&self.dimensions)
            .chain(&self.location)
        {
            let _ = write!(s, " {v}");
        }
        let _ = write!(s, " {}", self.rotation_y);
        if let Some(score) = self.score {
            let _ = write!(s, " {score}");
        }
        s
    }
}

fn parse_records(text: &str, with_score: bool) -> Result<Vec<LabelRecord>, DatasetError> {
    let expected = LABEL_FIELDS + usize::from(with_score);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != expected {
            return Err(DatasetError::MalformedLine {
                line,
                field: fields.len().min(expected),
                msg: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64, DatasetError> {
            fields[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::MalformedLine {
                    line,
                    field: k,
                    msg: format!("bad number `{}`", fields[k]),
                })
        };
        let occluded = fields[2]
            .parse::<i32>()
            .map_err(|_| DatasetError::MalformedLine {
                line,
                field: 2,
                msg: format!("bad occlusion level `{}`", fields[2]),
            })?;
        out.push(LabelRecord {
            class: fields[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if with_score { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

/// Parses a label file. Field indices in errors are zero-based.
pub fn parse_label_file(text: &str) -> Result<Vec<LabelRecord>, DatasetError> {
    parse_records(text, false)
}

/// Parses detector output: the label layout followed by a score.
pub fn parse_detection_file(text: &str) -> Result<Vec<LabelRecord>, DatasetError> {
    parse_records(text, true)
}

pub fn format_label_file(records: &[LabelRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

fn malformed(msg: impl Into<String>) -> DatasetError {
    DatasetError::MalformedMatrix(msg.into())
}

fn parse_reals(values: &str) -> Result<Vec<f64>, DatasetError> {
    values
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("bad number `{t}`")))
        })
        .collect()
}

/// Reads the left color camera from a calibration file.
///
/// Besides the `P2:` entry, optional `image_size: W H` and `camera_height: h` lines are
/// honored; other keys are ignored.
pub fn parse_calibration(text: &str) -> Result<CameraModel, DatasetError> {
    let mut p2 = None;
    let mut size = DEFAULT_IMAGE_SIZE;
    let mut height = None;
    for line in text.lines() {
        let Some((key, values)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "P2" => {
                let v = parse_reals(values)?;
                if v.len() != 12 {
                    return Err(malformed(format!("P2 has {} values, expected 12", v.len())));
                }
                let mut m = [[0.0; 4]; 3];
                for (k, x) in v.into_iter().enumerate() {
                    m[k / 4][k % 4] = x;
                }
                p2 = Some(m);
            }
            "image_size" => match parse_reals(values)?.as_slice() {
                &[w, h] => size = (w, h),
                _ => return Err(malformed("image_size needs two values")),
            },
            "camera_height" => match parse_reals(values)?.as_slice() {
                &[h] if h > 0.0 => height = Some(h),
                _ => return Err(malformed("camera_height needs one positive value")),
            },
            _ => {}
        }
    }
    let p2 = p2.ok_or(DatasetError::MissingMatrix)?;
    let cam = CameraModel::new(p2, size.0, size.1).map_err(|e| malformed(e.to_string()))?;
    Ok(match height {
        Some(h) => cam.with_camera_height(h),
        None => cam,
    })
}

pub fn format_calibration(cam: &CameraModel) -> String {
    let mut s = String::from("P2:");
    for v in cam.projection.iter().flatten() {
        let _ = write!(s, " {v}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "image_size: {} {}", cam.image_width, cam.image_height);
    let _ = writeln!(s, "camera_height: {}", cam.camera_height);
    s
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), DatasetError> {
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn image_ids(label_dir: &Path) -> Result<Vec<String>, DatasetError> {
    let io = |source| DatasetError::Io {
        path: label_dir.to_path_buf(),
        source,
    };
    let mut ids = Vec::new();
    for entry in fs::read_dir(label_dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn parse_timestamps(path: &Path) -> Result<HashMap<String, f64>, DatasetError> {
    let text = read(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => {}
            [id, t] => {
                let t: f64 = t.parse().map_err(|_| {
                    DatasetError::in_file(path, format!("line {}: bad timestamp `{t}`", i + 1))
                })?;
                out.insert(id.to_string(), t);
            }
            _ => {
                return Err(DatasetError::in_file(
                    path,
                    format!("line {}: expected `image_id timestamp`", i + 1),
                ))
            }
        }
    }
    Ok(out)
}

/// Loads every image listed under `label_2/`. Annotations keep all classes; detections
/// are filtered to `class`.
pub fn load_dataset(root: &Path, class: &str) -> Result<Vec<SceneRecord>, DatasetError> {
    let timestamps_path = root.join("timestamps.txt");
    let timestamps = if timestamps_path.exists() {
        parse_timestamps(&timestamps_path)?
    } else {
        HashMap::new()
    };
    let mut scenes = Vec::new();
    for id in image_ids(&root.join("label_2"))? {
        let file = |dir: &str| -> PathBuf { root.join(dir).join(format!("{id}.txt")) };
        let label_path = file("label_2");
        let labels = parse_label_file(&read(&label_path)?)
            .map_err(|e| DatasetError::in_file(&label_path, e))?;
        let calib_path = file("calib");
        let camera = parse_calibration(&read(&calib_path)?)
            .map_err(|e| DatasetError::in_file(&calib_path, e))?;
        let det_path = file("detections");
        let detections = if det_path.exists() {
            parse_detection_file(&read(&det_path)?)
                .map_err(|e| DatasetError::in_file(&det_path, e))?
                .iter()
                .filter(|r| r.class == class)
                .filter_map(LabelRecord::to_detection)
                .collect()
        } else {
            Vec::new()
        };
        let annotations = labels
            .iter()
            .filter_map(|r| {
                Some(Annotation {
                    class: r.class.clone(),
                    bbox: r.box2d()?,
                    box3d: r.box3d()?,
                })
            })
            .collect();
        scenes.push(SceneRecord {
            timestamp: timestamps.get(&id).copied(),
            image_id: id,
            camera,
            annotations,
            detections,
        });
    }
    Ok(scenes)
}

/// Writes scenes in the directory layout read by [`load_dataset`]. Detections are
/// written with class `Car`.
pub fn write_dataset(root: &Path, scenes: &[SceneRecord]) -> Result<(), DatasetError> {
    for dir in ["label_2", "calib", "detections"] {
        let path = root.join(dir);
        fs::create_dir_all(&path).map_err(|source| DatasetError::Io { path, source })?;
    }
    let mut stamps = String::new();
    for s in scenes {
        let file = |dir: &str| root.join(dir).join(format!("{}.txt", s.image_id));
        let labels: Vec<LabelRecord> = s
            .annotations
            .iter()
            .map(|a| LabelRecord::from_annotation(a, s.camera.camera_height))
            .collect();
        write(&file("label_2"), &format_label_file(&labels))?;
        write(&file("calib"), &format_calibration(&s.camera))?;
        let dets: Vec<LabelRecord> = s
            .detections
            .iter()
            .map(|d| LabelRecord::from_detection(d, CAR))
            .collect();
        write(&file("detections"), &format_label_file(&dets))?;
        if let Some(t) = s.timestamp {
            let _ = writeln!(stamps, "{} {t}", s.image_id);
        }
    }
    if !stamps.is_empty() {
        write(&root.join("timestamps.txt"), &stamps)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = "Car 0.5 2 -1.25 100.5 120 300.25 250 1.5 1.6 3.9 -2.5 1.65 20.75 0.3";

    #[test]
    fn label_line_echoes_fields() {
        let r = &parse_label_file(LINE).unwrap()[0];
        assert_eq!(r.class, "Car");
        assert_eq!(r.truncated, 0.5);
        assert_eq!(r.occluded, 2);
        assert_eq!(r.alpha, -1.25);
        assert_eq!(r.bbox, [100.5, 120.0, 300.25, 250.0]);
        assert_eq!(r.dimensions, [1.5, 1.6, 3.9]);
        assert_eq!(r.location, [-2.5, 1.65, 20.75]);
        assert_eq!(r.rotation_y, 0.3);
        assert_eq!(r.score, None);
        let b = r.box3d().unwrap();
        assert_eq!(
            (b.x, b.z, b.l, b.w, b.h, b.theta),
            (-2.5, 20.75, 3.9, 1.6, 1.5, 0.3)
        );
    }

    #[test]
    fn arity_and_number_errors_name_the_field() {
        let short = LINE.rsplit_once(' ').unwrap().0;
        match parse_label_file(&format!("\n{short}")) {
            Err(DatasetError::MalformedLine { line, field, .. }) => {
                assert_eq!((line, field), (2, 14));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad = LINE.replace("300.25", "wide");
        match parse_label_file(&bad) {
            Err(DatasetError::MalformedLine { line, field, .. }) => {
                assert_eq!((line, field), (1, 6))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_label_file("").unwrap().is_empty());
        assert!(parse_detection_file(LINE).is_err());
    }

    #[test]
    fn dont_care_has_no_ground_box() {
        let text = "DontCare -1 -1 -10 500 170 590 190 -1 -1 -1 -1000 -1000 -1000 -10\n";
        let r = &parse_label_file(text).unwrap()[0];
        assert!(r.box3d().is_none());
        assert!(r.box2d().is_some());
    }

    #[test]
    fn detections_carry_score() {
        let text = format!("{LINE} 0.875");
        let r = &parse_detection_file(&text).unwrap()[0];
        let d = r.to_detection().unwrap();
        assert_eq!(d.score, 0.875);
        assert_eq!(d.viewpoint_alpha, -1.25);
    }

    #[test]
    fn calibration_layout() {
        let text = "P0: 0 0 0 0 0 0 0 0 0 0 0 0\nP2: 1 2 3 4 5 6 7 8 9 10 11 12\nR0_rect: 1 0 0 0 1 0 0 0 1\n";
        let cam = parse_calibration(text).unwrap();
        assert_eq!(
            cam.projection,
            [
                [1.0, 2.0, 3.0, 4.0],
                [5.0, 6.0, 7.0, 8.0],
                [9.0, 10.0, 11.0, 12.0]
            ]
        );
        assert_eq!((cam.image_width, cam.image_height), DEFAULT_IMAGE_SIZE);
        assert!(matches!(
            parse_calibration("P1: 1 2 3 4 5 6 7 8 9 10 11 12"),
            Err(DatasetError::MissingMatrix)
        ));
        assert!(matches!(
            parse_calibration("P2: 1 2 3 4 5 6 7 8 9 10 11"),
            Err(DatasetError::MalformedMatrix(_))
        ));
    }

    #[test]
    fn calibration_round_trip() {
        let cam = CameraModel::from_intrinsics(721.5377, 609.5593, 172.854, 1242.0, 375.0)
            .unwrap()
            .with_camera_height(1.7);
        assert_eq!(parse_calibration(&format_calibration(&cam)).unwrap(), cam);
    }
}
