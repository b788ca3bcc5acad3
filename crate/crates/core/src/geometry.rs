//! Scene geometry: a calibrated camera over a known ground plane, ground-resting 3D
//! boxes, their 2D projections, dense 3D proposal grids and lifting of 2D detections
//! into grounded 3D objects.
//!
//! Camera frame is right-handed: `x` right, `y` down, `z` forward. The ground plane
//! sits at `y = camera_height`. A [`Box3D`] stores the center of its footprint `(x, z)`;
//! its vertical extent is `[camera_height - h, camera_height]`.

use std::cmp::Ordering;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::angle::{fold_pi, wrap_angle, yaw_rotate};

/// Mount height of the KITTI color cameras above the road.
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.65;

/// Boxes whose clipped projection covers less than this many square pixels are treated
/// as not visible.
pub const MIN_VISIBLE_AREA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("box corner at or behind the camera plane")]
    BehindCamera,
    #[error("projected box does not intersect the image")]
    OutOfImage,
    #[error("grid spec admits no lattice point")]
    EmptyGrid,
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),
    #[error("no grid box projects into the image")]
    NoProjectableBox,
    #[error("detection overlaps no projected grid box")]
    NoOverlap,
}

/// A pinhole camera given by its 3×4 projection matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub projection: [[f64; 4]; 3],
    pub image_width: f64,
    pub image_height: f64,
    /// Height of the optical center above the ground plane, meters.
    pub camera_height: f64,
}

impl CameraModel {
    pub fn new(
        projection: [[f64; 4]; 3],
        image_width: f64,
        image_height: f64,
    ) -> Result<Self, GeometryError> {
        if !(image_width > 0.0 && image_height > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "image size must be positive, got {image_width}x{image_height}"
            )));
        }
        if projection.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidCamera(
                "projection matrix has non-finite entries".into(),
            ));
        }
        Ok(Self {
            projection,
            image_width,
            image_height,
            camera_height: DEFAULT_CAMERA_HEIGHT,
        })
    }

    /// Camera with square pixels, no skew and no translation.
    pub fn from_intrinsics(
        focal: f64,
        cx: f64,
        cy: f64,
        image_width: f64,
        image_height: f64,
    ) -> Result<Self, GeometryError> {
        Self::new(
            [
                [focal, 0.0, cx, 0.0],
                [0.0, focal, cy, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            image_width,
            image_height,
        )
    }

    pub fn with_camera_height(mut self, camera_height: f64) -> Self {
        self.camera_height = camera_height;
        self
    }

    /// Projects a camera-frame point. Returns `None` when the homogeneous depth is not
    /// strictly positive.
    pub fn project_point(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let row = |r: &[f64; 4]| r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + r[3];
        let w = row(&self.projection[2]);
        if !(w > 0.0) {
            return None;
        }
        Some((row(&self.projection[0]) / w, row(&self.projection[1]) / w))
    }
}

/// Physical size of an object, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSize {
    pub l: f64,
    pub w: f64,
    pub h: f64,
}

impl ObjectSize {
    pub fn is_valid(&self) -> bool {
        self.l > 0.0 && self.w > 0.0 && self.h > 0.0
    }

    /// Component-wise mean, or `None` for an empty input.
    pub fn mean<'a>(sizes: impl IntoIterator<Item = &'a ObjectSize>) -> Option<ObjectSize> {
        let (mut l, mut w, mut h, mut n) = (0.0, 0.0, 0.0, 0usize);
        for s in sizes {
            l += s.l;
            w += s.w;
            h += s.h;
            n += 1;
        }
        (n > 0).then(|| {
            let n = n as f64;
            ObjectSize {
                l: l / n,
                w: w / n,
                h: h / n,
            }
        })
    }
}

/// A box resting on the ground plane. `theta` is the yaw; at `theta = 0` the length
/// axis points along `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl Box3D {
    pub fn new(x: f64, z: f64, size: ObjectSize, theta: f64) -> Self {
        Self {
            x,
            z,
            l: size.l,
            w: size.w,
            h: size.h,
            theta,
        }
    }

    pub fn size(&self) -> ObjectSize {
        ObjectSize {
            l: self.l,
            w: self.w,
            h: self.h,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.size().is_valid() && [self.x, self.z, self.theta].iter().all(|v| v.is_finite())
    }

    /// The eight corners in camera coordinates for a ground plane `camera_height` below
    /// the optical center.
    pub fn corners(&self, camera_height: f64) -> [[f64; 3]; 8] {
        let mut out = [[0.0; 3]; 8];
        let mut i = 0;
        for &dl in &[0.5 * self.l, -0.5 * self.l] {
            for &dw in &[0.5 * self.w, -0.5 * self.w] {
                let (dx, dz) = yaw_rotate(dl, dw, self.theta);
                for &y in &[camera_height, camera_height - self.h] {
                    out[i] = [self.x + dx, y, self.z + dz];
                    i += 1;
                }
            }
        }
        out
    }

    /// Ordering key used for deterministic tie-breaking: `(z, x, theta)`.
    fn tie_key_cmp(&self, other: &Box3D) -> Ordering {
        self.z
            .total_cmp(&other.z)
            .then(self.x.total_cmp(&other.x))
            .then(self.theta.total_cmp(&other.theta))
    }
}

/// A grounded 3D object with its detection confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Object3D {
    pub bbox: Box3D,
    pub score: f64,
}

/// Axis-aligned image box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.is_valid().then_some(b)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection over union with continuous areas.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A 2D detection: image box, egocentric viewpoint `alpha` and confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection2D {
    pub bbox: Box2D,
    pub viewpoint_alpha: f64,
    pub score: f64,
}

/// Projects the eight corners and returns their enclosing box, clipped to the image.
pub fn project_box(b: &Box3D, cam: &CameraModel) -> Result<Box2D, GeometryError> {
    let (mut x1, mut y1) = (f64::INFINITY, f64::INFINITY);
    let (mut x2, mut y2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in b.corners(cam.camera_height) {
        let (u, v) = cam
            .project_point(corner)
            .ok_or(GeometryError::BehindCamera)?;
        x1 = x1.min(u);
        y1 = y1.min(v);
        x2 = x2.max(u);
        y2 = y2.max(v);
    }
    let clipped = Box2D {
        x1: x1.max(0.0),
        y1: y1.max(0.0),
        x2: x2.min(cam.image_width),
        y2: y2.min(cam.image_height),
    };
    if !clipped.is_valid() || clipped.area() < MIN_VISIBLE_AREA {
        return Err(GeometryError::OutOfImage);
    }
    Ok(clipped)
}

/// Dense lattice of ground-resting proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub x_step: f64,
    pub z_step: f64,
    /// Number of discrete orientations K over the full circle; only K/2 are generated.
    pub num_orientations: usize,
    pub default_size: ObjectSize,
}

/// Lattice sizes derived from a [`GridSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub nx: usize,
    pub nz: usize,
    pub n_theta: usize,
}

impl GridDims {
    pub fn len(&self) -> usize {
        self.nx * self.nz * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iz: usize, it: usize) -> usize {
        (iz * self.nx + ix) * self.n_theta + it
    }
}

fn axis_count(range: (f64, f64), step: f64) -> Option<usize> {
    if !(step > 0.0) || !step.is_finite() || !(range.1 >= range.0) {
        return None;
    }
    let span = (range.1 - range.0) / step;
    Some((span + 1e-9).floor() as usize + 1)
}

impl GridSpec {
    pub fn dims(&self) -> Result<GridDims, GeometryError> {
        let nx = axis_count(self.x_range, self.x_step).ok_or(GeometryError::EmptyGrid)?;
        let nz = axis_count(self.z_range, self.z_step).ok_or(GeometryError::EmptyGrid)?;
        let k = self.num_orientations;
        if k < 2 || k % 2 != 0 {
            return Err(GeometryError::InvalidGrid(format!(
                "orientation count must be even and >= 2, got {k}"
            )));
        }
        if !self.default_size.is_valid() {
            return Err(GeometryError::InvalidGrid(
                "default size must be strictly positive".into(),
            ));
        }
        Ok(GridDims {
            nx,
            nz,
            n_theta: k / 2,
        })
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.x_range.0 + ix as f64 * self.x_step
    }

    pub fn z_at(&self, iz: usize) -> f64 {
        self.z_range.0 + iz as f64 * self.z_step
    }

    /// Orientation of the `it`-th generated pose, in `[0, π)`.
    pub fn theta_at(&self, it: usize) -> f64 {
        it as f64 * 2.0 * PI / self.num_orientations as f64
    }

    /// Index of the lattice box nearest to `(x, z, theta)`, with orientation compared
    /// modulo π. `None` if the location is more than half a step outside the grid.
    pub fn snap(&self, x: f64, z: f64, theta: f64) -> Option<usize> {
        let dims = self.dims().ok()?;
        let ix = ((x - self.x_range.0) / self.x_step).round();
        let iz = ((z - self.z_range.0) / self.z_step).round();
        if !(ix >= 0.0 && iz >= 0.0 && ix < dims.nx as f64 && iz < dims.nz as f64) {
            return None;
        }
        let dtheta = PI / dims.n_theta as f64;
        let it = (fold_pi(theta) / dtheta).round() as usize % dims.n_theta;
        Some(dims.index(ix as usize, iz as usize, it))
    }
}

/// Enumerates the lattice: `z`-major, then `x`, then orientation.
pub fn generate_grid(spec: &GridSpec) -> Result<Vec<Box3D>, GeometryError> {
    let dims = spec.dims()?;
    let mut out = Vec::with_capacity(dims.len());
    for iz in 0..dims.nz {
        for ix in 0..dims.nx {
            for it in 0..dims.n_theta {
                out.push(Box3D::new(
                    spec.x_at(ix),
                    spec.z_at(iz),
                    spec.default_size,
                    spec.theta_at(it),
                ));
            }
        }
    }
    Ok(out)
}

/// Converts an egocentric viewpoint into the allocentric yaw of an object at `(x, z)`.
pub fn viewpoint_to_pose(alpha: f64, x: f64, z: f64) -> f64 {
    wrap_angle(alpha + x.atan2(z))
}

/// Inverse of [`viewpoint_to_pose`].
pub fn pose_to_viewpoint(theta: f64, x: f64, z: f64) -> f64 {
    wrap_angle(theta - x.atan2(z))
}

/// A set of grid boxes together with their projections through one camera.
#[derive(Debug, Clone)]
pub struct ProjectedGrid {
    spec: Option<GridSpec>,
    boxes: Vec<Box3D>,
    projections: Vec<Option<Box2D>>,
}

impl ProjectedGrid {
    pub fn new(spec: &GridSpec, cam: &CameraModel) -> Result<Self, GeometryError> {
        let boxes = generate_grid(spec)?;
        let mut grid = Self::from_boxes(boxes, cam);
        grid.spec = Some(spec.clone());
        Ok(grid)
    }

    pub fn from_boxes(boxes: Vec<Box3D>, cam: &CameraModel) -> Self {
        let projections = boxes.iter().map(|b| project_box(b, cam).ok()).collect();
        Self {
            spec: None,
            boxes,
            projections,
        }
    }

    pub fn spec(&self) -> Option<&GridSpec> {
        self.spec.as_ref()
    }

    pub fn boxes(&self) -> &[Box3D] {
        &self.boxes
    }

    pub fn projection(&self, index: usize) -> Option<&Box2D> {
        self.projections.get(index).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Index of the grid box whose projection best overlaps `target`.
    pub fn best_match(&self, target: &Box2D) -> Result<usize, GeometryError> {
        let mut best: Option<(usize, f64)> = None;
        let mut any_projectable = false;
        for (i, proj) in self.projections.iter().enumerate() {
            let Some(proj) = proj else { continue };
            any_projectable = true;
            let iou = iou_2d(proj, target);
            best = match best {
                None => Some((i, iou)),
                Some((j, best_iou)) => {
                    let better = iou > best_iou
                        || (iou == best_iou
                            && self.boxes[i].tie_key_cmp(&self.boxes[j]) == Ordering::Less);
                    if better {
                        Some((i, iou))
                    } else {
                        Some((j, best_iou))
                    }
                }
            };
        }
        if !any_projectable {
            return Err(GeometryError::NoProjectableBox);
        }
        match best {
            Some((i, iou)) if iou > 0.0 => Ok(i),
            _ => Err(GeometryError::NoOverlap),
        }
    }

    /// Grounds a detection at the best-overlapping grid location, with pose derived from
    /// the detector's viewpoint.
    pub fn lift(&self, d: &Detection2D) -> Result<Object3D, GeometryError> {
        let g = self.boxes[self.best_match(&d.bbox)?];
        Ok(Object3D {
            bbox: Box3D {
                theta: viewpoint_to_pose(d.viewpoint_alpha, g.x, g.z),
                ..g
            },
            score: d.score,
        })
    }
}

/// Lifts one detection against an explicit list of grid boxes. Use [`ProjectedGrid`]
/// directly when lifting many detections against the same grid.
pub fn lift_detection(
    d: &Detection2D,
    grid: &[Box3D],
    cam: &CameraModel,
) -> Result<Object3D, GeometryError> {
    ProjectedGrid::from_boxes(grid.to_vec(), cam).lift(d)
}

/// Greedy non-maximum suppression. Output is sorted by descending score (stable), and a
/// detection is kept iff its IoU with every kept detection is at most
/// `overlap_threshold`. A threshold of 1 disables suppression.
pub fn nms(dets: &[Detection2D], overlap_threshold: f64) -> Vec<Detection2D> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: Vec<Detection2D> = Vec::new();
    for i in order {
        let d = dets[i];
        if kept
            .iter()
            .all(|k| iou_2d(&k.bbox, &d.bbox) <= overlap_threshold)
        {
            kept.push(d);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kitti_like_camera() -> CameraModel {
        CameraModel::from_intrinsics(700.0, 600.0, 180.0, 1242.0, 375.0).unwrap()
    }

    fn car() -> ObjectSize {
        ObjectSize {
            l: 4.0,
            w: 1.6,
            h: 1.5,
        }
    }

    fn b2(x1: f64, y1: f64, x2: f64, y2: f64) -> Box2D {
        Box2D::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn projection_is_symmetric_about_principal_column() {
        let cam = kitti_like_camera();
        let b = Box3D::new(0.0, 10.0, car(), 0.0);
        let p = project_box(&b, &cam).unwrap();
        assert!((p.x1 + p.x2 - 1200.0).abs() < 1e-9);
    }

    #[test]
    fn projection_behind_camera() {
        let cam = kitti_like_camera();
        let b = Box3D::new(0.0, -5.0, car(), 0.0);
        assert_eq!(project_box(&b, &cam), Err(GeometryError::BehindCamera));
    }

    #[test]
    fn projection_out_of_image() {
        let cam = kitti_like_camera();
        let b = Box3D::new(200.0, 10.0, car(), 0.0);
        assert_eq!(project_box(&b, &cam), Err(GeometryError::OutOfImage));
    }

    #[test]
    fn projection_matches_hand_corners() {
        // θ = 0: length along x, width along z. Corners x ∈ {-2, 2}, z ∈ {9.2, 10.8},
        // y ∈ {0.15, 1.65} with camera height 1.65.
        let cam = kitti_like_camera();
        let p = project_box(&Box3D::new(0.0, 10.0, car(), 0.0), &cam).unwrap();
        let u = |x: f64, z: f64| 700.0 * x / z + 600.0;
        let v = |y: f64, z: f64| 700.0 * y / z + 180.0;
        assert!((p.x1 - u(-2.0, 9.2)).abs() < 1e-9);
        assert!((p.x2 - u(2.0, 9.2)).abs() < 1e-9);
        assert!((p.y1 - v(0.15, 10.8)).abs() < 1e-9);
        assert!((p.y2 - v(1.65, 9.2)).abs() < 1e-9);
    }

    #[test]
    fn projection_clips_to_image() {
        let cam = kitti_like_camera();
        let p = project_box(&Box3D::new(-6.0, 6.0, car(), 0.3), &cam).unwrap();
        assert_eq!(p.x1, 0.0);
        assert!(p.x2 <= cam.image_width && p.y2 <= cam.image_height);
    }

    #[test]
    fn iou_cases() {
        let a = b2(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou_2d(&a, &a), 1.0);
        assert_eq!(iou_2d(&a, &b2(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert!((iou_2d(&a, &b2(1.0, 0.0, 3.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
        // touching edges
        assert_eq!(iou_2d(&a, &b2(2.0, 0.0, 3.0, 2.0)), 0.0);
    }

    fn spec(x: (f64, f64), z: (f64, f64), step: f64, k: usize) -> GridSpec {
        GridSpec {
            x_range: x,
            z_range: z,
            x_step: step,
            z_step: step,
            num_orientations: k,
            default_size: car(),
        }
    }

    #[test]
    fn grid_single_point_uses_half_the_orientations() {
        let g = generate_grid(&spec((0.0, 0.0), (10.0, 10.0), 1.0, 8)).unwrap();
        let thetas: Vec<f64> = g.iter().map(|b| b.theta).collect();
        assert_eq!(g.len(), 4);
        for (t, want) in thetas.iter().zip([0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0]) {
            assert!((t - want).abs() < 1e-12);
        }
        assert!(g.iter().all(|b| b.x == 0.0 && b.z == 10.0));
    }

    #[test]
    fn grid_counting_and_order() {
        let g = generate_grid(&spec((-1.0, 1.0), (5.0, 6.0), 1.0, 2)).unwrap();
        assert_eq!(g.len(), 6);
        let locs: Vec<(f64, f64)> = g.iter().map(|b| (b.z, b.x)).collect();
        assert_eq!(
            locs,
            vec![
                (5.0, -1.0),
                (5.0, 0.0),
                (5.0, 1.0),
                (6.0, -1.0),
                (6.0, 0.0),
                (6.0, 1.0)
            ]
        );
    }

    #[test]
    fn grid_rejects_bad_specs() {
        let mut s = spec((0.0, 1.0), (5.0, 6.0), 1.0, 8);
        s.x_step = 0.0;
        assert_eq!(generate_grid(&s), Err(GeometryError::EmptyGrid));
        let mut s = spec((1.0, 0.0), (5.0, 6.0), 1.0, 8);
        assert_eq!(generate_grid(&s), Err(GeometryError::EmptyGrid));
        s = spec((0.0, 1.0), (5.0, 6.0), 1.0, 7);
        assert!(matches!(
            generate_grid(&s),
            Err(GeometryError::InvalidGrid(_))
        ));
    }

    #[test]
    fn snap_finds_generated_boxes() {
        let s = spec((-2.0, 2.0), (5.0, 9.0), 0.5, 8);
        let g = generate_grid(&s).unwrap();
        for (i, b) in g.iter().enumerate() {
            assert_eq!(s.snap(b.x, b.z, b.theta), Some(i));
            assert_eq!(s.snap(b.x + 0.2, b.z - 0.2, b.theta + PI + 0.1), Some(i));
        }
        assert_eq!(s.snap(3.0, 6.0, 0.0), None);
        // 7π/8 + ε is nearer to π ≡ 0 than to 3π/4
        assert_eq!(s.snap(-2.0, 5.0, 7.0 * PI / 8.0 + 0.01), Some(0));
    }

    #[test]
    fn viewpoint_examples() {
        assert_eq!(viewpoint_to_pose(0.0, 0.0, 10.0), 0.0);
        assert!((viewpoint_to_pose(0.0, 10.0, 10.0) - PI / 4.0).abs() < 1e-15);
        assert_eq!(viewpoint_to_pose(PI, 0.0, 5.0), PI);
        let t = viewpoint_to_pose(0.7, 3.0, 12.0);
        assert!((pose_to_viewpoint(t, 3.0, 12.0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn lift_identity_and_ties() {
        let cam = kitti_like_camera();
        let grid = generate_grid(&spec((-3.0, 3.0), (8.0, 14.0), 1.0, 4)).unwrap();
        let g = grid[17];
        let det = Detection2D {
            bbox: project_box(&g, &cam).unwrap(),
            viewpoint_alpha: 0.25,
            score: 0.8,
        };
        let o = lift_detection(&det, &grid, &cam).unwrap();
        assert_eq!((o.bbox.x, o.bbox.z), (g.x, g.z));
        assert_eq!(o.score, 0.8);
        assert_eq!(o.bbox.theta, viewpoint_to_pose(0.25, g.x, g.z));

        // tie order is (z, x, theta)
        let base = Box3D::new(5.0, 10.0, car(), 1.0);
        let nearer = Box3D {
            z: 9.0,
            x: 9.0,
            theta: 3.0,
            ..base
        };
        assert_eq!(nearer.tie_key_cmp(&base), Ordering::Less);
        let lefter = Box3D {
            x: 4.0,
            theta: 3.0,
            ..base
        };
        assert_eq!(lefter.tie_key_cmp(&base), Ordering::Less);
        let turned = Box3D { theta: 0.5, ..base };
        assert_eq!(turned.tie_key_cmp(&base), Ordering::Less);
    }

    #[test]
    fn lift_tie_prefers_smaller_depth() {
        // detection box halfway between two mirrored projections
        let cam = CameraModel::from_intrinsics(700.0, 600.0, 180.0, 1242.0, 375.0).unwrap();
        let a = Box3D::new(-1.0, 10.0, car(), 0.0);
        let b = Box3D::new(1.0, 10.0, car(), 0.0);
        let pa = project_box(&a, &cam).unwrap();
        let pb = project_box(&b, &cam).unwrap();
        let mid = Box2D::new(0.5 * (pa.x1 + pb.x1), pa.y1, 0.5 * (pa.x2 + pb.x2), pa.y2).unwrap();
        let g = ProjectedGrid::from_boxes(vec![b, a], &cam);
        let iou_a = iou_2d(&pa, &mid);
        let iou_b = iou_2d(&pb, &mid);
        assert_eq!(iou_a, iou_b);
        // equal z, so the smaller x wins
        assert_eq!(g.best_match(&mid).unwrap(), 1);
    }

    #[test]
    fn lift_without_overlap() {
        let cam = kitti_like_camera();
        let grid = generate_grid(&spec((-1.0, 1.0), (20.0, 22.0), 1.0, 2)).unwrap();
        let det = Detection2D {
            bbox: b2(0.0, 300.0, 20.0, 320.0),
            viewpoint_alpha: 0.0,
            score: 1.0,
        };
        assert_eq!(
            lift_detection(&det, &grid, &cam),
            Err(GeometryError::NoOverlap)
        );
        let behind = vec![Box3D::new(0.0, -10.0, car(), 0.0)];
        assert_eq!(
            lift_detection(&det, &behind, &cam),
            Err(GeometryError::NoProjectableBox)
        );
    }

    fn det(b: Box2D, score: f64) -> Detection2D {
        Detection2D {
            bbox: b,
            viewpoint_alpha: 0.0,
            score,
        }
    }

    #[test]
    fn nms_identical_boxes() {
        let b = b2(0.0, 0.0, 10.0, 10.0);
        let out = nms(&[det(b, 0.5), det(b, 0.9)], 0.5);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn nms_disabled_at_one() {
        let input = vec![
            det(b2(0.0, 0.0, 10.0, 10.0), 0.9),
            det(b2(0.0, 0.0, 10.0, 10.0), 0.7),
            det(b2(1.0, 0.0, 10.0, 10.0), 0.3),
        ];
        assert_eq!(nms(&input, 1.0), input);
    }

    #[test]
    fn nms_greedy_chain() {
        // Two overlaps above 0.5 cannot share a middle box while the ends stay disjoint,
        // so the chain runs at threshold 0.15: IoU(A,B) = 0.6, IoU(B,C) = 0.2,
        // IoU(A,C) = 0. A suppresses B, and C survives because B is gone.
        let a = b2(0.0, 0.0, 10.0, 1.0);
        let b = b2(2.5, 0.0, 12.5, 1.0);
        let c = b2(10.0, 0.0, 15.0, 1.0);
        assert!((iou_2d(&a, &b) - 0.6).abs() < 1e-12);
        assert!((iou_2d(&b, &c) - 0.2).abs() < 1e-12);
        assert_eq!(iou_2d(&a, &c), 0.0);
        let out = nms(&[det(c, 0.5), det(b, 0.7), det(a, 0.9)], 0.15);
        let kept: Vec<Box2D> = out.iter().map(|d| d.bbox).collect();
        assert_eq!(kept, vec![a, c]);
    }
}
