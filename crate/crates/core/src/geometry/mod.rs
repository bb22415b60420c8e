//! Point-cloud and box primitives shared by every stage.

pub mod io;
mod nms;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use nms::{iou_2d, iou_3d, nms, nms_default, DEFAULT_NMS_IOU};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate box: {0}")]
    DegenerateBox(String),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<T>,
}

impl<T: Scalar> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z, intensity: None }
    }

    pub fn with_intensity(x: T, y: T, z: T, intensity: T) -> Self {
        Self { x, y, z, intensity: Some(intensity) }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && self.intensity.is_none_or(|i| i.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Point3<U> {
        Point3 {
            x: U::lit(self.x.to_f64_lossy()),
            y: U::lit(self.y.to_f64_lossy()),
            z: U::lit(self.z.to_f64_lossy()),
            intensity: self.intensity.map(|i| U::lit(i.to_f64_lossy())),
        }
    }
}

/// Axis-aligned bounds of a non-empty point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds3<T> {
    pub min: [T; 3],
    pub max: [T; 3],
}

impl<T: Scalar> Bounds3<T> {
    fn of_point(p: &Point3<T>) -> Self {
        Self { min: [p.x, p.y, p.z], max: [p.x, p.y, p.z] }
    }

    fn grow(&mut self, p: &Point3<T>) {
        for (axis, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            self.min[axis] = self.min[axis].min(v);
            self.max[axis] = self.max[axis].max(v);
        }
    }

    pub fn extent(&self, axis: usize) -> T {
        self.max[axis] - self.min[axis]
    }
}

/// The global 3D map. Bounds are kept exactly in sync with the points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<Point3<T>>,
    bounds: Option<Bounds3<T>>,
}

impl<T: Scalar> Default for PointCloud<T> {
    fn default() -> Self {
        Self { points: Vec::new(), bounds: None }
    }
}

impl<T: Scalar> PointCloud<T> {
    /// Builds a cloud, rejecting non-finite points.
    pub fn new(points: Vec<Point3<T>>) -> Result<Self, GeometryError> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(GeometryError::NonFinite("point cloud"));
        }
        let bounds = compute_bounds(&points);
        Ok(Self { points, bounds })
    }

    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `None` for an empty map.
    pub fn bounds(&self) -> Option<&Bounds3<T>> {
        self.bounds.as_ref()
    }

    pub fn push(&mut self, p: Point3<T>) -> Result<(), GeometryError> {
        if !p.is_finite() {
            return Err(GeometryError::NonFinite("point"));
        }
        match &mut self.bounds {
            Some(b) => b.grow(&p),
            None => self.bounds = Some(Bounds3::of_point(&p)),
        }
        self.points.push(p);
        Ok(())
    }

    pub fn into_points(self) -> Vec<Point3<T>> {
        self.points
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        let points: Vec<Point3<U>> = self.points.iter().map(Point3::cast).collect();
        let bounds = compute_bounds(&points);
        PointCloud { points, bounds }
    }
}

fn compute_bounds<T: Scalar>(points: &[Point3<T>]) -> Option<Bounds3<T>> {
    let (first, rest) = points.split_first()?;
    let mut b = Bounds3::of_point(first);
    rest.iter().for_each(|p| b.grow(p));
    Some(b)
}

/// Ground-plane footprint. Always has positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Box2D<T> {
    x_min: T,
    y_min: T,
    x_max: T,
    y_max: T,
}

impl<T: Scalar> Box2D<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self, GeometryError> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("box"));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(GeometryError::DegenerateBox(format!(
                "({x_min}, {y_min}) - ({x_max}, {y_max})"
            )));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> T {
        self.x_min
    }
    pub fn y_min(&self) -> T {
        self.y_min
    }
    pub fn x_max(&self) -> T {
        self.x_max
    }
    pub fn y_max(&self) -> T {
        self.y_max
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> [T; 2] {
        let half = T::lit(0.5);
        [(self.x_min + self.x_max) * half, (self.y_min + self.y_max) * half]
    }

    /// Closed containment test.
    pub fn contains_xy(&self, x: T, y: T) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    /// `self ⊆ other`, allowing `tol` of slack on each edge.
    pub fn within(&self, other: &Box2D<T>, tol: T) -> bool {
        self.x_min >= other.x_min - tol
            && self.y_min >= other.y_min - tol
            && self.x_max <= other.x_max + tol
            && self.y_max <= other.y_max + tol
    }

    pub fn translated(&self, dx: T, dy: T) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Box2D<U> {
        Box2D {
            x_min: U::lit(self.x_min.to_f64_lossy()),
            y_min: U::lit(self.y_min.to_f64_lossy()),
            x_max: U::lit(self.x_max.to_f64_lossy()),
            y_max: U::lit(self.y_max.to_f64_lossy()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Box3D<T> {
    footprint: Box2D<T>,
    z_min: T,
    z_max: T,
}

impl<T: Scalar> Box3D<T> {
    pub fn new(footprint: Box2D<T>, z_min: T, z_max: T) -> Result<Self, GeometryError> {
        if !(z_min.is_finite() && z_max.is_finite()) {
            return Err(GeometryError::NonFinite("box z range"));
        }
        if z_min >= z_max {
            return Err(GeometryError::DegenerateBox(format!("z range [{z_min}, {z_max}]")));
        }
        Ok(Self { footprint, z_min, z_max })
    }

    pub fn footprint(&self) -> &Box2D<T> {
        &self.footprint
    }
    pub fn z_min(&self) -> T {
        self.z_min
    }
    pub fn z_max(&self) -> T {
        self.z_max
    }

    pub fn volume(&self) -> T {
        self.footprint.area() * (self.z_max - self.z_min)
    }

    pub fn contains(&self, p: &Point3<T>) -> bool {
        self.footprint.contains_xy(p.x, p.y) && p.z >= self.z_min && p.z <= self.z_max
    }
}

/// Either a BEV footprint or a lifted 3D box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionBox<T> {
    Planar(Box2D<T>),
    Volume(Box3D<T>),
}

impl<T: Scalar> DetectionBox<T> {
    pub fn footprint(&self) -> &Box2D<T> {
        match self {
            DetectionBox::Planar(b) => b,
            DetectionBox::Volume(b) => b.footprint(),
        }
    }

    pub fn as_3d(&self) -> Option<&Box3D<T>> {
        match self {
            DetectionBox::Volume(b) => Some(b),
            DetectionBox::Planar(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetection<T>", into = "RawDetection<T>")]
#[serde(bound = "T: Scalar")]
pub struct Detection<T: Scalar> {
    pub bbox: DetectionBox<T>,
    confidence: T,
    pub class_id: u8,
}

pub const CLASS_FRUIT_TREE: u8 = 0;

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: DetectionBox<T>, confidence: T, class_id: u8) -> Result<Self, GeometryError> {
        if !(confidence >= T::zero() && confidence <= T::one()) {
            return Err(GeometryError::Confidence(confidence.to_f64_lossy()));
        }
        Ok(Self { bbox, confidence, class_id })
    }

    pub fn tree_2d(footprint: Box2D<T>, confidence: T) -> Result<Self, GeometryError> {
        Self::new(DetectionBox::Planar(footprint), confidence, CLASS_FRUIT_TREE)
    }

    pub fn confidence(&self) -> T {
        self.confidence
    }

    pub fn footprint(&self) -> &Box2D<T> {
        self.bbox.footprint()
    }

    /// Same detection with the box shifted in the ground plane.
    pub fn translated(&self, dx: T, dy: T) -> Self {
        let bbox = match self.bbox {
            DetectionBox::Planar(b) => DetectionBox::Planar(b.translated(dx, dy)),
            DetectionBox::Volume(b) => DetectionBox::Volume(Box3D {
                footprint: b.footprint.translated(dx, dy),
                ..b
            }),
        };
        Self { bbox, ..*self }
    }
}

#[derive(Serialize, Deserialize)]
struct RawBox<T> {
    x_min: T,
    y_min: T,
    x_max: T,
    y_max: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_min: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z_max: Option<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawDetection<T> {
    #[serde(rename = "box")]
    bbox: RawBox<T>,
    confidence: T,
    #[serde(default)]
    class_id: u8,
}

impl<T: Scalar> TryFrom<RawDetection<T>> for Detection<T> {
    type Error = GeometryError;

    fn try_from(raw: RawDetection<T>) -> Result<Self, Self::Error> {
        let b = raw.bbox;
        let footprint = Box2D::new(b.x_min, b.y_min, b.x_max, b.y_max)?;
        let bbox = match (b.z_min, b.z_max) {
            (Some(lo), Some(hi)) => DetectionBox::Volume(Box3D::new(footprint, lo, hi)?),
            (None, None) => DetectionBox::Planar(footprint),
            _ => return Err(GeometryError::DegenerateBox("only one of z_min/z_max given".into())),
        };
        Detection::new(bbox, raw.confidence, raw.class_id)
    }
}

impl<T: Scalar> From<Detection<T>> for RawDetection<T> {
    fn from(d: Detection<T>) -> Self {
        let f = *d.footprint();
        let z = d.bbox.as_3d().map(|b| (b.z_min, b.z_max));
        RawDetection {
            bbox: RawBox {
                x_min: f.x_min,
                y_min: f.y_min,
                x_max: f.x_max,
                y_max: f.y_max,
                z_min: z.map(|z| z.0),
                z_max: z.map(|z| z.1),
            },
            confidence: d.confidence,
            class_id: d.class_id,
        }
    }
}
