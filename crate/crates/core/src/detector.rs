//! Detector slot on feature images, the density-threshold baseline that
//! fills it, and lifting of BEV boxes to 3D.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{FeatureImage, DENSITY};
use crate::geometry::{Box2D, Box3D, Detection, DetectionBox, GeometryError, Point3};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid detector parameters: {0}")]
    Params(String),
    #[error("no map points inside footprint")]
    EmptyFootprint,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("external detections for window {window}: {source}")]
    External { window: usize, source: Box<dyn std::error::Error + Send + Sync> },
}

/// What a detector knows about the window besides its image.
#[derive(Debug, Clone, Copy)]
pub struct WindowContext {
    pub index: usize,
}

/// A detector maps one window's feature image to footprints in window-local
/// metres. Boxes must lie within `[0, window_size]²` and confidences within
/// `[0, 1]`. Implementations are invoked concurrently on distinct windows.
pub trait Detector<T: Scalar>: Send + Sync {
    fn detect(&self, ctx: &WindowContext, image: &FeatureImage<T>) -> Result<Vec<Detection<T>>, DetectError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineDetectorParams {
    /// Density channel threshold in `(0, 1)`.
    pub density_floor: f64,
    /// Smallest connected component, in cells.
    pub min_cells: usize,
    /// Extra margin around the component, metres.
    pub box_padding: f64,
}

impl Default for BaselineDetectorParams {
    fn default() -> Self {
        Self { density_floor: 0.2, min_cells: 20, box_padding: 0.0 }
    }
}

impl BaselineDetectorParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.density_floor > 0.0 && self.density_floor < 1.0) {
            return Err(DetectError::Params(format!("density_floor {} not in (0, 1)", self.density_floor)));
        }
        if self.min_cells == 0 {
            return Err(DetectError::Params("min_cells must be at least 1".into()));
        }
        if !(self.box_padding >= 0.0) {
            return Err(DetectError::Params("box_padding must be non-negative".into()));
        }
        Ok(())
    }
}

/// Connected components of the thresholded density channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineDetector {
    pub params: BaselineDetectorParams,
}

impl BaselineDetector {
    pub fn new(params: BaselineDetectorParams) -> Result<Self, DetectError> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl<T: Scalar> Detector<T> for BaselineDetector {
    fn detect(&self, _ctx: &WindowContext, image: &FeatureImage<T>) -> Result<Vec<Detection<T>>, DetectError> {
        baseline_detect(image, &self.params)
    }
}

/// Thresholds the density channel, groups 8-connected cells and turns each
/// component of at least `min_cells` cells into a box over its cell extent
/// (plus padding, clipped to the window). Confidence is the mean density of
/// the component.
pub fn baseline_detect<T: Scalar>(
    image: &FeatureImage<T>,
    params: &BaselineDetectorParams,
) -> Result<Vec<Detection<T>>, DetectError> {
    params.validate()?;
    let r = image.resolution();
    let density = image.channel(DENSITY);
    let floor = T::lit(params.density_floor);
    let on: Vec<bool> = density.iter().map(|&d| d >= floor).collect();
    let mut seen = vec![false; r * r];
    let side = image.pillar_side();
    let window = image.window_size();
    let pad = T::lit(params.box_padding);
    let mut out = Vec::new();
    let mut stack = Vec::new();

    for seed in 0..r * r {
        if !on[seed] || seen[seed] {
            continue;
        }
        seen[seed] = true;
        stack.push(seed);
        let (mut x0, mut y0, mut x1, mut y1) = (r, r, 0, 0);
        let mut cells = 0usize;
        let mut sum = T::zero();
        while let Some(c) = stack.pop() {
            let (cx, cy) = (c % r, c / r);
            cells += 1;
            sum = sum + density[c];
            x0 = x0.min(cx);
            y0 = y0.min(cy);
            x1 = x1.max(cx);
            y1 = y1.max(cy);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = cx as i64 + dx;
                    let ny = cy as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= r as i64 || ny >= r as i64 {
                        continue;
                    }
                    let n = ny as usize * r + nx as usize;
                    if on[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        if cells < params.min_cells {
            continue;
        }
        let cell = |k: usize| T::from_usize_lossy(k) * side;
        let clip = |v: T| v.max(T::zero()).min(window);
        let footprint = Box2D::new(
            clip(cell(x0) - pad),
            clip(cell(y0) - pad),
            clip(cell(x1 + 1) + pad),
            clip(cell(y1 + 1) + pad),
        )?;
        let confidence = (sum / T::from_usize_lossy(cells)).min(T::one());
        out.push(Detection::tree_2d(footprint, confidence)?);
    }
    Ok(out)
}

/// Reads pre-computed detections from `<dir>/window_<index>.json`, each a
/// JSON array of detections in window-local metres. A missing file means no
/// detections for that window.
#[derive(Debug, Clone)]
pub struct ExternalDetector {
    pub dir: PathBuf,
}

impl ExternalDetector {
    pub fn path_for(&self, window: usize) -> PathBuf {
        self.dir.join(format!("window_{window}.json"))
    }
}

impl<T: Scalar> Detector<T> for ExternalDetector {
    fn detect(&self, ctx: &WindowContext, image: &FeatureImage<T>) -> Result<Vec<Detection<T>>, DetectError> {
        let path = self.path_for(ctx.index);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(DetectError::External { window: ctx.index, source: Box::new(e) }),
        };
        let dets: Vec<Detection<T>> = serde_json::from_str(&text)
            .map_err(|e| DetectError::External { window: ctx.index, source: Box::new(e) })?;
        let extent = Box2D::new(T::zero(), T::zero(), image.window_size(), image.window_size())?;
        if let Some(bad) = dets.iter().position(|d| !d.footprint().within(&extent, T::lit(1e-6))) {
            return Err(DetectError::External {
                window: ctx.index,
                source: format!("detection {bad} lies outside the window").into(),
            });
        }
        Ok(dets)
    }
}

/// Half-height used when every footprint point shares one z value.
pub const DEGENERATE_Z_PAD: f64 = 0.01;

/// Gives a footprint its z extent from the lowest and highest points whose
/// (x, y) fall inside it.
///
/// A single distinct z is widened by ±1 cm; the widened range is clipped to
/// the z range of `points` when that range is itself non-degenerate.
pub fn lift_to_3d<T: Scalar>(det: &Detection<T>, points: &[Point3<T>]) -> Result<Detection<T>, DetectError> {
    let f = *det.footprint();
    let mut z_lo = T::infinity();
    let mut z_hi = T::neg_infinity();
    let mut all_lo = T::infinity();
    let mut all_hi = T::neg_infinity();
    for p in points {
        all_lo = all_lo.min(p.z);
        all_hi = all_hi.max(p.z);
        if f.contains_xy(p.x, p.y) {
            z_lo = z_lo.min(p.z);
            z_hi = z_hi.max(p.z);
        }
    }
    if z_lo > z_hi {
        return Err(DetectError::EmptyFootprint);
    }
    if z_lo == z_hi {
        let pad = T::lit(DEGENERATE_Z_PAD);
        let (mut lo, mut hi) = (z_lo - pad, z_hi + pad);
        if all_hi > all_lo {
            lo = lo.max(all_lo);
            hi = hi.min(all_hi);
        }
        z_lo = lo;
        z_hi = hi;
    }
    let bbox = DetectionBox::Volume(Box3D::new(f, z_lo, z_hi)?);
    Ok(Detection::new(bbox, det.confidence(), det.class_id)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BaselineDetectorParams {
        BaselineDetectorParams { density_floor: 0.5, min_cells: 4, box_padding: 0.0 }
    }

    fn block(img: &mut FeatureImage<f64>, xs: std::ops::Range<usize>, ys: std::ops::Range<usize>, v: f64) {
        for y in ys {
            for x in xs.clone() {
                img.set(DENSITY, x, y, v);
            }
        }
    }

    #[test]
    fn all_zero_image_has_no_detections() {
        let img = FeatureImage::<f64>::zeros(128, 10.0);
        assert!(baseline_detect(&img, &params()).unwrap().is_empty());
    }

    #[test]
    fn single_block_maps_to_cell_extent() {
        let mut img = FeatureImage::<f64>::zeros(128, 10.0);
        block(&mut img, 10..15, 10..15, 0.8);
        let d = baseline_detect(&img, &params()).unwrap();
        assert_eq!(d.len(), 1);
        let f = d[0].footprint();
        // cell k spans [k * 10/128, (k + 1) * 10/128)
        assert_eq!((f.x_min(), f.y_min()), (0.78125, 0.78125));
        assert_eq!((f.x_max(), f.y_max()), (1.171875, 1.171875));
        assert!((d[0].confidence() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn separated_blocks_are_separate_and_small_ones_dropped() {
        let mut img = FeatureImage::<f64>::zeros(64, 10.0);
        block(&mut img, 2..6, 2..6, 0.9);
        block(&mut img, 8..12, 2..6, 0.6);
        block(&mut img, 40..41, 40..41, 1.0);
        let d = baseline_detect(&img, &params()).unwrap();
        assert_eq!(d.len(), 2);
        // diagonal contact joins components
        let mut img = FeatureImage::<f64>::zeros(64, 10.0);
        block(&mut img, 2..6, 2..6, 0.9);
        block(&mut img, 6..10, 6..10, 0.9);
        assert_eq!(baseline_detect(&img, &params()).unwrap().len(), 1);
    }

    #[test]
    fn padding_is_clipped_to_window() {
        let mut img = FeatureImage::<f64>::zeros(64, 10.0);
        block(&mut img, 0..4, 60..64, 0.9);
        let p = BaselineDetectorParams { box_padding: 0.5, ..params() };
        let d = baseline_detect(&img, &p).unwrap();
        let f = d[0].footprint();
        assert_eq!((f.x_min(), f.y_max()), (0.0, 10.0));
        assert_eq!(f.x_max(), 4.0 * 10.0 / 64.0 + 0.5);
    }

    #[test]
    fn invalid_params_rejected() {
        let img = FeatureImage::<f64>::zeros(64, 10.0);
        let bad = BaselineDetectorParams { density_floor: 1.0, ..params() };
        assert!(baseline_detect(&img, &bad).is_err());
        let bad = BaselineDetectorParams { min_cells: 0, ..params() };
        assert!(BaselineDetector::new(bad).is_err());
    }

    #[test]
    fn lift_uses_footprint_extremes() {
        let f = Box2D::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let d = Detection::tree_2d(f, 0.7).unwrap();
        let pts = vec![
            Point3::new(0.5, 0.5, 0.1),
            Point3::new(0.2, 0.9, 2.7),
            Point3::new(0.9, 0.1, 1.3),
            Point3::new(5.0, 5.0, -4.0),
        ];
        let l = lift_to_3d(&d, &pts).unwrap();
        let b = l.bbox.as_3d().unwrap();
        assert_eq!((b.z_min(), b.z_max()), (0.1, 2.7));
        assert_eq!(l.confidence(), 0.7);
        assert_eq!(b.footprint(), &f);
    }

    #[test]
    fn lift_single_point_is_widened() {
        let f = Box2D::<f64>::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let d = Detection::tree_2d(f, 0.7).unwrap();
        let pts = vec![Point3::new(0.5, 0.5, 1.0), Point3::new(3.0, 3.0, 0.0), Point3::new(3.0, 3.0, 2.0)];
        let b = *lift_to_3d(&d, &pts).unwrap().bbox.as_3d().unwrap();
        assert!((b.z_min() - 0.99).abs() < 1e-12 && (b.z_max() - 1.01).abs() < 1e-12);
        let lone = vec![Point3::new(0.5, 0.5, 1.0)];
        let b = *lift_to_3d(&d, &lone).unwrap().bbox.as_3d().unwrap();
        assert!((b.z_min() - 0.99).abs() < 1e-12 && (b.z_max() - 1.01).abs() < 1e-12);
        assert!(matches!(lift_to_3d(&d, &pts[1..]), Err(DetectError::EmptyFootprint)));
    }

    #[test]
    fn external_detector_reads_window_files() {
        let dir = tempfile::tempdir().unwrap();
        let det = ExternalDetector { dir: dir.path().to_path_buf() };
        std::fs::write(
            det.path_for(3),
            r#"[{"box":{"x_min":1,"y_min":1,"x_max":2,"y_max":2},"confidence":0.9,"class_id":0}]"#,
        )
        .unwrap();
        let img = FeatureImage::<f64>::zeros(64, 10.0);
        let got = Detector::<f64>::detect(&det, &WindowContext { index: 3 }, &img).unwrap();
        assert_eq!(got.len(), 1);
        assert!(Detector::<f64>::detect(&det, &WindowContext { index: 4 }, &img).unwrap().is_empty());
        std::fs::write(
            det.path_for(5),
            r#"[{"box":{"x_min":9,"y_min":1,"x_max":12,"y_max":2},"confidence":0.9}]"#,
        )
        .unwrap();
        assert!(Detector::<f64>::detect(&det, &WindowContext { index: 5 }, &img).is_err());
    }
}
