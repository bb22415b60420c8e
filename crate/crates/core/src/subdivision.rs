//! Sliding-window tiling of the global map and merging of per-window
//! detections back into map coordinates.
//!
//! Windows are square in the ground plane, unlimited in z, and laid out on
//! the grid `{min + i·stride}` along both axes. The last window on each axis
//! is clamped so its far edge lands exactly on the map maximum; that far
//! edge is closed so the extreme points are not lost. Every other edge is
//! half-open.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nms, Detection, PointCloud};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubdivisionError {
    #[error("cannot subdivide an empty map")]
    EmptyMap,
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
    #[error("detection {index} of window {window} lies outside the window extent")]
    OutsideWindow { window: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    #[serde(rename = "window_size_m")]
    pub window_size: f64,
    #[serde(rename = "stride_m")]
    pub stride: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { window_size: 10.0, stride: 8.0 }
    }
}

impl WindowSpec {
    pub fn new(window_size: f64, stride: f64) -> Result<Self, SubdivisionError> {
        let spec = Self { window_size, stride };
        spec.validate()?;
        Ok(spec)
    }

    pub fn overlap(&self) -> f64 {
        self.window_size - self.stride
    }

    pub fn validate(&self) -> Result<(), SubdivisionError> {
        if !(self.stride > 0.0 && self.stride <= self.window_size && self.window_size.is_finite()) {
            return Err(SubdivisionError::InvalidSpec(format!(
                "need 0 < stride ({}) <= window_size ({})",
                self.stride, self.window_size
            )));
        }
        Ok(())
    }

    /// Warns when the overlap is narrower than the largest expected canopy,
    /// since such a tree may then never fit wholly inside one window.
    pub fn check_canopy(&self, max_canopy_diameter: f64) -> bool {
        let ok = self.overlap() >= max_canopy_diameter;
        if !ok {
            log::warn!(
                "window overlap {:.2} m is below the expected canopy diameter {:.2} m",
                self.overlap(),
                max_canopy_diameter
            );
        }
        ok
    }
}

/// One tile of the map, held as indices into the global point list.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalWindow<T> {
    pub index: usize,
    /// Grid position `(column, row)`.
    pub cell: (usize, usize),
    pub origin: [T; 2],
    pub size: T,
    /// Whether the far x / far y edge is closed (last column / row).
    pub closed_far: [bool; 2],
    /// Whether each edge (x-, x+, y-, y+) lies inside the map rather than on
    /// its boundary.
    pub interior_edges: [bool; 4],
    pub point_indices: Vec<usize>,
}

impl<T: Scalar> LocalWindow<T> {
    pub fn contains_xy(&self, x: T, y: T) -> bool {
        let inside = |v: T, lo: T, closed: bool| {
            v >= lo && (v < lo + self.size || (closed && v <= lo + self.size))
        };
        inside(x, self.origin[0], self.closed_far[0]) && inside(y, self.origin[1], self.closed_far[1])
    }
}

/// Window origins along one axis.
pub fn axis_origins(min: f64, max: f64, spec: &WindowSpec) -> Vec<f64> {
    let extent = max - min;
    if extent <= spec.window_size {
        return vec![min];
    }
    let steps = ((extent - spec.window_size) / spec.stride).ceil() as usize;
    let mut out: Vec<f64> = (0..steps).map(|i| min + i as f64 * spec.stride).collect();
    // `(max - size) + size` can round below `max`
    let mut last = max - spec.window_size;
    let ulp = max.abs().max(spec.window_size) * f64::EPSILON;
    while last + spec.window_size < max {
        last += ulp;
    }
    out.push(last);
    out
}

/// Tiles the map in row-major order (y outer, x inner).
pub fn generate_windows<T: Scalar>(
    map: &PointCloud<T>,
    spec: &WindowSpec,
) -> Result<Vec<LocalWindow<T>>, SubdivisionError> {
    spec.validate()?;
    let b = map.bounds().ok_or(SubdivisionError::EmptyMap)?;
    let (x0, x1) = (b.min[0].to_f64_lossy(), b.max[0].to_f64_lossy());
    let (y0, y1) = (b.min[1].to_f64_lossy(), b.max[1].to_f64_lossy());
    let xs = axis_origins(x0, x1, spec);
    let ys = axis_origins(y0, y1, spec);
    let size = T::lit(spec.window_size);
    let eps = 1e-9 * spec.window_size.max(1.0);

    let mut windows = Vec::with_capacity(xs.len() * ys.len());
    for (j, &oy) in ys.iter().enumerate() {
        for (i, &ox) in xs.iter().enumerate() {
            let last_x = i + 1 == xs.len();
            let last_y = j + 1 == ys.len();
            windows.push(LocalWindow {
                index: windows.len(),
                cell: (i, j),
                origin: [T::lit(ox), T::lit(oy)],
                size,
                closed_far: [last_x, last_y],
                interior_edges: [
                    ox > x0 + eps,
                    ox + spec.window_size < x1 - eps,
                    oy > y0 + eps,
                    oy + spec.window_size < y1 - eps,
                ],
                point_indices: Vec::new(),
            });
        }
    }

    // Bucket each point by the range of columns/rows whose extent holds it.
    let nx = xs.len();
    for (pi, p) in map.points().iter().enumerate() {
        let cols = covering(&xs, p.x.to_f64_lossy(), spec.window_size);
        let rows = covering(&ys, p.y.to_f64_lossy(), spec.window_size);
        for r in rows.clone() {
            for c in cols.clone() {
                windows[r * nx + c].point_indices.push(pi);
            }
        }
    }
    Ok(windows)
}

/// Indices of windows along one axis whose extent contains `v`.
fn covering(origins: &[f64], v: f64, size: f64) -> std::ops::Range<usize> {
    let n = origins.len();
    // origins are sorted; first window whose far edge passes v
    let start = origins.partition_point(|&o| o + size <= v);
    let end = origins.partition_point(|&o| o <= v);
    let mut start = start.min(n);
    // the closed far edge of the final window
    if start == n && n > 0 && v <= origins[n - 1] + size {
        start = n - 1;
    }
    start..end.max(start)
}

/// Drops detections that touch an interior window edge.
///
/// With an overlap at least one canopy wide, every tree lies wholly inside
/// some window, so a box that reaches into the seam between windows is a
/// truncated duplicate of a complete detection elsewhere. `margin` is the
/// distance from an edge counted as touching (typically one pillar side).
pub fn drop_truncated<T: Scalar>(window: &LocalWindow<T>, local: Vec<Detection<T>>, margin: T) -> Vec<Detection<T>> {
    let s = window.size;
    local
        .into_iter()
        .filter(|d| {
            let f = d.footprint();
            let touches = [
                f.x_min() <= margin,
                f.x_max() >= s - margin,
                f.y_min() <= margin,
                f.y_max() >= s - margin,
            ];
            !touches.iter().zip(window.interior_edges.iter()).any(|(t, interior)| *t && *interior)
        })
        .collect()
}

/// Moves window-local detections into map coordinates and runs one global
/// NMS pass over them.
pub fn merge_window_detections<T: Scalar>(
    per_window: &[(&LocalWindow<T>, Vec<Detection<T>>)],
    iou_threshold: T,
) -> Result<Vec<Detection<T>>, SubdivisionError> {
    let tol = T::lit(1e-6);
    let mut global = Vec::new();
    for (window, dets) in per_window {
        let extent = crate::geometry::Box2D::new(T::zero(), T::zero(), window.size, window.size)
            .map_err(|e| SubdivisionError::InvalidSpec(e.to_string()))?;
        for (index, d) in dets.iter().enumerate() {
            if !d.footprint().within(&extent, tol) {
                return Err(SubdivisionError::OutsideWindow { window: window.index, index });
            }
            global.push(d.translated(window.origin[0], window.origin[1]));
        }
    }
    Ok(nms(&global, iou_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{iou_2d, Box2D, Point3};

    fn cloud(pts: &[(f64, f64)]) -> PointCloud<f64> {
        PointCloud::new(pts.iter().map(|&(x, y)| Point3::new(x, y, 0.0)).collect()).unwrap()
    }

    #[test]
    fn origins_for_26m_map() {
        assert_eq!(axis_origins(0.0, 26.0, &WindowSpec::default()), vec![0.0, 8.0, 16.0]);
        // clamped tail: 0, 8, 16 then 30 - 10 = 20
        assert_eq!(axis_origins(0.0, 30.0, &WindowSpec::default()), vec![0.0, 8.0, 16.0, 20.0]);
        assert_eq!(axis_origins(0.0, 10.0, &WindowSpec::default()), vec![0.0]);
    }

    #[test]
    fn default_overlap_matches_canopy_allowance() {
        let spec = WindowSpec::default();
        assert_eq!(spec.overlap(), 2.0);
        assert!(spec.check_canopy(2.0));
        assert!(!spec.check_canopy(2.5));
        assert!(WindowSpec::new(10.0, 12.0).is_err());
        assert!(WindowSpec::new(10.0, 0.0).is_err());
    }

    #[test]
    fn small_map_gives_one_window() {
        let map = cloud(&[(1.0, 1.0), (3.0, 2.5), (2.0, 4.0)]);
        let w = generate_windows(&map, &WindowSpec::default()).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].origin, [1.0, 1.0]);
        assert_eq!(w[0].point_indices, vec![0, 1, 2]);
        assert_eq!(w[0].interior_edges, [false; 4]);
    }

    #[test]
    fn empty_map_rejected() {
        let map = PointCloud::<f64>::default();
        assert_eq!(generate_windows(&map, &WindowSpec::default()), Err(SubdivisionError::EmptyMap));
    }

    #[test]
    fn overlap_points_in_two_windows_and_max_point_kept() {
        let map = cloud(&[(0.0, 0.0), (9.0, 0.0), (26.0, 0.0), (17.0, 0.0)]);
        let w = generate_windows(&map, &WindowSpec::default()).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].point_indices, vec![0, 1]);
        assert_eq!(w[1].point_indices, vec![1, 3]);
        assert_eq!(w[2].point_indices, vec![2, 3]);
        for win in &w {
            for &i in &win.point_indices {
                let p = map.points()[i];
                assert!(win.contains_xy(p.x, p.y));
            }
        }
    }

    #[test]
    fn merge_translates_into_map_frame() {
        let map = cloud(&[(0.0, 0.0), (26.0, 5.0)]);
        let windows = generate_windows(&map, &WindowSpec::default()).unwrap();
        let w = &windows[1];
        assert_eq!(w.origin, [8.0, 0.0]);
        let d = Detection::tree_2d(Box2D::new(2.0, 2.0, 4.0, 4.0).unwrap(), 0.6).unwrap();
        let merged = merge_window_detections(&[(w, vec![d])], 0.5).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(*merged[0].footprint(), Box2D::new(10.0, 2.0, 12.0, 4.0).unwrap());
        assert!(merge_window_detections::<f64>(&[(w, vec![])], 0.5).unwrap().is_empty());
    }

    #[test]
    fn merge_suppresses_cross_window_duplicate() {
        let map = cloud(&[(0.0, 0.0), (26.0, 5.0)]);
        let windows = generate_windows(&map, &WindowSpec::default()).unwrap();
        // Tree at global x in [8.2, 9.8]; window 1 sees it slightly shifted.
        let a = Detection::tree_2d(Box2D::new(8.2, 1.0, 9.8, 2.6).unwrap(), 0.9).unwrap();
        let b = Detection::tree_2d(Box2D::new(0.2 + 0.1, 1.0, 1.8 + 0.1, 2.6).unwrap(), 0.7).unwrap();
        let ga = a.translated(0.0, 0.0);
        let gb = b.translated(8.0, 0.0);
        let iou = iou_2d(ga.footprint(), gb.footprint());
        assert!(iou > 0.5);
        let merged = merge_window_detections(&[(&windows[0], vec![a]), (&windows[1], vec![b])], 0.5).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].confidence(), 0.9);
    }

    #[test]
    fn merge_rejects_box_outside_window() {
        let map = cloud(&[(0.0, 0.0), (5.0, 5.0)]);
        let windows = generate_windows(&map, &WindowSpec::default()).unwrap();
        let d = Detection::tree_2d(Box2D::new(9.0, 1.0, 11.0, 2.0).unwrap(), 0.5).unwrap();
        assert_eq!(
            merge_window_detections(&[(&windows[0], vec![d])], 0.5),
            Err(SubdivisionError::OutsideWindow { window: 0, index: 0 })
        );
    }

    #[test]
    fn truncated_boxes_dropped_only_on_interior_edges() {
        let map = cloud(&[(0.0, 0.0), (26.0, 5.0)]);
        let windows = generate_windows(&map, &WindowSpec::default()).unwrap();
        let at_left = Detection::tree_2d(Box2D::new(0.0, 1.0, 1.0, 2.0).unwrap(), 0.5).unwrap();
        let at_right = Detection::tree_2d(Box2D::new(9.5, 1.0, 10.0, 2.0).unwrap(), 0.5).unwrap();
        let middle = Detection::tree_2d(Box2D::new(4.0, 1.0, 5.0, 2.0).unwrap(), 0.5).unwrap();
        let kept = drop_truncated(&windows[0], vec![at_left, at_right, middle], 0.05);
        // left edge of window 0 is the map boundary
        assert_eq!(kept, vec![at_left, middle]);
        let kept = drop_truncated(&windows[1], vec![at_left, at_right, middle], 0.05);
        assert_eq!(kept, vec![middle]);
    }
}
