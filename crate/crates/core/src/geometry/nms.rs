use std::cmp::Ordering;

use crate::scalar::{total_cmp, Scalar};

use super::{Box2D, Box3D, Detection};

pub const DEFAULT_NMS_IOU: f64 = 0.5;

/// Intersection over union of two footprints, 0 when disjoint.
pub fn iou_2d<T: Scalar>(a: &Box2D<T>, b: &Box2D<T>) -> T {
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= T::zero() || h <= T::zero() {
        return T::zero();
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

pub fn iou_3d<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let fa = a.footprint();
    let fb = b.footprint();
    let w = fa.x_max.min(fb.x_max) - fa.x_min.max(fb.x_min);
    let h = fa.y_max.min(fb.y_max) - fa.y_min.max(fb.y_min);
    let d = a.z_max.min(b.z_max) - a.z_min.max(b.z_min);
    if w <= T::zero() || h <= T::zero() || d <= T::zero() {
        return T::zero();
    }
    let inter = w * h * d;
    (inter / (a.volume() + b.volume() - inter)).min(T::one())
}

/// Ranking used by NMS: higher confidence first, then lower `(x_min, y_min)`.
fn rank<T: Scalar>(a: &Detection<T>, b: &Detection<T>) -> Ordering {
    total_cmp(b.confidence(), a.confidence())
        .then_with(|| total_cmp(a.footprint().x_min, b.footprint().x_min))
        .then_with(|| total_cmp(a.footprint().y_min, b.footprint().y_min))
}

/// Greedy non-maximum suppression on footprints.
///
/// The output is sorted by descending confidence and no two kept boxes
/// overlap with IoU above `iou_threshold`.
pub fn nms<T: Scalar>(dets: &[Detection<T>], iou_threshold: T) -> Vec<Detection<T>> {
    let mut order: Vec<&Detection<T>> = dets.iter().collect();
    order.sort_by(|a, b| rank(a, b));

    let mut kept: Vec<Detection<T>> = Vec::with_capacity(order.len());
    for d in order {
        if kept.iter().all(|k| iou_2d(k.footprint(), d.footprint()) <= iou_threshold) {
            kept.push(*d);
        }
    }
    kept
}

pub fn nms_default<T: Scalar>(dets: &[Detection<T>]) -> Vec<Detection<T>> {
    nms(dets, T::lit(DEFAULT_NMS_IOU))
}
