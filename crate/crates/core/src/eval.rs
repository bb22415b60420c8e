//! Detection metrics and the window-size / resolution study.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{BaselineDetector, BaselineDetectorParams};
use crate::encoder::EncoderParams;
use crate::geometry::{iou_2d, iou_3d, Detection, PointCloud};
use crate::pipeline::{detect_trees, MergeConfig};
use crate::scalar::{total_cmp, Scalar};
use crate::subdivision::WindowSpec;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground-truth boxes to evaluate against")]
    EmptyTruth,
    #[error("invalid evaluation parameters: {0}")]
    Params(String),
    #[error("3D IoU requested but {0} has no z extent")]
    Missing3D(&'static str),
    #[error("study run failed: {0}")]
    Pipeline(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    pub iou_threshold: f64,
    /// Compare 3D boxes instead of ground-plane footprints.
    pub volume: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { iou_threshold: 0.5, volume: false }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(EvalError::Params(format!("iou_threshold {} not in (0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvalResult {
    /// Mean IoU over matches; 0 when nothing matched.
    pub miou: f64,
    /// False when there were no matches to average.
    pub miou_defined: bool,
    /// 11-point interpolated average precision at `iou_threshold`.
    pub map50: f64,
    pub iou_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub matches: Vec<Match>,
    pub predictions: usize,
    pub truths: usize,
}

/// Greedy matching in descending confidence (ties: lower index first).
/// Each prediction takes the unmatched truth of highest IoU, if that IoU
/// reaches the threshold.
pub fn eval_detections<T: Scalar>(
    preds: &[Detection<T>],
    truths: &[Detection<T>],
    params: &EvalParams,
) -> Result<DetectionEvalResult, EvalError> {
    params.validate()?;
    if truths.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let iou = |p: &Detection<T>, t: &Detection<T>| -> Result<f64, EvalError> {
        if params.volume {
            let a = p.bbox.as_3d().ok_or(EvalError::Missing3D("a prediction"))?;
            let b = t.bbox.as_3d().ok_or(EvalError::Missing3D("a truth box"))?;
            Ok(iou_3d(a, b).to_f64_lossy())
        } else {
            Ok(iou_2d(p.footprint(), t.footprint()).to_f64_lossy())
        }
    };
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| total_cmp(preds[b].confidence(), preds[a].confidence()).then(a.cmp(&b)));

    let mut taken = vec![false; truths.len()];
    let mut matches = Vec::new();
    let mut hits = Vec::with_capacity(order.len());
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for (ti, t) in truths.iter().enumerate() {
            if taken[ti] {
                continue;
            }
            let v = iou(&preds[pi], t)?;
            if v >= params.iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((ti, v));
            }
        }
        if let Some((ti, v)) = best {
            taken[ti] = true;
            matches.push(Match { pred: pi, truth: ti, iou: v });
        }
        hits.push(best.is_some());
    }

    let tp = matches.len();
    let miou_defined = tp > 0;
    let miou = if miou_defined { matches.iter().map(|m| m.iou).sum::<f64>() / tp as f64 } else { 0.0 };
    Ok(DetectionEvalResult {
        miou,
        miou_defined,
        map50: ap11(&hits, truths.len()),
        iou_threshold: params.iou_threshold,
        precision: if preds.is_empty() { 0.0 } else { tp as f64 / preds.len() as f64 },
        recall: tp as f64 / truths.len() as f64,
        matches,
        predictions: preds.len(),
        truths: truths.len(),
    })
}

/// 11-point interpolated AP from hit flags in ranked order.
fn ap11(hits: &[bool], n_truth: usize) -> f64 {
    let mut curve = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, &h) in hits.iter().enumerate() {
        tp += h as usize;
        curve.push((tp as f64 / n_truth as f64, tp as f64 / (k + 1) as f64));
    }
    (0..=10)
        .map(|i| {
            let r = i as f64 / 10.0;
            curve.iter().filter(|(rec, _)| *rec >= r - 1e-12).map(|(_, p)| *p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// One cell of the window-size × resolution sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub window_size_m: f64,
    pub resolution: usize,
    pub stride_m: f64,
    pub windows: usize,
    /// Median over repeats of the mean per-window encoding time.
    pub feature_ms_per_window: f64,
    pub predict_ms_per_window: f64,
    /// Median over repeats of the summed encoding time for the whole map.
    pub feature_ms_map: f64,
    pub predict_ms_map: f64,
    pub miou: f64,
    pub map50: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyParams {
    pub sizes_m: Vec<f64>,
    pub resolutions: Vec<usize>,
    /// Window overlap; the stride is `size - overlap`.
    pub overlap_m: f64,
    pub repeats: usize,
    /// Encoder/detector settings at the reference cell of 10 m / 128.
    pub encoder: EncoderParams,
    pub detector: BaselineDetectorParams,
    pub eval: EvalParams,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            sizes_m: vec![5.0, 10.0, 20.0],
            resolutions: vec![64, 128, 256],
            overlap_m: 2.0,
            repeats: 5,
            encoder: EncoderParams::default(),
            detector: BaselineDetectorParams::default(),
            eval: EvalParams::default(),
        }
    }
}

const REFERENCE_CELL: f64 = 10.0 / 128.0;

/// Scales point-count thresholds with pillar area and the component size
/// inversely, so every sweep cell sees the same physical density cut.
pub fn scaled_params(size: f64, resolution: usize, enc: &EncoderParams, det: &BaselineDetectorParams) -> (EncoderParams, BaselineDetectorParams) {
    let a = (size / resolution as f64 / REFERENCE_CELL).powi(2);
    let encoder = EncoderParams {
        resolution,
        min_points: (enc.min_points as f64 * a).round() as usize,
        density_cap: enc.density_cap * a,
    };
    let detector = BaselineDetectorParams {
        min_cells: ((det.min_cells as f64 / a).round() as usize).max(1),
        box_padding: det.box_padding,
        density_floor: det.density_floor,
    };
    (encoder, detector)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Sweeps window size × resolution with the baseline detector. Timing runs
/// are sequential (windows processed one at a time) so cells never compete
/// for cores.
pub fn run_subdivision_study<T: Scalar>(
    map: &PointCloud<T>,
    truths: &[Detection<T>],
    params: &StudyParams,
) -> Result<Vec<StudyRow>, EvalError> {
    if params.repeats == 0 {
        return Err(EvalError::Params("repeats must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &size in &params.sizes_m {
        for &res in &params.resolutions {
            let stride = size - params.overlap_m;
            let window = WindowSpec::new(size, stride).map_err(|e| EvalError::Params(e.to_string()))?;
            let (encoder, det_params) = scaled_params(size, res, &params.encoder, &params.detector);
            let detector = BaselineDetector::new(det_params).map_err(|e| EvalError::Params(e.to_string()))?;
            let merge = MergeConfig::default();

            let mut feat = Vec::new();
            let mut pred = Vec::new();
            let mut last = None;
            for _ in 0..params.repeats {
                let out = detect_trees(map, &window, &encoder, &detector, &merge, false)
                    .map_err(|e| EvalError::Pipeline(e.to_string()))?;
                feat.push(out.encode_time.as_secs_f64() * 1e3);
                pred.push(out.detect_time.as_secs_f64() * 1e3);
                last = Some(out);
            }
            let out = last.expect("repeats >= 1");
            let eval = eval_detections(&out.trees, truths, &params.eval)?;
            let n = out.windows.max(1) as f64;
            rows.push(StudyRow {
                window_size_m: size,
                resolution: res,
                stride_m: stride,
                windows: out.windows,
                feature_ms_per_window: median(feat.iter().map(|t| t / n).collect()),
                predict_ms_per_window: median(pred.iter().map(|t| t / n).collect()),
                feature_ms_map: median(feat),
                predict_ms_map: median(pred),
                miou: eval.miou,
                map50: eval.map50,
                precision: eval.precision,
                recall: eval.recall,
            });
        }
    }
    Ok(rows)
}

pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table, one line per voxel specification.
pub fn format_study_table(rows: &[StudyRow]) -> String {
    let mut s = String::from("Voxel specification       | feature ms/win | predict ms/win | mIoU\n");
    for r in rows {
        s.push_str(&format!(
            "{:>4}m x {:>4}m + {:>3}x{:<3} | {:>14.4} | {:>14.4} | {:.3}\n",
            r.window_size_m, r.window_size_m, r.resolution, r.resolution, r.feature_ms_per_window, r.predict_ms_per_window, r.miou
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box2D;

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, c: f64) -> Detection<f64> {
        Detection::tree_2d(Box2D::new(x0, y0, x1, y1).unwrap(), c).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let t = vec![det(0.0, 0.0, 1.0, 1.0, 1.0), det(3.0, 0.0, 4.0, 1.0, 1.0)];
        let r = eval_detections(&t, &t, &EvalParams::default()).unwrap();
        assert_eq!((r.miou, r.map50, r.recall, r.precision), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn no_predictions() {
        let t = vec![det(0.0, 0.0, 1.0, 1.0, 1.0)];
        let r = eval_detections(&[], &t, &EvalParams::default()).unwrap();
        assert!(!r.miou_defined);
        assert_eq!((r.miou, r.map50), (0.0, 0.0));
        assert!(eval_detections::<f64>(&t, &[], &EvalParams::default()).is_err());
    }

    #[test]
    fn constructed_ious() {
        // truths are unit-height strips; predictions shift to hit a chosen IoU
        let truths: Vec<_> = (0..5).map(|k| det(10.0 * k as f64, 0.0, 10.0 * k as f64 + 1.0, 1.0, 1.0)).collect();
        // IoU of [0,1] and [s,1+s] is (1-s)/(1+s)
        let shift = |iou: f64| (1.0 - iou) / (1.0 + iou);
        let preds: Vec<_> = [1.0, 0.8, 0.6, 0.4]
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let x = 10.0 * k as f64 + shift(v);
                det(x, 0.0, x + 1.0, 1.0, 0.9 - 0.1 * k as f64)
            })
            .chain([det(100.0, 0.0, 101.0, 1.0, 0.1)])
            .collect();
        let r = eval_detections(&preds, &truths, &EvalParams::default()).unwrap();
        assert_eq!(r.matches.len(), 3);
        assert!((r.miou - 0.8).abs() < 1e-12);
    }

    #[test]
    fn scaling_is_identity_at_reference() {
        let (e, d) = scaled_params(10.0, 128, &EncoderParams::default(), &BaselineDetectorParams::default());
        assert_eq!(e, EncoderParams::default());
        assert_eq!(d, BaselineDetectorParams::default());
    }
}
