//! End-to-end orchestration: subdivision → encoding → detection → merge →
//! lifting → ground filter → label fusion → rows → route graph.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{lift_to_3d, BaselineDetector, BaselineDetectorParams, DetectError, Detector, ExternalDetector, WindowContext};
use crate::encoder::{encode_pillars, EncoderParams};
use crate::eval::{eval_detections, EvalParams};
use crate::geometry::io::{load_pointcloud, CloudFormat};
use crate::geometry::{Detection, Point3, PointCloud, DEFAULT_NMS_IOU};
use crate::graph::{build_graph, GraphParams, VisibilityGraph};
use crate::scalar::Scalar;
use crate::semantic::{detect_rows_from_trees, fuse_labels, RowParams, SemanticMap};
use crate::subdivision::{drop_truncated, generate_windows, merge_window_detections, WindowSpec};
use crate::synth::{generate, GroundTruth, OrchardSpec};
use crate::terrain::{csf_segment, CsfParams, GroundSegmentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Baseline,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Directory of `window_<i>.json` files for the external detector.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub external_dir: Option<PathBuf>,
    pub baseline: BaselineDetectorParams,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { kind: DetectorKind::Baseline, external_dir: None, baseline: BaselineDetectorParams::default() }
    }
}

impl DetectorConfig {
    pub fn build<T: Scalar>(&self) -> Result<Box<dyn Detector<T>>, DetectError> {
        match self.kind {
            DetectorKind::Baseline => Ok(Box::new(BaselineDetector::new(self.baseline)?)),
            DetectorKind::External => {
                let dir = self
                    .external_dir
                    .clone()
                    .ok_or_else(|| DetectError::Params("detector.external_dir is required for kind = \"external\"".into()))?;
                Ok(Box::new(ExternalDetector { dir }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeConfig {
    pub iou_threshold: f64,
    /// Discard boxes touching an interior window edge before merging.
    pub drop_truncated: bool,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { iou_threshold: DEFAULT_NMS_IOU, drop_truncated: true }
    }
}

/// Every tunable of a pipeline run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Point cloud to process; when absent the `synthetic` orchard is
    /// generated instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// `xyz`, `ply` or `pcd`; guessed from the extension when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_format: Option<String>,
    pub output_dir: PathBuf,
    /// Overrides `synthetic.seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker cap; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub synthetic: OrchardSpec,
    pub window: WindowSpec,
    pub encoder: EncoderParams,
    pub detector: DetectorConfig,
    pub merge: MergeConfig,
    pub csf: CsfParams,
    pub rows: RowParams,
    pub graph: GraphParams,
    pub eval: EvalParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            input_format: None,
            output_dir: PathBuf::from("out"),
            seed: None,
            threads: None,
            synthetic: OrchardSpec::default(),
            window: WindowSpec::default(),
            encoder: EncoderParams::default(),
            detector: DetectorConfig::default(),
            merge: MergeConfig::default(),
            csf: CsfParams::default(),
            rows: RowParams::default(),
            graph: GraphParams::default(),
            eval: EvalParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Load,
    Detect,
    Terrain,
    Fuse,
    Rows,
    Graph,
    Eval,
    Write,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// Broad failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Io,
    Stage,
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    fn new(stage: Stage, kind: FailureKind, e: impl std::fmt::Display) -> Self {
        Self { stage, kind, message: e.to_string() }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::new(Stage::Config, FailureKind::Config, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, FailureKind::Io, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::new(Stage::Config, FailureKind::Config, e);
        self.window.validate().map_err(|e| cfg(&e))?;
        self.encoder.validate().map_err(|e| cfg(&e))?;
        self.detector.baseline.validate().map_err(|e| cfg(&e))?;
        if self.detector.kind == DetectorKind::External && self.detector.external_dir.is_none() {
            return Err(cfg(&"detector.external_dir is required for kind = \"external\""));
        }
        if !(self.merge.iou_threshold > 0.0 && self.merge.iou_threshold < 1.0) {
            return Err(cfg(&"merge.iou_threshold must be in (0, 1)"));
        }
        self.csf.validate().map_err(|e| cfg(&e))?;
        self.rows.validate().map_err(|e| cfg(&e))?;
        self.graph.validate().map_err(|e| cfg(&e))?;
        self.eval.validate().map_err(|e| cfg(&e))?;
        if self.threads == Some(0) {
            return Err(cfg(&"threads must be at least 1"));
        }
        if self.input.is_none() {
            self.resolved_synthetic().validate().map_err(|e| cfg(&e))?;
        }
        Ok(())
    }

    pub fn resolved_synthetic(&self) -> OrchardSpec {
        let mut spec = self.synthetic.clone();
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        spec
    }
}

/// Output of the detection stage.
#[derive(Debug, Clone)]
pub struct TreeDetections<T: Scalar> {
    /// Merged, lifted detections in map coordinates.
    pub trees: Vec<Detection<T>>,
    pub windows: usize,
    /// Summed per-window encoding and detection times.
    pub encode_time: Duration,
    pub detect_time: Duration,
    /// Merged boxes dropped because no point fell inside them.
    pub empty_footprints: usize,
}

/// Runs subdivision, encoding, detection, merge and lifting. Windows are
/// processed in parallel when `parallel` is set; results are merged in
/// window order either way.
pub fn detect_trees<T: Scalar>(
    map: &PointCloud<T>,
    window: &WindowSpec,
    encoder: &EncoderParams,
    detector: &dyn Detector<T>,
    merge: &MergeConfig,
    parallel: bool,
) -> Result<TreeDetections<T>, PipelineError> {
    let stage = |e: &dyn std::fmt::Display| PipelineError::new(Stage::Detect, FailureKind::Stage, e);
    let windows = generate_windows(map, window).map_err(|e| stage(&e))?;
    let run = |w: &crate::subdivision::LocalWindow<T>| -> Result<(Vec<Detection<T>>, Duration, Duration), DetectError> {
        let t0 = Instant::now();
        let enc = encode_pillars(w, map, encoder).map_err(|e| DetectError::Params(e.to_string()))?;
        let t1 = Instant::now();
        let dets = detector.detect(&WindowContext { index: w.index }, &enc.image)?;
        let t2 = Instant::now();
        let dets = if merge.drop_truncated { drop_truncated(w, dets, enc.image.pillar_side()) } else { dets };
        Ok((dets, t1 - t0, t2 - t1))
    };
    let results: Vec<_> = if parallel {
        windows.par_iter().map(run).collect::<Result<_, _>>()
    } else {
        windows.iter().map(run).collect::<Result<_, _>>()
    }
    .map_err(|e| stage(&e))?;

    let encode_time = results.iter().map(|r| r.1).sum();
    let detect_time = results.iter().map(|r| r.2).sum();
    let per_window: Vec<_> = windows.iter().zip(results).map(|(w, r)| (w, r.0)).collect();
    let merged = merge_window_detections(&per_window, T::lit(merge.iou_threshold)).map_err(|e| stage(&e))?;

    let index = PointIndex::new(map, T::one());
    let mut trees = Vec::with_capacity(merged.len());
    let mut empty_footprints = 0;
    for d in &merged {
        let pts = index.candidates(map, d.footprint());
        match lift_to_3d(d, &pts) {
            Ok(t) => trees.push(t),
            Err(DetectError::EmptyFootprint) => {
                log::warn!("dropping detection with no points inside {:?}", d.footprint());
                empty_footprints += 1;
            }
            Err(e) => return Err(stage(&e)),
        }
    }
    Ok(TreeDetections { trees, windows: windows.len(), encode_time, detect_time, empty_footprints })
}

/// Uniform xy bucket grid for footprint queries.
struct PointIndex<T> {
    origin: [T; 2],
    cell: T,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<T: Scalar> PointIndex<T> {
    fn new(map: &PointCloud<T>, cell: T) -> Self {
        let Some(b) = map.bounds() else {
            return Self { origin: [T::zero(); 2], cell, nx: 0, ny: 0, buckets: Vec::new() };
        };
        let nx = (b.extent(0) / cell).floor().to_usize().unwrap_or(0) + 1;
        let ny = (b.extent(1) / cell).floor().to_usize().unwrap_or(0) + 1;
        let origin = [b.min[0], b.min[1]];
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, p) in map.points().iter().enumerate() {
            let (cx, cy) = Self::cell_of(origin, cell, nx, ny, p.x, p.y);
            buckets[cy * nx + cx].push(i);
        }
        Self { origin, cell, nx, ny, buckets }
    }

    fn cell_of(origin: [T; 2], cell: T, nx: usize, ny: usize, x: T, y: T) -> (usize, usize) {
        let c = |v: T, o: T, n: usize| ((v - o) / cell).floor().max(T::zero()).to_usize().unwrap_or(0).min(n - 1);
        (c(x, origin[0], nx), c(y, origin[1], ny))
    }

    /// Points in buckets overlapping the footprint, in map order.
    fn candidates(&self, map: &PointCloud<T>, f: &crate::geometry::Box2D<T>) -> Vec<Point3<T>> {
        if self.nx == 0 {
            return Vec::new();
        }
        let (x0, y0) = Self::cell_of(self.origin, self.cell, self.nx, self.ny, f.x_min(), f.y_min());
        let (x1, y1) = Self::cell_of(self.origin, self.cell, self.nx, self.ny, f.x_max(), f.y_max());
        let mut idx: Vec<usize> = (y0..=y1)
            .flat_map(|cy| (x0..=x1).flat_map(move |cx| self.buckets[cy * self.nx + cx].iter().copied()))
            .collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| map.points()[i]).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub ok: bool,
    pub time_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub points: usize,
    pub windows: usize,
    pub trees: usize,
    pub empty_footprints: usize,
    pub ground_points: usize,
    pub rows: usize,
    pub unassigned_trees: usize,
    pub graph_nodes: usize,
    pub graph_edges: usize,
}

/// Written to `manifest.json` after every run, successful or not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    pub stages: Vec<StageRecord>,
    pub counts: RunCounts,
    pub strongly_connected: Option<bool>,
    pub cloth_settled: Option<bool>,
    pub artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything a run produced, kept in memory for callers.
pub struct PipelineOutput<T: Scalar> {
    pub map: PointCloud<T>,
    pub truth: Option<GroundTruth<T>>,
    pub detections: TreeDetections<T>,
    pub segmentation: GroundSegmentation,
    pub semantic: SemanticMap<T>,
    pub graph: VisibilityGraph<T>,
    pub manifest: Manifest,
}

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Loads (or generates) the map without touching the output directory.
pub fn load_input<T: Scalar>(cfg: &PipelineConfig) -> Result<(PointCloud<T>, Option<GroundTruth<T>>), PipelineError> {
    match &cfg.input {
        Some(path) => {
            let io = |e: &dyn std::fmt::Display| PipelineError::new(Stage::Load, FailureKind::Io, e);
            let format = match &cfg.input_format {
                Some(f) => f.parse::<CloudFormat>().map_err(|e| PipelineError::new(Stage::Config, FailureKind::Config, e))?,
                None => CloudFormat::from_path(path).map_err(|e| io(&e))?,
            };
            let map = load_pointcloud(path, format).map_err(|e| io(&format!("{}: {e}", path.display())))?;
            Ok((map, None))
        }
        None => {
            let (map, truth) =
                generate(&cfg.resolved_synthetic()).map_err(|e| PipelineError::new(Stage::Load, FailureKind::Config, e))?;
            Ok((map, Some(truth)))
        }
    }
}

/// Runs every stage and writes artifacts to `cfg.output_dir`. A failing
/// stage still leaves a manifest marking the run incomplete.
pub fn run_pipeline<T: Scalar>(cfg: &PipelineConfig) -> Result<PipelineOutput<T>, PipelineError> {
    cfg.validate()?;
    match cfg.threads {
        Some(n) => thread_pool(n)
            .map_err(|e| PipelineError::new(Stage::Config, FailureKind::Config, e))?
            .install(|| run_stages(cfg)),
        None => run_stages(cfg),
    }
}

pub use rayon::ThreadPool;

/// A worker pool capped at `n` threads.
pub fn thread_pool(n: usize) -> Result<ThreadPool, rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build()
}

struct Recorder {
    dir: PathBuf,
    manifest: Manifest,
}

impl Recorder {
    fn time<R>(&mut self, stage: Stage, f: impl FnOnce() -> Result<R, PipelineError>) -> Result<R, PipelineError> {
        let t = Instant::now();
        let out = f();
        let time_ms = t.elapsed().as_secs_f64() * 1e3;
        self.manifest.stages.push(StageRecord { stage, ok: out.is_ok(), time_ms });
        if let Err(e) = &out {
            self.manifest.failed_stage = Some(e.stage);
            self.manifest.error = Some(e.message.clone());
            // best effort: the original error matters more
            let _ = self.flush();
        }
        out
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<(), PipelineError> {
        std::fs::write(self.dir.join(name), contents)
            .map_err(|e| PipelineError::new(Stage::Write, FailureKind::Io, format!("{name}: {e}")))?;
        self.manifest.artifacts.push(name.to_string());
        Ok(())
    }

    fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::new(Stage::Write, FailureKind::Stage, e))?;
        self.write(name, text.as_bytes())
    }

    fn flush(&self) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| PipelineError::new(Stage::Write, FailureKind::Stage, e))?;
        std::fs::write(self.dir.join(MANIFEST), text).map_err(|e| PipelineError::new(Stage::Write, FailureKind::Io, e))
    }
}

fn run_stages<T: Scalar>(cfg: &PipelineConfig) -> Result<PipelineOutput<T>, PipelineError> {
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| PipelineError::new(Stage::Write, FailureKind::Io, format!("{}: {e}", cfg.output_dir.display())))?;
    let mut rec = Recorder {
        dir: cfg.output_dir.clone(),
        manifest: Manifest {
            complete: false,
            stages: Vec::new(),
            counts: RunCounts::default(),
            strongly_connected: None,
            cloth_settled: None,
            artifacts: Vec::new(),
            failed_stage: None,
            error: None,
        },
    };
    let (map, truth) = rec.time(Stage::Load, || load_input::<T>(cfg))?;
    rec.manifest.counts.points = map.len();
    rec.write(RESOLVED_CONFIG, cfg.to_toml().as_bytes())?;
    if let Some(truth) = &truth {
        rec.json("truth.json", truth)?;
    }

    let detections = rec.time(Stage::Detect, || {
        let detector = cfg.detector.build::<T>().map_err(|e| PipelineError::new(Stage::Config, FailureKind::Config, e))?;
        detect_trees(&map, &cfg.window, &cfg.encoder, detector.as_ref(), &cfg.merge, true)
    })?;
    rec.manifest.counts.windows = detections.windows;
    rec.manifest.counts.trees = detections.trees.len();
    rec.manifest.counts.empty_footprints = detections.empty_footprints;
    rec.json("detections.json", &detections.trees)?;

    let (segmentation, report) = rec.time(Stage::Terrain, || {
        csf_segment(&map, &cfg.csf).map_err(|e| PipelineError::new(Stage::Terrain, FailureKind::Stage, e))
    })?;
    rec.manifest.counts.ground_points = segmentation.ground.len();
    rec.manifest.cloth_settled = Some(report.settled);
    rec.json("segmentation.json", &segmentation)?;

    let mut semantic = rec.time(Stage::Fuse, || {
        fuse_labels(&map, &detections.trees, &segmentation).map_err(|e| PipelineError::new(Stage::Fuse, FailureKind::Stage, e))
    })?;

    semantic.rows = rec.time(Stage::Rows, || {
        detect_rows_from_trees(&semantic.trees, &cfg.rows).map_err(|e| PipelineError::new(Stage::Rows, FailureKind::Stage, e))
    })?;
    rec.manifest.counts.rows = semantic.rows.len();
    rec.manifest.counts.unassigned_trees = semantic.unassigned_trees().len();
    if rec.manifest.counts.unassigned_trees > 0 {
        log::info!("{} trees are not part of any row", rec.manifest.counts.unassigned_trees);
    }
    let mut labelled = Vec::new();
    semantic
        .write_labelled_xyz(&map, &mut labelled)
        .map_err(|e| PipelineError::new(Stage::Write, FailureKind::Io, e))?;
    rec.write("semantic_labels.xyz", &labelled)?;
    rec.json("semantic.json", &semantic.summary_json())?;

    let graph = rec.time(Stage::Graph, || {
        build_graph(&semantic.rows, &semantic.tree_centers(), mean_canopy_radius(&semantic.trees), &cfg.graph)
            .map_err(|e| PipelineError::new(Stage::Graph, FailureKind::Stage, e))
    })?;
    rec.manifest.counts.graph_nodes = graph.nodes.len();
    rec.manifest.counts.graph_edges = graph.edges.len();
    rec.manifest.strongly_connected = Some(graph.is_strongly_connected());
    rec.json("graph.json", &graph)?;

    if let Some(truth) = &truth {
        let eval = rec.time(Stage::Eval, || {
            eval_detections(&detections.trees, &truth.trees, &cfg.eval)
                .map_err(|e| PipelineError::new(Stage::Eval, FailureKind::Stage, e))
        })?;
        rec.json("eval.json", &eval)?;
    }

    rec.manifest.complete = true;
    rec.flush()?;
    let manifest = rec.manifest;
    Ok(PipelineOutput { map, truth, detections, segmentation, semantic, graph, manifest })
}

/// Mean half-extent of the tree footprints, the canopy radius the graph
/// keeps clear of.
pub fn mean_canopy_radius<T: Scalar>(trees: &[Detection<T>]) -> T {
    if trees.is_empty() {
        return T::zero();
    }
    let sum: T = trees.iter().map(|d| (d.footprint().width() + d.footprint().height()) / T::lit(4.0)).sum();
    sum / T::from_usize_lossy(trees.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::from_toml("output_dir = \"x\"\n[window]\nwindow_size_m = 10\nbogus = 1\n").unwrap_err();
        assert_eq!(err.kind, FailureKind::Config);
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.seed = Some(11);
        cfg.encoder.min_points = 2;
        cfg.graph.lane_offset = Some(0.7);
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
