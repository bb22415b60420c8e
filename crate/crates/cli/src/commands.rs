use std::path::Path;
use std::time::Instant;

use orchard_core::eval::{eval_detections, format_study_table, run_subdivision_study, write_study_csv, EvalParams, StudyParams};
use orchard_core::geometry::io::{save_pointcloud, CloudFormat};
use orchard_core::geometry::Detection;
use orchard_core::graph::{build_graph, plan_path, rows_from_centers, PlanError, PlanRequest, Pose, VisibilityGraph};
use orchard_core::pipeline::{detect_trees, load_input, mean_canopy_radius, run_pipeline, FailureKind, PipelineConfig, PipelineError};
use orchard_core::semantic::{detect_rows_from_trees, RowParams};
use orchard_core::synth::{generate, GroundTruth, OrchardSpec};
use orchard_core::terrain::{compute_ser_sar, csf_parameter_study, csf_segment, DEFAULT_STUDY_GRID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{Command, ConfigArgs, DetectArgs, EvalArgs, GenerateArgs, GraphArgs, PipelineArgs, PlanArgs, RowsArgs, TerrainArgs};

pub struct Failure {
    pub code: u8,
    pub message: String,
}

const CONFIG: u8 = 2;
const IO: u8 = 3;
const STAGE: u8 = 4;
const UNREACHABLE: u8 = 5;

fn fail(code: u8, message: impl std::fmt::Display) -> Failure {
    Failure { code, message: message.to_string() }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.kind {
            FailureKind::Config => CONFIG,
            FailureKind::Io => IO,
            FailureKind::Stage => STAGE,
        };
        fail(code, e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Terrain(a) => cmd_terrain(a),
        Command::Rows(a) => cmd_rows(a),
        Command::Graph(a) => cmd_graph(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| fail(IO, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| fail(IO, format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| fail(IO, format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(STAGE, e))?;
    write(path, &text)
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| fail(CONFIG, format!("{}: {e}", path.display())))
}

/// Config file (or defaults) with command-line overrides applied.
fn resolve(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(i) = &args.input {
        cfg.input = Some(i.clone());
    }
    if let Some(f) = &args.input_format {
        cfg.input_format = Some(f.clone());
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_threads<R>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R>
where
    R: Send,
{
    match threads {
        Some(n) => {
            let pool = rayon_pool(n)?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn rayon_pool(n: usize) -> Result<orchard_core::pipeline::ThreadPool> {
    orchard_core::pipeline::thread_pool(n).map_err(|e| fail(CONFIG, e))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => OrchardSpec::from_toml(&read(p)?).map_err(|e| fail(CONFIG, e))?,
        None => OrchardSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    let (cloud, truth) = generate::<f64>(&spec).map_err(|e| fail(CONFIG, e))?;
    let format = match &a.format {
        Some(f) => f.parse::<CloudFormat>().map_err(|e| fail(CONFIG, e))?,
        None => CloudFormat::from_path(&a.output).map_err(|e| fail(CONFIG, e))?,
    };
    save_pointcloud(&cloud, &a.output, format).map_err(|e| fail(IO, format!("{}: {e}", a.output.display())))?;
    if let Some(t) = &a.truth {
        write_json(t, &truth)?;
    }
    println!("generated {} points, {} trees in {} rows", cloud.len(), truth.trees.len(), truth.rows.len());
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    let out = run_pipeline::<f64>(&cfg)?;
    for s in &out.manifest.stages {
        println!("{:<8} {:>10.2} ms", s.stage.to_string(), s.time_ms);
    }
    let c = &out.manifest.counts;
    println!(
        "{} points, {} windows, {} trees, {} rows, graph {} nodes / {} edges, strongly connected: {}",
        c.points,
        c.windows,
        c.trees,
        c.rows,
        c.graph_nodes,
        c.graph_edges,
        out.manifest.strongly_connected.unwrap_or(false)
    );
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let cfg = resolve(&a.cfg)?;
    let (map, _) = load_input::<f64>(&cfg)?;
    let detector = cfg.detector.build::<f64>().map_err(|e| fail(CONFIG, e))?;
    let out = with_threads(cfg.threads, || detect_trees(&map, &cfg.window, &cfg.encoder, detector.as_ref(), &cfg.merge, true))??;
    write_json(&a.output, &out.trees)?;
    println!(
        "{} trees from {} windows (encode {:.1} ms, detect {:.1} ms summed over windows)",
        out.trees.len(),
        out.windows,
        out.encode_time.as_secs_f64() * 1e3,
        out.detect_time.as_secs_f64() * 1e3
    );
    Ok(())
}

/// Ground truth from a file, either a generator truth object or a bare
/// detections array.
fn read_truth(path: &Path) -> Result<(Vec<Detection<f64>>, Option<Vec<usize>>)> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(CONFIG, format!("{}: {e}", path.display())))?;
    if value.is_array() {
        let dets = serde_json::from_value(value).map_err(|e| fail(CONFIG, format!("{}: {e}", path.display())))?;
        return Ok((dets, None));
    }
    let truth: GroundTruth<f64> = serde_json::from_value(value).map_err(|e| fail(CONFIG, format!("{}: {e}", path.display())))?;
    Ok((truth.trees, Some(truth.ground_indices)))
}

fn cmd_terrain(a: TerrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg)?;
    let csf = &mut cfg.csf;
    csf.cloth_resolution = a.resolution.unwrap_or(csf.cloth_resolution);
    csf.class_threshold = a.class_threshold.unwrap_or(csf.class_threshold);
    csf.iterations = a.iterations.unwrap_or(csf.iterations);
    csf.rigidness = a.rigidness.unwrap_or(csf.rigidness);
    csf.time_step = a.time_step.unwrap_or(csf.time_step);
    csf.validate().map_err(|e| fail(CONFIG, e))?;
    let (map, synth) = load_input::<f64>(&cfg)?;
    let truth_ground = match &a.truth {
        Some(p) => read_truth(p)?.1,
        None => synth.map(|t| t.ground_indices),
    };

    if a.study {
        let truth = truth_ground.ok_or_else(|| fail(CONFIG, "--study needs ground truth (--truth or a synthetic input)"))?;
        let rows = with_threads(cfg.threads, || csf_parameter_study(&map, &truth, &cfg.csf, &DEFAULT_STUDY_GRID))?
            .map_err(|e| fail(STAGE, e))?;
        println!("resolution  threshold    SER      SAR    time ms  settled");
        for r in &rows {
            println!(
                "{:>10.2} {:>10.2} {:>7.1}% {:>7.1}% {:>9.1}  {}",
                r.resolution,
                r.class_threshold,
                r.ser * 100.0,
                r.sar * 100.0,
                r.running_time_ms,
                r.settled
            );
        }
        return write_json(&a.output, &rows);
    }

    let t = Instant::now();
    let (seg, report) = with_threads(cfg.threads, || csf_segment(&map, &cfg.csf))?.map_err(|e| fail(STAGE, e))?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    write_json(&a.output, &seg)?;
    if let Some(p) = &a.labelled {
        let mask = seg.mask(map.len());
        let mut s = String::from("# x y z ground\n");
        for (pt, g) in map.points().iter().zip(mask) {
            s.push_str(&format!("{} {} {} {}\n", pt.x, pt.y, pt.z, g as u8));
        }
        write(p, &s)?;
    }
    println!(
        "{} ground / {} non-ground in {ms:.1} ms (settled: {}, {} iterations)",
        seg.ground.len(),
        seg.nonground.len(),
        report.settled,
        report.iterations_run
    );
    if let Some(truth) = truth_ground {
        let s = compute_ser_sar(&seg, &truth).map_err(|e| fail(STAGE, e))?;
        println!("SER {:.2}%  SAR {:.2}%", s.ser * 100.0, s.sar * 100.0);
    }
    Ok(())
}

fn cmd_rows(a: RowsArgs) -> Result<()> {
    let trees: Vec<Detection<f64>> = parse_json(&a.detections)?;
    let params = RowParams { lateral_tolerance: a.tolerance, min_trees_per_row: a.min_trees };
    let rows = detect_rows_from_trees(&trees, &params).map_err(|e| fail(CONFIG, e))?;
    let mut used = vec![false; trees.len()];
    rows.iter().flat_map(|r| &r.members).for_each(|&m| used[m] = true);
    let unassigned: Vec<usize> = (0..trees.len()).filter(|&i| !used[i]).collect();
    write_json(&a.output, &json!({ "rows": rows, "unassigned": unassigned }))?;
    println!("{} rows, {} of {} trees unassigned", rows.len(), unassigned.len(), trees.len());
    Ok(())
}

fn cmd_graph(a: GraphArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let graph = if let Some(p) = &a.manual {
        let rows: Vec<Vec<[f64; 2]>> = parse_json(p)?;
        let (rows, centers) = rows_from_centers(&rows);
        build_graph(&rows, &centers, a.canopy_radius, &cfg.graph)
    } else {
        let p = a.detections.as_ref().ok_or_else(|| fail(CONFIG, "either --detections or --manual is required"))?;
        let trees: Vec<Detection<f64>> = parse_json(p)?;
        let rows = detect_rows_from_trees(&trees, &cfg.rows).map_err(|e| fail(CONFIG, e))?;
        let centers: Vec<[f64; 2]> = trees.iter().map(|d| d.footprint().center()).collect();
        build_graph(&rows, &centers, mean_canopy_radius(&trees), &cfg.graph)
    }
    .map_err(|e| fail(STAGE, e))?;
    write_json(&a.output, &graph)?;
    println!(
        "{} nodes, {} edges, {} corridors, strongly connected: {}",
        graph.nodes.len(),
        graph.edges.len(),
        graph.corridors.len(),
        graph.is_strongly_connected()
    );
    Ok(())
}

fn parse_pose(s: &str) -> Result<Pose<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| fail(CONFIG, format!("pose '{s}': {e}")))?;
    match v[..] {
        [x, y, h] => Ok(Pose { x, y, heading: h.to_radians() }),
        _ => Err(fail(CONFIG, format!("pose '{s}' must be x,y,heading_deg"))),
    }
}

fn plan_failure(e: PlanError) -> Failure {
    fail(UNREACHABLE, e)
}

fn cmd_plan(a: PlanArgs) -> Result<()> {
    let text = read(&a.graph)?;
    let graph = VisibilityGraph::<f64>::from_json(&text).map_err(|e| fail(CONFIG, format!("{}: {e}", a.graph.display())))?;
    if graph.nodes.is_empty() {
        return Err(fail(CONFIG, "graph has no nodes"));
    }
    let start = match &a.start {
        Some(s) => parse_pose(s)?,
        None => {
            let n = &graph.nodes[0];
            Pose { x: n.x, y: n.y, heading: n.heading }
        }
    };

    if let Some(n) = a.batch {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut results = Vec::with_capacity(n);
        let mut times = Vec::with_capacity(n);
        let mut failures = 0;
        for _ in 0..n {
            let node = &graph.nodes[rng.random_range(0..graph.nodes.len())];
            let goal = Pose {
                x: node.x + rng.random_range(-0.2..0.2),
                y: node.y + rng.random_range(-0.2..0.2),
                heading: node.heading,
            };
            let t = Instant::now();
            let r = plan_path(&graph, &PlanRequest { start, goal });
            let ms = t.elapsed().as_secs_f64() * 1e3;
            times.push(ms);
            match r {
                Ok(p) => results.push(json!({ "goal": goal, "ok": true, "length": p.length, "nodes": p.nodes, "time_ms": ms })),
                Err(e) => {
                    failures += 1;
                    results.push(json!({ "goal": goal, "ok": false, "error": e.to_string(), "time_ms": ms }));
                }
            }
        }
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.is_empty() {
            0.0
        } else if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
        };
        let max = sorted.last().copied().unwrap_or(0.0);
        println!("{} of {n} plans succeeded; median {median:.4} ms, max {max:.4} ms", n - failures);
        if let Some(o) = &a.output {
            write_json(o, &json!({ "seed": a.seed, "successes": n - failures, "median_ms": median, "max_ms": max, "results": results }))?;
        }
        if failures > 0 {
            return Err(fail(UNREACHABLE, format!("{failures} of {n} goals could not be reached")));
        }
        return Ok(());
    }

    let goal = parse_pose(a.goal.as_deref().expect("clap requires --goal without --batch"))?;
    let t = Instant::now();
    let path = plan_path(&graph, &PlanRequest { start, goal }).map_err(plan_failure)?;
    let ms = t.elapsed().as_secs_f64() * 1e3;
    let kinds: Vec<_> = path.nodes.iter().map(|&v| graph.nodes[v].kind).collect();
    println!("path through {} nodes, {:.2} m, planned in {ms:.4} ms", path.nodes.len(), path.length);
    if let Some(o) = &a.output {
        write_json(
            o,
            &json!({ "path": path, "kinds": kinds, "polyline": path.polyline(&graph), "time_ms": ms }),
        )?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.study {
        let cfg = resolve(&a.cfg)?;
        let (map, synth) = load_input::<f64>(&cfg)?;
        let truths = match &a.truth {
            Some(p) => read_truth(p)?.0,
            None => synth.map(|t| t.trees).ok_or_else(|| fail(CONFIG, "--study needs --truth for a file input"))?,
        };
        let params = StudyParams {
            repeats: a.repeats,
            encoder: cfg.encoder,
            detector: cfg.detector.baseline,
            eval: EvalParams { iou_threshold: a.iou, volume: a.volume },
            ..StudyParams::default()
        };
        let rows = with_threads(cfg.threads, || run_subdivision_study(&map, &truths, &params))?.map_err(|e| fail(STAGE, e))?;
        print!("{}", format_study_table(&rows));
        if let Some(o) = &a.output {
            write_json(o, &rows)?;
            let mut buf = Vec::new();
            write_study_csv(&rows, &mut buf).map_err(|e| fail(STAGE, e))?;
            write(&o.with_extension("csv"), &String::from_utf8_lossy(&buf))?;
        }
        return Ok(());
    }
    let preds: Vec<Detection<f64>> = parse_json(a.predictions.as_deref().expect("clap requires --predictions"))?;
    let (truths, _) = read_truth(a.truth.as_deref().expect("clap requires --truth"))?;
    let r = eval_detections(&preds, &truths, &EvalParams { iou_threshold: a.iou, volume: a.volume })
        .map_err(|e| fail(CONFIG, e))?;
    println!(
        "mIoU {:.4}{}  AP@{:.2} {:.4}  precision {:.3}  recall {:.3}  ({} predictions, {} truths)",
        r.miou,
        if r.miou_defined { "" } else { " (no matches)" },
        r.iou_threshold,
        r.map50,
        r.precision,
        r.recall,
        r.predictions,
        r.truths
    );
    if let Some(o) = &a.output {
        write_json(o, &r)?;
    }
    Ok(())
}
